"""Reference architectures: the MNIST MLP, a small CNN, and reconstruction decoders."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .nn import (Conv1d, Conv2d, Deconv2d, Dense, Dropout, Flatten, MaxPool2d, Network,
                 Reshape)

MNIST_SHAPE = (28, 28)


def mnist_mlp(hidden: int = 800, depth: int = 3, dropout: float = 0.1, classes: int = 10,
              image_shape: Sequence[int] = MNIST_SHAPE, dtype=np.float32) -> Network:
    """Fully connected ReLU classifier, 784-800-800-800-10 by default.

    Dense layers are named ``fc1`` .. ``fcN`` and ``out``; each hidden layer
    past the first is preceded by dropout, so cutting at ``"fc2"`` puts the
    first two dense layers on the local side and sends 800-wide activations.
    """
    image_shape = tuple(image_shape)
    n_in = int(np.prod(image_shape))
    layers = [Flatten(name="flatten")]
    width = n_in
    for i in range(1, depth + 1):
        if i > 1 and dropout:
            layers.append(Dropout(dropout, name=f"drop{i - 1}"))
        layers.append(Dense(width, hidden, "relu", name=f"fc{i}"))
        width = hidden
    if dropout:
        layers.append(Dropout(dropout, name=f"drop{depth}"))
    layers.append(Dense(width, classes, "none", name="out"))
    return Network(layers, image_shape, dtype)


def small_cnn(side: int = 32, channels: Sequence[int] = (8, 16, 32), hidden: int = 64,
              classes: int = 10, dropout: float = 0.5, dtype=np.float32) -> Network:
    """Three conv-conv-pool blocks (pool layers named pool1..pool3) and a dense head.

    The first block uses 5x5 kernels and the rest 3x3, all with same padding.
    """
    layers = []
    c_in = 1
    for b, c in enumerate(channels, start=1):
        k = 5 if b == 1 else 3
        layers.append(Conv2d(c_in, c, k, padding=k // 2, activation="relu", name=f"conv{b}a"))
        layers.append(Conv2d(c, c, k, padding=k // 2, activation="relu", name=f"conv{b}b"))
        layers.append(MaxPool2d(2, name=f"pool{b}"))
        c_in = c
    spatial = side // 2 ** len(channels)
    layers += [Flatten(name="flatten"),
               Dense(c_in * spatial * spatial, hidden, "relu", name="fc1"),
               Dropout(dropout, name="drop1"),
               Dense(hidden, classes, "none", name="out")]
    return Network(layers, (1, side, side), dtype)


def dense_decoder(hidden_dim: int, widths: Sequence[int], activations: Sequence[str],
                  image_shape: Sequence[int], output_activation: str = "sigmoid",
                  dropouts: Sequence[float] | None = None, input_shape=None) -> list:
    """Dense reconstruction stack ending in a layer of image size, reshaped to the image.

    ``widths[i]`` units with ``activations[i]`` are followed (optionally) by
    ``Dropout(dropouts[i])``; the final layer maps to ``prod(image_shape)``.
    """
    n_out = int(np.prod(image_shape))
    layers = []
    if input_shape is not None and len(input_shape) != 1:
        layers.append(Flatten())
    width = hidden_dim
    dropouts = dropouts or [0.0] * len(widths)
    for w, act, p in zip(widths, activations, dropouts):
        layers.append(Dense(width, w, act))
        if p:
            layers.append(Dropout(p))
        width = w
    layers.append(Dense(width, n_out, output_activation))
    layers.append(Reshape(tuple(image_shape)))
    return layers


def conv1d_decoder(hidden_dim: int, image_shape: Sequence[int], kernel: int = 3,
                   output_activation: str = "sigmoid") -> list:
    """1-D convolution (1 -> 1 channel) over the hidden vector, then a dense output."""
    return [Reshape((1, hidden_dim)),
            Conv1d(1, 1, kernel, stride=1, padding=kernel // 2, activation="relu"),
            Flatten(),
            Dense(hidden_dim, int(np.prod(image_shape)), output_activation),
            Reshape(tuple(image_shape))]


def _blocks(local_layers) -> list[tuple[int, int, int]]:
    """(kernel, channels in, channels out) per pooling block of the local layers."""
    blocks, kernel, c_in, c_out = [], None, None, None
    for layer in local_layers:
        if isinstance(layer, Conv2d):
            if kernel is None:
                kernel, c_in = layer.kernel, layer.in_channels
            c_out = layer.out_channels
        elif isinstance(layer, MaxPool2d):
            blocks.append((kernel or 3, c_in or 1, c_out or 1))
            kernel = c_in = c_out = None
    return blocks


def deconv_decoder(local: Network, image_shape: Sequence[int],
                   output_activation: str = "tanh") -> list:
    """Mirror the local conv/pool blocks with stride-2 deconvolutions.

    Each pooling block, deepest first, becomes ``deconv k (stride 2)`` followed
    by a same-size layer with that block's kernel: a conv with ReLU for inner
    blocks and a deconv with ``output_activation`` for the outermost one.
    """
    c, h, w = local.output_shape
    blocks = _blocks(local.layers)
    if not blocks:
        raise ValueError("local partition has no pooling block to mirror")
    layers = []
    target = tuple(image_shape)
    sizes = [(target[-2], target[-1])]
    for _ in blocks[:-1]:
        sizes.append((sizes[-1][0] // 2, sizes[-1][1] // 2))
    sizes = sizes[::-1]  # spatial size after each upsampling step
    for step, ((k, c_in, c_out), (th, tw)) in enumerate(zip(reversed(blocks), sizes)):
        last = step == len(blocks) - 1
        p = k // 2
        op = th - ((h - 1) * 2 - 2 * p + k)
        mid = c_out if last else c_in
        layers.append(Deconv2d(c, mid, k, stride=2, padding=p, output_padding=max(op, 0)))
        if last:
            layers.append(Deconv2d(mid, target[0], k, stride=1, padding=p,
                                   activation=output_activation))
        else:
            layers.append(Conv2d(mid, mid, k, padding=p, activation="relu"))
        c, h, w = mid, th, tw
    return layers
