"""Layer catalog, sequential networks, initialization and optimizers."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

ACTIVATION_NAMES = ("relu", "sigmoid", "tanh", "none")


class GeometryError(ShapeError):
    """A layer's expected input shape does not match its predecessor's output."""

    def __init__(self, index: int, message: str):
        super().__init__(f"layer {index}: {message}")
        self.index = index


class LockedPartitionError(RuntimeError):
    """An update was attempted on a network whose parameters are locked."""


# ---------------------------------------------------------------------------
# layer specs
# ---------------------------------------------------------------------------

def _check_activation(act: str) -> None:
    if act not in ACTIVATION_NAMES:
        raise ValueError(f"unknown activation {act!r}; expected one of {ACTIVATION_NAMES}")


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    activation: str = "none"
    name: str | None = None

    def __post_init__(self):
        _check_activation(self.activation)

    def output_shape(self, shape):
        if tuple(shape) != (self.in_features,):
            raise ShapeError(f"Dense expects ({self.in_features},), got {tuple(shape)}")
        return (self.out_features,)

    def param_shapes(self):
        return {"weight": (self.in_features, self.out_features), "bias": (self.out_features,)}

    def fan_in(self):
        return self.in_features

    def apply(self, x, params, train, rng):
        out = ad.bias_add(ad.matmul(x, params["weight"]), params["bias"])
        return ad.ACTIVATIONS[self.activation](out)


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    activation: str = "none"
    name: str | None = None

    def __post_init__(self):
        _check_activation(self.activation)

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.in_channels:
            raise ShapeError(f"Conv2d expects ({self.in_channels}, H, W), got {tuple(shape)}")
        h = ad.conv_output_size(shape[1], self.kernel, self.stride, self.padding)
        w = ad.conv_output_size(shape[2], self.kernel, self.stride, self.padding)
        if h < 1 or w < 1:
            raise ShapeError(f"Conv2d kernel {self.kernel} does not fit {tuple(shape)}")
        return (self.out_channels, h, w)

    def param_shapes(self):
        k = self.kernel
        return {"weight": (self.out_channels, self.in_channels, k, k),
                "bias": (self.out_channels,)}

    def fan_in(self):
        return self.in_channels * self.kernel * self.kernel

    def apply(self, x, params, train, rng):
        out = ad.conv2d(x, params["weight"], self.stride, self.padding)
        return ad.ACTIVATIONS[self.activation](ad.bias_add(out, params["bias"], axis=1))


@dataclass(frozen=True)
class Deconv2d:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    output_padding: int = 0
    activation: str = "none"
    name: str | None = None

    def __post_init__(self):
        _check_activation(self.activation)

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.in_channels:
            raise ShapeError(f"Deconv2d expects ({self.in_channels}, H, W), got {tuple(shape)}")
        args = (self.kernel, self.stride, self.padding, self.output_padding)
        return (self.out_channels, ad.deconv_output_size(shape[1], *args),
                ad.deconv_output_size(shape[2], *args))

    def param_shapes(self):
        k = self.kernel
        return {"weight": (self.in_channels, self.out_channels, k, k),
                "bias": (self.out_channels,)}

    def fan_in(self):
        return self.in_channels * self.kernel * self.kernel

    def apply(self, x, params, train, rng):
        out = ad.deconv2d(x, params["weight"], self.stride, self.padding, self.output_padding)
        return ad.ACTIVATIONS[self.activation](ad.bias_add(out, params["bias"], axis=1))


@dataclass(frozen=True)
class Conv1d:
    """1-D convolution over (C, L) inputs, run as a conv2d with unit height."""

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    activation: str = "none"
    name: str | None = None

    def __post_init__(self):
        _check_activation(self.activation)

    def output_shape(self, shape):
        if len(shape) != 2 or shape[0] != self.in_channels:
            raise ShapeError(f"Conv1d expects ({self.in_channels}, L), got {tuple(shape)}")
        n = ad.conv_output_size(shape[1], self.kernel, self.stride, self.padding)
        if n < 1:
            raise ShapeError(f"Conv1d kernel {self.kernel} does not fit {tuple(shape)}")
        return (self.out_channels, n)

    def param_shapes(self):
        return {"weight": (self.out_channels, self.in_channels, 1, self.kernel),
                "bias": (self.out_channels,)}

    def fan_in(self):
        return self.in_channels * self.kernel

    def apply(self, x, params, train, rng):
        n, c, length = x.shape
        x4 = ad.reshape(x, (n, c, 1, length))
        out = ad.conv2d(x4, params["weight"], (1, self.stride), (0, self.padding))
        out = ad.bias_add(out, params["bias"], axis=1)
        out = ad.reshape(out, (n, self.out_channels, out.shape[3]))
        return ad.ACTIVATIONS[self.activation](out)


@dataclass(frozen=True)
class MaxPool2d:
    kernel: int = 2
    stride: int | None = None
    name: str | None = None

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"MaxPool2d expects (C, H, W), got {tuple(shape)}")
        s = self.stride or self.kernel
        if shape[1] < self.kernel or shape[2] < self.kernel:
            raise ShapeError(f"MaxPool2d kernel {self.kernel} larger than {tuple(shape)}")
        return (shape[0], (shape[1] - self.kernel) // s + 1, (shape[2] - self.kernel) // s + 1)

    def param_shapes(self):
        return {}

    def apply(self, x, params, train, rng):
        return ad.maxpool2d(x, self.kernel, self.stride)


@dataclass(frozen=True)
class Dropout:
    p: float = 0.5
    name: str | None = None

    def __post_init__(self):
        if not 0 <= self.p < 1:
            raise ValueError(f"dropout probability must lie in [0, 1), got {self.p}")

    def output_shape(self, shape):
        return tuple(shape)

    def param_shapes(self):
        return {}

    def apply(self, x, params, train, rng):
        if not train or self.p == 0:
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs a seeded generator")
        keep = rng.random(x.shape) >= self.p
        return ad.mul_const(x, keep / (1 - self.p))


@dataclass(frozen=True)
class Flatten:
    name: str | None = None

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def param_shapes(self):
        return {}

    def apply(self, x, params, train, rng):
        return ad.reshape(x, (x.shape[0], -1))


@dataclass(frozen=True)
class Reshape:
    shape: tuple = ()
    name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    def output_shape(self, shape):
        if int(np.prod(shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"Reshape cannot map {tuple(shape)} to {self.shape}")
        return self.shape

    def param_shapes(self):
        return {}

    def apply(self, x, params, train, rng):
        return ad.reshape(x, (x.shape[0],) + self.shape)


LAYER_TYPES = {cls.__name__: cls for cls in
               (Dense, Conv2d, Deconv2d, Conv1d, MaxPool2d, Dropout, Flatten, Reshape)}


def layer_to_dict(layer) -> dict:
    d = {"kind": type(layer).__name__}
    for f in fields(layer):
        v = getattr(layer, f.name)
        d[f.name] = list(v) if isinstance(v, tuple) else v
    return d


def layer_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in LAYER_TYPES:
        raise ValueError(f"unknown layer kind {kind!r}")
    return LAYER_TYPES[kind](**d)


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

def _infer_shapes(layers, input_shape):
    shapes = [tuple(input_shape)]
    for i, layer in enumerate(layers):
        try:
            shapes.append(tuple(layer.output_shape(shapes[-1])))
        except ShapeError as exc:
            raise GeometryError(i + 1, str(exc)) from None
    return shapes


class Network:
    """An ordered stack of layers with a parameter store.

    Parameters are keyed ``"<layer index>.<name>"`` with 1-based layer indices,
    so the key of the first dense layer's weight is ``"1.weight"``.
    """

    def __init__(self, layers: Sequence, input_shape: Sequence[int], dtype=np.float32):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.dtype = np.dtype(dtype)
        self.shapes = _infer_shapes(self.layers, self.input_shape)
        self.params: dict[str, np.ndarray] = {}
        self.mode = "eval"
        self.locked = False

    @property
    def output_shape(self) -> tuple:
        return self.shapes[-1]

    def __len__(self) -> int:
        return len(self.layers)

    def __repr__(self) -> str:
        kinds = ", ".join(type(l).__name__ for l in self.layers)
        return f"Network(input_shape={self.input_shape}, layers=[{kinds}])"

    def param_shapes(self) -> dict[str, tuple]:
        out = {}
        for i, layer in enumerate(self.layers, start=1):
            for name, shape in layer.param_shapes().items():
                out[f"{i}.{name}"] = shape
        return out

    def init_params(self, seed: int | np.random.Generator) -> dict[str, np.ndarray]:
        self.params = init_params(self, seed)
        return self.params

    def layer_index(self, name: str) -> int:
        """1-based index of the layer called ``name``."""
        for i, layer in enumerate(self.layers, start=1):
            if layer.name == name:
                return i
        raise KeyError(f"no layer named {name!r}")

    def train(self) -> "Network":
        self.mode = "train"
        return self

    def eval(self) -> "Network":
        self.mode = "eval"
        return self

    def copy(self) -> "Network":
        other = copy.copy(self)
        other.layers = list(self.layers)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def astype(self, dtype) -> "Network":
        other = Network(self.layers, self.input_shape, dtype)
        other.params = {k: v.astype(dtype) for k, v in self.params.items()}
        other.locked = self.locked
        return other

    def param_tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def forward(self, x, train: bool | None = None, rng: np.random.Generator | None = None,
                params: dict[str, Tensor] | None = None, keep_activations: bool = False):
        """Run the stack on a batch.

        ``x`` is a tensor or array shaped ``(N, *input_shape)``. ``params``
        optionally supplies tape-tracked tensors for the parameters; otherwise
        the stored arrays are used as constants. Returns the output tensor, or
        ``(output, activations)`` with ``keep_activations``.
        """
        x = ad.as_tensor(x)
        if x.dtype != self.dtype:
            raise ShapeError(f"input dtype {x.dtype} does not match network dtype {self.dtype}")
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"expected input shape (N, {', '.join(map(str, self.input_shape))}),"
                             f" got {x.shape}")
        if not self.params and self.param_shapes():
            raise RuntimeError("network parameters are not initialized")
        if train is None:
            train = self.mode == "train"
        acts = []
        for i, layer in enumerate(self.layers, start=1):
            names = layer.param_shapes()
            if params is None:
                p = {n: Tensor(self.params[f"{i}.{n}"]) for n in names}
            else:
                p = {n: params[f"{i}.{n}"] for n in names}
            x = layer.apply(x, p, train, rng)
            if keep_activations:
                acts.append(x)
        return (x, acts) if keep_activations else x

    __call__ = forward

    def predict(self, x, batch_size: int = 1024) -> np.ndarray:
        """Eval-mode output as an array, computed in chunks."""
        x = np.asarray(x, dtype=self.dtype)
        outs = [self.forward(x[i:i + batch_size], train=False).data
                for i in range(0, len(x), batch_size)]
        if not outs:
            return np.zeros((0,) + self.output_shape, dtype=self.dtype)
        return np.concatenate(outs)

    def spec_dict(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [layer_to_dict(l) for l in self.layers]}

    @classmethod
    def from_spec_dict(cls, d: dict, dtype=np.float32) -> "Network":
        return cls([layer_from_dict(l) for l in d["layers"]], d["input_shape"], dtype)


def init_params(network: Network, seed) -> dict[str, np.ndarray]:
    """Kaiming-uniform weights (bound ``sqrt(6 / fan_in)``) and zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for i, layer in enumerate(network.layers, start=1):
        shapes = layer.param_shapes()
        if not shapes:
            continue
        bound = math.sqrt(6.0 / layer.fan_in())
        params[f"{i}.weight"] = rng.uniform(-bound, bound, shapes["weight"]).astype(network.dtype)
        params[f"{i}.bias"] = np.zeros(shapes["bias"], dtype=network.dtype)
    return params


def cross_entropy(logits, labels) -> Tensor:
    return ad.cross_entropy(logits, labels)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SGD:
    lr: float = 0.01
    momentum: float = 0.0
    weight_decay: float = 0.0
    decay_factor: float = 1.0
    decay_every: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass(frozen=True)
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")


def optimizer_to_dict(cfg) -> dict:
    return {"kind": type(cfg).__name__, **asdict(cfg)}


def optimizer_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    return {"SGD": SGD, "Adam": Adam}[kind](**d)


class Optimizer:
    """Stateful optimizer over a dict of parameter arrays.

    Updates produce fresh arrays, so snapshots taken before a step stay valid.
    """

    def __init__(self, config):
        self.config = config
        self.lr = config.lr
        self.t = 0
        self.epoch = 0
        self.state: dict[str, dict[str, np.ndarray]] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             keys: Iterable[str] | None = None) -> None:
        keys = list(params) if keys is None else list(keys)
        missing = [k for k in keys if k not in grads]
        if missing:
            raise KeyError(f"missing gradients for {missing}")
        self.t += 1
        cfg = self.config
        for k in keys:
            theta, g = params[k], grads[k]
            dt = theta.dtype.type
            st = self.state.setdefault(k, {})
            if isinstance(cfg, SGD):
                if cfg.momentum:
                    v = st.get("v")
                    v = g if v is None else dt(cfg.momentum) * v + g
                    st["v"] = v
                else:
                    v = g
                upd = v + dt(cfg.weight_decay) * theta if cfg.weight_decay else v
                params[k] = theta - dt(self.lr) * upd
            else:
                m = st.get("m", np.zeros_like(theta))
                s = st.get("v", np.zeros_like(theta))
                m = dt(cfg.beta1) * m + dt(1 - cfg.beta1) * g
                s = dt(cfg.beta2) * s + dt(1 - cfg.beta2) * (g * g)
                st["m"], st["v"] = m, s
                mhat = m / dt(1 - cfg.beta1 ** self.t)
                shat = s / dt(1 - cfg.beta2 ** self.t)
                params[k] = theta - dt(self.lr) * mhat / (np.sqrt(shat) + dt(cfg.eps))

    def end_epoch(self) -> None:
        """Apply step decay (SGD only) at an epoch boundary."""
        self.epoch += 1
        cfg = self.config
        if isinstance(cfg, SGD) and cfg.decay_every:
            self.lr = cfg.lr * cfg.decay_factor ** (self.epoch // cfg.decay_every)


def optimizer_step(optimizer: Optimizer, params, grads, network: Network | None = None):
    """One update of ``params`` in place; refuses to touch a locked network."""
    if network is not None and network.locked:
        raise LockedPartitionError("refusing to update a locked partition")
    optimizer.step(params, grads)
    return params
