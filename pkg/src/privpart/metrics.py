"""Recovery metrics: MSE, SSIM, the training dissimilarity and reprint accuracy."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

K1, K2 = 0.01, 0.03
GAUSSIAN_SIGMA = 1.5
DISSIMILARITY_KINDS = ("mse", "one-minus-ssim")


def _aliases(kind: str) -> str:
    if kind == "ssim":
        return "one-minus-ssim"
    if kind not in DISSIMILARITY_KINDS:
        raise ValueError(f"unknown dissimilarity {kind!r}; expected one of {DISSIMILARITY_KINDS}")
    return kind


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def mse(x, y) -> float:
    """Mean squared error over every pixel of two equally shaped batches."""
    x = np.asarray(_data(x), dtype=np.float64)
    y = np.asarray(_data(y), dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"mse: shape mismatch {x.shape} vs {y.shape}")
    if x.size == 0:
        raise ValueError("mse: empty input")
    return float(np.mean((x - y) ** 2))


def gaussian_window(size: int = 11, sigma: float = GAUSSIAN_SIGMA) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def uniform_window(size: int = 7) -> np.ndarray:
    return np.full((size, size), 1.0 / (size * size))


def default_window(height: int, width: int) -> np.ndarray:
    """7x7 uniform for images under 32 pixels on a side, else 11x11 Gaussian."""
    if min(height, width) < 32:
        return uniform_window(7)
    return gaussian_window(11)


def _as_images(x: np.ndarray) -> np.ndarray:
    """View a single image or a batch as (N, H, W); channel axes are folded in."""
    if x.ndim == 2:
        return x[None]
    if x.ndim == 3:
        return x
    if x.ndim == 4:
        return x.reshape(-1, *x.shape[2:])
    raise ShapeError(f"expected an image or a batch of images, got shape {x.shape}")


def _filter(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    win = sliding_window_view(img, window.shape, axis=(-2, -1))
    return np.tensordot(win, window, axes=([-2, -1], [0, 1]))


def ssim_map(x, y, window=None, data_range: float = 1.0, k1: float = K1, k2: float = K2):
    """Per-window SSIM values for each image pair, shape (N, H', W')."""
    x = _as_images(np.asarray(_data(x), dtype=np.float64))
    y = _as_images(np.asarray(_data(y), dtype=np.float64))
    if x.shape != y.shape:
        raise ShapeError(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    if window is None:
        window = default_window(*x.shape[1:])
    window = np.asarray(window, dtype=np.float64)
    if x.shape[1] < window.shape[0] or x.shape[2] < window.shape[1]:
        raise ShapeError(f"ssim: image {x.shape[1:]} smaller than window {window.shape}")
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mx, my = _filter(x, window), _filter(y, window)
    sxx = _filter(x * x, window) - mx * mx
    syy = _filter(y * y, window) - my * my
    sxy = _filter(x * y, window) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(x, y, window=None, data_range: float = 1.0, k1: float = K1, k2: float = K2) -> float:
    """Structural similarity of two images, or the mean over a batch of pairs.

    The window is slid without padding; ``window`` defaults per
    :func:`default_window`. ``data_range`` is 1.0 for normalized images and
    255 for raw bytes.
    """
    m = ssim_map(x, y, window, data_range, k1, k2)
    return float(m.reshape(len(m), -1).mean(axis=1).mean())


def ssim_per_image(x, y, window=None, data_range: float = 1.0) -> np.ndarray:
    m = ssim_map(x, y, window, data_range)
    return m.reshape(len(m), -1).mean(axis=1)


def _ssim_tensor(x: Tensor, y: Tensor, data_range: float, window=None) -> Tensor:
    """Mean SSIM on the tape; inputs are (N, ...) with a trailing (H, W)."""
    h, w = x.shape[-2:]
    n = x.size // (h * w)
    if window is None:
        window = default_window(h, w)
    kh, kw = window.shape
    if h < kh or w < kw:
        raise ShapeError(f"ssim: image {(h, w)} smaller than window {window.shape}")
    kern = Tensor(window.reshape(1, 1, kh, kw).astype(x.dtype))
    x4 = ad.reshape(x, (n, 1, h, w))
    y4 = ad.reshape(y, (n, 1, h, w))

    def filt(t):
        return ad.conv2d(t, kern)

    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mx, my = filt(x4), filt(y4)
    mxx, myy, mxy = ad.square(mx), ad.square(my), ad.mul(mx, my)
    sxx = ad.sub(filt(ad.square(x4)), mxx)
    syy = ad.sub(filt(ad.square(y4)), myy)
    sxy = ad.sub(filt(ad.mul(x4, y4)), mxy)
    num = ad.mul(ad.shift(ad.scale(mxy, 2.0), c1), ad.shift(ad.scale(sxy, 2.0), c2))
    den = ad.mul(ad.shift(ad.add(mxx, myy), c1), ad.shift(ad.add(sxx, syy), c2))
    return ad.mean(ad.div(num, den))


def dissimilarity(kind: str, x, x_hat, data_range: float = 1.0, image_shape=None):
    """Distance between originals ``x`` and recoveries ``x_hat``.

    ``kind`` is ``"mse"`` or ``"one-minus-ssim"`` (``"ssim"`` is accepted as an
    alias). If either argument is a :class:`Tensor` the result is a scalar
    tensor on the tape; otherwise a float. ``image_shape`` reshapes flat rows
    back to (H, W) for SSIM.
    """
    kind = _aliases(kind)
    on_tape = isinstance(x, Tensor) or isinstance(x_hat, Tensor)
    if not on_tape:
        x, x_hat = np.asarray(x), np.asarray(x_hat)
        if image_shape is not None:
            x = x.reshape((-1,) + tuple(image_shape))
            x_hat = x_hat.reshape((-1,) + tuple(image_shape))
        if kind == "mse":
            return mse(x, x_hat)
        return 1.0 - ssim(x, x_hat, data_range=data_range)
    x_hat = ad.as_tensor(x_hat)
    x = ad.as_tensor(x)
    if x.dtype != x_hat.dtype and not x.requires_grad:
        x = Tensor(x.data.astype(x_hat.dtype))
    if x.shape != x_hat.shape:
        raise ShapeError(f"dissimilarity: shape mismatch {x.shape} vs {x_hat.shape}")
    if image_shape is not None:
        shape = (-1,) + tuple(image_shape)
        x, x_hat = ad.reshape(x, shape), ad.reshape(x_hat, shape)
    if kind == "mse":
        return ad.mean(ad.square(ad.sub(x, x_hat)))
    return ad.shift(ad.scale(_ssim_tensor(x, x_hat, data_range), -1.0), 1.0)


def accuracy(logits: np.ndarray, labels) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("accuracy: empty batch")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def reprint_accuracy(model, recovered, labels, batch_size: int = 1024) -> float:
    """Accuracy of ``model`` when classifying recovered inputs.

    ``model`` is anything with a ``predict`` returning logits, such as a
    :class:`~privpart.nn.Network` or a bipartite network.
    """
    recovered = np.asarray(recovered)
    labels = np.asarray(labels)
    if len(recovered) == 0:
        raise ValueError("reprint_accuracy: empty batch")
    if len(recovered) != len(labels):
        raise ShapeError(f"reprint_accuracy: {len(recovered)} inputs but {len(labels)} labels")
    return accuracy(model.predict(recovered, batch_size=batch_size), labels)
