"""Differentially private pixelation baseline.

Images are averaged over ``b x b`` cells and each cell mean receives one
Laplace draw of scale ``sensitivity / epsilon``, where two images are
neighbours if they differ in at most ``m`` pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import accuracy, ssim_per_image


@dataclass(frozen=True)
class PixelationConfig:
    b: int = 2
    m: int = 1
    epsilon: float = 1.0
    scale: float = 1.0  # pixel range L: 1.0 for normalized images, 255 for bytes

    def __post_init__(self):
        if self.b < 1 or self.m < 1:
            raise ValueError("b and m must be at least 1")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.scale not in (1.0, 255.0):
            raise ValueError("scale must be 1.0 or 255")

    @property
    def sensitivity(self) -> float:
        return sensitivity(self.b, self.m, self.scale)


def sensitivity(b: int, m: int, scale: float = 255.0) -> float:
    """Largest change of any cell mean when ``m`` pixels change by at most ``scale``."""
    return scale * m / (b * b)


def _as_batch(image) -> tuple[np.ndarray, tuple]:
    x = np.asarray(image, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty image")
    if x.ndim < 2:
        raise ValueError(f"expected a 2-D image or a batch of images, got shape {x.shape}")
    return x.reshape((-1,) + x.shape[-2:]), x.shape


def cell_means(image, b: int) -> np.ndarray:
    """Per-cell means, edge cells computed after replicate padding."""
    x, _ = _as_batch(image)
    n, h, w = x.shape
    ph, pw = -h % b, -w % b
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="edge")
    hp, wp = x.shape[1:]
    return x.reshape(n, hp // b, b, wp // b, b).mean(axis=(2, 4))


def _expand(cells: np.ndarray, b: int, shape: tuple) -> np.ndarray:
    h, w = shape[-2:]
    full = np.repeat(np.repeat(cells, b, axis=1), b, axis=2)[:, :h, :w]
    return full.reshape(shape)


def pixelate(image, b: int) -> np.ndarray:
    """Replace every ``b x b`` cell by its mean; output has the input's shape."""
    if b < 1:
        raise ValueError("b must be at least 1")
    x, shape = _as_batch(image)
    return _expand(cell_means(x, b), b, shape)


def laplace_noise(scale: float, size, rng: np.random.Generator) -> np.ndarray:
    """Laplace(0, scale) samples by inverse CDF of seeded uniforms."""
    u = rng.random(size) - 0.5
    return -scale * np.sign(u) * np.log1p(-2 * np.abs(u))


def dp_pixelate(image, config: PixelationConfig, seed: int | np.random.Generator = 0):
    """Pixelate and add one Laplace draw per cell, then clip to [0, scale]."""
    if not config.epsilon > 0:
        raise ValueError("epsilon must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x, shape = _as_batch(image)
    cells = cell_means(x, config.b)
    noisy = cells + laplace_noise(config.sensitivity / config.epsilon, cells.shape, rng)
    return np.clip(_expand(noisy, config.b, shape), 0.0, config.scale)


@dataclass
class SweepRow:
    epsilon: float
    ssim: float
    accuracy: float
    ssim_std: float = 0.0
    accuracy_std: float = 0.0


def dp_sweep(model, x_test, y_test, epsilons: Sequence[float], b: int = 2, m: int = 1,
             scale: float = 1.0, seeds: Sequence[int] = (0,)) -> list[SweepRow]:
    """SSIM against the originals and model accuracy on DP-pixelated test images.

    Values are averaged over ``seeds``; ``model`` needs a ``predict`` method
    returning logits for inputs shaped like ``x_test``.
    """
    x_test = np.asarray(x_test)
    y_test = np.asarray(y_test)
    rows = []
    for eps in epsilons:
        cfg = PixelationConfig(b, m, float(eps), scale)
        ss, accs = [], []
        for seed in seeds:
            noisy = dp_pixelate(x_test, cfg, seed).astype(x_test.dtype)
            ss.append(float(ssim_per_image(x_test, noisy, data_range=scale).mean()))
            accs.append(accuracy(model.predict(noisy), y_test))
        rows.append(SweepRow(float(eps), float(np.mean(ss)), float(np.mean(accs)),
                             float(np.std(ss)), float(np.std(accs))))
    return rows


def sweep_to_csv(rows: Sequence[SweepRow], path=None, config_hash: str = "") -> str:
    lines = ["epsilon,ssim,accuracy,config_hash"]
    lines += [f"{r.epsilon!r},{r.ssim!r},{r.accuracy!r},{config_hash}" for r in rows]
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
