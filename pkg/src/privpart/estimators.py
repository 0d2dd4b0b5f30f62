"""scikit-learn style wrappers around the training, attack and DP routines."""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .attack import builtin_catalog, train_attacker
from .defense import DefenderSuite, TrainingPlan, defender_by_name, train_with_defenders
from .dp import PixelationConfig, dp_pixelate
from .metrics import mse, ssim_per_image
from .models import mnist_mlp
from .nn import Adam
from .partition import BipartiteNetwork


def check_images(X, image_shape: Sequence[int] | None = None, dtype=np.float32) -> np.ndarray:
    """Validate a batch of images and reshape it to ``(N, *image_shape)``.

    Accepts flat rows or already-shaped images; values must be finite.
    """
    X = check_array(X, allow_nd=True, dtype=dtype, ensure_min_features=1)
    if image_shape is None:
        return X
    image_shape = tuple(image_shape)
    if int(np.prod(X.shape[1:])) != int(np.prod(image_shape)):
        raise ValueError(f"samples have {int(np.prod(X.shape[1:]))} values, "
                         f"expected images of shape {image_shape}")
    return X.reshape((len(X),) + image_shape)


def _infer_image_shape(X: np.ndarray) -> tuple:
    if X.ndim >= 3:
        return tuple(X.shape[1:])
    side = int(round(np.sqrt(X.shape[1])))
    if side * side != X.shape[1]:
        raise ValueError("flat samples must be square images; pass image_shape explicitly")
    return (side, side)


class PartitionedClassifier(ClassifierMixin, BaseEstimator):
    """MLP classifier trained with defender feedback and split at ``cut``.

    ``transform`` returns the activations the local partition would send.

    Args:
        hidden: width of every hidden layer.
        depth: number of hidden layers.
        dropout: drop probability before every hidden layer past the first.
        cut: layer name or index ending the local partition.
        lam: weight of the defender's dissimilarity in the training objective.
        defenders: names of the defenders trained alongside the model.
    """

    def __init__(self, hidden=800, depth=3, dropout=0.1, cut="fc2", lam=0.0,
                 defenders=("relu-800",), dissimilarity="one-minus-ssim", epochs=10,
                 batch_size=32, lr=1e-4, defender_lr=1e-3, defender_steps=1,
                 image_shape=None, random_state=0):
        self.hidden = hidden
        self.depth = depth
        self.dropout = dropout
        self.cut = cut
        self.lam = lam
        self.defenders = defenders
        self.dissimilarity = dissimilarity
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.defender_lr = defender_lr
        self.defender_steps = defender_steps
        self.image_shape = image_shape
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float32)
        shape = tuple(self.image_shape) if self.image_shape else _infer_image_shape(X)
        X = check_images(X, shape)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        net = mnist_mlp(self.hidden, self.depth, self.dropout, classes=len(self.classes_),
                        image_shape=shape)
        plan = TrainingPlan(lam=float(self.lam), epochs=self.epochs, batch_size=self.batch_size,
                            optimizer=Adam(self.lr), dissimilarity=self.dissimilarity,
                            defender_steps=self.defender_steps, seed=int(self.random_state))
        suite = None
        if self.defenders:
            suite = DefenderSuite([defender_by_name(n, self.hidden, shape, Adam(self.defender_lr))
                                   for n in self.defenders])
        result = train_with_defenders(net, self.cut, suite, plan, X, y_idx.astype(np.int64))
        self.partition_: BipartiteNetwork = result.bipartite
        self.training_log_ = result.log
        self.image_shape_ = shape
        self.n_features_in_ = int(np.prod(shape))
        return self

    def _images(self, X):
        check_is_fitted(self, "partition_")
        return check_images(X, self.image_shape_)

    def decision_function(self, X) -> np.ndarray:
        images = self._images(X)
        return self.partition_.predict(images)

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X).astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)  # checks fitted state before classes_ is read
        return self.classes_[np.argmax(scores, axis=1)]

    def transform(self, X) -> np.ndarray:
        """Hidden activations produced by the local partition."""
        images = self._images(X)
        return self.partition_.transform(images)


class ReconstructionAttacker(TransformerMixin, BaseEstimator):
    """Learn to invert a fitted partition's local side from images alone.

    ``fit(X)`` trains on images the attacker owns; ``transform(H)`` maps
    intercepted activations back to images.
    """

    def __init__(self, partition=None, architecture="①", epochs=10, batch_size=32, lr=1e-3,
                 random_state=0):
        self.partition = partition
        self.architecture = architecture
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def _bipartite(self) -> BipartiteNetwork:
        p = self.partition
        if isinstance(p, PartitionedClassifier):
            check_is_fitted(p, "partition_")
            return p.partition_
        if isinstance(p, BipartiteNetwork):
            return p
        raise TypeError("partition must be a fitted PartitionedClassifier or a BipartiteNetwork")

    def fit(self, X, y=None):
        bip = self._bipartite()
        if len(bip.hidden_shape) != 1:
            raise ValueError("the attacker catalog expects flat hidden activations")
        X = check_images(X, bip.input_shape)
        catalog = {s.name: s for s in builtin_catalog(bip.input_shape, bip.hidden_shape[0],
                                                      self.epochs, self.batch_size)}
        if self.architecture not in catalog:
            raise ValueError(f"unknown architecture {self.architecture!r}; "
                             f"choose from {sorted(catalog)}")
        spec = replace(catalog[self.architecture], optimizer=Adam(self.lr))
        self.attacker_ = train_attacker(bip.local, spec, X, seed=int(self.random_state))
        return self

    def transform(self, H) -> np.ndarray:
        check_is_fitted(self, "attacker_")
        bip = self._bipartite()
        H = check_images(H, bip.hidden_shape)
        return self.attacker_.reconstruct(H)

    def reconstruct(self, X) -> np.ndarray:
        """Recover images from the activations the partition produces for ``X``."""
        bip = self._bipartite()
        return self.transform(bip.transform(check_images(X, bip.input_shape)))

    def score(self, X, y=None) -> float:
        """Mean SSIM between ``X`` and its reconstruction (higher is a better attack)."""
        bip = self._bipartite()
        X = check_images(X, bip.input_shape)
        return float(ssim_per_image(X, self.reconstruct(X)).mean())

    def reconstruction_mse(self, X) -> float:
        bip = self._bipartite()
        X = check_images(X, bip.input_shape)
        return mse(X, self.reconstruct(X))


class DPPixelation(TransformerMixin, BaseEstimator):
    """Pixelate images into ``b x b`` cells and add Laplace noise per cell.

    ``transform`` is deterministic for a fixed ``random_state``.
    """

    def __init__(self, b=2, m=1, epsilon=1.0, scale=1.0, random_state=0):
        self.b = b
        self.m = m
        self.epsilon = epsilon
        self.scale = scale
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, allow_nd=True, dtype=np.float64)
        self.config_ = PixelationConfig(int(self.b), int(self.m), float(self.epsilon),
                                        float(self.scale))
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.image_shape_ = tuple(X.shape[1:]) if X.ndim >= 3 else _infer_image_shape(X)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "config_")
        X = check_array(X, allow_nd=True, dtype=np.float64)
        images = check_images(X, self.image_shape_, dtype=np.float64)
        noisy = dp_pixelate(images, self.config_, int(self.random_state))
        return noisy.reshape(X.shape)
