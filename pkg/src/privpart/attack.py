"""Inference-time reconstruction attacks against a frozen local partition."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .defense import TrainingDivergedError
from .metrics import accuracy, mse, ssim_per_image
from .models import conv1d_decoder, deconv_decoder, dense_decoder
from .nn import Adam, Network, Optimizer, SGD
from .partition import BipartiteNetwork

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttackerSpec:
    name: str
    layers: tuple
    optimizer: Adam | SGD = Adam(1e-3)
    epochs: int = 10
    batch_size: int = 32
    description: str = ""

    def build(self, hidden_shape, dtype=np.float32) -> Network:
        return Network(list(self.layers), hidden_shape, dtype)


_MNIST_ROWS = [
    ("①", [800], ["relu"], None, "800 -> Relu -> Sigmoid"),
    ("②", [800], ["relu"], [0.1], "800 -> Relu -> dropout(0.1) -> Sigmoid"),
    ("③", [800], ["tanh"], None, "800 -> Tanh -> Sigmoid"),
    ("④", [800], ["sigmoid"], None, "800 -> Sigmoid -> Sigmoid"),
    ("⑤", [512], ["relu"], None, "512 -> Relu -> Sigmoid"),
    ("⑥", [1024], ["relu"], None, "1024 -> Relu -> Sigmoid"),
]


def builtin_catalog(image_shape: Sequence[int] = (28, 28), hidden_dim: int = 800,
                    epochs: int = 10, batch_size: int = 32) -> list[AttackerSpec]:
    """The eight MLP attackers for a flat hidden vector of ``hidden_dim`` units.

    Every attacker ends in a sigmoid layer of image size; ⑦ starts with a
    kernel-3 1-D convolution over the hidden vector and ⑧ is the sigmoid
    layer alone.
    """
    if hidden_dim < 1 or int(np.prod(image_shape)) < 1:
        raise ValueError("dimensions must be positive")
    specs = []
    for name, widths, acts, drops, desc in _MNIST_ROWS:
        layers = dense_decoder(hidden_dim, widths, acts, image_shape, dropouts=drops)
        specs.append(AttackerSpec(name, tuple(layers), epochs=epochs, batch_size=batch_size,
                                  description=desc))
    specs.append(AttackerSpec("⑦", tuple(conv1d_decoder(hidden_dim, image_shape)),
                              epochs=epochs, batch_size=batch_size,
                              description="1-D conv -> Relu -> Sigmoid"))
    specs.append(AttackerSpec("⑧", tuple(dense_decoder(hidden_dim, [], [], image_shape)),
                              epochs=epochs, batch_size=batch_size, description="Sigmoid"))
    return specs


def cnn_catalog(local: Network, image_shape: Sequence[int], fc_width: int = 1024,
                epochs: int = 10, batch_size: int = 32) -> list[AttackerSpec]:
    """DECONV, FC and SPARSE-FC attackers for a convolutional cut (tanh outputs)."""
    hidden = tuple(local.output_shape)
    flat = int(np.prod(hidden))
    fc = dense_decoder(flat, [fc_width], ["relu"], image_shape, "tanh", input_shape=hidden)
    sparse = dense_decoder(flat, [fc_width], ["relu"], image_shape, "tanh", dropouts=[0.5],
                           input_shape=hidden)
    return [
        AttackerSpec("DECONV", tuple(deconv_decoder(local, image_shape)), epochs=epochs,
                     batch_size=batch_size, description="mirrored deconvolution decoder"),
        AttackerSpec("FC", tuple(fc), epochs=epochs, batch_size=batch_size,
                     description=f"{fc_width} -> Relu -> Tanh"),
        AttackerSpec("SPARSE-FC", tuple(sparse), epochs=epochs, batch_size=batch_size,
                     description=f"{fc_width} -> Relu -> dropout(0.5) -> Tanh"),
    ]


def catalog_for(bipartite: BipartiteNetwork, epochs: int = 10, batch_size: int = 32,
                fc_width: int = 1024) -> list[AttackerSpec]:
    """Pick the MLP catalog for flat hidden states and the CNN catalog otherwise."""
    if len(bipartite.hidden_shape) == 1:
        return builtin_catalog(bipartite.input_shape, bipartite.hidden_shape[0], epochs,
                               batch_size)
    return cnn_catalog(bipartite.local, bipartite.input_shape, fc_width, epochs, batch_size)


@dataclass
class TrainedAttacker:
    spec: AttackerSpec
    network: Network
    best_val_mse: float
    best_epoch: int
    history: list = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.spec.name

    def reconstruct(self, h, clip: tuple = (0.0, 1.0)) -> np.ndarray:
        """Recover inputs from intercepted activations, clipped to the pixel range."""
        out = self.network.predict(np.asarray(h, dtype=self.network.dtype))
        return np.clip(out, *clip) if clip is not None else out


def _local_of(partition) -> Network:
    return partition.local if isinstance(partition, BipartiteNetwork) else partition


def train_attacker(local, spec: AttackerSpec, x_attack, seed: int = 0,
                   val_fraction: float = 0.1) -> TrainedAttacker:
    """Fit ``spec`` to invert the frozen local partition with an MSE loss.

    The attack data is split 90/10 (seeded); the checkpoint with the lowest
    validation MSE on clipped reconstructions is kept.
    """
    local = _local_of(local)
    x_attack = np.asarray(x_attack, dtype=local.dtype)
    h = local.predict(x_attack)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    order = rng.permutation(len(x_attack))
    n_val = max(1, int(round(val_fraction * len(order)))) if len(order) > 1 else 0
    val, tr = order[:n_val], order[n_val:]
    if len(tr) == 0:
        raise ValueError("attack data too small for a train/validation split")
    net = spec.build(local.output_shape, local.dtype)
    if tuple(net.output_shape) != tuple(local.input_shape):
        raise ad.ShapeError(f"attacker {spec.name} outputs {net.output_shape}, "
                            f"expected {local.input_shape}")
    net.init_params(np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,))))
    drop_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    optimizer = Optimizer(spec.optimizer)
    best = (np.inf, -1, dict(net.params))
    history = []
    for epoch in range(spec.epochs):
        perm = rng.permutation(tr)
        total = 0.0
        for start in range(0, len(perm), spec.batch_size):
            idx = perm[start:start + spec.batch_size]
            params = net.param_tensors()
            out = net.forward(h[idx], train=True, rng=drop_rng, params=params)
            loss = ad.mean(ad.square(ad.sub(out, Tensor(x_attack[idx]))))
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(f"attacker {spec.name}: non-finite loss "
                                            f"at epoch {epoch}")
            optimizer.step(net.params, ad.backward(loss, params))
            total += float(loss.data) * len(idx)
        optimizer.end_epoch()
        rec = np.clip(net.predict(h[val]), 0, 1) if n_val else None
        val_mse = mse(x_attack[val], rec) if n_val else total / len(tr)
        history.append((epoch, total / len(tr), val_mse))
        if val_mse < best[0]:
            best = (val_mse, epoch, dict(net.params))
        logger.debug("attacker %s epoch %d train %.5f val %.5f", spec.name, epoch,
                     total / len(tr), val_mse)
    net.params = best[2]
    return TrainedAttacker(spec, net, float(best[0]), best[1], history)


@dataclass
class AttackRow:
    attacker: str
    mse: float
    ssim: float
    reprint_accuracy: float


@dataclass
class AttackReport:
    rows: list[AttackRow]
    metadata: dict = field(default_factory=dict)

    @property
    def best_mse(self) -> AttackRow:
        return min(self.rows, key=lambda r: r.mse)

    @property
    def best_ssim(self) -> AttackRow:
        return max(self.rows, key=lambda r: r.ssim)

    @property
    def best_reprint(self) -> AttackRow:
        return max(self.rows, key=lambda r: r.reprint_accuracy)

    def row(self, name: str) -> AttackRow:
        for r in self.rows:
            if r.attacker == name:
                return r
        raise KeyError(name)

    META_COLUMNS = ("lam", "cut", "seed", "config_hash")

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["attacker", "mse", "ssim", "reprint_accuracy", *self.META_COLUMNS])
        meta = [self.metadata.get(k, "") for k in self.META_COLUMNS]
        for r in self.rows:
            w.writerow([r.attacker, repr(r.mse), repr(r.ssim), repr(r.reprint_accuracy), *meta])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_text(self) -> str:
        lines = ["attack report  " + "  ".join(f"{k}={v}" for k, v in
                                               sorted(self.metadata.items()))]
        lines.append(f"{'attacker':<12}{'MSE':>10}{'SSIM':>10}{'reprint':>10}")
        for r in self.rows:
            lines.append(f"{r.attacker:<12}{r.mse:>10.4f}{r.ssim:>10.4f}"
                         f"{r.reprint_accuracy:>10.4f}")
        lines.append(f"best MSE: {self.best_mse.attacker} ({self.best_mse.mse:.4f})  "
                     f"best SSIM: {self.best_ssim.attacker} ({self.best_ssim.ssim:.4f})")
        return "\n".join(lines)

    @classmethod
    def from_csv(cls, text: str) -> "AttackReport":
        rows, meta = [], {}
        for rec in csv.DictReader(io.StringIO(text)):
            rows.append(AttackRow(rec["attacker"], float(rec["mse"]), float(rec["ssim"]),
                                  float(rec["reprint_accuracy"])))
            meta = {k: rec[k] for k in cls.META_COLUMNS if rec.get(k)}
        return cls(rows, meta)


def evaluate_attack(partition: BipartiteNetwork, attackers: Iterable[TrainedAttacker], x_test,
                    y_test, metadata: dict | None = None) -> AttackReport:
    """Score trained attackers on held-out images.

    Reconstructions are clipped to [0, 1]; reprint accuracy classifies them
    with the composed model.
    """
    x_test = np.asarray(x_test, dtype=partition.dtype)
    h = partition.transform(x_test)
    rows = []
    for att in attackers:
        if not isinstance(att, TrainedAttacker):
            raise TypeError(f"{att!r} is not a trained attacker; call train_attacker first")
        rec = att.reconstruct(h)
        rows.append(AttackRow(att.name, mse(x_test, rec),
                              float(ssim_per_image(x_test, rec).mean()),
                              accuracy(partition.predict(rec), y_test)))
    if not rows:
        raise ValueError("no attackers to evaluate")
    meta = dict(partition.metadata)
    meta.setdefault("cut", partition.cut)
    meta.update(metadata or {})
    return AttackReport(rows, meta)


def run_attack(partition: BipartiteNetwork, specs: Sequence[AttackerSpec], x_attack, x_test,
               y_test, seed: int = 0, metadata: dict | None = None):
    """Train every attacker in ``specs`` and evaluate them; returns (report, attackers)."""
    trained = [train_attacker(partition.local, s, x_attack, seed=seed + 7919 * i)
               for i, s in enumerate(specs)]
    return evaluate_attack(partition, trained, x_test, y_test, metadata), trained


def sweep_table(reports: Sequence[AttackReport]) -> list[dict]:
    """Long-format rows (one per attacker per report), ordered by attacker then lam."""
    out = []
    names = [r.attacker for r in reports[0].rows] if reports else []
    for name in names:
        for rep in sorted(reports, key=lambda r: float(r.metadata.get("lam", 0))):
            row = rep.row(name)
            out.append({"attacker": name, "lam": rep.metadata.get("lam"), "mse": row.mse,
                        "ssim": row.ssim, "reprint_accuracy": row.reprint_accuracy})
    return out
