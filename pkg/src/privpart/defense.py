"""Adversarial training of a partitioned network against reconstruction defenders.

Each batch runs ``k`` optimizer steps for every defender (which learn to
invert the local partition), picks the defender with the lowest batch
dissimilarity, and then updates the model on

    cross_entropy(y, f(x)) - lam * d(x, defender(local(x)))

with the defender held fixed. With ``lam == 0`` the model update is bitwise
identical to plain supervised training.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .metrics import dissimilarity
from .models import conv1d_decoder, dense_decoder
from .nn import Adam, LockedPartitionError, Network, Optimizer, SGD, cross_entropy
from .partition import BipartiteNetwork, split

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class DefenderSpec:
    name: str
    layers: tuple
    optimizer: Adam | SGD = Adam(1e-3)

    def build(self, hidden_shape, dtype=np.float32) -> Network:
        return Network(list(self.layers), hidden_shape, dtype)


class Defender:
    """A defender network with its optimizer state and best checkpoint."""

    def __init__(self, spec: DefenderSpec, network: Network, rng: np.random.Generator):
        self.spec = spec
        self.network = network
        self.optimizer = Optimizer(spec.optimizer)
        self.rng = rng
        self.best_d = np.inf
        self.best_params = dict(network.params)

    @property
    def name(self) -> str:
        return self.spec.name


@dataclass
class DefenderSuite:
    specs: list[DefenderSpec]

    def __post_init__(self):
        self.specs = list(self.specs)
        if not self.specs:
            raise ValueError("a defender suite needs at least one defender")

    def __len__(self) -> int:
        return len(self.specs)


def mlp_defender(hidden_dim: int = 800, image_shape=(28, 28)) -> DefenderSpec:
    """The two-layer ReLU defender used for single-defender MNIST training."""
    return DefenderSpec("relu-800", tuple(dense_decoder(hidden_dim, [800], ["relu"],
                                                        image_shape)))


def mnist_defender_suite(hidden_dim: int = 800, image_shape=(28, 28)) -> DefenderSuite:
    """The four MNIST defenders: tanh, sigmoid, 1-D conv, and a single sigmoid layer."""
    return DefenderSuite([
        DefenderSpec("tanh-800", tuple(dense_decoder(hidden_dim, [800], ["tanh"], image_shape))),
        DefenderSpec("sigmoid-800",
                     tuple(dense_decoder(hidden_dim, [800], ["sigmoid"], image_shape))),
        DefenderSpec("conv1d", tuple(conv1d_decoder(hidden_dim, image_shape))),
        DefenderSpec("sigmoid-784", tuple(dense_decoder(hidden_dim, [], [], image_shape))),
    ])



def _defender_layers(name: str, hidden_dim: int, image_shape) -> list:
    if name == "conv1d":
        return conv1d_decoder(hidden_dim, image_shape)
    if name == "sigmoid-784":
        return dense_decoder(hidden_dim, [], [], image_shape)
    act, width = name.split("-")
    return dense_decoder(hidden_dim, [int(width)], [act], image_shape)


DEFENDER_NAMES = ("relu-800", "tanh-800", "sigmoid-800", "conv1d", "sigmoid-784")


def defender_by_name(name: str, hidden_dim: int = 800, image_shape=(28, 28),
                     optimizer: Adam | SGD | None = None) -> DefenderSpec:
    """Look up one of the named MNIST defenders."""
    if name not in DEFENDER_NAMES:
        raise KeyError(f"unknown defender {name!r}")
    return DefenderSpec(name, tuple(_defender_layers(name, hidden_dim, image_shape)),
                        optimizer if optimizer is not None else Adam(1e-3))

@dataclass
class TrainingPlan:
    lam: float = 0.0
    epochs: int = 1
    batch_size: int = 32
    optimizer: Adam | SGD = field(default_factory=lambda: Adam(1e-4))
    dissimilarity: str = "one-minus-ssim"
    defender_steps: int = 1
    seed: int = 0
    # whether the local partition runs with dropout while defenders train
    defender_local_train_mode: bool = False
    max_penalty: float = 1e6
    data_range: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.defender_steps < 1:
            raise ValueError("defender_steps must be at least 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def _stream(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


def defender_step(bipartite: BipartiteNetwork, defender: Defender, x,
                  kind: str = "one-minus-ssim", local_train: bool = False,
                  data_range: float = 1.0) -> float:
    """One update of the defender on a batch; the model is not touched.

    Returns the batch-mean dissimilarity before the update.
    """
    x = np.asarray(x, dtype=bipartite.dtype)
    h = bipartite.local.forward(x, train=local_train, rng=defender.rng).data
    params = defender.network.param_tensors()
    x_hat = defender.network.forward(h, train=True, rng=defender.rng, params=params)
    d = dissimilarity(kind, Tensor(x), x_hat, data_range=data_range)
    grads = ad.backward(d, params)
    defender.optimizer.step(defender.network.params, grads)
    return float(d.data)


def _merged(bipartite: BipartiteNetwork) -> dict[str, np.ndarray]:
    out = {f"local:{k}": v for k, v in bipartite.local.params.items()}
    out.update({f"remote:{k}": v for k, v in bipartite.remote.params.items()})
    return out


def _scatter(bipartite: BipartiteNetwork, merged: dict[str, np.ndarray]) -> None:
    for key, arr in merged.items():
        part, name = key.split(":", 1)
        getattr(bipartite, part).params[name] = arr


def model_objective(bipartite: BipartiteNetwork, defender_net: Network | None, x, y, lam: float,
                    kind: str, rng, params: dict[str, Tensor], data_range: float = 1.0):
    """Build the combined objective on the tape.

    ``params`` holds tensors keyed ``local:<key>`` / ``remote:<key>``. Returns
    ``(total, task_loss, d, logits)``; ``d`` is None without a defender.
    """
    lp = {k.split(":", 1)[1]: t for k, t in params.items() if k.startswith("local:")}
    rp = {k.split(":", 1)[1]: t for k, t in params.items() if k.startswith("remote:")}
    h = bipartite.local.forward(x, train=True, rng=rng, params=lp)
    logits = bipartite.remote.forward(h, train=True, rng=rng, params=rp)
    loss = cross_entropy(logits, y)
    if defender_net is None:
        return loss, loss, None, logits
    x_hat = defender_net.forward(h, train=False)
    d = dissimilarity(kind, Tensor(np.asarray(x, dtype=x_hat.dtype)), x_hat,
                      data_range=data_range)
    return ad.sub(loss, ad.scale(d, lam)), loss, d, logits


def model_step(bipartite: BipartiteNetwork, defender: Defender | Network | None, x, y,
               lam: float, kind: str, optimizer: Optimizer, rng: np.random.Generator,
               max_penalty: float = 1e6, data_range: float = 1.0):
    """One update of both partitions against a frozen defender.

    Returns ``(task_loss, d, batch_accuracy)``; ``d`` is NaN without a defender.
    """
    if bipartite.local.locked or bipartite.remote.locked:
        raise LockedPartitionError("model_step would modify a locked partition")
    x = np.asarray(x, dtype=bipartite.dtype)
    net = defender.network if isinstance(defender, Defender) else defender
    merged = _merged(bipartite)
    params = {k: Tensor(v, requires_grad=True) for k, v in merged.items()}
    total, loss, d, logits = model_objective(bipartite, net, x, y, lam, kind, rng, params,
                                             data_range)
    loss_v = float(loss.data)
    d_v = float(d.data) if d is not None else float("nan")
    if not np.isfinite(float(total.data)):
        raise TrainingDivergedError(f"non-finite objective (task loss {loss_v}, d {d_v})")
    if d is not None and lam * d_v > max_penalty:
        raise TrainingDivergedError(f"defender penalty {lam * d_v:.3g} exceeds {max_penalty:g}")
    grads = ad.backward(total, params)
    optimizer.step(merged, grads)
    _scatter(bipartite, merged)
    acc = float(np.mean(np.argmax(logits.data, axis=1) == np.asarray(y)))
    return loss_v, d_v, acc


@dataclass
class TrainingResult:
    bipartite: BipartiteNetwork
    defenders: list[Defender]
    log: list[dict]
    best_val_accuracy: float | None = None
    best_epoch: int | None = None


class TrainingLog:
    """Append-only CSV log: epoch, batch, loss, d per defender, selected, accuracy."""

    def __init__(self, n_defenders: int, path=None):
        self.columns = (["epoch", "batch", "loss"] + [f"d_{j}" for j in range(n_defenders)]
                        + ["selected", "accuracy"])
        self.rows: list[dict] = []
        self._fh = None
        if path is not None:
            self._fh = open(path, "w", newline="")
            self._writer = csv.DictWriter(self._fh, fieldnames=self.columns)
            self._writer.writeheader()

    def append(self, row: dict) -> None:
        self.rows.append(row)
        if self._fh is not None:
            self._writer.writerow({k: _fmt(row.get(k, "")) for k in self.columns})

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def train_with_defenders(network: Network, cut, suite: DefenderSuite | None, plan: TrainingPlan,
                         x, y, validation: tuple | None = None, log_path=None,
                         on_epoch=None) -> TrainingResult:
    """Train a partitioned network, optionally against a defender suite.

    ``network`` is initialized from ``plan.seed`` if it has no parameters.
    Random streams for shuffling, model dropout and each defender are
    independent, so adding defenders never changes the model's own masks.
    With ``validation=(x_val, y_val)`` the model checkpoint with the best
    composed validation accuracy is restored at the end.
    """
    x = np.asarray(x, dtype=network.dtype)
    y = np.asarray(y)
    if len(x) != len(y):
        raise ValueError(f"{len(x)} inputs but {len(y)} labels")
    if not network.params:
        network.init_params(_stream(plan.seed, 1))
    bip = split(network, cut)
    shuffle_rng, model_rng = _stream(plan.seed, 0), _stream(plan.seed, 2)

    defenders: list[Defender] = []
    if suite is not None:
        if len(suite) == 0:
            raise ValueError("empty defender suite")
        for j, spec in enumerate(suite.specs):
            net = spec.build(bip.hidden_shape, network.dtype)
            if tuple(net.output_shape) != tuple(bip.input_shape):
                raise ad.ShapeError(f"defender {spec.name} outputs {net.output_shape}, "
                                    f"model input is {bip.input_shape}")
            net.init_params(_stream(plan.seed, 100 + 2 * j))
            defenders.append(Defender(spec, net, _stream(plan.seed, 101 + 2 * j)))

    optimizer = Optimizer(plan.optimizer)
    log = TrainingLog(len(defenders), log_path)
    best_acc, best_epoch, best_params = None, None, None
    n = len(x)
    try:
        for epoch in range(plan.epochs):
            order = shuffle_rng.permutation(n)
            epoch_d = np.zeros(len(defenders))
            losses, accs, nb = [], [], 0
            for b, start in enumerate(range(0, n, plan.batch_size)):
                idx = order[start:start + plan.batch_size]
                xb, yb = x[idx], y[idx]
                ds = []
                for dfd in defenders:
                    for _ in range(plan.defender_steps):
                        dv = defender_step(bip, dfd, xb, plan.dissimilarity,
                                           plan.defender_local_train_mode, plan.data_range)
                    ds.append(dv)
                sel = int(np.argmin(ds)) if ds else None
                loss, _, acc = model_step(bip, defenders[sel] if ds else None, xb, yb, plan.lam,
                                          plan.dissimilarity, optimizer, model_rng,
                                          plan.max_penalty, plan.data_range)
                epoch_d += np.asarray(ds) if ds else 0
                losses.append(loss)
                accs.append(acc)
                nb += 1
                row = {"epoch": epoch, "batch": b, "loss": loss, "selected": sel if ds else "",
                       "accuracy": acc}
                row.update({f"d_{j}": v for j, v in enumerate(ds)})
                log.append(row)
            optimizer.end_epoch()
            mean_d = epoch_d / max(nb, 1)
            for j, dfd in enumerate(defenders):
                dfd.optimizer.end_epoch()
                if mean_d[j] < dfd.best_d:
                    dfd.best_d = float(mean_d[j])
                    dfd.best_params = dict(dfd.network.params)
            if validation is not None:
                acc = bip.accuracy(*validation)
                if best_acc is None or acc > best_acc:
                    best_acc, best_epoch = acc, epoch
                    best_params = (dict(bip.local.params), dict(bip.remote.params))
            else:
                acc = float(np.mean(accs)) if accs else float("nan")
            row = {"epoch": epoch, "batch": "end", "loss": float(np.mean(losses)) if losses
                   else float("nan"), "selected": "", "accuracy": acc}
            row.update({f"d_{j}": float(v) for j, v in enumerate(mean_d)})
            log.append(row)
            logger.info("epoch %d loss %.4f acc %.4f d %s", epoch, row["loss"], acc,
                        np.round(mean_d, 4).tolist())
            if on_epoch is not None:
                on_epoch(epoch, bip, defenders)
    finally:
        log.close()
    if best_params is not None:
        bip.local.params, bip.remote.params = best_params
    bip.metadata.update({"lam": plan.lam, "seed": plan.seed, "defenders": len(defenders),
                         "dissimilarity": plan.dissimilarity})
    return TrainingResult(bip, defenders, log.rows, best_acc, best_epoch)


def train_supervised(network: Network, cut, plan: TrainingPlan, x, y, validation=None,
                     log_path=None) -> TrainingResult:
    """Defender-free training of the same partitioned network."""
    return train_with_defenders(network, cut, None, plan, x, y, validation, log_path)


@dataclass
class OnlineUpdateReport:
    accuracy_before: float
    accuracy_after: float
    n_samples: int
    accepted: bool


def online_update_remote(bipartite: BipartiteNetwork, x_new, y_new, plan: TrainingPlan,
                         validation: tuple, max_drop: float | None = None):
    """Fine-tune the remote partition on new data with the local partition locked.

    Hidden activations are produced by the frozen local partition in eval
    mode, the remote partition is trained on them, and the composed network is
    validated before and after. If ``max_drop`` is set and validation accuracy
    falls by more than that, the update is rejected and the old remote kept.
    Returns ``(updated bipartite, report)``; the input object is not modified.
    """
    updated = bipartite.copy()
    updated.lock_local()
    before = updated.accuracy(*validation)
    x_new = np.asarray(x_new, dtype=updated.dtype)
    y_new = np.asarray(y_new)
    if len(x_new) == 0:
        return updated, OnlineUpdateReport(before, before, 0, False)
    h = updated.transform(x_new)
    remote = updated.remote
    optimizer = Optimizer(plan.optimizer)
    shuffle_rng, drop_rng = _stream(plan.seed, 10), _stream(plan.seed, 11)
    previous = dict(remote.params)
    for _ in range(plan.epochs):
        order = shuffle_rng.permutation(len(h))
        for start in range(0, len(h), plan.batch_size):
            idx = order[start:start + plan.batch_size]
            params = remote.param_tensors()
            loss = cross_entropy(remote.forward(h[idx], train=True, rng=drop_rng, params=params),
                                 y_new[idx])
            grads = ad.backward(loss, params)
            optimizer.step(remote.params, grads)
        optimizer.end_epoch()
    after = updated.accuracy(*validation)
    accepted = max_drop is None or after >= before - max_drop
    if not accepted:
        remote.params = previous
    return updated, OnlineUpdateReport(before, after, len(x_new), accepted)
