"""Command-line entry point: ``privpart <command> --config PATH [--set k=v] [--out DIR]``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 network error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import signal
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .attack import catalog_for, run_attack
from .config import ConfigError, ExperimentConfig, load_config
from .data import Dataset, load_mnist, stratified_split, synthetic_blobs
from .defense import DefenderSuite, TrainingPlan, defender_by_name, train_with_defenders
from .dp import dp_sweep, sweep_to_csv
from .metrics import accuracy
from .models import mnist_mlp, small_cnn
from .nn import Adam, Network, layer_from_dict
from .partition import BipartiteNetwork, load_partition, resolve_cut, save_partition
from .runtime import NetworkError, RemoteError, infer, serve_remote
from .wire import encode_tensor

log = logging.getLogger("privpart")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_NETWORK = 0, 1, 2, 3
PARTITION_FILE = "partition.ppart"

_CIRCLED = "①②③④⑤⑥⑦⑧"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    ds = cfg.dataset
    if ds.source == "mnist":
        train, test = load_mnist(ds.path, "train"), load_mnist(ds.path, "test")
    else:
        full = synthetic_blobs(ds.classes, ds.per_class, ds.side, ds.seed)
        train, test = stratified_split(full, ds.train_fraction, ds.seed)
    if ds.train_limit:
        train = train.head(ds.train_limit)
    if ds.test_limit:
        test = test.head(ds.test_limit)
    return train, test


def build_model(cfg: ExperimentConfig, image_shape: tuple) -> Network:
    m = cfg.model
    if m.kind == "mnist-mlp":
        return mnist_mlp(m.hidden, m.depth, m.dropout, classes=_classes(cfg),
                         image_shape=image_shape)
    if m.kind == "small-cnn":
        return small_cnn(side=image_shape[-1], classes=_classes(cfg))
    try:
        return Network([layer_from_dict(d) for d in m.layers], image_shape)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"model.layers: {e}") from e


def _classes(cfg: ExperimentConfig) -> int:
    return 10 if cfg.dataset.source == "mnist" else cfg.dataset.classes


def _require(cfg: ExperimentConfig, section: str):
    value = getattr(cfg, section)
    if value is None:
        raise ConfigError(f"{section}: section is required for this command")
    return value


def _partition_path(cfg: ExperimentConfig, override: str | None, out: Path) -> Path:
    return Path(override) if override else out / PARTITION_FILE


def _load_partition(path: Path) -> BipartiteNetwork:
    if not path.exists():
        raise FileNotFoundError(f"partition file {path} not found")
    return load_partition(path)


def _model_input(x: np.ndarray, bipartite: BipartiteNetwork) -> np.ndarray:
    return x.reshape((len(x),) + bipartite.input_shape).astype(bipartite.dtype)


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, artifacts: list[str]) -> Path:
    manifest = {
        "command": command,
        "config_hash": cfg.config_hash(),
        "config": cfg.canonical(),
        "seeds": cfg.seeds(),
        "versions": {"privpart": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        "artifacts": sorted(artifacts),
    }
    path = out / f"manifest-{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_rows(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v
                        for k, v in r.items() if k in columns})


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig, out: Path) -> list[str]:
    d = _require(cfg, "defense")
    train, _ = load_datasets(cfg)
    x, y = train.images, train.labels
    validation = None
    if d.validation_fraction > 0:
        tr, va = stratified_split(train, 1 - d.validation_fraction, cfg.dataset.seed)
        x, y, validation = tr.images, tr.labels, (va.images, va.labels)
    model = build_model(cfg, train.image_shape)
    x = x.reshape((len(x),) + model.input_shape)
    if validation is not None:
        validation = (validation[0].reshape((-1,) + model.input_shape), validation[1])
    plan = TrainingPlan(lam=d.lam, epochs=d.epochs, batch_size=d.batch_size,
                        optimizer=d.optimizer.build(), dissimilarity=d.dissimilarity,
                        defender_steps=d.steps, seed=d.seed)
    cuts = cfg.partition.cuts or [cfg.partition.cut]
    chash = cfg.config_hash()
    artifacts = []
    for cut in cuts:
        net = model if len(cuts) == 1 else build_model(cfg, train.image_shape)
        hidden = _hidden_dim(net, cut)
        suite = DefenderSuite([defender_by_name(n, hidden, model.input_shape,
                                                d.defender_optimizer.build())
                               for n in d.defenders]) if d.defenders else None
        result = train_with_defenders(net, cut, suite, plan, x, y, validation)
        result.bipartite.metadata["config_hash"] = chash
        suffix = "" if len(cuts) == 1 else f"-cut{cut}"
        ppath = out / (PARTITION_FILE if not suffix else f"partition{suffix}.ppart")
        save_partition(result.bipartite, ppath)
        n_def = len(result.defenders)
        columns = (["epoch", "batch", "loss"] + [f"d_{j}" for j in range(n_def)]
                   + ["selected", "accuracy", "config_hash"])
        lpath = out / f"training_log{suffix}.csv"
        _write_rows(lpath, columns, [dict(r, config_hash=chash) for r in result.log])
        artifacts += [ppath.name, lpath.name]
        print(f"cut {cut}: trained {len(x)} samples, wrote {ppath}")
    return artifacts


def _hidden_dim(net: Network, cut) -> int:
    i = resolve_cut(net, cut)
    return int(np.prod(net.shapes[i]))


def cmd_attack(cfg: ExperimentConfig, out: Path) -> list[str]:
    a = _require(cfg, "attack")
    bip = _load_partition(_partition_path(cfg, a.partition, out))
    train, test = load_datasets(cfg)
    specs = catalog_for(bip, a.epochs, a.batch_size)
    if a.attackers != "all":
        by_digit = {str(i): c for i, c in enumerate(_CIRCLED, start=1)}
        wanted = [by_digit.get(n, n) for n in a.attackers]
        known = {s.name for s in specs}
        unknown = [n for n in wanted if n not in known]
        if unknown:
            raise ConfigError(f"attack.attackers: unknown attacker(s) {unknown}; "
                              f"available {sorted(known)}")
        specs = [s for s in specs if s.name in wanted]
    specs = [replace(s, optimizer=Adam(a.lr)) for s in specs]
    report, _ = run_attack(bip, specs, _model_input(train.images, bip),
                           _model_input(test.images, bip), test.labels, seed=a.seed,
                           metadata={"config_hash": cfg.config_hash(), "seed": a.seed})
    path = out / "attack_report.csv"
    report.to_csv(path)
    print(report.to_text())
    return [path.name]


def cmd_eval(cfg: ExperimentConfig, out: Path) -> list[str]:
    bip = _load_partition(_partition_path(cfg, cfg.runtime.partition, out))
    _, test = load_datasets(cfg)
    acc = bip.accuracy(_model_input(test.images, bip), test.labels)
    rows = [{"metric": "test_accuracy", "value": acc},
            {"metric": "test_samples", "value": len(test)}]
    for k in ("lam", "defenders", "seed"):
        if k in bip.metadata:
            rows.append({"metric": k, "value": bip.metadata[k]})
    chash = cfg.config_hash()
    path = out / "eval.csv"
    _write_rows(path, ["metric", "value", "config_hash"],
                [dict(r, config_hash=chash) for r in rows])
    print(f"test accuracy {acc:.4f} on {len(test)} samples")
    return [path.name]


def cmd_dp(cfg: ExperimentConfig, out: Path) -> list[str]:
    dp = _require(cfg, "dp")
    bip = _load_partition(_partition_path(cfg, dp.partition, out))
    _, test = load_datasets(cfg)
    images = test.images.reshape((len(test),) + test.image_shape)

    class _Model:  # classify pixel-space images with the partitioned network
        def predict(self, x):
            return bip.predict(_model_input(np.asarray(x), bip))

    rows = dp_sweep(_Model(), images, test.labels, dp.epsilons, dp.b, dp.m, dp.scale, dp.seeds)
    path = out / "dp_sweep.csv"
    sweep_to_csv(rows, path, cfg.config_hash())
    for r in rows:
        print(f"epsilon {r.epsilon:g}: ssim {r.ssim:.4f} accuracy {r.accuracy:.4f}")
    return [path.name]


def cmd_serve(cfg: ExperimentConfig, out: Path) -> list[str]:
    rt = cfg.runtime
    bip = _load_partition(_partition_path(cfg, rt.partition, out))
    server = serve_remote(bip.remote, rt.host, rt.port, rt.max_concurrent, rt.max_payload,
                          hidden_shape=bip.hidden_shape)
    host, port = server.address
    print(f"serving remote partition on {host}:{port}", flush=True)
    signal.signal(signal.SIGTERM, lambda *_: (_ for _ in ()).throw(KeyboardInterrupt()))
    server.serve_until_interrupted()
    return []


def cmd_infer(cfg: ExperimentConfig, out: Path) -> list[str]:
    rt = cfg.runtime
    bip = _load_partition(_partition_path(cfg, rt.partition, out))
    _, test = load_datasets(cfg)
    sel = slice(rt.index, rt.index + rt.count)
    x, y = _model_input(test.images[sel], bip), test.labels[sel]
    if len(x) == 0:
        raise ConfigError(f"runtime.index: {rt.index} is past the end of the test set")
    labels, logits = infer(bip.local, (rt.host, rt.port), x, timeout=rt.timeout)
    path = out / "predictions.csv"
    chash = cfg.config_hash()
    _write_rows(path, ["index", "label", "prediction", "config_hash"],
                [{"index": rt.index + i, "label": int(t), "prediction": int(p),
                  "config_hash": chash} for i, (t, p) in enumerate(zip(y, labels))])
    print(f"accuracy {accuracy(logits, y):.4f} on {len(y)} samples via {rt.host}:{rt.port}")
    return [path.name]


def cmd_dump(cfg: ExperimentConfig, out: Path) -> list[str]:
    rt = cfg.runtime
    bip = _load_partition(_partition_path(cfg, rt.partition, out))
    _, test = load_datasets(cfg)
    x = _model_input(test.images[rt.index:rt.index + rt.count], bip)
    if len(x) == 0:
        raise ConfigError(f"runtime.index: {rt.index} is past the end of the test set")
    target = out / "activations"
    target.mkdir(exist_ok=True)
    artifacts = []
    _, local_acts = bip.local.forward(x, train=False, keep_activations=True)
    h = local_acts[-1].data
    _, remote_acts = bip.remote.forward(h, train=False, keep_activations=True)
    names = [("local", l) for l in bip.local.layers] + [("remote", l) for l in bip.remote.layers]
    for i, ((side, layer), act) in enumerate(zip(names, local_acts + remote_acts), start=1):
        label = layer.name or type(layer).__name__.lower()
        path = target / f"{i:02d}-{side}-{label}.ppt"
        path.write_bytes(encode_tensor(np.asarray(act.data, dtype=np.float32)))
        artifacts.append(f"activations/{path.name}")
    (target / "input.ppt").write_bytes(encode_tensor(x.astype(np.float32)))
    artifacts.append("activations/input.ppt")
    print(f"wrote {len(artifacts)} tensors to {target}")
    return artifacts


COMMANDS = {
    "train": (cmd_train, "train a partitioned network against defenders"),
    "attack": (cmd_attack, "train the attacker catalog against a partition"),
    "eval": (cmd_eval, "report composed test accuracy of a partition"),
    "dp-baseline": (cmd_dp, "sweep the DP pixelation baseline over epsilon"),
    "serve": (cmd_serve, "serve the remote partition over TCP"),
    "infer": (cmd_infer, "classify test images through a remote server"),
    "dump-activations": (cmd_dump, "write per-layer activations as tensor files"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privpart", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"privpart {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML experiment configuration")
        p.add_argument("--set", action="append", default=[], metavar="K=V",
                       help="override a config field, e.g. defense.lam=200 (repeatable)")
        p.add_argument("--out", default=".", help="output directory (default: .)")
        p.add_argument("--seed", type=int, default=None, help="replace every configured seed")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("PRIVPART_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    out = Path(args.out)
    try:
        cfg = load_config(args.config, args.set, args.seed)
        out.mkdir(parents=True, exist_ok=True)
        func = COMMANDS[args.command][0]
        artifacts = func(cfg, out)
        write_manifest(out, args.command, cfg, artifacts)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NetworkError, RemoteError) as e:
        print(f"network error: {e}", file=sys.stderr)
        return EXIT_NETWORK
    except Exception as e:
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
