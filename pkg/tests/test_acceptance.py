"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line; the lines are also
collected into the terminal summary. MNIST-backed criteria read the IDX files
from ``$PRIVPART_MNIST`` (default /root/data/mnist).
"""

import socket
import time
from pathlib import Path

import numpy as np
import pytest

from privpart import autodiff as ad
from privpart.attack import builtin_catalog, run_attack
from privpart.cli import main as cli_main
from privpart.data import load_mnist
from privpart.defense import (DefenderSuite, TrainingPlan, defender_by_name, mnist_defender_suite,
                              model_objective, online_update_remote, train_supervised,
                              train_with_defenders)
from privpart.dp import PixelationConfig, cell_means, dp_pixelate, dp_sweep, sensitivity
from privpart.metrics import dissimilarity, mse, ssim, uniform_window
from privpart.models import mnist_mlp, small_cnn
from privpart.nn import (Adam, Conv1d, Conv2d, Deconv2d, Dense, Dropout, Flatten, MaxPool2d,
                         Network, Reshape, cross_entropy)
from privpart.partition import compose, split
from privpart.runtime import RemoteClient, infer, serve_remote
from privpart.wire import HEADER, MAGIC, MessageType, encode_frame, encode_tensor, parse_header

from conftest import MNIST_DIR, record_criterion, requires_mnist
from oracles import loop_mse, naive_ssim

ROOT = Path(__file__).resolve().parents[1]
SEEDS = (0, 1, 2)
LAMBDAS = (0.0, 200.0, 500.0)

# desk-scale budget for the defender-weight and multi-defender criteria
DESK_TRAIN, DESK_TEST, DESK_EPOCHS, DESK_ATTACK_EPOCHS = 2000, 500, 2, 3


@pytest.fixture(scope="module")
def mnist():
    return load_mnist(MNIST_DIR, "train"), load_mnist(MNIST_DIR, "test")


# ---------------------------------------------------------------------------
# 1. gradient correctness
# ---------------------------------------------------------------------------

def _layer_case(layers, input_shape, seed=0, train=False):
    """Objective over the parameters and the input of a float64 stack."""
    net = Network(layers, input_shape, np.float64)
    params = dict(net.init_params(seed))
    gen = np.random.default_rng(seed + 1)
    params["x"] = gen.standard_normal((2,) + tuple(input_shape))
    weights = ad.Tensor(gen.standard_normal((2,) + tuple(net.output_shape)))

    def f(p):
        out = net.forward(p["x"], train=train, rng=np.random.default_rng(7), params=p)
        return ad.tsum(ad.mul(out, weights))

    return f, params


def _grad_cases():
    cases = {}
    for act in ("relu", "tanh", "sigmoid", "none"):
        cases[f"Dense[{act}]"] = _layer_case([Dense(12, 8, act)], (12,))
    cases["Conv2d"] = _layer_case([Conv2d(2, 3, 3, stride=2, padding=1, activation="relu")],
                                  (2, 7, 7))
    cases["Deconv2d"] = _layer_case([Deconv2d(2, 2, 3, stride=2, padding=1, output_padding=1,
                                              activation="tanh")], (2, 4, 4))
    cases["Conv1d"] = _layer_case([Conv1d(2, 3, 3, padding=1, activation="sigmoid")], (2, 20))
    cases["MaxPool2d"] = _layer_case([MaxPool2d(2)], (3, 6, 6))
    cases["Dropout"] = _layer_case([Dropout(0.3)], (60,), train=True)
    cases["Flatten"] = _layer_case([Flatten()], (3, 5, 5))
    cases["Reshape"] = _layer_case([Reshape((5, 12))], (60,))

    gen = np.random.default_rng(3)
    x = gen.random((2, 8, 8))
    for kind in ("mse", "one-minus-ssim"):
        cases[f"d[{kind}]"] = (lambda p, k=kind: dissimilarity(k, x, p["x_hat"]),
                               {"x_hat": gen.random((2, 8, 8))})

    net = mnist_mlp(hidden=10, depth=2, dropout=0.1, classes=3, image_shape=(8, 8),
                    dtype=np.float64)
    net.init_params(5)
    bip = split(net, "fc1")
    defender = Network([Dense(10, 64, "sigmoid"), Reshape((8, 8))], (10,), np.float64)
    defender.init_params(6)
    xb, yb = gen.random((4, 8, 8)), np.array([0, 1, 2, 1])
    theta = {f"local:{k}": v for k, v in bip.local.params.items()}
    theta.update({f"remote:{k}": v for k, v in bip.remote.params.items()})
    for kind in ("mse", "one-minus-ssim"):
        def objective(p, k=kind):
            return model_objective(bip, defender, xb, yb, 50.0, k, np.random.default_rng(9),
                                   p)[0]
        cases[f"combined[{kind}]"] = (objective, dict(theta))

    ce_net = Network([Flatten(), Dense(16, 8)], (4, 4), np.float64)
    ce_params = dict(ce_net.init_params(2))
    ce_x, ce_y = gen.random((3, 4, 4)), np.array([7, 0, 2])
    cases["cross_entropy"] = (lambda p: cross_entropy(ce_net.forward(ce_x, params=p), ce_y),
                              ce_params)
    return cases


def test_criterion_01_gradients():
    start = time.perf_counter()
    results = {name: ad.grad_check(f, params, probes=100, seed=11)
               for name, (f, params) in _grad_cases().items()}
    elapsed = time.perf_counter() - start
    worst = max(results.values(), key=lambda r: r.max_rel_error)
    ok_probes = all(r.probes >= 100 for r in results.values())
    passed = all(r.passed and r.max_rel_error < 1e-4 for r in results.values()) \
        and ok_probes and elapsed < 60
    failing = [n for n, r in results.items() if not r.passed]
    record_criterion(1, passed, f"{len(results)} checks, min probes "
                     f"{min(r.probes for r in results.values())}, worst rel err "
                     f"{worst.max_rel_error:.2e}, {elapsed:.1f}s, failing {failing}")
    assert ok_probes
    assert not failing, {n: str(results[n]) for n in failing}
    assert elapsed < 60


# ---------------------------------------------------------------------------
# 2. composition identity
# ---------------------------------------------------------------------------

def test_criterion_02_composition():
    gen = np.random.default_rng(0)
    x = gen.random((1000, 28, 28), dtype=np.float32)
    net = mnist_mlp()
    net.init_params(0)
    full = net.forward(x).data
    mismatches = []
    for cut in range(1, len(net)):
        bip = split(net, cut)
        if not np.array_equal(bip.remote.forward(bip.local.forward(x).data).data, full):
            mismatches.append(f"split@{cut}")
        if not np.array_equal(compose(bip).forward(x).data, full):
            mismatches.append(f"compose@{cut}")

    bip = split(net, "fc2")
    with serve_remote(bip.remote) as server:
        _, logits = infer(bip.local, server.address, x)
    networked = logits.tobytes() == full.tobytes()

    cnn = small_cnn(side=16, channels=(4, 8))
    cnn.init_params(1)
    xc = gen.random((1000, 1, 16, 16), dtype=np.float32)
    cfull = cnn.forward(xc).data
    cbip = split(cnn, "pool1")
    if not np.array_equal(cbip.remote.forward(cbip.local.forward(xc).data).data, cfull):
        mismatches.append("cnn-split@pool1")
    with serve_remote(cbip.remote) as server:
        _, clogits = infer(cbip.local, server.address, xc)
    cnn_networked = clogits.tobytes() == cfull.tobytes()

    passed = not mismatches and networked and cnn_networked
    record_criterion(2, passed, f"1000 inputs, {len(net) - 1} MLP cuts + CNN cut, "
                     f"mismatches {mismatches}, networked MLP {networked}, "
                     f"networked CNN {cnn_networked}")
    assert not mismatches
    assert networked and cnn_networked


# ---------------------------------------------------------------------------
# 3. metric oracles
# ---------------------------------------------------------------------------

def test_criterion_03_metric_oracles():
    gen = np.random.default_rng(42)
    window = uniform_window(7)
    ssim_err = mse_err = 0.0
    self_ok = sym_ok = True
    for _ in range(100):
        x, y = gen.random((16, 16)), gen.random((16, 16))
        s = ssim(x, y)
        ssim_err = max(ssim_err, abs(s - naive_ssim(x, y, window)))
        mse_err = max(mse_err, abs(mse(x, y) - loop_mse(x, y)))
        self_ok &= ssim(x, x) == 1.0
        sym_ok &= abs(s - ssim(y, x)) <= 1e-12
    passed = ssim_err < 1e-6 and mse_err < 1e-12 and self_ok and sym_ok
    record_criterion(3, passed, f"100 pairs 16x16: max |SSIM - naive| {ssim_err:.1e}, "
                     f"max |MSE - loop| {mse_err:.1e}, self {self_ok}, symmetric {sym_ok}")
    assert ssim_err < 1e-6 and mse_err < 1e-12
    assert self_ok and sym_ok


# ---------------------------------------------------------------------------
# 4. MNIST baseline accuracy
# ---------------------------------------------------------------------------

BASELINE_PLAN = TrainingPlan(lam=0.0, epochs=10, batch_size=32, optimizer=Adam(1e-4), seed=0)


@pytest.fixture(scope="module")
def ci_model(mnist):
    """lam = 0 MLP trained on the first 8,000 training images (the CI tier)."""
    train, _ = mnist
    sub = train.head(8000)
    start = time.perf_counter()
    res = train_supervised(mnist_mlp(), "fc2", BASELINE_PLAN, sub.images, sub.labels)
    return res.bipartite, time.perf_counter() - start


@requires_mnist
def test_criterion_04_mnist_baseline(mnist, ci_model):
    train, test = mnist
    ci_bip, ci_time = ci_model
    ci_acc = ci_bip.accuracy(test.images, test.labels)

    start = time.perf_counter()
    res = train_supervised(mnist_mlp(), "fc2", BASELINE_PLAN, train.images, train.labels)
    full_time = time.perf_counter() - start
    full_acc = res.bipartite.accuracy(test.images, test.labels)

    passed = full_acc >= 0.97 and ci_acc >= 0.94 and ci_time <= 300
    record_criterion(4, passed, f"full 60k: acc {full_acc:.4f} in {full_time / 60:.1f} min; "
                     f"8k tier: acc {ci_acc:.4f} in {ci_time:.0f}s")
    assert full_acc >= 0.97
    assert ci_acc >= 0.94 and ci_time <= 300


# ---------------------------------------------------------------------------
# 5 and 6. defender weight trend and multi-defender hardening
# ---------------------------------------------------------------------------

def _desk_run(train, test, lam, seed, suite):
    plan = TrainingPlan(lam=lam, epochs=DESK_EPOCHS, batch_size=32, optimizer=Adam(1e-4),
                        seed=seed)
    res = train_with_defenders(mnist_mlp(), "fc2", suite, plan, train.images, train.labels)
    bip = res.bipartite
    report, _ = run_attack(bip, builtin_catalog(epochs=DESK_ATTACK_EPOCHS), train.images,
                           test.images, test.labels, seed=seed)
    return {"accuracy": bip.accuracy(test.images, test.labels), "report": report}


@pytest.fixture(scope="module")
def desk_runs(mnist):
    train, test = mnist[0].head(DESK_TRAIN), mnist[1].head(DESK_TEST)
    runs = {}
    for lam in LAMBDAS:
        for seed in SEEDS:
            suite = DefenderSuite([defender_by_name("relu-800")])
            runs[("one", lam, seed)] = _desk_run(train, test, lam, seed, suite)
    for seed in SEEDS:
        runs[("four", 200.0, seed)] = _desk_run(train, test, 200.0, seed, mnist_defender_suite())
    return runs


def _mean(runs, key, lam, fn):
    return float(np.mean([fn(runs[(key, lam, s)]) for s in SEEDS]))


@requires_mnist
def test_criterion_05_lambda_trend(desk_runs):
    best_mse = [_mean(desk_runs, "one", lam, lambda r: r["report"].best_mse.mse)
                for lam in LAMBDAS]
    best_ssim = [_mean(desk_runs, "one", lam, lambda r: r["report"].best_ssim.ssim)
                 for lam in LAMBDAS]
    acc = [_mean(desk_runs, "one", lam, lambda r: r["accuracy"]) for lam in LAMBDAS]
    mse_up = all(b > a for a, b in zip(best_mse, best_mse[1:]))
    ssim_down = all(b < a for a, b in zip(best_ssim, best_ssim[1:]))
    acc_kept = all(abs(a - acc[0]) <= 0.03 for a in acc)
    fmt = lambda v: "/".join(f"{x:.4f}" for x in v)  # noqa: E731
    record_criterion(5, mse_up and ssim_down and acc_kept,
                     f"lam 0/200/500, 3 seeds: best MSE {fmt(best_mse)} (increasing {mse_up}); "
                     f"best SSIM {fmt(best_ssim)} (decreasing {ssim_down}); "
                     f"accuracy {fmt(acc)} (within 3pt {acc_kept})")
    assert mse_up, best_mse
    assert ssim_down, best_ssim
    assert acc_kept, acc


@requires_mnist
def test_criterion_06_multi_defender(desk_runs):
    ssim_one = _mean(desk_runs, "one", 200.0, lambda r: r["report"].best_ssim.ssim)
    ssim_four = _mean(desk_runs, "four", 200.0, lambda r: r["report"].best_ssim.ssim)
    names = [r.attacker for r in desk_runs[("one", 200.0, 0)]["report"].rows]
    degraded = []
    for name in names:
        one = _mean(desk_runs, "one", 200.0, lambda r: r["report"].row(name).mse)
        four = _mean(desk_runs, "four", 200.0, lambda r: r["report"].row(name).mse)
        if four > one:
            degraded.append(name)
    passed = ssim_four < ssim_one and len(degraded) >= 6
    record_criterion(6, passed, f"lam 200, 3 seeds: best SSIM 1 defender {ssim_one:.4f} vs "
                     f"4 defenders {ssim_four:.4f}; higher MSE under 4 defenders for "
                     f"{len(degraded)}/8 attackers {''.join(degraded)}")
    assert ssim_four < ssim_one
    assert len(degraded) >= 6


# ---------------------------------------------------------------------------
# 7. online update with a locked local partition
# ---------------------------------------------------------------------------

@requires_mnist
def test_criterion_07_online_update(mnist, ci_model):
    train, test = mnist
    bip, _ = ci_model
    sub = train.head(8000)
    local = {k: v.copy() for k, v in bip.local.params.items()}
    plan = TrainingPlan(epochs=1, batch_size=32, optimizer=Adam(1e-4), seed=0)
    updated, report = online_update_remote(bip, sub.images, sub.labels, plan,
                                           (test.images, test.labels))
    bitwise = all(np.array_equal(local[k], updated.local.params[k]) for k in local) \
        and updated.local.params.keys() == local.keys()
    drop = report.accuracy_before - report.accuracy_after
    passed = bitwise and drop <= 0.005
    record_criterion(7, passed, f"local params bitwise unchanged {bitwise}; test accuracy "
                     f"{report.accuracy_before:.4f} -> {report.accuracy_after:.4f}")
    assert bitwise
    assert drop <= 0.005


# ---------------------------------------------------------------------------
# 8. DP pixelation baseline
# ---------------------------------------------------------------------------

EPSILONS = (1e6, 5.0, 1.0, 0.5, 0.1)  # decreasing


@requires_mnist
def test_criterion_08_dp_baseline(mnist, ci_model, desk_runs):
    _, test = mnist
    bip, _ = ci_model
    exact = sensitivity(2, 1, 255) == 63.75

    cfg = PixelationConfig(b=2, m=1, epsilon=10.0, scale=255.0)
    cells = cell_means(dp_pixelate(np.full((634, 634), 127.5), cfg, seed=0), 2) - 127.5
    std_ratio = cells.std() / (np.sqrt(2) * cfg.sensitivity / cfg.epsilon)
    std_ok = cells.size >= 10 ** 5 and abs(std_ratio - 1) <= 0.03

    worst = 0.0
    gen = np.random.default_rng(0)
    for base in (np.zeros((4, 4)), np.full((4, 4), 255.0), gen.integers(0, 256, (4, 4)) * 1.0):
        ref = cell_means(base, 2)
        for i in range(4):
            for j in range(4):
                for v in range(256):
                    x = base.copy()
                    x[i, j] = v
                    worst = max(worst, float(np.abs(cell_means(x, 2) - ref).max()))
    brute_ok = worst == sensitivity(2, 1, 255)

    sub = test.head(1000)
    rows = dp_sweep(bip, sub.images, sub.labels, EPSILONS, seeds=SEEDS)
    acc = [r.accuracy for r in rows]
    ss = [r.ssim for r in rows]
    acc_trend = all(b <= a for a, b in zip(acc, acc[1:]))
    ssim_trend = all(b <= a for a, b in zip(ss, ss[1:]))

    # partition method: lam = 200 single-defender runs; DP at the largest epsilon whose
    # SSIM is no higher than the best attacker's SSIM against the partition
    part_ssim = _mean(desk_runs, "one", 200.0, lambda r: r["report"].best_ssim.ssim)
    part_acc = _mean(desk_runs, "one", 200.0, lambda r: r["accuracy"])
    matched = next((r for r in rows if r.ssim <= part_ssim), rows[-1])
    margin = part_acc - matched.accuracy
    margin_ok = margin >= 0.20

    passed = exact and std_ok and brute_ok and acc_trend and ssim_trend and margin_ok
    record_criterion(8, passed,
                     f"sensitivity exact {exact}; noise std ratio {std_ratio:.4f}; brute-force "
                     f"max change {worst} ; sweep eps {'/'.join(f'{e:g}' for e in EPSILONS)} "
                     f"acc {'/'.join(f'{a:.3f}' for a in acc)} (non-increasing {acc_trend}) "
                     f"ssim {'/'.join(f'{s:.3f}' for s in ss)} (non-increasing {ssim_trend}); "
                     f"partition acc {part_acc:.3f} at attacker SSIM {part_ssim:.3f} vs DP acc "
                     f"{matched.accuracy:.3f} at eps {matched.epsilon:g} (SSIM "
                     f"{matched.ssim:.3f}), margin {100 * margin:.1f}pt")
    assert exact and std_ok and brute_ok
    assert acc_trend and ssim_trend
    assert margin_ok


# ---------------------------------------------------------------------------
# 9. wire robustness
# ---------------------------------------------------------------------------

FUZZ_CAP = 1 << 20


def _fuzz_case(gen: np.random.Generator, i: int) -> bytes:
    """One malformed byte stream; the category cycles with ``i``."""
    valid = encode_frame(MessageType.INFER_REQ,
                         encode_tensor(gen.standard_normal((2, 800)).astype(np.float32)))
    kind = i % 14
    if kind == 0:  # bad magic
        magic = gen.bytes(4)
        magic = magic if magic != MAGIC else b"XPW1"
        return magic + gen.bytes(int(gen.integers(5, 40)))
    if kind == 1:  # unknown message type
        t = int(gen.choice([0] + list(range(6, 256))))
        return encode_frame(t, gen.bytes(int(gen.integers(0, 30))))
    if kind == 2:  # truncated header
        return valid[:int(gen.integers(1, HEADER.size))]
    if kind == 3:  # oversized declared payload
        n = int(gen.integers(FUZZ_CAP + 1, 2 ** 32))
        return HEADER.pack(MAGIC, MessageType.INFER_REQ, n) + gen.bytes(int(gen.integers(0, 64)))
    if kind == 4:  # bad dtype tag
        tensor = bytearray(valid[HEADER.size:])
        tensor[0] = int(gen.choice([0] + list(range(2, 256))))
        return encode_frame(MessageType.INFER_REQ, bytes(tensor))
    if kind == 5:  # rank 0 or above the limit
        rank = int(gen.choice([0, 9, 200, 255]))
        dims = np.ones(min(rank, 255), dtype="<u4").tobytes()
        return encode_frame(MessageType.INFER_REQ, bytes([1, rank]) + dims + gen.bytes(8))
    if kind == 6:  # data length disagrees with dims
        tensor = valid[HEADER.size:]
        cut = int(gen.integers(-400, 400)) or 1
        body = tensor[:cut] if cut < 0 else tensor + gen.bytes(cut)
        return encode_frame(MessageType.INFER_REQ, body)
    if kind == 7:  # dims whose product overflows 32 and 64 bits
        rank = int(gen.integers(1, 9))
        dims = gen.integers(2 ** 16, 2 ** 32, size=rank, dtype=np.uint64).astype("<u4")
        return encode_frame(MessageType.INFER_REQ, bytes([1, rank]) + dims.tobytes()
                            + gen.bytes(16))
    if kind == 8:  # well-formed tensor of the wrong shape
        shape = tuple(int(d) for d in gen.integers(1, 6, size=int(gen.integers(1, 4))))
        return encode_frame(MessageType.INFER_REQ,
                            encode_tensor(gen.random(shape, dtype=np.float32)))
    if kind == 9:  # payload shorter than declared, then the client hangs up
        return valid[:int(gen.integers(HEADER.size, len(valid) - 1))]
    if kind == 10:  # response types sent by a client
        t = int(gen.choice([MessageType.INFER_RESP, MessageType.ERROR, MessageType.PONG]))
        return encode_frame(t, gen.bytes(int(gen.integers(0, 20))))
    if kind == 11:  # random bytes
        return gen.bytes(int(gen.integers(1, 200)))
    if kind == 12:  # one flipped bit in the frame or tensor header
        data = bytearray(valid)
        pos = int(gen.integers(0, HEADER.size + 10))
        data[pos] ^= 1 << int(gen.integers(0, 8))
        return bytes(data)
    # several malformed frames back to back
    return (encode_frame(0x42, b"x") + encode_frame(MessageType.INFER_REQ, b"\x01\x01")
            + b"JUNKJUNKJUNK")


def _exchange(address, data: bytes) -> tuple[list[int], str]:
    """Send ``data``, half-close, and read frames until the server disconnects."""
    kinds = []
    with socket.create_connection(address, timeout=5) as s:
        try:
            s.sendall(data)
            s.shutdown(socket.SHUT_WR)
            buf = b""
            while True:
                chunk = s.recv(65536)
                if not chunk:
                    break
                buf += chunk
                while len(buf) >= HEADER.size:
                    kind, length = parse_header(buf[:HEADER.size])
                    if len(buf) < HEADER.size + length:
                        break
                    kinds.append(kind)
                    buf = buf[HEADER.size + length:]
        except ConnectionResetError:
            return kinds, "reset"
        except socket.timeout:
            return kinds, "hang"
    return kinds, "eof" if not buf else "partial"


def test_criterion_09_wire_fuzz(capfd):
    net = mnist_mlp()
    net.init_params(0)
    bip = split(net, "fc2")
    gen = np.random.default_rng(2024)
    outcomes = {"eof": 0, "reset": 0, "hang": 0, "partial": 0}
    non_error = 0
    n_error = 0
    with serve_remote(bip.remote, max_payload=FUZZ_CAP, idle_timeout=5.0) as server:
        for i in range(10000):
            kinds, end = _exchange(server.address, _fuzz_case(gen, i))
            outcomes[end] += 1
            n_error += sum(k == MessageType.ERROR for k in kinds)
            non_error += sum(k != MessageType.ERROR for k in kinds)
        with RemoteClient(*server.address) as client:
            alive = client.ping(b"still here") == b"still here"
    err = capfd.readouterr().err
    crashed = "Traceback" in err or "Exception occurred" in err
    passed = (alive and not crashed and non_error == 0 and outcomes["hang"] == 0
              and outcomes["partial"] == 0 and outcomes["reset"] == 0)
    record_criterion(9, passed, f"10000 cases: {n_error} ERROR frames, {non_error} other "
                     f"frames, endings {outcomes}, server alive {alive}, "
                     f"handler exceptions {crashed}")
    assert alive and not crashed
    assert non_error == 0
    assert outcomes["hang"] == 0 and outcomes["partial"] == 0 and outcomes["reset"] == 0


# ---------------------------------------------------------------------------
# 10. reproducibility through the command line
# ---------------------------------------------------------------------------

def _cli_twice(tmp_path, config, overrides):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        for command in ("train", "attack"):
            args = [command, "--config", str(config), "--out", str(out)]
            for o in overrides:
                args += ["--set", o]
            assert cli_main(args) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())
                        if p.suffix in (".ppart", ".csv")})
    return outputs


def test_criterion_10_reproducibility(tmp_path):
    runs = {"synthetic": _cli_twice(tmp_path / "syn", ROOT / "configs" / "synthetic.toml", [])}
    if (MNIST_DIR / "train-images-idx3-ubyte").exists() or \
            (MNIST_DIR / "train-images-idx3-ubyte.gz").exists():
        runs["mnist"] = _cli_twice(tmp_path / "mnist", ROOT / "configs" / "mnist.toml",
                                   [f"dataset.path={str(MNIST_DIR)!r}",
                                    "dataset.train_limit=1000", "dataset.test_limit=200",
                                    "defense.epochs=1", "defense.lam=200", "attack.epochs=1"])
    details, passed = [], True
    for name, (a, b) in runs.items():
        same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
        expected = {"partition.ppart", "training_log.csv", "attack_report.csv"} <= a.keys()
        passed &= same and expected
        details.append(f"{name}: {len(a)} files identical {same}")
    record_criterion(10, passed, "; ".join(details))
    assert passed
