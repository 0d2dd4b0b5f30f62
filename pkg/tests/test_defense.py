import csv

import numpy as np
import pytest

from privpart import autodiff as ad
from privpart.data import synthetic_blobs
from privpart.defense import (Defender, DefenderSpec, DefenderSuite, TrainingDivergedError,
                              TrainingPlan, defender_by_name, defender_step, mlp_defender,
                              mnist_defender_suite, model_objective, model_step,
                              online_update_remote, train_supervised, train_with_defenders)
from privpart.models import dense_decoder, mnist_mlp
from privpart.nn import SGD, Adam, Dense, LockedPartitionError, Network, Optimizer
from privpart.partition import BipartiteNetwork, split


def snapshot(net):
    return {k: v.copy() for k, v in net.params.items()}


def same(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


@pytest.fixture(scope="module")
def blobs():
    return synthetic_blobs(classes=3, per_class=40, side=8, seed=0)


def tiny_setup(dtype=np.float32, dropout=0.1):
    net = mnist_mlp(hidden=16, depth=2, dropout=dropout, classes=3, image_shape=(8, 8),
                    dtype=dtype)
    net.init_params(0)
    bip = split(net, "fc1")
    spec = DefenderSpec("lin", tuple(dense_decoder(16, [], [], (8, 8))), Adam(1e-2))
    dnet = spec.build(bip.hidden_shape, dtype)
    dnet.init_params(1)
    return bip, Defender(spec, dnet, np.random.default_rng(2))


class TestDefenderStep:
    def test_model_is_frozen(self, blobs):
        bip, dfd = tiny_setup()
        local, remote, before = snapshot(bip.local), snapshot(bip.remote), snapshot(dfd.network)
        defender_step(bip, dfd, blobs.images[:16])
        assert same(local, bip.local.params) and same(remote, bip.remote.params)
        assert not same(before, dfd.network.params)

    def test_recovers_orthogonal_linear_map(self):
        rng = np.random.default_rng(0)
        n = 8
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        local = Network([Dense(n, n, "none")], (n,), np.float64)
        local.params = {"1.weight": q, "1.bias": np.zeros(n)}
        remote = Network([Dense(n, 2)], (n,), np.float64)
        remote.init_params(0)
        bip = BipartiteNetwork(local, remote, 1)
        spec = DefenderSpec("lin", (Dense(n, n, "none"),), SGD(1.0))
        dnet = spec.build((n,), np.float64)
        dnet.init_params(1)
        dfd = Defender(spec, dnet, rng)
        x = rng.standard_normal((64, n))
        ds = [defender_step(bip, dfd, x, kind="mse") for _ in range(200)]
        assert all(b <= a for a, b in zip(ds, ds[1:]))
        assert ds[-1] < 1e-3

    def test_shape_error(self):
        bip, dfd = tiny_setup()
        with pytest.raises(ad.ShapeError):
            defender_step(bip, dfd, np.zeros((4, 9, 9), np.float32))


class TestModelStep:
    def test_defender_is_frozen(self, blobs):
        bip, dfd = tiny_setup()
        before = snapshot(dfd.network)
        opt = Optimizer(Adam(1e-3))
        model_step(bip, dfd, blobs.images[:16], blobs.labels[:16], 5.0, "mse", opt,
                   np.random.default_rng(0))
        assert same(before, dfd.network.params)

    def test_lambda_zero_matches_plain_step(self, blobs):
        x, y = blobs.images[:16], blobs.labels[:16]
        a, dfd = tiny_setup()
        b, _ = tiny_setup()
        model_step(a, dfd, x, y, 0.0, "one-minus-ssim", Optimizer(Adam(1e-3)),
                   np.random.default_rng(5))
        model_step(b, None, x, y, 0.0, "one-minus-ssim", Optimizer(Adam(1e-3)),
                   np.random.default_rng(5))
        assert same(a.local.params, b.local.params) and same(a.remote.params, b.remote.params)

    @pytest.mark.parametrize("kind", ["mse", "one-minus-ssim"])
    def test_combined_objective_gradient(self, blobs, kind):
        bip, dfd = tiny_setup(np.float64, dropout=0.0)
        x = blobs.images[:6].astype(np.float64)
        y = blobs.labels[:6]
        params = {f"local:{k}": v for k, v in bip.local.params.items()}
        params.update({f"remote:{k}": v for k, v in bip.remote.params.items()})

        def f(p):
            return model_objective(bip, dfd.network, x, y, 3.0, kind, None, p)[0]

        res = ad.grad_check(f, params, probes=120, seed=1)
        assert res.passed, str(res)
        assert res.max_rel_error < 1e-4

    def test_remote_gradient_ignores_defender_term(self, blobs):
        bip, dfd = tiny_setup(np.float64, dropout=0.0)
        x, y = blobs.images[:6].astype(np.float64), blobs.labels[:6]
        grads = []
        for lam in (0.0, 7.0):
            p = {f"local:{k}": ad.Tensor(v, requires_grad=True) for k, v in bip.local.params.items()}
            p.update({f"remote:{k}": ad.Tensor(v, requires_grad=True)
                      for k, v in bip.remote.params.items()})
            grads.append(ad.backward(model_objective(bip, dfd.network, x, y, lam, "mse", None,
                                                     p)[0], p))
        for k in grads[0]:
            if k.startswith("remote:"):
                np.testing.assert_allclose(grads[0][k], grads[1][k], atol=1e-15)
            else:
                assert not np.allclose(grads[0][k], grads[1][k])

    def test_divergence_guard(self, blobs):
        bip, dfd = tiny_setup()
        with pytest.raises(TrainingDivergedError):
            model_step(bip, dfd, blobs.images[:8], blobs.labels[:8], 1e9, "mse",
                       Optimizer(Adam(1e-3)), np.random.default_rng(0))
        key = sorted(bip.remote.params)[-1]
        bip.remote.params[key] = np.full_like(bip.remote.params[key], np.nan)
        with pytest.raises(TrainingDivergedError):
            model_step(bip, None, blobs.images[:8], blobs.labels[:8], 0.0, "mse",
                       Optimizer(Adam(1e-3)),
                       np.random.default_rng(0))

    def test_locked(self, blobs):
        bip, dfd = tiny_setup()
        bip.lock_local()
        with pytest.raises(LockedPartitionError):
            model_step(bip, dfd, blobs.images[:8], blobs.labels[:8], 1.0, "mse",
                       Optimizer(Adam(1e-3)), np.random.default_rng(0))


def make_net():
    return mnist_mlp(hidden=16, depth=2, classes=3, image_shape=(8, 8))


class TestTraining:
    plan = TrainingPlan(lam=0.0, epochs=2, batch_size=16, optimizer=Adam(1e-3), seed=3)

    def test_lambda_zero_equals_defender_free(self, blobs):
        suite = DefenderSuite([defender_by_name("relu-800", 16, (8, 8))])
        a = train_with_defenders(make_net(), "fc1", suite, self.plan, blobs.images, blobs.labels)
        b = train_supervised(make_net(), "fc1", self.plan, blobs.images, blobs.labels)
        assert same(a.bipartite.local.params, b.bipartite.local.params)
        assert same(a.bipartite.remote.params, b.bipartite.remote.params)

    def test_same_seed_reproducible(self, blobs):
        plan = TrainingPlan(lam=0.5, epochs=1, batch_size=16, optimizer=Adam(1e-3), seed=1)
        suite = DefenderSuite([defender_by_name("tanh-800", 16, (8, 8))])
        a = train_with_defenders(make_net(), "fc1", suite, plan, blobs.images, blobs.labels)
        b = train_with_defenders(make_net(), "fc1", suite, plan, blobs.images, blobs.labels)
        assert same(a.bipartite.local.params, b.bipartite.local.params)
        assert a.log == b.log

    def test_selects_lowest_d_each_batch(self, blobs, tmp_path):
        plan = TrainingPlan(lam=0.1, epochs=1, batch_size=16, optimizer=Adam(1e-3), seed=0)
        suite = DefenderSuite([defender_by_name(n, 16, (8, 8)) for n in
                               ("tanh-800", "sigmoid-800", "conv1d", "sigmoid-784")])
        res = train_with_defenders(make_net(), "fc1", suite, plan, blobs.images, blobs.labels,
                                   log_path=tmp_path / "log.csv")
        batches = [r for r in res.log if r["batch"] != "end"]
        assert len(batches) == int(np.ceil(len(blobs) / 16))
        for r in batches:
            ds = [r[f"d_{j}"] for j in range(4)]
            assert r["selected"] == int(np.argmin(ds))
        with open(tmp_path / "log.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["epoch", "batch", "loss", "d_0", "d_1", "d_2", "d_3",
                                 "selected", "accuracy"]
        assert len(rows) == len(res.log)

    def test_validation_checkpoint(self, blobs):
        plan = TrainingPlan(epochs=3, batch_size=16, optimizer=Adam(1e-3), seed=0)
        res = train_supervised(make_net(), "fc1", plan, blobs.images, blobs.labels,
                               validation=(blobs.images, blobs.labels))
        assert res.bipartite.accuracy(blobs.images, blobs.labels) == res.best_val_accuracy

    def test_empty_suite_and_bad_plan(self):
        with pytest.raises(ValueError):
            DefenderSuite([])
        with pytest.raises(ValueError):
            TrainingPlan(lam=-1)
        with pytest.raises(ValueError):
            TrainingPlan(defender_steps=0)

    def test_defender_shape_checked(self, blobs):
        suite = DefenderSuite([defender_by_name("relu-800", 16, (7, 7))])
        with pytest.raises(ad.ShapeError):
            train_with_defenders(make_net(), "fc1", suite, self.plan, blobs.images, blobs.labels)


class TestCatalog:
    def test_named_defenders(self):
        assert mlp_defender().name == "relu-800"
        suite = mnist_defender_suite()
        assert [s.name for s in suite.specs] == ["tanh-800", "sigmoid-800", "conv1d",
                                                 "sigmoid-784"]
        for s in suite.specs:
            assert s.build((800,)).output_shape == (28, 28)
        with pytest.raises(KeyError):
            defender_by_name("gan")


class TestOnlineUpdate:
    @pytest.fixture(scope="class")
    @classmethod
    def trained(cls, blobs):
        plan = TrainingPlan(epochs=5, batch_size=16, optimizer=Adam(1e-3), seed=0)
        return train_supervised(make_net(), "fc1", plan, blobs.images, blobs.labels).bipartite

    def test_local_bitwise_and_accuracy_kept(self, trained, blobs):
        local = snapshot(trained.local)
        remote = snapshot(trained.remote)
        plan = TrainingPlan(epochs=1, batch_size=16, optimizer=Adam(1e-4), seed=0)
        updated, report = online_update_remote(trained, blobs.images, blobs.labels, plan,
                                               (blobs.images, blobs.labels))
        assert same(local, updated.local.params)
        assert updated.local_locked
        assert same(remote, trained.remote.params)  # input untouched
        assert not same(remote, updated.remote.params)
        assert report.accuracy_after >= report.accuracy_before - 0.005

    def test_empty_update_is_noop(self, trained, blobs):
        updated, report = online_update_remote(trained, blobs.images[:0], blobs.labels[:0],
                                               TrainingPlan(), (blobs.images, blobs.labels))
        assert report.n_samples == 0 and report.accuracy_after == report.accuracy_before
        assert same(updated.remote.params, trained.remote.params)

    def test_rejected_update_restores_remote(self, trained, blobs):
        plan = TrainingPlan(epochs=1, batch_size=16, optimizer=SGD(50.0), seed=0)
        wrong = (blobs.labels + 1) % 3
        updated, report = online_update_remote(trained, blobs.images, wrong, plan,
                                               (blobs.images, blobs.labels), max_drop=0.0)
        assert report.accuracy_after < report.accuracy_before
        assert not report.accepted
        assert same(updated.remote.params, trained.remote.params)
