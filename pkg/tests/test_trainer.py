import numpy as np
import pytest

from patchassoc.analysis import cosine_sim, estimate_accuracy, patch_association_score
from patchassoc.distribution import DistributionSpec, make_localized_partition, orthogonal_feature, sample_dataset, sample_feature
from patchassoc.model import batch_loss_and_grads, loss
from patchassoc.rng import stream
from patchassoc.trainer import (
    EvalSpec,
    RunRecord,
    TrainConfig,
    TrainingDiverged,
    finetune_value,
    gd_step,
    init_params,
    one_step_normalized_transfer,
    train,
)


@pytest.fixture(scope="module")
def toy():
    # d=32, D=16, C=4, L=4; learns patch association in a few hundred steps
    w = sample_feature(32, stream(3, "feature"))
    part = make_localized_partition(4, 4, 2, 2)
    spec = DistributionSpec(32, 16, 4, 4, 0.2, 1 / 32, 0.9, w)
    return spec, part, sample_dataset(spec, part, 1024, 3)


@pytest.fixture(scope="module")
def trained(toy):
    spec, part, ds = toy
    cfg = TrainConfig(T=300, eta=1e-4, seed=1, eval_every=50)
    losses = []
    params, records = train(cfg, ds, EvalSpec(spec, part, 2000, 1), loss_log=losses)
    return params, records, losses


class TestConfig:
    @pytest.mark.parametrize("bad", [dict(eta=0.0), dict(T=-1), dict(omega=-1.0), dict(mode="adam"),
                                     dict(eval_every=0)])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_replace(self):
        assert TrainConfig().replace(T=7).T == 7


class TestInit:
    def test_zero_scale(self):
        p = init_params(TrainConfig(omega=0.0, sigma_A=0.3), 5, 4, stream(0))
        assert not np.any(p.v)
        np.testing.assert_array_equal(p.A, 0.3 * np.eye(4))

    def test_deterministic(self):
        cfg = TrainConfig(omega=0.1)
        a, b = init_params(cfg, 8, 6, stream(4)), init_params(cfg, 8, 6, stream(4))
        np.testing.assert_array_equal(a.A, b.A)
        np.testing.assert_array_equal(a.v, b.v)

    def test_norm_scale(self):
        cfg = TrainConfig(omega=1e-3)
        for s in range(100):
            n = np.linalg.norm(init_params(cfg, 128, 4, stream(s, "init")).v)
            assert abs(n / (1e-3 * np.sqrt(128)) - 1) < 0.2


class TestStep:
    def test_eta_zero(self, toy):
        _, _, ds = toy
        p = init_params(TrainConfig(omega=0.01), 32, 16, stream(0))
        q = gd_step(p, ds.subset(range(8)), 0.0)
        np.testing.assert_array_equal(p.v, q.v)
        np.testing.assert_array_equal(p.A, q.A)

    def test_single_point_from_zero(self, toy):
        _, _, ds = toy
        one = ds.subset([0])
        p = init_params(TrainConfig(omega=0.0, nu=0.05), 32, 16, stream(0))
        _, gv, _ = batch_loss_and_grads(p, one)
        q = gd_step(p, one, 0.5)
        np.testing.assert_allclose(q.v, -0.5 * gv, rtol=0, atol=0)

    def test_descent(self, toy):
        _, _, ds = toy
        small = ds.subset(range(64))
        r = np.random.default_rng(0)
        p = init_params(TrainConfig(omega=0.05, tau=1.0, sigma_A=0.5), 32, 16, r)
        before = batch_loss_and_grads(p, small)[0]
        after = batch_loss_and_grads(gd_step(p, small, 1e-4), small)[0]
        assert after <= before

    def test_diagonal_frozen(self, toy):
        _, _, ds = toy
        p = init_params(TrainConfig(omega=0.05, sigma_A=0.7, tau=1.0), 32, 16, stream(1))
        q = gd_step(p, ds.subset(range(32)), 0.1)
        np.testing.assert_array_equal(np.diag(q.A), 0.7)

    def test_non_finite_aborts(self, toy):
        _, _, ds = toy
        p = init_params(TrainConfig(omega=0.05), 32, 16, stream(1))
        with pytest.raises(FloatingPointError), np.errstate(all="ignore"):
            gd_step(p.with_(v=np.full(32, 1e120)), ds.subset(range(4)), 0.1)


class TestTrain:
    def test_learns_patch_association(self, trained, toy):
        params, records, _ = trained
        spec, part, _ = toy
        last = records[-1]
        assert last.patch_assoc_score == 1.0
        assert last.test_accuracy >= 0.95
        assert last.cosine_sim >= 0.99
        assert patch_association_score(params.A, part).score == 1.0

    def test_records(self, trained):
        _, records, losses = trained
        steps = [r.step for r in records]
        assert steps == [0, 50, 100, 150, 200, 250, 300]
        assert all(np.isfinite(r.as_row()).all() for r in records)
        assert len(losses) == 301
        assert records[-1].train_loss == losses[-1]
        assert list(RunRecord.FIELDS) == ["step", "train_loss", "test_accuracy", "cosine_sim",
                                          "patch_assoc_score", "gamma_hat", "rho_hat", "eps_v"]

    def test_monotone_trend(self, trained):
        _, _, losses = trained
        ma = np.convolve(losses, np.ones(10) / 10, mode="valid")
        stop = np.argmax(ma < 0.05) if np.any(ma < 0.05) else ma.size
        assert np.all(np.diff(ma[:stop]) <= 1e-12)

    def test_T0(self, toy):
        spec, part, ds = toy
        params, records = train(TrainConfig(T=0, omega=0.01), ds.subset(range(16)), EvalSpec(spec, part, 100))
        assert len(records) == 1 and records[0].step == 0
        ref = init_params(TrainConfig(T=0, omega=0.01), 32, 16, stream(0, "init"))
        np.testing.assert_array_equal(params.A, ref.A)

    def test_deterministic(self, toy):
        spec, part, ds = toy
        cfg = TrainConfig(T=20, eta=1e-4, seed=5, eval_every=10)
        ev = EvalSpec(spec, part, 300, 2)
        _, a = train(cfg, ds.subset(range(128)), ev)
        _, b = train(cfg, ds.subset(range(128)), ev)
        assert a == b

    def test_divergence(self, toy):
        spec, part, ds = toy
        with pytest.raises(TrainingDiverged) as info:
            train(TrainConfig(T=50, eta=100.0, omega=0.1, tau=1.0, eval_every=1), ds.subset(range(64)),
                  EvalSpec(spec, part, 50))
        assert np.all(np.isfinite(info.value.params.v))
        assert len(info.value.records) >= 1

    def test_value_only_mode_keeps_A(self, toy):
        _, _, ds = toy
        p0 = init_params(TrainConfig(omega=0.01), 32, 16, stream(0))
        p, _ = train(TrainConfig(T=5, mode="value-only", omega=0.01), ds.subset(range(32)), params=p0)
        np.testing.assert_array_equal(p.A, p0.A)


class TestFinetune:
    def test_A_frozen(self, trained, toy):
        params, _, _ = trained
        _, _, ds = toy
        out = finetune_value(params, ds.subset(range(64)), TrainConfig(T=20, mode="value-only"))
        assert out.A is params.A or np.array_equal(out.A, params.A)

    def test_requires_value_mode(self, trained, toy):
        with pytest.raises(ValueError):
            finetune_value(trained[0], toy[2], TrainConfig(T=1))

    def test_same_feature_preserves_accuracy(self, trained, toy):
        params, _, _ = trained
        spec, part, _ = toy
        base = estimate_accuracy(params, spec, part, 3000, stream(9)).accuracy
        ds = sample_dataset(spec, part, 64, 77)
        out = finetune_value(params, ds, TrainConfig(T=300, eta=1e-4, mode="value-only"))
        assert estimate_accuracy(out, spec, part, 3000, stream(9)).accuracy >= base - 0.02


class TestOneStep:
    def test_unit_norm_and_alignment(self, trained, toy):
        params, _, _ = trained
        spec, part, _ = toy
        w2 = orthogonal_feature(spec.w_star, stream(5))
        down = spec.with_feature(w2)
        ds = sample_dataset(down, part, 32, 8)
        out = one_step_normalized_transfer(params, ds)
        assert np.linalg.norm(out.v) == pytest.approx(1.0, abs=1e-12)
        assert cosine_sim(out.v, w2) >= 0.3
        np.testing.assert_array_equal(out.A, params.A)

    def test_degenerate(self, trained, toy):
        # nu = 0 makes sigma'(0) = 0, so the gradient at v = 0 vanishes
        p = trained[0].with_(nu=0.0)
        with pytest.raises(ValueError, match="degenerate"):
            one_step_normalized_transfer(p, toy[2].subset(range(4)))
