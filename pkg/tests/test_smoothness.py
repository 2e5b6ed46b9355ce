import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metamix import nets, smoothness as sm
from metamix.engine import NonFiniteError


def quad(diag):
    return sm.QuadraticField(np.diag(np.asarray(diag, dtype=float)))


class AffineField:
    def __init__(self, w, c=0.0):
        self.w = np.asarray(w, dtype=float)
        self.c = c

    def value(self, points):
        return np.atleast_2d(points) @ self.w + self.c

    def grad(self, points):
        return np.broadcast_to(self.w, np.atleast_2d(points).shape).copy()


def softplus_net(seed=0, in_dim=5, classes=3):
    arch = nets.Architecture((in_dim,), (
        nets.Dense(12, "softplus"), nets.Dense(8, "softplus"),
        nets.Dense(classes)))
    return nets.build_model(arch, np.random.default_rng(seed))


class TestMixupGap:
    def test_halved_norm_example(self):
        # f(x) = ||x||^2 / 2, x = [2,0], x' = 0, lam = 1/2:
        # gap = |1/2 - 1| = 1/2 and the bound with kappa = 1 is also 1/2
        field = quad([1.0, 1.0])
        gap = sm.mixup_gap(field, np.array([2.0, 0.0]), np.zeros(2), 0.5)
        assert gap == pytest.approx(0.5, abs=1e-15)
        assert sm.gap_bound(1.0, 0.5, 2.0) == pytest.approx(0.5, abs=1e-15)

    def test_endpoints_exactly_zero(self):
        rng = np.random.default_rng(0)
        field = sm.QuadraticField(rng.normal(size=(4, 4)))
        x, xp = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        assert np.all(sm.mixup_gap(field, x, xp, 0.0) == 0.0)
        assert np.all(sm.mixup_gap(field, x, xp, 1.0) == 0.0)

    def test_affine_gap_zero(self):
        field = AffineField([1.0, -2.0, 3.0], c=0.7)
        rng = np.random.default_rng(1)
        x, xp = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
        for lam in sm.LAMBDA_GRID:
            assert np.all(sm.mixup_gap(field, x, xp, lam) <= 1e-14)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), lam=st.floats(0.0, 1.0))
    def test_symmetry(self, seed, lam):
        rng = np.random.default_rng(seed)
        field = sm.QuadraticField(rng.normal(size=(3, 3)))
        x, xp = rng.normal(size=3), rng.normal(size=3)
        a = sm.mixup_gap(field, x, xp, lam)
        b = sm.mixup_gap(field, xp, x, 1.0 - lam)
        assert abs(a - b) <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), lam=st.floats(0.0, 1.0))
    def test_quadratic_closed_form(self, seed, lam):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(4, 4))
        field = sm.QuadraticField(a)
        x, xp = rng.normal(size=4), rng.normal(size=4)
        d = x - xp
        expected = lam * (1.0 - lam) / 2.0 * abs(d @ field.sym @ d)
        assert sm.mixup_gap(field, x, xp, lam) == pytest.approx(expected, abs=1e-9)

    def test_lam_validated(self):
        with pytest.raises(ValueError):
            sm.mixup_gap(quad([1.0]), np.ones(1), np.zeros(1), 1.5)

    def test_bound_quadratic_in_distance(self):
        near = sm.gap_bound(3.0, 0.3, 1.0)
        far = sm.gap_bound(3.0, 0.3, 2.0)
        assert far / near == pytest.approx(4.0, abs=1e-12)


class TestKappaEstimate:
    def test_quadratic_converges_to_spectral_norm(self):
        field = quad([1.0, 3.0])
        rng = np.random.default_rng(2)
        data = rng.normal(size=(200, 2))
        est = sm.estimate_kappa(
            field, lambda n, r: sm.sample_pairs(data, n, r), 10_000,
            np.random.default_rng(3))
        assert est.kappa <= 3.0 + 1e-9
        assert est.kappa == pytest.approx(3.0, rel=0.05)

    def test_nonsymmetric_uses_symmetric_part(self):
        field = sm.QuadraticField(np.array([[0.0, 2.0], [0.0, 0.0]]))
        assert field.kappa == pytest.approx(1.0, abs=1e-12)  # sym part [[0,1],[1,0]]

    def test_affine_estimate_zero(self):
        field = AffineField([2.0, -1.0])
        x = np.random.default_rng(4).normal(size=(50, 2))
        est = sm.kappa_from_pairs(field, x, x + 1.0)
        assert est.kappa == 0.0

    def test_nested_samples_monotone(self):
        field = quad([1.0, 3.0])
        rng = np.random.default_rng(5)
        x, xp = sm.sample_pairs(rng.normal(size=(50, 2)), 2_000, rng)
        previous = 0.0
        for count in (10, 100, 500, 2_000):
            est = sm.kappa_from_pairs(field, x[:count], xp[:count])
            assert est.kappa >= previous
            previous = est.kappa

    def test_degenerate_pairs_skipped(self):
        field = quad([1.0, 2.0])
        x = np.random.default_rng(6).normal(size=(5, 2))
        xp = x.copy()
        xp[0] += 1.0
        est = sm.kappa_from_pairs(field, x, xp)
        assert est.n_pairs == 1
        with pytest.raises(ValueError):
            sm.kappa_from_pairs(field, x, x)

    def test_distance_stats(self):
        field = quad([1.0, 1.0])
        x = np.zeros((3, 2))
        xp = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 0.0]])
        est = sm.kappa_from_pairs(field, x, xp)
        assert (est.distance_min, est.distance_max) == (1.0, 3.0)
        assert est.distance_mean == pytest.approx(2.0)

    def test_network_estimate_tracks_worst_channel(self):
        model = softplus_net(seed=7)
        data = np.random.default_rng(8).normal(size=(60, 5))
        est = sm.estimate_kappa_network(
            model, lambda n, r: sm.sample_pairs(data, n, r), 500,
            np.random.default_rng(9))
        assert est.per_channel is not None and len(est.per_channel) == 3
        assert est.kappa == max(est.per_channel)


class TestLogitField:
    def test_value_matches_forward(self):
        model = softplus_net(seed=10)
        x = np.random.default_rng(11).normal(size=(7, 5))
        logits = nets.forward(model, x).data
        for c in range(3):
            assert np.allclose(sm.LogitField(model, c).value(x), logits[:, c])

    def test_grad_matches_finite_differences(self):
        model = softplus_net(seed=12)
        field = sm.LogitField(model, 1)
        x = np.random.default_rng(13).normal(size=(3, 5))
        analytic = field.grad(x)
        eps = 1e-6
        for i in range(3):
            for j in range(5):
                hi, lo = x.copy(), x.copy()
                hi[i, j] += eps
                lo[i, j] -= eps
                numeric = (field.value(hi)[i] - field.value(lo)[i]) / (2 * eps)
                assert analytic[i, j] == pytest.approx(numeric, abs=1e-6)

    def test_channel_validated(self):
        with pytest.raises(ValueError):
            sm.LogitField(softplus_net(), 3)


class TestAudit:
    def test_exact_quadratic_zero_violations_ratio_one(self):
        field = quad([1.0, 3.0])
        rng = np.random.default_rng(14)
        x, xp = sm.sample_pairs(rng.normal(size=(100, 2)), 2_000, rng)
        # the bound is tight along the top eigendirection; append that pair
        x = np.vstack([x, [0.0, 1.0]])
        xp = np.vstack([xp, [0.0, -1.0]])
        report = sm.audit_gap_bound(field, field.kappa, (x, xp))
        assert report.violations == 0
        assert report.max_ratio == pytest.approx(1.0, abs=1e-9)
        assert report.worst_pair["pair_index"] == 2_000

    def test_understated_kappa_flags_violations(self):
        field = quad([1.0, 3.0])
        rng = np.random.default_rng(15)
        pairs = sm.sample_pairs(rng.normal(size=(100, 2)), 500, rng)
        report = sm.audit_gap_bound(field, 0.5, pairs)
        assert report.violations > 0
        assert report.max_ratio > 1.0

    def test_zero_kappa_negative_control(self):
        field = quad([1.0, 1.0])
        x = np.array([[2.0, 0.0]])
        xp = np.zeros((1, 2))
        report = sm.audit_gap_bound(field, 0.0, (x, xp))
        assert report.violations == len(sm.LAMBDA_GRID)
        assert report.worst_pair["bound"] == 0.0

    def test_softplus_network_with_safety_factor(self):
        model = softplus_net(seed=16)
        data = np.random.default_rng(17).normal(size=(80, 5))
        sampler = lambda n, r: sm.sample_pairs(data, n, r)
        est = sm.estimate_kappa_network(model, sampler, 2_000,
                                        np.random.default_rng(18))
        fresh = sampler(2_000, np.random.default_rng(19))
        report, channel = sm.audit_network(model, 1.2 * est.kappa, fresh)
        assert report.violations == 0
        assert 0 <= channel < 3

    def test_rows_table_shape_and_csv(self, tmp_path):
        field = quad([1.0, 2.0])
        pairs = sm.sample_pairs(np.random.default_rng(20).normal(size=(30, 2)),
                                50, np.random.default_rng(21))
        report = sm.audit_gap_bound(field, field.kappa, pairs,
                                      lam_grid=(0.25, 0.5))
        assert report.rows.shape == (100, 4)
        path = tmp_path / "audit.csv"
        sm.write_audit_csv(report, path)
        back = np.loadtxt(path, delimiter=",", skiprows=1)
        assert np.allclose(back, report.rows)

    def test_audit_rejects_negative_kappa(self):
        with pytest.raises(ValueError):
            sm.audit_gap_bound(quad([1.0]), -1.0, (np.ones((1, 1)), np.zeros((1, 1))))

    def test_nonfinite_evaluation_raises(self):
        class Exploding:
            def value(self, points):
                return np.full(len(np.atleast_2d(points)), np.nan)

            def grad(self, points):
                return np.atleast_2d(points)

        with pytest.raises(NonFiniteError):
            sm.mixup_gap(Exploding(), np.ones(2), np.zeros(2), 0.5)
