import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pair.linear_pair import fit_empirical_pair, materialize_surrogates
from pair.metrics import (
    LATENT_METRICS,
    METRIC_NAMES,
    BaselineDistribution,
    PairMetrics,
    auroc,
    fit_baseline,
    ood_score,
    pair_metrics,
    pair_metrics_batch,
    relative_error,
    relative_errors,
)


def ident(v):
    return v


def linear_model(rng, n=8, q=7, r=4):
    X = rng.standard_normal((n, 60))
    B = rng.standard_normal((q, n)) @ X + 0.05 * rng.standard_normal((q, 60))
    return fit_empirical_pair(X, B, X, B, r, r)


def model_metrics(m, b, x, **kw):
    return pair_metrics(m.ae_b.encode, m.ae_b.decode, m.ae_x.encode, m.ae_x.decode,
                        m.maps.M, m.maps.M_dag, b, x, **kw)


class TestRelativeError:
    def test_examples(self):
        x = np.array([3.0, -4.0])
        assert relative_error(x, x) == 0.0
        assert relative_error(np.zeros(2), x) == 1.0
        assert relative_error(2 * x, x) == 1.0

    def test_zero_reference(self):
        with pytest.raises(ZeroDivisionError):
            relative_error(np.ones(2), np.zeros(2))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            relative_error(np.ones(2), np.ones(3))

    def test_columnwise_and_stacks(self, rng):
        P, T = rng.random((5, 3)), rng.random((5, 3))
        expect = [relative_error(P[:, j], T[:, j]) for j in range(3)]
        np.testing.assert_allclose(relative_errors(P, T), expect, rtol=1e-15)
        np.testing.assert_allclose(relative_errors(P.T.reshape(3, 5, 1), T.T.reshape(3, 5, 1)), expect, rtol=1e-15)


class TestPairMetrics:
    def test_identity_model(self, rng):
        b = rng.standard_normal(5)
        m = pair_metrics(ident, ident, ident, ident, np.eye(5), np.eye(5), b, b)
        assert m.as_dict() == dict.fromkeys(METRIC_NAMES, 0.0)
        assert m.defined

    def test_exact_model_consistent_pair(self, rng):
        n = 6
        A = rng.standard_normal((n, n))
        X = rng.standard_normal((n, 30))
        m = fit_empirical_pair(X, A @ X, X, A @ X, n, n)
        x = rng.standard_normal(n)
        vals = model_metrics(m, A @ x, x).as_dict()
        assert max(vals.values()) <= 1e-10

    def test_zero_denominator_is_nan(self):
        m = pair_metrics(ident, ident, ident, ident, np.eye(2), np.eye(2), np.zeros(2), np.ones(2))
        assert np.isnan(m.ae_b_rel) and np.isnan(m.residual_rel) and np.isnan(m.latent_b_rel)
        assert m.ae_x_rel == 0.0
        assert not m.defined

    def test_definitions(self, rng):
        E = rng.standard_normal((2, 4))
        D = rng.standard_normal((4, 2))
        M, Md = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
        b, x = rng.standard_normal(4), rng.standard_normal(4)
        enc, dec = (lambda v: E @ v), (lambda z: D @ z)
        got = pair_metrics(enc, dec, enc, dec, M, Md, b, x)
        n = np.linalg.norm
        assert got.ae_b_rel == pytest.approx(n(D @ E @ b - b) / n(b), rel=1e-13)
        assert got.ae_x_rel == pytest.approx(n(D @ E @ x - x) / n(x), rel=1e-13)
        assert got.residual_rel == pytest.approx(n(D @ M @ E @ x - b) / n(b), rel=1e-13)
        assert got.latent_x_rel == pytest.approx(n(Md @ E @ b - E @ x) / n(E @ x), rel=1e-13)
        assert got.latent_b_rel == pytest.approx(n(M @ E @ x - E @ b) / n(E @ b), rel=1e-13)
        ratio = pair_metrics(enc, dec, enc, dec, M, Md, b, x, ae_form="norm_ratio")
        assert ratio.ae_b_rel == pytest.approx(n(D @ E @ b) / n(b), rel=1e-13)
        with pytest.raises(ValueError):
            pair_metrics(enc, dec, enc, dec, M, Md, b, x, ae_form="other")

    def test_batch_matches_single(self, rng):
        m = linear_model(rng)
        B, X = rng.standard_normal((7, 5)), rng.standard_normal((8, 5))
        batch = pair_metrics_batch(m.ae_b.encode, m.ae_b.decode, m.ae_x.encode, m.ae_x.decode,
                                   m.maps.M, m.maps.M_dag, B, X)
        for j in range(5):
            single = model_metrics(m, B[:, j], X[:, j]).as_dict()
            for k in METRIC_NAMES:
                assert batch[k][j] == pytest.approx(single[k], rel=1e-14)

    def test_surrogate_path_agrees(self, rng):
        m = linear_model(rng)
        P, _ = materialize_surrogates(m)
        b, x = rng.standard_normal(7), rng.standard_normal(8)
        got = model_metrics(m, b, x)
        n = np.linalg.norm
        assert abs(got.residual_rel - n(P @ x - b) / n(b)) <= 1e-12
        assert abs(got.ae_x_rel - n(m.ae_x.projector() @ x - x) / n(x)) <= 1e-12
        assert abs(got.ae_b_rel - n(m.ae_b.projector() @ b - b) / n(b)) <= 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1e-3, 1e3), st.integers(0, 2**31))
    def test_homogeneity(self, c, seed):
        rng = np.random.default_rng(seed)
        m = linear_model(rng)
        b, x = rng.standard_normal(7), rng.standard_normal(8)
        a, s = model_metrics(m, b, x).as_dict(), model_metrics(m, c * b, c * x).as_dict()
        for k in METRIC_NAMES:
            assert abs(a[k] - s[k]) <= 1e-12 * max(1.0, a[k])

    def test_residual_noise_floor(self, rng):
        # the true operator as latent map with identity autoencoders: the
        # residual of the true parameter is the injected noise fraction
        from pair.datasets import build_ct_bundle
        from pair.operators import NoiseSpec, materialize, radon_operator

        op = radon_operator(16, 8, 23)
        bd = build_ct_bundle(16, op, NoiseSpec("relative_norm", 0.05), (0, 0, 0, 200), master_seed=3)
        A = materialize(op)
        vals = pair_metrics_batch(ident, ident, ident, ident, A, np.linalg.pinv(A), bd.test_b, bd.test_x)
        r = vals["residual_rel"]
        clean = A @ bd.test_x
        np.testing.assert_allclose(r, 0.05 * np.linalg.norm(clean, axis=0) / np.linalg.norm(bd.test_b, axis=0),
                                   rtol=1e-10)
        assert np.all((r >= 0.05 / 1.05) & (r <= 0.05 / 0.95))
        assert np.median(r) == pytest.approx(0.05, abs=2e-4)


class TestBaseline:
    def test_constant_stream(self):
        bl = fit_baseline({"ae_b_rel": [0.3] * 40})
        assert all(bl.percentile("ae_b_rel", q) == 0.3 for q in (0, 1, 50, 99, 100))

    def test_median(self, rng):
        v = rng.random(101)
        bl = fit_baseline({"ae_x_rel": v})
        assert bl.percentile("ae_x_rel", 50) == np.median(v)
        assert np.all(np.diff(bl.samples["ae_x_rel"]) >= 0)

    def test_too_few_samples(self):
        with pytest.raises(ValueError, match="at least 30"):
            fit_baseline({"ae_x_rel": np.ones(29)})

    def test_nan_dropped(self):
        v = np.r_[np.ones(30), np.nan]
        assert fit_baseline({"ae_x_rel": v}).samples["ae_x_rel"].size == 30

    def test_from_pair_metrics(self):
        ms = [PairMetrics(*(np.arange(5.0) + i)) for i in range(30)]
        bl = fit_baseline(ms)
        assert bl.names == METRIC_NAMES
        assert bl.percentile("latent_b_rel", 100) == 33.0

    def test_samples_read_only(self):
        bl = fit_baseline({"ae_x_rel": np.arange(30.0)})
        with pytest.raises(ValueError):
            bl.samples["ae_x_rel"][0] = 5

    def test_csv_roundtrip(self, tmp_path, rng):
        bl = fit_baseline({k: rng.random(40) / 3 for k in METRIC_NAMES})
        bl.save(tmp_path / "b.csv")
        again = BaselineDistribution.load(tmp_path / "b.csv")
        for k in METRIC_NAMES:
            assert again.samples[k].tobytes() == bl.samples[k].tobytes()
        assert again.to_csv() == bl.to_csv()
        assert (tmp_path / "b.csv").read_text().splitlines()[0] == "metric,value"

    def test_bad_header(self):
        with pytest.raises(ValueError, match="header"):
            BaselineDistribution.from_csv("a,b\n")


class TestOod:
    @pytest.fixture
    def baseline(self):
        return fit_baseline({k: np.arange(101.0) for k in METRIC_NAMES})

    def test_median_not_flagged(self, baseline):
        s = ood_score(baseline, dict.fromkeys(METRIC_NAMES, 50.0))
        assert s.percentiles["latent_x_rel"] == 50.0 and not s.flagged

    def test_above_max_flagged(self, baseline):
        vals = dict.fromkeys(METRIC_NAMES, 50.0)
        vals["latent_b_rel"] = 1e6
        s = ood_score(baseline, vals)
        assert s.percentiles["latent_b_rel"] == 100.0 and s.flagged

    def test_non_latent_metric_does_not_flag(self, baseline):
        vals = dict.fromkeys(METRIC_NAMES, 50.0)
        vals["ae_b_rel"] = 1e6
        assert not ood_score(baseline, vals).flagged

    def test_percentile_inverts_lookup(self, rng):
        bl = fit_baseline({"latent_x_rel": rng.random(57)})
        for q in (3.0, 37.5, 88.0):
            v = bl.percentile("latent_x_rel", q)
            assert bl.percentile_of("latent_x_rel", v) == pytest.approx(q, abs=1e-9)

    def test_undefined_propagates(self, baseline):
        vals = dict.fromkeys(METRIC_NAMES, np.nan)
        s = ood_score(baseline, vals)
        assert all(np.isnan(p) for p in s.percentiles.values()) and not s.flagged

    def test_latent_names(self):
        assert set(LATENT_METRICS) <= set(METRIC_NAMES)


class TestAuroc:
    def test_midrank_example(self):
        assert auroc([1, 2, 3], [2, 3, 4]) == pytest.approx(7 / 9, abs=1e-15)

    def test_separated(self):
        assert auroc([0.1, 0.2], [0.3, 5.0]) == 1.0
        assert auroc([0.3, 5.0], [0.1, 0.2]) == 0.0

    def test_identical_distributions(self, rng):
        assert abs(auroc(rng.random(2000), rng.random(2000)) - 0.5) < 0.03

    def test_pair_count_oracle(self, rng):
        a, b = rng.integers(0, 5, 40).astype(float), rng.integers(0, 5, 30).astype(float)
        pairs = (b[None] > a[:, None]).sum() + 0.5 * (b[None] == a[:, None]).sum()
        assert auroc(a, b) == pytest.approx(pairs / (40 * 30), abs=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_monotone_invariance(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal(30), rng.standard_normal(25) + 0.5
        assert auroc(a, b) == auroc(np.exp(3 * a) + 1, np.exp(3 * b) + 1)

    def test_empty(self):
        with pytest.raises(ValueError):
            auroc([], [1.0])
