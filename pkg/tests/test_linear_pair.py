import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pair.linear_pair import (
    LatentMap,
    LinearAutoencoder,
    PairModel,
    autoencoder_from_svd,
    bayes_forward_map,
    bayes_inverse_map,
    check_spd,
    closed_form_bayes_surrogates,
    fit_bayes_autoencoder,
    fit_bayes_pair,
    fit_empirical_autoencoder,
    fit_empirical_latent_maps,
    fit_empirical_pair,
    materialize_surrogates,
    pair_forward_apply,
    pair_inverse_apply,
)
from pair.numerics import svd


def relf(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.geomspace(1.0, 1.0 / cond, n)
    return (Q * w) @ Q.T


def random_K(rng, r, cond=100.0):
    U, _ = np.linalg.qr(rng.standard_normal((r, r)))
    V, _ = np.linalg.qr(rng.standard_normal((r, r)))
    return (U * np.geomspace(1.0, 1.0 / cond, r)) @ V.T


def identity_ae(n):
    return LinearAutoencoder(np.eye(n), np.eye(n))


class TestEmpiricalAutoencoder:
    def test_diagonal_samples(self):
        ae = fit_empirical_autoencoder(np.diag([3.0, 2.0, 1.0]), 2)
        np.testing.assert_allclose(ae.projector(), np.diag([1.0, 1.0, 0.0]), atol=1e-14)
        # Eckart-Young: the discarded energy is the trailing sigma^2 = 1
        X = np.diag([3.0, 2.0, 1.0])
        assert np.linalg.norm((ae.projector() - np.eye(3)) @ X) ** 2 == pytest.approx(1.0)

    def test_full_data_rank_reproduces_samples(self, rng):
        X = rng.standard_normal((6, 3)) @ rng.standard_normal((3, 20))
        ae = fit_empirical_autoencoder(X, 3)
        np.testing.assert_allclose(ae(X), X, atol=1e-10 * np.abs(X).max())

    def test_rank_above_data_rank_names_sigma(self, rng):
        X = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 20))
        with pytest.raises(ValueError, match="sigma_r estimate"):
            fit_empirical_autoencoder(X, 3)

    def test_rank_out_of_range(self, rng):
        with pytest.raises(ValueError, match="outside"):
            fit_empirical_autoencoder(rng.standard_normal((4, 3)), 4)

    def test_singular_mixing_rejected(self, rng):
        with pytest.raises(ValueError, match="singular"):
            fit_empirical_autoencoder(rng.standard_normal((5, 9)), 2, np.ones((2, 2)))

    def test_ed_is_identity_for_any_mixing(self, rng):
        X = rng.standard_normal((7, 30))
        ae = fit_empirical_autoencoder(X, 4, random_K(rng, 4))
        np.testing.assert_allclose(ae.E @ ae.D, np.eye(4), atol=1e-10)

    def test_from_svd_matches_direct_fit(self, rng):
        X = rng.standard_normal((9, 25))
        a = fit_empirical_autoencoder(X, 5)
        b = autoencoder_from_svd(svd(X), 5)
        np.testing.assert_array_equal(a.E, b.E)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 40), st.integers(2, 60), st.data())
    def test_projector_and_eckart_young(self, n, N, data):
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        r = data.draw(st.integers(1, min(n, N)))
        X = rng.standard_normal((n, N))
        ae = fit_empirical_autoencoder(X, r)
        P = ae.projector()
        np.testing.assert_allclose(P @ P, P, atol=1e-10)
        np.testing.assert_allclose(P, P.T, atol=1e-10)
        s = np.linalg.svd(X, compute_uv=False)
        err = np.linalg.norm((P - np.eye(n)) @ X) ** 2
        tail = np.sum(s[r:] ** 2)
        assert abs(err - tail) <= 1e-8 * max(tail, 1e-8 * np.sum(s**2))


class TestBayesAutoencoder:
    def test_identity_factor(self):
        ae = fit_bayes_autoencoder(np.eye(4), 4)
        np.testing.assert_allclose(ae.projector(), np.eye(4), atol=1e-14)

    def test_dominant_direction(self):
        ae = fit_bayes_autoencoder(np.diag([2.0, 1.0]), 1)
        np.testing.assert_allclose(ae.projector(), np.diag([1.0, 0.0]), atol=1e-14)

    def test_rank_deficient_factor_asks_for_regularization(self):
        with pytest.raises(ValueError, match="regularize"):
            fit_bayes_autoencoder(np.diag([1.0, 0.0]), 1)

    def test_objective_never_beaten_by_random_candidates(self, rng):
        n, r = 5, 2
        L = np.linalg.cholesky(random_spd(rng, n))
        ae = fit_bayes_autoencoder(L, r)
        best = np.linalg.norm(ae.projector() @ L - L)
        cand = [
            np.linalg.norm(rng.standard_normal((n, r)) @ rng.standard_normal((r, n)) @ L - L)
            for _ in range(10_000)
        ]
        assert min(cand) >= best - 1e-12

    def test_minimal_norm_among_minimizers(self, rng):
        L = np.linalg.cholesky(random_spd(rng, 5))
        Y = fit_bayes_autoencoder(L, 2).projector()
        # an orthogonal projector has the least Frobenius norm (sqrt(r)) of any
        # rank-r matrix acting as the identity on its range
        assert np.linalg.norm(Y) == pytest.approx(np.sqrt(2.0))


class TestCheckSpd:
    def test_accepts_spd(self, rng):
        G = random_spd(rng, 4)
        L = check_spd(G)
        np.testing.assert_allclose(L @ L.T, G, atol=1e-14)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="not symmetric"):
            check_spd(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError, match="not positive definite"):
            check_spd(np.diag([1.0, -1.0]))


class TestBayesMaps:
    def test_forward_collapses_without_compression(self, rng):
        A = rng.standard_normal((3, 4))
        ae_b = fit_bayes_autoencoder(np.linalg.cholesky(random_spd(rng, 3)), 2)
        for Gx in (np.eye(4), random_spd(rng, 4)):
            M = bayes_forward_map(identity_ae(4), ae_b, A, Gx)
            np.testing.assert_allclose(M, ae_b.E @ A, atol=1e-12)

    def test_inverse_scalar_shrinkage(self):
        s2 = 0.3
        M_dag = bayes_inverse_map(identity_ae(3), identity_ae(3), np.eye(3), np.eye(3),
                                  s2 * np.eye(3))
        np.testing.assert_allclose(M_dag, np.eye(3) / (1 + s2), atol=1e-14)

    def test_inverse_rejects_non_spd_noise(self):
        with pytest.raises(ValueError, match="gamma_eps"):
            bayes_inverse_map(identity_ae(2), identity_ae(2), np.eye(2), np.eye(2),
                              np.diag([1.0, -1.0]))

    def test_forward_rejects_rank_deficient_encoder(self, rng):
        ae_x = LinearAutoencoder(np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]),
                                 np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]).reshape(3, 2))
        with pytest.raises(ValueError, match="full row rank"):
            bayes_forward_map(ae_x, identity_ae(3), np.eye(3), np.eye(3))

    def test_forward_monte_carlo(self, rng):
        A = rng.standard_normal((3, 3))
        Gx = random_spd(rng, 3)
        Ge = 0.1 * np.eye(3)
        model = fit_bayes_pair(A, Gx, Ge, 2, 2)
        X = np.linalg.cholesky(Gx) @ rng.standard_normal((3, 100_000))
        M_mc = (model.ae_b.E @ A @ X) @ np.linalg.pinv(model.ae_x.E @ X)
        assert relf(M_mc, model.maps.M) <= 0.02

    def test_inverse_monte_carlo(self, rng):
        A = rng.standard_normal((4, 4))
        Gx = random_spd(rng, 4)
        Ge = 0.2 * random_spd(rng, 4)
        model = fit_bayes_pair(A, Gx, Ge, 3, 3)
        N = 100_000
        X = np.linalg.cholesky(Gx) @ rng.standard_normal((4, N))
        B = A @ X + np.linalg.cholesky(Ge) @ rng.standard_normal((4, N))
        M_mc = (model.ae_x.E @ X) @ np.linalg.pinv(model.ae_b.E @ B)
        assert relf(M_mc, model.maps.M_dag) <= 0.02


class TestEmpiricalMaps:
    def test_self_map(self, rng):
        z = rng.standard_normal((3, 10))
        m = fit_empirical_latent_maps(z, z)
        np.testing.assert_allclose(m.M, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(m.M_dag, np.eye(3), atol=1e-12)

    def test_square_invertible(self, rng):
        zx, zb = rng.standard_normal((4, 4)), rng.standard_normal((3, 4))
        np.testing.assert_allclose(fit_empirical_latent_maps(zx, zb).M, zb @ np.linalg.inv(zx),
                                   atol=1e-10)

    def test_normal_equations(self, rng):
        zx, zb = rng.standard_normal((5, 40)), rng.standard_normal((3, 40))
        M = fit_empirical_latent_maps(zx, zb).M
        np.testing.assert_allclose(M, zb @ zx.T @ np.linalg.inv(zx @ zx.T), atol=1e-10)

    def test_zero_pairs_rejected(self):
        with pytest.raises(ValueError):
            fit_empirical_latent_maps(np.zeros((2, 0)), np.zeros((2, 0)))

    def test_unpaired_rejected(self, rng):
        with pytest.raises(ValueError, match="unpaired"):
            fit_empirical_latent_maps(rng.standard_normal((2, 5)), rng.standard_normal((2, 6)))

    def test_latent_map_checks(self):
        with pytest.raises(ValueError, match="inconsistent"):
            LatentMap(np.zeros((2, 3)), np.zeros((2, 3)))
        with pytest.raises(ValueError, match="non-finite"):
            LatentMap(np.full((1, 1), np.nan), np.zeros((1, 1)))

    def test_pair_model_dimension_check(self):
        with pytest.raises(ValueError, match="latent dim"):
            PairModel(identity_ae(3), identity_ae(2), LatentMap(np.eye(2), np.eye(2)))


class TestSurrogates:
    def _model(self, rng, n=6, q=5, r_x=3, r_b=4):
        X = rng.standard_normal((n, 40))
        B = rng.standard_normal((q, 40))
        return fit_empirical_pair(X, B, rng.standard_normal((n, 30)),
                                  rng.standard_normal((q, 30)), r_x, r_b)

    def test_identity_autoencoders(self, rng):
        A = rng.standard_normal((3, 3))
        model = PairModel(identity_ae(3), identity_ae(3), LatentMap(A, np.eye(3)))
        x = rng.standard_normal(3)
        np.testing.assert_allclose(pair_forward_apply(model, x), A @ x)
        np.testing.assert_allclose(pair_inverse_apply(model, x), x)

    def test_zero_maps_to_zero(self, rng):
        m = self._model(rng)
        np.testing.assert_array_equal(m.forward(np.zeros(6)), 0.0)
        np.testing.assert_array_equal(m.inverse(np.zeros(5)), 0.0)

    def test_apply_matches_dense(self, rng):
        m = self._model(rng)
        P, P_dag = materialize_surrogates(m)
        x, b = rng.standard_normal(6), rng.standard_normal(5)
        np.testing.assert_allclose(m.forward(x), P @ x, atol=1e-12)
        np.testing.assert_allclose(m.inverse(b), P_dag @ b, atol=1e-12)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError, match="leading dimension"):
            self._model(rng).forward(np.zeros(5))

    def test_empirical_proposition(self, rng):
        # P = B_{r_b} X_{r_x}^+ when sigma_{r_x}(X) > 0
        n, q, N, r_x, r_b = 6, 5, 30, 4, 3
        X, B = rng.standard_normal((n, N)), rng.standard_normal((q, N))
        m = fit_empirical_pair(X, B, X, B, r_x, r_b)
        def trunc(Y, r):
            U, s, Vt = np.linalg.svd(Y, full_matrices=False)
            return (U[:, :r] * s[:r]) @ Vt[:r]
        P, _ = materialize_surrogates(m)
        np.testing.assert_allclose(P, trunc(B, r_b) @ np.linalg.pinv(trunc(X, r_x)), atol=1e-10)

    def test_k_invariance(self, rng):
        A = rng.standard_normal((5, 6))
        Gx, Ge = random_spd(rng, 6), 0.1 * random_spd(rng, 5)
        base = materialize_surrogates(fit_bayes_pair(A, Gx, Ge, 3, 4))
        mixed_model = fit_bayes_pair(A, Gx, Ge, 3, 4, random_K(rng, 3, 1e3), random_K(rng, 4, 1e3))
        mixed = materialize_surrogates(mixed_model)
        for a, b in zip(base, mixed):
            assert relf(b, a) <= 1e-8
        np.testing.assert_allclose(mixed_model.ae_x.projector(),
                                   fit_bayes_pair(A, Gx, Ge, 3, 4).ae_x.projector(), atol=1e-8)


class TestClosedForm:
    def test_no_compression_recovers_A(self, rng):
        A = rng.standard_normal((4, 5))
        Gx, Ge = random_spd(rng, 5), 0.1 * random_spd(rng, 4)
        P, P_dag = closed_form_bayes_surrogates(A, Gx, Ge, 5, 4)
        assert relf(P, A) <= 1e-10
        Gb = A @ Gx @ A.T + Ge
        assert relf(P_dag, Gx @ A.T @ np.linalg.inv(Gb)) <= 1e-10

    def test_matches_composition(self, rng):
        A = rng.standard_normal((6, 7))
        Gx, Ge = random_spd(rng, 7), 0.05 * random_spd(rng, 6)
        model = fit_bayes_pair(A, Gx, Ge, 4, 3, random_K(rng, 4), random_K(rng, 3))
        P, P_dag = materialize_surrogates(model)
        Pc, Pc_dag = closed_form_bayes_surrogates(A, Gx, Ge, 4, 3)
        assert relf(P, Pc) <= 1e-10
        assert relf(P_dag, Pc_dag) <= 1e-10

    def test_rank_range_checked(self, rng):
        with pytest.raises(ValueError, match="outside"):
            closed_form_bayes_surrogates(np.eye(3), np.eye(3), np.eye(3), 4, 3)


class TestExactRecovery:
    def test_empirical_full_row_rank(self, rng):
        n = 6
        A = rng.standard_normal((n, n))
        X = rng.standard_normal((n, 40))
        m = fit_empirical_pair(X, A @ X, X, A @ X, n, n)
        P, P_dag = materialize_surrogates(m)
        assert relf(P, A) <= 1e-8
        assert relf(P_dag, np.linalg.inv(A)) <= 1e-6 * np.linalg.cond(A)

    def test_rank_deficient_reproduces_data(self, rng):
        n, k = 6, 3
        A = rng.standard_normal((5, n))
        X = rng.standard_normal((n, k)) @ rng.standard_normal((k, 40))
        B = A @ X
        m = fit_empirical_pair(X, B, X, B, k, k)
        P, _ = materialize_surrogates(m)
        assert relf(P @ X, B) <= 1e-8
