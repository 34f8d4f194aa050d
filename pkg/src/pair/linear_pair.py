"""Linear paired autoencoders.

Optimal linear autoencoders (Bayes and empirical), optimal linear maps
between the two latent spaces, and the composed forward/inverse surrogates

    P     = D_b @ M     @ E_x
    P_dag = D_x @ M_dag @ E_b

Samples are stored column-wise (``X`` is n x N). No centering or
normalization is applied: the 1/(N-1) second-moment factor cancels in every
projector and every latent map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    SvdResult,
    as_matrix,
    default_rtol,
    min_norm_right_solve,
    svd,
    truncate,
)

__all__ = [
    "LatentMap",
    "LinearAutoencoder",
    "PairModel",
    "autoencoder_from_svd",
    "bayes_forward_map",
    "bayes_inverse_map",
    "check_spd",
    "closed_form_bayes_surrogates",
    "fit_bayes_autoencoder",
    "fit_bayes_pair",
    "fit_empirical_autoencoder",
    "fit_empirical_latent_maps",
    "fit_empirical_pair",
    "materialize_surrogates",
    "pair_forward_apply",
    "pair_inverse_apply",
]


def _readonly(a):
    a = np.array(a, dtype=np.float64, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LinearAutoencoder:
    """Encoder ``E`` (r x n) and decoder ``D`` (n x r).

    ``sigma`` holds the singular values that defined the latent basis
    (of the sample matrix or of the second-moment factor), kept for
    diagnostics.
    """

    E: np.ndarray
    D: np.ndarray
    mode: str = "empirical"
    K: np.ndarray | None = None
    sigma: np.ndarray | None = None
    tie: bool = False

    def __post_init__(self):
        object.__setattr__(self, "E", _readonly(self.E))
        object.__setattr__(self, "D", _readonly(self.D))
        if self.K is not None:
            object.__setattr__(self, "K", _readonly(self.K))
        if self.sigma is not None:
            object.__setattr__(self, "sigma", _readonly(self.sigma))
        if self.E.ndim != 2 or self.D.shape != self.E.shape[::-1]:
            raise ValueError(f"encoder {self.E.shape} and decoder {self.D.shape} do not pair up")
        if self.mode not in ("bayes", "empirical"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def latent_dim(self) -> int:
        return self.E.shape[0]

    @property
    def dim(self) -> int:
        return self.E.shape[1]

    def encode(self, x):
        return self.E @ x

    def decode(self, z):
        return self.D @ z

    def projector(self):
        """Dense ``D @ E`` (n x n)."""
        return self.D @ self.E

    def __call__(self, x):
        return self.D @ (self.E @ x)


@dataclass(frozen=True)
class LatentMap:
    """Forward map ``M`` (r_b x r_x) and inverse map ``M_dag`` (r_x x r_b)."""

    M: np.ndarray
    M_dag: np.ndarray
    mode: str = "empirical"

    def __post_init__(self):
        object.__setattr__(self, "M", _readonly(self.M))
        object.__setattr__(self, "M_dag", _readonly(self.M_dag))
        if self.M.shape != self.M_dag.shape[::-1]:
            raise ValueError(f"M {self.M.shape} and M_dag {self.M_dag.shape} are inconsistent")
        if not (np.all(np.isfinite(self.M)) and np.all(np.isfinite(self.M_dag))):
            raise ValueError("latent maps contain non-finite entries")

    @property
    def r_x(self) -> int:
        return self.M.shape[1]

    @property
    def r_b(self) -> int:
        return self.M.shape[0]


@dataclass(frozen=True)
class PairModel:
    ae_x: LinearAutoencoder
    ae_b: LinearAutoencoder
    maps: LatentMap
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.ae_x.latent_dim != self.maps.r_x:
            raise ValueError(
                f"ae_x latent dim {self.ae_x.latent_dim} != map input dim {self.maps.r_x}"
            )
        if self.ae_b.latent_dim != self.maps.r_b:
            raise ValueError(
                f"ae_b latent dim {self.ae_b.latent_dim} != map output dim {self.maps.r_b}"
            )

    def forward(self, x):
        return pair_forward_apply(self, x)

    def inverse(self, b):
        return pair_inverse_apply(self, b)


# -- autoencoders -------------------------------------------------------------


def _mixing(K, r):
    if K is None:
        return None, None
    K = as_matrix(K, "mixing_K")
    if K.shape != (r, r):
        raise ValueError(f"mixing_K must be {r}x{r}, got {K.shape}")
    s = np.linalg.svd(K, compute_uv=False)
    if s[-1] <= default_rtol(K.shape) * s[0]:
        raise ValueError("mixing_K is singular")
    return K, np.linalg.inv(K)


def _from_basis(U_r, K, mode, sigma, tie):
    K, K_inv = _mixing(K, U_r.shape[1])
    if K is None:
        E, D = U_r.T, U_r
    else:
        E, D = K_inv @ U_r.T, U_r @ K
    return LinearAutoencoder(E=E, D=D, mode=mode, K=K, sigma=sigma, tie=tie)


def fit_empirical_autoencoder(samples, r, mixing_K=None) -> LinearAutoencoder:
    """Optimal rank-``r`` linear autoencoder for the columns of ``samples``.

    ``E = K^-1 U_r^T`` and ``D = U_r K`` with ``U_r`` the leading left singular
    vectors of ``samples`` (n x N). Raises ``ValueError`` if ``r`` exceeds the
    numerical rank of the data.
    """
    X = as_matrix(samples, "samples")
    return autoencoder_from_svd(svd(X), r, mixing_K)


def autoencoder_from_svd(s: SvdResult, r, mixing_K=None) -> LinearAutoencoder:
    """Empirical autoencoder from a precomputed SVD of the sample matrix, so
    that sweeps over ``r`` factor the data only once."""
    n, N = s.shape
    if not 1 <= r <= min(n, N):
        raise ValueError(f"latent dim r={r} outside [1, min(n, N)={min(n, N)}]")
    cutoff = default_rtol(s.shape) * s.sigma[0]
    if s.sigma[r - 1] <= cutoff:
        raise ValueError(
            f"latent dim r={r} exceeds the numerical rank of the samples: "
            f"sigma_r estimate {s.sigma[r - 1]:.3e} <= cutoff {cutoff:.3e}"
        )
    U_r, _, _, tie = truncate(s, r)
    return _from_basis(U_r, mixing_K, "empirical", s.sigma, tie)


def fit_bayes_autoencoder(L_factor, r, mixing_K=None) -> LinearAutoencoder:
    """Bayes-optimal rank-``r`` linear autoencoder from a second-moment factor.

    For ``Gamma = L L^T`` the minimal-norm minimizer of
    ``||Y L - L||_F`` over rank-``r`` ``Y`` is ``U_{L,r} U_{L,r}^T``.

    Parameters
    ----------
    L_factor : (n, n) array
        Full-rank factor of the second moment. A rank-deficient factor is
        rejected; regularize ``Gamma`` yourself (e.g. add
        ``1e-10 * trace(Gamma) / n`` times the identity) before factoring.
    r : int
        Latent dimension, ``1 <= r <= n``.
    mixing_K : (r, r) array, optional
        Invertible mixing matrix; ``D E`` does not depend on it.
    """
    L = as_matrix(L_factor, "L_factor")
    n = L.shape[0]
    if L.shape != (n, n):
        raise ValueError(f"L_factor must be square, got {L.shape}")
    if not 1 <= r <= n:
        raise ValueError(f"latent dim r={r} outside [1, {n}]")
    s = svd(L)
    if s.sigma[-1] <= default_rtol(L.shape) * s.sigma[0]:
        raise ValueError(
            "L_factor is rank deficient (sigma_min "
            f"{s.sigma[-1]:.3e}); regularize Gamma, e.g. Gamma + delta*I with "
            "delta = 1e-10*trace(Gamma)/n, before factoring"
        )
    U_r, _, _, tie = truncate(s, r)
    return _from_basis(U_r, mixing_K, "bayes", s.sigma, tie)


# -- latent maps --------------------------------------------------------------


def check_spd(G, name="matrix", rtol=1e-10):
    """Validate symmetry and positive definiteness; return the Cholesky factor."""
    G = as_matrix(G, name)
    if G.shape[0] != G.shape[1]:
        raise ValueError(f"{name} must be square, got {G.shape}")
    scale = max(np.abs(G).max(), np.finfo(float).tiny)
    if np.abs(G - G.T).max() > rtol * scale:
        raise ValueError(f"{name} is not symmetric")
    try:
        return np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} is not positive definite") from exc


def _full_row_rank_solve(rhs, gram, what):
    # rhs @ inv(gram) for SPD gram, refusing singular gram
    s = np.linalg.svd(gram, compute_uv=False)
    if s[-1] <= default_rtol(gram.shape) * s[0]:
        raise ValueError(f"{what} is singular: encoder does not have full row rank")
    return np.linalg.solve(gram.T, rhs.T).T


def bayes_forward_map(ae_x, ae_b, A, gamma_x):
    """``E_b A Gamma_x E_x^T (E_x Gamma_x E_x^T)^-1``."""
    A = as_matrix(A, "A")
    Gx = as_matrix(gamma_x, "gamma_x")
    check_spd(Gx, "gamma_x")
    Ex, Eb = ae_x.E, ae_b.E
    cross = Eb @ A @ Gx @ Ex.T
    gram = Ex @ Gx @ Ex.T
    return _full_row_rank_solve(cross, gram, "E_x Gamma_x E_x^T")


def bayes_inverse_map(ae_x, ae_b, A, gamma_x, gamma_eps):
    """``E_x Gamma_x A^T E_b^T (E_b Gamma_b E_b^T)^-1``.

    ``Gamma_b = A Gamma_x A^T + Gamma_eps`` is formed here rather than
    accepted from the caller.
    """
    A = as_matrix(A, "A")
    Gx = as_matrix(gamma_x, "gamma_x")
    check_spd(Gx, "gamma_x")
    Ge = as_matrix(gamma_eps, "gamma_eps")
    check_spd(Ge, "gamma_eps")
    Gb = A @ Gx @ A.T + Ge
    Ex, Eb = ae_x.E, ae_b.E
    cross = Ex @ Gx @ A.T @ Eb.T
    gram = Eb @ Gb @ Eb.T
    return _full_row_rank_solve(cross, gram, "E_b Gamma_b E_b^T")


def fit_empirical_latent_maps(z_x, z_b, rtol=None) -> LatentMap:
    """Minimal-norm least-squares maps between paired latent codes.

    ``M = Z_b pinv(Z_x)`` and ``M_dag = Z_x pinv(Z_b)``; columns of
    ``z_x`` (r_x x J) and ``z_b`` (r_b x J) are paired samples.
    """
    z_x = np.asarray(z_x, dtype=np.float64)
    z_b = np.asarray(z_b, dtype=np.float64)
    if z_x.ndim != 2 or z_b.ndim != 2:
        raise ValueError("latent codes must be 2-D")
    if z_x.shape[1] == 0 or z_b.shape[1] == 0:
        raise ValueError("need at least one paired sample (J = 0)")
    if z_x.shape[1] != z_b.shape[1]:
        raise ValueError(f"unpaired latent codes: J_x={z_x.shape[1]}, J_b={z_b.shape[1]}")
    M = min_norm_right_solve(z_x, z_b, rtol=rtol)
    M_dag = min_norm_right_solve(z_b, z_x, rtol=rtol)
    return LatentMap(M=M, M_dag=M_dag, mode="empirical")


# -- whole-model fitting ------------------------------------------------------


def fit_empirical_pair(X_unpaired, B_unpaired, X_paired, B_paired, r_x, r_b) -> PairModel:
    """Fit both autoencoders on unpaired data, then the maps on pairs."""
    ae_x = fit_empirical_autoencoder(X_unpaired, r_x)
    ae_b = fit_empirical_autoencoder(B_unpaired, r_b)
    maps = fit_empirical_latent_maps(ae_x.encode(X_paired), ae_b.encode(B_paired))
    return PairModel(ae_x, ae_b, maps, meta={"kind": "linear-pair", "mode": "empirical"})


def fit_bayes_pair(A, gamma_x, gamma_eps, r_x, r_b, K_x=None, K_b=None) -> PairModel:
    """Bayes-optimal linear PAIR model for known second moments."""
    A = as_matrix(A, "A")
    L_x = check_spd(gamma_x, "gamma_x")
    Gb = A @ np.asarray(gamma_x) @ A.T + np.asarray(gamma_eps)
    check_spd(gamma_eps, "gamma_eps")
    L_b = check_spd(Gb, "gamma_b")
    ae_x = fit_bayes_autoencoder(L_x, r_x, K_x)
    ae_b = fit_bayes_autoencoder(L_b, r_b, K_b)
    maps = LatentMap(
        M=bayes_forward_map(ae_x, ae_b, A, gamma_x),
        M_dag=bayes_inverse_map(ae_x, ae_b, A, gamma_x, gamma_eps),
        mode="bayes",
    )
    return PairModel(ae_x, ae_b, maps, meta={"kind": "linear-pair", "mode": "bayes"})


# -- surrogates ---------------------------------------------------------------


def _check_vec(v, n, what):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != n:
        raise ValueError(f"{what} has leading dimension {v.shape[0]}, expected {n}")
    return v


def pair_forward_apply(model: PairModel, x):
    """``D_b M E_x x``; ``x`` may be a vector or a matrix of columns."""
    x = _check_vec(x, model.ae_x.dim, "x")
    return model.ae_b.D @ (model.maps.M @ (model.ae_x.E @ x))


def pair_inverse_apply(model: PairModel, b):
    """``D_x M_dag E_b b``."""
    b = _check_vec(b, model.ae_b.dim, "b")
    return model.ae_x.D @ (model.maps.M_dag @ (model.ae_b.E @ b))


def materialize_surrogates(model: PairModel):
    """Dense ``(P, P_dag)``."""
    P = model.ae_b.D @ model.maps.M @ model.ae_x.E
    P_dag = model.ae_x.D @ model.maps.M_dag @ model.ae_b.E
    return P, P_dag


def _eig_desc(G):
    w, U = np.linalg.eigh(G)
    order = np.argsort(w)[::-1]
    return np.maximum(w[order], 0.0), U[:, order]


def closed_form_bayes_surrogates(A, gamma_x, gamma_eps, r_x, r_b):
    """Bayes PAIR surrogates straight from eigendecompositions.

    With ``Gamma_x = U_x S_x^2 U_x^T`` and ``Gamma_b = U_b S_b^2 U_b^T``::

        P     = U_b,r U_b,r^T A U_x,r U_x,r^T
        P_dag = U_x,r S_x,r^2 U_x,r^T A^T U_b,r S_b,r^-2 U_b,r^T

    This path never forms encoders or latent maps, so it serves as an
    independent check of the composed construction.
    """
    A = as_matrix(A, "A")
    q, n = A.shape
    Gx = as_matrix(gamma_x, "gamma_x")
    Ge = as_matrix(gamma_eps, "gamma_eps")
    check_spd(Gx, "gamma_x")
    check_spd(Ge, "gamma_eps")
    if not (1 <= r_x <= n and 1 <= r_b <= q):
        raise ValueError(f"ranks (r_x={r_x}, r_b={r_b}) outside [1, {n}] x [1, {q}]")
    Gb = A @ Gx @ A.T + Ge
    wx, Ux = _eig_desc(Gx)
    wb, Ub = _eig_desc(Gb)
    Ux, wx = Ux[:, :r_x], wx[:r_x]
    Ub, wb = Ub[:, :r_b], wb[:r_b]
    P = Ub @ (Ub.T @ A @ Ux) @ Ux.T
    P_dag = (Ux * wx) @ (Ux.T @ A.T @ Ub) @ (Ub / wb).T
    return P, P_dag
