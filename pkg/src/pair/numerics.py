"""Dense linear algebra primitives: SVD, truncation, pseudo-inverse and
minimal-norm right solves.

Everything downstream (autoencoders, latent maps, surrogates) is expressed
through these four functions so that rank cutoffs and tie handling are
decided in exactly one place.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SvdError",
    "SvdResult",
    "TruncationTieWarning",
    "as_matrix",
    "default_rtol",
    "min_norm_right_solve",
    "numerical_rank",
    "pseudo_inverse",
    "svd",
    "truncate",
]

_EPS = np.finfo(np.float64).eps
_TIE_TOL = 1e-12


class SvdError(np.linalg.LinAlgError):
    """The SVD routine failed to converge."""


class TruncationTieWarning(UserWarning):
    """Truncation boundary falls inside a cluster of equal singular values."""


def as_matrix(a, name="a"):
    """Return ``a`` as a finite 2-D float64 array (copied if needed)."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return arr


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a = U @ diag(sigma) @ V.T``.

    ``U`` is (m, k), ``sigma`` is (k,) sorted descending, ``V`` is (n, k)
    with ``k = min(m, n)``.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        for arr in (self.U, self.sigma, self.V):
            arr.setflags(write=False)

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    def reconstruct(self):
        return (self.U * self.sigma) @ self.V.T


def svd(a) -> SvdResult:
    """Thin singular value decomposition of a dense matrix.

    Raises
    ------
    SvdError
        If LAPACK fails to converge. The message carries the matrix
        dimensions and a cheap condition estimate.
    """
    a = as_matrix(a)
    try:
        U, s, Vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        try:
            cond = np.linalg.cond(a, p=1)
        except np.linalg.LinAlgError:
            cond = float("nan")
        raise SvdError(
            f"SVD did not converge for {a.shape[0]}x{a.shape[1]} matrix "
            f"(1-norm condition estimate {cond:.3e}): {exc}"
        ) from exc
    # LAPACK returns sorted non-negative values; enforce it anyway
    s = np.maximum(s, 0.0)
    return SvdResult(U=U, sigma=s, V=Vt.T.copy())


def truncate(s: SvdResult, r: int, warn: bool = True):
    """Keep the leading ``r`` singular triplets.

    Returns ``(U_r, sigma_r, V_r, tie)`` where ``tie`` is True when
    ``sigma[r-1] == sigma[r]`` to within 1e-12 (relative to ``sigma[0]``).
    In that case the rank-``r`` subspace is not unique and the routine's
    deterministic ordering is used.
    """
    k = s.sigma.shape[0]
    if not 1 <= r <= k:
        raise ValueError(f"truncation rank r={r} outside [1, {k}]")
    tie = False
    if r < k:
        scale = max(s.sigma[0], 1.0)
        tie = bool(abs(s.sigma[r - 1] - s.sigma[r]) <= _TIE_TOL * scale)
        if tie and warn:
            warnings.warn(
                f"sigma[{r - 1}] == sigma[{r}] ({s.sigma[r - 1]:.6e}); "
                "rank-r subspace is not unique",
                TruncationTieWarning,
                stacklevel=2,
            )
    return s.U[:, :r], s.sigma[:r], s.V[:, :r], tie


def default_rtol(shape) -> float:
    """Relative cutoff ``max(m, n) * eps`` (multiplied by sigma_max by callers)."""
    return max(shape) * _EPS


def numerical_rank(a=None, *, s: SvdResult | None = None, rtol=None) -> int:
    """Number of singular values above ``rtol * sigma_max``."""
    if s is None:
        s = svd(a)
    if rtol is None:
        rtol = default_rtol(s.shape)
    if s.sigma.size == 0 or s.sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(s.sigma > rtol * s.sigma[0]))


def pseudo_inverse(a, rtol=None):
    """Moore-Penrose pseudo-inverse with a relative singular value cutoff.

    Singular values ``<= rtol * sigma_max`` are treated as zero. The default
    ``rtol`` is ``max(m, n) * eps``.
    """
    a = as_matrix(a)
    s = svd(a)
    if rtol is None:
        rtol = default_rtol(a.shape)
    if s.sigma[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    keep = s.sigma > rtol * s.sigma[0]
    inv = np.zeros_like(s.sigma)
    inv[keep] = 1.0 / s.sigma[keep]
    return (s.V * inv) @ s.U.T


def min_norm_right_solve(z_in, target, rtol=None):
    """Minimal-Frobenius-norm ``M`` minimizing ``||M @ z_in - target||_F``.

    This is ``target @ pinv(z_in)``; ``z_in`` is (k, J) and ``target`` is
    (p, J), giving ``M`` of shape (p, k).
    """
    z_in = as_matrix(z_in, "z_in")
    target = as_matrix(target, "target")
    if z_in.shape[1] != target.shape[1]:
        raise ValueError(
            f"column count mismatch: z_in has {z_in.shape[1]}, target has {target.shape[1]}"
        )
    return target @ pseudo_inverse(z_in, rtol=rtol)
