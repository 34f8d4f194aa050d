"""Linear forward models and the additive noise model ``b = A x + eps``.

Both operators are assembled once as sparse matrices, so ``apply`` and
``apply_adjoint`` are exact transposes of each other. Inputs may be single
vectors or matrices whose columns are samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "LinearOperator",
    "NoiseSpec",
    "MATERIALIZE_LIMIT",
    "add_noise",
    "gaussian_blur_operator",
    "gaussian_kernel",
    "identity_operator",
    "materialize",
    "operator_from_descriptor",
    "radon_operator",
]

MATERIALIZE_LIMIT = 10**8


@dataclass(frozen=True)
class LinearOperator:
    """Sparse-backed linear map ``R^in_dim -> R^out_dim``.

    ``descriptor`` records the operator kind and every constructor argument,
    which is enough to rebuild it with :func:`operator_from_descriptor`.
    """

    matrix: sp.csr_matrix
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "matrix", sp.csr_matrix(self.matrix, dtype=np.float64))
        object.__setattr__(self, "_adjoint", self.matrix.T.tocsr())

    @property
    def in_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.in_dim:
            raise ValueError(f"input has leading dimension {x.shape[0]}, expected {self.in_dim}")
        return self.matrix @ x

    def apply_adjoint(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape[0] != self.out_dim:
            raise ValueError(f"input has leading dimension {y.shape[0]}, expected {self.out_dim}")
        return self._adjoint @ y

    __call__ = apply


def identity_operator(n) -> LinearOperator:
    return LinearOperator(sp.identity(n, format="csr"), {"kind": "identity", "n": int(n)})


# -- blur ---------------------------------------------------------------------


def gaussian_kernel(ksize=8, sigma=10.0):
    """Sampled 2-D Gaussian, normalized to unit sum.

    Samples sit at integer offsets ``-(ksize//2) .. ksize - 1 - ksize//2``
    from the anchor, so an even kernel is anchored at index ``ksize//2``.
    """
    offsets = np.arange(ksize) - ksize // 2
    g = np.exp(-(offsets**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def gaussian_blur_operator(height, width, ksize=8, sigma=10.0) -> LinearOperator:
    """Zero-padded 2-D Gaussian blur on row-major ``height x width`` images.

    ``(A x)[i, j] = sum_{u,v} k[u, v] x[i + u - c, j + v - c]`` with anchor
    ``c = ksize // 2``; pixels outside the image count as zero.
    """
    if ksize < 1 or ksize > min(height, width):
        raise ValueError(f"kernel size {ksize} does not fit a {height}x{width} image")
    kernel = gaussian_kernel(ksize, sigma)
    c = ksize // 2
    rows, cols, vals = [], [], []
    ii, jj = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    out_idx = (ii * width + jj).ravel()
    for u in range(ksize):
        for v in range(ksize):
            si = (ii + u - c).ravel()
            sj = (jj + v - c).ravel()
            ok = (si >= 0) & (si < height) & (sj >= 0) & (sj < width)
            rows.append(out_idx[ok])
            cols.append(si[ok] * width + sj[ok])
            vals.append(np.full(ok.sum(), kernel[u, v]))
    n = height * width
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    A.sum_duplicates()
    desc = {
        "kind": "gaussian_blur",
        "height": int(height),
        "width": int(width),
        "ksize": int(ksize),
        "sigma": float(sigma),
    }
    return LinearOperator(A, desc)


# -- parallel-beam Radon ------------------------------------------------------


def radon_operator(n, n_angles=36, n_detectors=90) -> LinearOperator:
    """Pixel-driven parallel-beam projector for ``n x n`` images.

    Pixels have unit side; the image occupies ``[-n/2, n/2]^2`` with row 0 at
    the top. Angles are ``k * 180 / n_angles`` degrees. The detector spans
    ``sqrt(2) * n`` and is split into ``n_detectors`` equal bins. Each pixel
    projects its center onto the detector and splits its mass linearly
    between the two nearest bin centers, scaled by ``1 / bin_width`` so that
    bins approximate line integrals. Sinograms are ordered angle-major:
    ``b[a * n_detectors + d]``.
    """
    if n < 4:
        raise ValueError(f"image size n={n} must be >= 4")
    if n_angles < 1 or n_detectors < 1:
        raise ValueError("n_angles and n_detectors must be >= 1")
    width = np.sqrt(2.0) * n
    dt = width / n_detectors
    coords = np.arange(n) - (n - 1) / 2.0
    yy, xx = np.meshgrid(-coords, coords, indexing="ij")
    px, py = xx.ravel(), yy.ravel()
    pix = np.arange(n * n)

    rows, cols, vals = [], [], []
    for a in range(n_angles):
        theta = np.pi * a / n_angles
        t = px * np.cos(theta) + py * np.sin(theta)
        # continuous bin coordinate; bin d has its center at pos = d
        pos = (t + width / 2.0) / dt - 0.5
        lo = np.floor(pos).astype(np.int64)
        frac = pos - lo
        for idx, w in ((lo, 1.0 - frac), (lo + 1, frac)):
            ok = (idx >= 0) & (idx < n_detectors) & (w > 0.0)
            rows.append(a * n_detectors + idx[ok])
            cols.append(pix[ok])
            vals.append(w[ok] / dt)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_angles * n_detectors, n * n),
    ).tocsr()
    A.sum_duplicates()
    desc = {
        "kind": "radon",
        "n": int(n),
        "n_angles": int(n_angles),
        "n_detectors": int(n_detectors),
    }
    return LinearOperator(A, desc)


def operator_from_descriptor(desc) -> LinearOperator:
    kind = desc.get("kind")
    if kind == "gaussian_blur":
        return gaussian_blur_operator(desc["height"], desc["width"], desc["ksize"], desc["sigma"])
    if kind == "radon":
        return radon_operator(desc["n"], desc["n_angles"], desc["n_detectors"])
    if kind == "identity":
        return identity_operator(desc["n"])
    raise ValueError(f"unknown operator kind {kind!r}")


def materialize(op: LinearOperator, limit=MATERIALIZE_LIMIT):
    """Dense matrix whose column ``j`` is ``op.apply(e_j)``."""
    size = op.in_dim * op.out_dim
    if size > limit:
        raise MemoryError(
            f"refusing to materialize {op.out_dim}x{op.in_dim} operator "
            f"({size} entries > limit {limit})"
        )
    out = np.empty((op.out_dim, op.in_dim))
    chunk = max(1, min(op.in_dim, 4096))
    for start in range(0, op.in_dim, chunk):
        stop = min(op.in_dim, start + chunk)
        E = np.zeros((op.in_dim, stop - start))
        E[np.arange(start, stop), np.arange(stop - start)] = 1.0
        out[:, start:stop] = op.apply(E)
    return out


# -- noise --------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white noise.

    ``relative_norm``: the noise is rescaled so that its norm is exactly
    ``level * ||b_clean||`` (per column). ``fixed_variance``: i.i.d.
    ``N(0, level)`` entries.
    """

    mode: str = "relative_norm"
    level: float = 0.05

    def __post_init__(self):
        if self.mode not in ("relative_norm", "fixed_variance"):
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if not self.level >= 0:
            raise ValueError(f"noise level must be >= 0, got {self.level}")

    def to_dict(self):
        return {"mode": self.mode, "level": float(self.level)}


def add_noise(b_clean, spec: NoiseSpec, rng):
    """Return ``b_clean + eps`` drawn from ``rng`` according to ``spec``.

    ``rng`` is a ``numpy.random.Generator`` or a seed. For 2-D input each
    column is treated as one sample.
    """
    rng = np.random.default_rng(rng)
    b = np.asarray(b_clean, dtype=np.float64)
    if spec.level == 0:
        return b.copy()
    eta = rng.standard_normal(b.shape)
    if spec.mode == "fixed_variance":
        return b + np.sqrt(spec.level) * eta
    scale = spec.level * np.linalg.norm(b, axis=0) / np.linalg.norm(eta, axis=0)
    return b + eta * scale
