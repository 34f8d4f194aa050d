"""Data generation and ingestion.

* randomized Shepp-Logan phantoms and CT dataset bundles with disjoint
  partitions,
* IDX (MNIST) reading and writing,
* a synthetic out-of-distribution set of typed capital letters.

Every generated sample draws from its own generator seeded by
``SeedSequence(master_seed, spawn_key=(partition, index))``, so bundles do not
depend on generation order or thread count.
"""

from __future__ import annotations

import gzip
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pmat
from .operators import LinearOperator, NoiseSpec, add_noise

__all__ = [
    "DatasetBundle",
    "IdxDimensionError",
    "IdxFormatError",
    "IdxMagicError",
    "IdxTruncatedError",
    "ImageStack",
    "MissingDataError",
    "PARTITIONS",
    "SHEPP_LOGAN_ELLIPSES",
    "build_ct_bundle",
    "generate_shepp_logan",
    "load_idx",
    "load_mnist_split",
    "make_ood_glyphs",
    "render_ellipses",
    "sample_rng",
    "write_idx",
    "write_mnist_subset",
]

PARTITIONS = {"unpaired_b": 0, "unpaired_x": 1, "paired": 2, "test": 3, "ood": 4}


def sample_rng(master_seed, partition, index):
    """Independent generator for one sample of one partition."""
    code = PARTITIONS[partition] if isinstance(partition, str) else int(partition)
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(code, int(index)))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class ImageStack:
    """``count`` images of ``height x width`` pixels in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[None]
        if px.ndim != 3 or px.shape[0] < 1:
            raise ValueError(f"expected (count, height, width) pixels, got {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def count(self):
        return self.pixels.shape[0]

    @property
    def height(self):
        return self.pixels.shape[1]

    @property
    def width(self):
        return self.pixels.shape[2]

    def __len__(self):
        return self.count

    def __getitem__(self, idx):
        return ImageStack(self.pixels[idx])

    def columns(self):
        """Row-major vectorized images as columns, shape (h*w, count)."""
        return self.pixels.reshape(self.count, -1).T.copy()


# -- Shepp-Logan ----------------------------------------------------------------

# intensity, semi-axis a (x), semi-axis b (y), x0, y0, rotation (degrees);
# the modified (high-contrast) intensities keep the canonical phantom in [0, 1]
SHEPP_LOGAN_ELLIPSES = np.array(
    [
        [1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0],
        [-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0],
        [-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0],
        [-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0],
        [0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0],
        [0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0],
        [0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0],
        [0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0],
        [0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0],
        [0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0],
    ]
)


def render_ellipses(n, ellipses):
    """Point-sample a sum of filled ellipses on an ``n x n`` grid over [-1, 1]^2.

    Pixel centers are at ``(2k + 1)/n - 1``; row 0 is the top (y = +1).
    """
    c = (2.0 * np.arange(n) + 1.0) / n - 1.0
    y, x = np.meshgrid(-c, c, indexing="ij")
    img = np.zeros((n, n))
    for val, a, b, x0, y0, deg in ellipses:
        th = np.deg2rad(deg)
        ct, st = np.cos(th), np.sin(th)
        dx, dy = x - x0, y - y0
        u = dx * ct + dy * st
        v = -dx * st + dy * ct
        img[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += val
    return img


def _jitter_ellipses(rng, jitter):
    e = SHEPP_LOGAN_ELLIPSES.copy()
    u = rng.uniform(-1.0, 1.0, size=(e.shape[0], 6))
    e[:, 0] *= 1.0 + jitter * u[:, 0]
    e[:, 1] *= 1.0 + jitter * u[:, 1]
    e[:, 2] *= 1.0 + jitter * u[:, 2]
    # centers move by a fraction of the ellipse's own size
    e[:, 3] += jitter * u[:, 3] * e[:, 1]
    e[:, 4] += jitter * u[:, 4] * e[:, 2]
    e[:, 5] += jitter * u[:, 5] * 90.0
    # keep every ellipse inside the unit disk
    reach = np.hypot(e[:, 3], e[:, 4]) + np.maximum(e[:, 1], e[:, 2])
    over = reach > 1.0
    if np.any(over):
        room = np.maximum(1.0 - np.hypot(e[over, 3], e[over, 4]), 1e-3)
        shrink = room / np.maximum(e[over, 1], e[over, 2])
        e[over, 1] *= shrink
        e[over, 2] *= shrink
    return e


def generate_shepp_logan(n, rng=None, jitter=0.1):
    """Randomized Shepp-Logan phantom, ``n x n``, clipped to [0, 1].

    Each ellipse's intensity and semi-axes are scaled by ``1 + jitter*u``,
    its center moves by up to ``jitter`` times its semi-axes and its rotation
    by up to ``jitter * 90`` degrees (``u`` uniform on [-1, 1]). ``jitter=0``
    gives the canonical phantom.
    """
    if n < 16:
        raise ValueError(f"phantom size n={n} must be >= 16")
    if not 0.0 <= jitter <= 1.0:
        raise ValueError(f"jitter must be in [0, 1], got {jitter}")
    if jitter == 0.0:
        ellipses = SHEPP_LOGAN_ELLIPSES
    else:
        ellipses = _jitter_ellipses(np.random.default_rng(rng), jitter)
    return np.clip(render_ellipses(n, ellipses), 0.0, 1.0)


# -- CT bundles -------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetBundle:
    """CT data split into disjoint partitions; samples are columns.

    ``unpaired_b`` trains the sinogram autoencoder, ``unpaired_x`` the phantom
    autoencoder, ``paired_*`` the latent maps, ``test_*`` is held out.
    """

    unpaired_b: np.ndarray
    unpaired_x: np.ndarray
    paired_x: np.ndarray
    paired_b: np.ndarray
    test_x: np.ndarray
    test_b: np.ndarray
    descriptor: dict = field(default_factory=dict)

    FIELDS = ("unpaired_b", "unpaired_x", "paired_x", "paired_b", "test_x", "test_b")

    def __post_init__(self):
        if self.paired_x.shape[1] != self.paired_b.shape[1]:
            raise ValueError("paired_x and paired_b column counts differ")
        if self.test_x.shape[1] != self.test_b.shape[1]:
            raise ValueError("test_x and test_b column counts differ")

    def save(self, directory):
        """Write one PMAT file per partition plus ``bundle.json``."""
        import json

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name in self.FIELDS:
            pmat.write(d / f"{name}.pmat", getattr(self, name))
        (d / "bundle.json").write_text(json.dumps(self.descriptor, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory):
        import json

        d = Path(directory)
        arrays = {name: pmat.read(d / f"{name}.pmat") for name in cls.FIELDS}
        desc = json.loads((d / "bundle.json").read_text())
        return cls(descriptor=desc, **arrays)


def _ct_sample(args):
    n, op, noise, jitter, master_seed, partition, i, want_x, want_b = args
    rng = sample_rng(master_seed, partition, i)
    x = generate_shepp_logan(n, rng, jitter).ravel()
    b = add_noise(op.apply(x), noise, rng) if want_b else None
    return (x if want_x else None), b


def _ct_partition(n, op, noise, jitter, master_seed, partition, count, want_x, want_b, workers):
    jobs = [(n, op, noise, jitter, master_seed, partition, i, want_x, want_b) for i in range(count)]
    if workers and workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_ct_sample, jobs))
    else:
        results = [_ct_sample(j) for j in jobs]
    X = np.column_stack([r[0] for r in results]) if want_x and count else np.zeros((n * n, 0))
    B = np.column_stack([r[1] for r in results]) if want_b and count else np.zeros((op.out_dim, 0))
    return X, B


def build_ct_bundle(
    n,
    op: LinearOperator,
    noise: NoiseSpec,
    counts,
    master_seed=0,
    jitter=0.1,
    workers=1,
) -> DatasetBundle:
    """Generate a CT dataset bundle.

    Parameters
    ----------
    counts : (unpaired_b, unpaired_x, paired, test)
        Number of samples per partition. Phantoms behind ``unpaired_b`` are
        discarded; ``unpaired_x`` phantoms are never projected.
    """
    n_ub, n_ux, n_p, n_t = (int(c) for c in counts)
    if min(n_ub, n_ux, n_p, n_t) < 0:
        raise ValueError(f"counts must be non-negative, got {counts}")
    if op.in_dim != n * n:
        raise ValueError(f"operator input dim {op.in_dim} != n*n = {n * n}")
    common = (n, op, noise, jitter, master_seed)
    _, ub = _ct_partition(*common, "unpaired_b", n_ub, False, True, workers)
    ux, _ = _ct_partition(*common, "unpaired_x", n_ux, True, False, workers)
    px, pb = _ct_partition(*common, "paired", n_p, True, True, workers)
    tx, tb = _ct_partition(*common, "test", n_t, True, True, workers)
    desc = {
        "kind": "ct_bundle",
        "n": int(n),
        "operator": dict(op.descriptor),
        "noise": noise.to_dict(),
        "counts": [n_ub, n_ux, n_p, n_t],
        "master_seed": int(master_seed),
        "jitter": float(jitter),
        "seed_derivation": "SeedSequence(master_seed, spawn_key=(partition_code, index))",
        "partition_codes": {k: v for k, v in PARTITIONS.items() if k != "ood"},
    }
    return DatasetBundle(ub, ux, px, pb, tx, tb, desc)


# -- IDX --------------------------------------------------------------------------


class IdxFormatError(ValueError):
    """Malformed IDX file."""


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxDimensionError(IdxFormatError):
    pass


class MissingDataError(FileNotFoundError):
    pass


_IDX_U8 = 0x08
_IDX_MAX_ITEMS = 2**34


def _read_bytes(path):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def parse_idx(data: bytes, name="<bytes>"):
    """Decode an unsigned-byte IDX blob into a uint8 array."""
    if len(data) < 4:
        raise IdxTruncatedError(f"{name}: expected at least 4 header bytes, got {len(data)}")
    zero, dtype, ndim = data[0:2], data[2], data[3]
    if zero != b"\x00\x00" or dtype != _IDX_U8 or ndim not in (1, 3):
        magic = struct.unpack(">I", data[:4])[0]
        raise IdxMagicError(
            f"{name}: bad magic 0x{magic:08X} (expected 0x00000803 images or 0x00000801 labels)"
        )
    head = 4 + 4 * ndim
    if len(data) < head:
        raise IdxTruncatedError(
            f"{name}: expected {head} header bytes, got {len(data)}"
        )
    dims = struct.unpack(f">{ndim}I", data[4:head])
    items = 1
    for d in dims:
        items *= d
    if items > _IDX_MAX_ITEMS:
        raise IdxDimensionError(f"{name}: dimensions {dims} overflow ({items} items)")
    expected = head + items
    if len(data) < expected:
        raise IdxTruncatedError(
            f"{name}: truncated payload, expected {expected} bytes, got {len(data)}"
        )
    if len(data) > expected:
        raise IdxFormatError(f"{name}: {len(data) - expected} trailing bytes after payload")
    return np.frombuffer(data, dtype=np.uint8, offset=head).reshape(dims)


def load_idx(path):
    """Read an IDX file (optionally gzipped).

    Image files (magic 0x00000803) become an :class:`ImageStack` scaled by
    1/255; label files (0x00000801) become a uint8 vector.
    """
    arr = parse_idx(_read_bytes(path), name=str(path))
    if arr.ndim == 1:
        return arr.copy()
    return ImageStack(arr.astype(np.float64) / 255.0)


def write_idx(path, array):
    """Write a uint8 array with 1 or 3 dimensions as IDX."""
    arr = np.asarray(array)
    if arr.ndim not in (1, 3):
        raise ValueError(f"IDX writer supports 1-D labels or 3-D images, got {arr.ndim}-D")
    arr = arr.astype(np.uint8, copy=False)
    header = bytes([0, 0, _IDX_U8, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    data = header + np.ascontiguousarray(arr).tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "wb") as f:
            f.write(data)
    else:
        path.write_bytes(data)


_MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def _find(data_dir, stem):
    for sub in ("", "mnist", "MNIST", "MNIST/raw"):
        for suffix in ("", ".gz"):
            p = Path(data_dir) / sub / (stem + suffix)
            if p.exists():
                return p
    return None


def mnist_paths(data_dir=None):
    """Locate the four MNIST IDX files under ``data_dir`` or ``$PAIR_DATA_DIR``."""
    data_dir = data_dir or os.environ.get("PAIR_DATA_DIR")
    if not data_dir:
        raise MissingDataError(
            "MNIST data directory not set: pass data_dir or set PAIR_DATA_DIR to a directory "
            "holding train-images-idx3-ubyte[.gz], train-labels-idx1-ubyte[.gz], "
            "t10k-images-idx3-ubyte[.gz] and t10k-labels-idx1-ubyte[.gz] "
            "(from https://yann.lecun.com/exdb/mnist/ or any MNIST mirror). "
            "Without network access, pair.datasets.write_mnist_subset(dir) builds a "
            "5,000-image subset from the copy bundled with mlxtend."
        )
    found, missing = {}, []
    for key, stem in _MNIST_FILES.items():
        p = _find(data_dir, stem)
        if p is None:
            missing.append(stem)
        found[key] = p
    if missing:
        raise MissingDataError(
            f"missing MNIST files under {data_dir}: {', '.join(missing)}. Download them from "
            "https://yann.lecun.com/exdb/mnist/ (or a mirror) into that directory, or run "
            "pair.datasets.write_mnist_subset(dir) to build a small subset offline."
        )
    return found


def load_mnist_split(data_dir=None, n_train=50_000, n_val=10_000, n_test=10_000):
    """Return ``(train, val, test)`` image stacks.

    Training images are the first ``n_train`` of the training file,
    validation the last ``n_val`` of it, testing the first ``n_test`` of the
    test file.
    """
    paths = mnist_paths(data_dir)
    train_all = load_idx(paths["train_images"])
    test_all = load_idx(paths["test_images"])
    if n_train + n_val > train_all.count:
        raise ValueError(
            f"requested {n_train} train + {n_val} validation images but the training file "
            f"holds {train_all.count}"
        )
    if n_test > test_all.count:
        raise ValueError(f"requested {n_test} test images but the test file holds {test_all.count}")
    train = train_all[:n_train]
    val = train_all[train_all.count - n_val :] if n_val else None
    return train, val, test_all[:n_test]


def write_mnist_subset(dest, n_test=1000, seed=0):
    """Write the 5,000-image MNIST subset shipped with ``mlxtend`` as IDX files.

    The subset is shuffled with ``seed``; the last ``n_test`` images form the
    test files, the rest the training files.
    """
    from mlxtend.data import mnist_data

    X, y = mnist_data()
    perm = np.random.default_rng(seed).permutation(X.shape[0])
    X = X[perm].reshape(-1, 28, 28).round().astype(np.uint8)
    y = y[perm].astype(np.uint8)
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    n_train = X.shape[0] - n_test
    write_idx(dest / _MNIST_FILES["train_images"], X[:n_train])
    write_idx(dest / _MNIST_FILES["train_labels"], y[:n_train])
    write_idx(dest / _MNIST_FILES["test_images"], X[n_train:])
    write_idx(dest / _MNIST_FILES["test_labels"], y[n_train:])
    return dest


# -- OOD glyphs ---------------------------------------------------------------------

# straight strokes of capital letters on a 5 (wide) x 7 (tall) grid, y down
GLYPH_STROKES = {
    "A": [((0, 6), (2, 0)), ((2, 0), (4, 6)), ((1, 4), (3, 4))],
    "B": [((0, 0), (0, 6)), ((0, 0), (3, 0)), ((3, 0), (4, 1)), ((4, 1), (4, 2)),
          ((4, 2), (3, 3)), ((0, 3), (3, 3)), ((3, 3), (4, 4)), ((4, 4), (4, 5)),
          ((4, 5), (3, 6)), ((3, 6), (0, 6))],
    "C": [((4, 1), (3, 0)), ((3, 0), (1, 0)), ((1, 0), (0, 1)), ((0, 1), (0, 5)),
          ((0, 5), (1, 6)), ((1, 6), (3, 6)), ((3, 6), (4, 5))],
    "D": [((0, 0), (0, 6)), ((0, 0), (2, 0)), ((2, 0), (4, 2)), ((4, 2), (4, 4)),
          ((4, 4), (2, 6)), ((2, 6), (0, 6))],
    "E": [((0, 0), (0, 6)), ((0, 0), (4, 0)), ((0, 3), (3, 3)), ((0, 6), (4, 6))],
    "F": [((0, 0), (0, 6)), ((0, 0), (4, 0)), ((0, 3), (3, 3))],
    "G": [((4, 1), (3, 0)), ((3, 0), (1, 0)), ((1, 0), (0, 1)), ((0, 1), (0, 5)),
          ((0, 5), (1, 6)), ((1, 6), (3, 6)), ((3, 6), (4, 5)), ((4, 5), (4, 3)),
          ((4, 3), (2, 3))],
    "H": [((0, 0), (0, 6)), ((4, 0), (4, 6)), ((0, 3), (4, 3))],
    "I": [((1, 0), (3, 0)), ((2, 0), (2, 6)), ((1, 6), (3, 6))],
    "J": [((1, 0), (4, 0)), ((3, 0), (3, 5)), ((3, 5), (2, 6)), ((2, 6), (1, 6)),
          ((1, 6), (0, 5))],
}  # fmt: skip


def _segment_distance(px, py, p, q):
    (x0, y0), (x1, y1) = p, q
    dx, dy = x1 - x0, y1 - y0
    L2 = dx * dx + dy * dy
    t = np.clip(((px - x0) * dx + (py - y0) * dy) / L2, 0.0, 1.0) if L2 > 0 else 0.0
    return np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))


def render_glyph(letter, n=28, height=20.0, width=14.0, thickness=2.5, center=None):
    """Anti-aliased rendering of one stroke glyph into an ``n x n`` frame."""
    strokes = GLYPH_STROKES[letter]
    cx, cy = center if center is not None else ((n - 1) / 2.0, (n - 1) / 2.0)
    yy, xx = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float), indexing="ij")
    d = np.full((n, n), np.inf)
    for (a, b) in strokes:
        p = (cx + (a[0] / 4.0 - 0.5) * width, cy + (a[1] / 6.0 - 0.5) * height)
        q = (cx + (b[0] / 4.0 - 0.5) * width, cy + (b[1] / 6.0 - 0.5) * height)
        d = np.minimum(d, _segment_distance(xx, yy, p, q))
    return np.clip(thickness / 2.0 + 0.5 - d, 0.0, 1.0)


def make_ood_glyphs(count, n=28, rng=None) -> ImageStack:
    """Bright typed capital letters A-J on black, with random size, stroke
    thickness and position."""
    rng = np.random.default_rng(rng)
    letters = sorted(GLYPH_STROKES)
    out = np.empty((count, n, n))
    for k in range(count):
        letter = letters[rng.integers(len(letters))]
        height = rng.uniform(0.75, 0.95) * n
        width = height * 5.0 / 7.0 * rng.uniform(0.85, 1.25)
        thickness = rng.uniform(2.5, 4.5) * n / 28.0
        shift = rng.uniform(-1.5, 1.5, size=2) * n / 28.0
        center = ((n - 1) / 2.0 + shift[0], (n - 1) / 2.0 + shift[1])
        out[k] = render_glyph(letter, n, height, width, thickness, center)
    return ImageStack(out)
