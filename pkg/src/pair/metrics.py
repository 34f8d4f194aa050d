"""Reconstruction errors, the five PAIR consistency metrics, baselines and
out-of-distribution scoring.

Encoders and decoders are plain callables acting on column matrices
(one sample per column), so linear and neural models are scored the same
way. Undefined ratios (zero denominator) are reported as NaN.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "AE_FORMS",
    "LATENT_METRICS",
    "METRIC_NAMES",
    "BaselineDistribution",
    "OodScore",
    "PairMetrics",
    "auroc",
    "fit_baseline",
    "ood_score",
    "pair_metrics",
    "pair_metrics_batch",
    "relative_error",
    "relative_errors",
]

METRIC_NAMES = ("ae_b_rel", "ae_x_rel", "residual_rel", "latent_x_rel", "latent_b_rel")
LATENT_METRICS = ("latent_x_rel", "latent_b_rel")
# "difference": ||d(e(v)) - v|| / ||v||;  "norm_ratio": ||d(e(v))|| / ||v||
AE_FORMS = ("difference", "norm_ratio")
MIN_BASELINE_SAMPLES = 30


def relative_error(x_pred, x_true) -> float:
    """``||x_pred - x_true||_2 / ||x_true||_2``."""
    x_pred = np.asarray(x_pred, dtype=np.float64)
    x_true = np.asarray(x_true, dtype=np.float64)
    if x_pred.shape != x_true.shape:
        raise ValueError(f"shape mismatch: {x_pred.shape} vs {x_true.shape}")
    den = np.linalg.norm(x_true)
    if den == 0:
        raise ZeroDivisionError("relative error undefined for a zero reference vector")
    return float(np.linalg.norm(x_pred - x_true) / den)


def relative_errors(pred, true):
    """Column-wise relative errors of two (dim, count) matrices, or of two
    image stacks (count, h, w)."""
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {true.shape}")
    if pred.ndim == 3:
        pred = pred.reshape(len(pred), -1).T
        true = true.reshape(len(true), -1).T
    den = np.linalg.norm(true, axis=0)
    if np.any(den == 0):
        raise ZeroDivisionError("relative error undefined for a zero reference column")
    return np.linalg.norm(pred - true, axis=0) / den


def _ratio(num, den):
    out = np.full(num.shape, np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


@dataclass(frozen=True)
class PairMetrics:
    """The five PAIR metrics for one sample (NaN marks an undefined ratio)."""

    ae_b_rel: float
    ae_x_rel: float
    residual_rel: float
    latent_x_rel: float
    latent_b_rel: float

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def defined(self) -> bool:
        return all(np.isfinite(v) for v in self.as_dict().values())


def pair_metrics_batch(encode_b, decode_b, encode_x, decode_x, M, M_dag, B, X_pred,
                       ae_form="difference"):
    """All five metrics for the columns of ``B`` and ``X_pred``.

    Returns a dict mapping each name in :data:`METRIC_NAMES` to a vector with
    one entry per column.
    """
    if ae_form not in AE_FORMS:
        raise ValueError(f"ae_form must be one of {AE_FORMS}, got {ae_form!r}")
    B = np.asarray(B, dtype=np.float64)
    X = np.asarray(X_pred, dtype=np.float64)
    if B.ndim == 1:
        B, X = B[:, None], X[:, None]
    if B.shape[1] != X.shape[1]:
        raise ValueError(f"{B.shape[1]} observations but {X.shape[1]} predictions")
    zb = np.asarray(encode_b(B))
    zx = np.asarray(encode_x(X))
    b_ae = np.asarray(decode_b(zb))
    x_ae = np.asarray(decode_x(zx))
    Mzx = np.asarray(M) @ zx
    b_res = np.asarray(decode_b(Mzx))

    nb = np.linalg.norm(B, axis=0)
    nx = np.linalg.norm(X, axis=0)
    if ae_form == "difference":
        ae_b = np.linalg.norm(b_ae - B, axis=0)
        ae_x = np.linalg.norm(x_ae - X, axis=0)
    else:
        ae_b = np.linalg.norm(b_ae, axis=0)
        ae_x = np.linalg.norm(x_ae, axis=0)
    return {
        "ae_b_rel": _ratio(ae_b, nb),
        "ae_x_rel": _ratio(ae_x, nx),
        "residual_rel": _ratio(np.linalg.norm(b_res - B, axis=0), nb),
        "latent_x_rel": _ratio(
            np.linalg.norm(np.asarray(M_dag) @ zb - zx, axis=0), np.linalg.norm(zx, axis=0)
        ),
        "latent_b_rel": _ratio(np.linalg.norm(Mzx - zb, axis=0), np.linalg.norm(zb, axis=0)),
    }


def pair_metrics(encode_b, decode_b, encode_x, decode_x, M, M_dag, b, x_pred,
                 ae_form="difference") -> PairMetrics:
    """The five PAIR metrics for a single observation ``b`` and prediction
    ``x_pred``."""
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    x = np.asarray(x_pred, dtype=np.float64).reshape(-1)
    vals = pair_metrics_batch(encode_b, decode_b, encode_x, decode_x, M, M_dag,
                              b[:, None], x[:, None], ae_form)
    return PairMetrics(**{k: float(v[0]) for k, v in vals.items()})


# -- baselines ----------------------------------------------------------------


def _percentile_of(sorted_vals, value):
    """Inverse of linear-interpolation percentiles. Ties map to the middle of
    the tied run; values outside the sample map to 0 or 100."""
    if not np.isfinite(value):
        return np.nan
    s = sorted_vals
    n = len(s)
    if value < s[0]:
        return 0.0
    if value > s[-1]:
        return 100.0
    lo = np.searchsorted(s, value, side="left")
    hi = np.searchsorted(s, value, side="right")
    if hi > lo:
        pos = (lo + hi - 1) / 2.0
    else:
        pos = lo - 1 + (value - s[lo - 1]) / (s[lo] - s[lo - 1])
    return float(100.0 * pos / (n - 1))


@dataclass(frozen=True)
class BaselineDistribution:
    """Sorted per-metric samples, usually PAIR metrics on training data."""

    samples: dict

    def __post_init__(self):
        clean = {}
        for name, vals in self.samples.items():
            v = np.sort(np.asarray(vals, dtype=np.float64))
            if v.size == 0 or not np.all(np.isfinite(v)):
                raise ValueError(f"baseline for {name!r} must be finite and nonempty")
            v.setflags(write=False)
            clean[name] = v
        object.__setattr__(self, "samples", clean)

    @property
    def names(self):
        return tuple(self.samples)

    def percentile(self, name, q):
        """Value at percentile ``q`` (linear interpolation)."""
        return float(np.percentile(self.samples[name], q))

    def percentile_of(self, name, value):
        return _percentile_of(self.samples[name], value)

    def summary(self, qs=(1, 5, 25, 50, 75, 95, 99)):
        return {n: {q: self.percentile(n, q) for q in qs} for n in self.names}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for name, vals in self.samples.items():
            for v in vals:
                w.writerow([name, format(v, ".17g")])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["metric", "value"]:
            raise ValueError("baseline CSV must start with the header 'metric,value'")
        out = {}
        for name, val in rows[1:]:
            out.setdefault(name, []).append(float(val))
        return cls(out)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_csv(f.read())


def fit_baseline(metrics, min_samples=MIN_BASELINE_SAMPLES) -> BaselineDistribution:
    """Baseline from per-sample metrics.

    ``metrics`` is either a dict of name -> values (as returned by
    :func:`pair_metrics_batch`) or a sequence of :class:`PairMetrics`.
    Undefined (NaN) entries are dropped before the size check.
    """
    if not isinstance(metrics, dict):
        metrics = [m.as_dict() if isinstance(m, PairMetrics) else dict(m) for m in metrics]
        names = metrics[0].keys() if metrics else METRIC_NAMES
        metrics = {n: [m[n] for m in metrics] for n in names}
    out = {}
    for name, vals in metrics.items():
        v = np.asarray(vals, dtype=np.float64)
        v = v[np.isfinite(v)]
        if v.size < min_samples:
            raise ValueError(
                f"baseline for {name!r} needs at least {min_samples} defined samples, got {v.size}"
            )
        out[name] = v
    return BaselineDistribution(out)


@dataclass(frozen=True)
class OodScore:
    percentiles: dict
    flagged: bool


def ood_score(baseline: BaselineDistribution, m, threshold=99.0,
              flag_metrics=LATENT_METRICS) -> OodScore:
    """Percentile of each metric within the baseline. The sample is flagged
    when any of ``flag_metrics`` lies above the ``threshold`` percentile."""
    vals = m.as_dict() if isinstance(m, PairMetrics) else dict(m)
    pct = {n: baseline.percentile_of(n, float(vals[n])) for n in baseline.names if n in vals}
    flagged = any(pct.get(n, np.nan) > threshold for n in flag_metrics)
    return OodScore(pct, bool(flagged))


# -- separation ---------------------------------------------------------------


def auroc(in_scores, out_scores) -> float:
    """Probability that an out-set score exceeds an in-set score, counting
    ties as one half (Mann-Whitney with midranks). NaNs are ignored."""
    a = np.asarray(in_scores, dtype=np.float64).ravel()
    b = np.asarray(out_scores, dtype=np.float64).ravel()
    a, b = a[~np.isnan(a)], b[~np.isnan(b)]
    if a.size == 0 or b.size == 0:
        raise ValueError("auroc needs nonempty in and out score sets")
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[a.size :].sum() - b.size * (b.size + 1) / 2.0
    return float(u / (a.size * b.size))
