"""Configuration-driven experiment runners.

Each ``run_*`` function takes a resolved config dict (see
:func:`load_config`) and an output directory, writes its CSV files there
together with ``run.json``, and returns the computed rows for programmatic
use. All randomness is derived from the config ``seed``: per-sample
generators for data and noise, and tagged task seeds for network training,
so results do not depend on thread scheduling.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

import jsonschema
import numpy as np

from ._version import __version__
from .datasets import (
    build_ct_bundle,
    load_mnist_split,
    make_ood_glyphs,
    sample_rng,
)
from .linear_pair import PairModel, autoencoder_from_svd, fit_empirical_latent_maps
from .metrics import METRIC_NAMES, auroc, fit_baseline, ood_score, pair_metrics_batch, relative_errors
from .neural import (
    EndToEndModel,
    NeuralPairModel,
    TrainConfig,
    pair_autoencoder_spec,
    train_autoencoder,
    train_end_to_end,
)
from .numerics import svd
from .operators import NoiseSpec, add_noise, gaussian_blur_operator, materialize, radon_operator
from .persistence import load_model, save_model

__all__ = [
    "CSV_SCHEMAS",
    "ConfigError",
    "MnistData",
    "build_ct_data",
    "derive_seed",
    "fit_ct_model",
    "load_config",
    "load_preset",
    "prepare_mnist",
    "preset_names",
    "run_e2e_comparison",
    "run_gen_ct",
    "run_mnist_pipeline",
    "run_ood_experiment",
    "run_rank_sweep",
    "train_mnist_pair",
    "validate_config",
    "write_csv",
]

logger = logging.getLogger(__name__)

# Column lists are part of the output contract; bump the version on change.
CSV_SCHEMAS = {
    "rank_sweep.csv": (
        1,
        ("rank", "r_x", "r_b", "ae_x_rel", "ae_b_rel", "pair_forward_rel", "pair_inverse_rel",
         "tsvd_forward_rel", "tsvd_inverse_rel"),
    ),
    "mnist_errors.csv": (1, ("sample_id", "pair_inverse_rel")),
    "loss_curves.csv": (1, ("epoch", "loss_x", "loss_b")),
    "e2e_comparison.csv": (1, ("J", "pair_error", "e2e_error")),
    "ood_metrics.csv": (1, ("set", "sample_id", "metric", "value")),
    "ood_auroc.csv": (1, ("metric", "auroc", "null_auroc")),
    "ood_flags.csv": (1, ("set", "count", "flagged_fraction")),
}

# task tags for derived seeds; partition codes 0-4 are used by the datasets
_TASKS = {"ae_x": 100, "ae_b": 101, "e2e": 102, "glyphs": 103}

_DEFAULTS = {
    "ct_rank_sweep": {
        "workers": 1,
        "phantom_jitter": 0.1,
        "geometry": {"n_angles": 36, "n_detectors": 90},
    },
    "mnist_pair": {
        "workers": 2,
        "data": {"data_dir": None, "n_train": 2000, "n_val": 0, "n_test": 500},
        "blur": {"ksize": 8, "sigma": 10.0},
        "noise": {"mode": "fixed_variance", "level": 0.01},
        "training": {"epochs": 40, "batch_size": 8, "lr_schedule": None, "max_restarts": 3},
        "e2e": {
            "j_grid": [200, 400, 600, 800, 1000, 1200, 1400, 1600, 1800, 2000],
            "initial": {"epochs": 40, "batch_size": 8, "lr_schedule": None, "max_restarts": 3},
            "refine": {"epochs": 5, "batch_size": 8, "lr_schedule": [[0, 3, 1e-3], [3, 5, 1e-4]],
                       "max_restarts": 0},
        },
        "ood": {"count": 500, "threshold": 99.0, "baseline_samples": 2000,
                "ae_form": "difference"},
        "model_dir": None,
    },
}


class ConfigError(ValueError):
    pass


# -- configuration ---------------------------------------------------------------


def _schema():
    text = resources.files("pair").joinpath("schemas/experiment_config.schema.json").read_text()
    return json.loads(text)


def preset_names():
    return sorted(
        p.name[:-5] for p in resources.files("pair").joinpath("presets").iterdir()
        if p.name.endswith(".json")
    )


def load_preset(name):
    path = resources.files("pair").joinpath(f"presets/{name}.json")
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return json.loads(path.read_text())


def validate_config(cfg):
    try:
        jsonschema.validate(cfg, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    return cfg


def _merge(defaults, cfg):
    out = copy.deepcopy(defaults)
    for k, v in cfg.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(source, seed=None):
    """Validate and resolve a config.

    ``source`` is a dict, a path to a JSON config, a path to a ``run.json``
    written by a previous run, or ``preset:<name>``. ``seed`` overrides the
    config seed. Returns a new dict with defaults filled in.
    """
    if isinstance(source, dict):
        cfg = copy.deepcopy(source)
    elif str(source).startswith("preset:"):
        cfg = load_preset(str(source)[len("preset:") :])
    else:
        try:
            with open(source, encoding="utf-8") as f:
                cfg = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file {source} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {source} is not valid JSON: {exc}") from None
    if "config" in cfg and "library_version" in cfg:
        cfg = cfg["config"]
    if seed is not None:
        cfg["seed"] = int(seed)
    validate_config(cfg)
    cfg = _merge(_DEFAULTS[cfg["kind"]], cfg)
    cfg.setdefault("schema_version", 1)
    validate_config(cfg)
    return cfg


def _require_kind(cfg, kind):
    if cfg["kind"] != kind:
        raise ConfigError(f"this experiment needs a {kind!r} config, got {cfg['kind']!r}")


def derive_seed(master_seed, task, *extra):
    """Integer seed for a named task, independent of execution order."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(_TASKS[task],) + tuple(extra))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _train_cfg(d, seed):
    sched = d.get("lr_schedule")
    return TrainConfig(
        epochs=d["epochs"],
        lr_schedule=None if sched is None else tuple(tuple(s) for s in sched),
        batch_size=d["batch_size"],
        seed=seed,
        max_restarts=d.get("max_restarts", 3),
    )


# -- output helpers --------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else format(float(v), ".17g")
    return str(v)


def write_csv(path, rows, columns=None):
    """UTF-8 CSV with a header row; floats with 17 significant digits."""
    name = os.path.basename(path)
    if columns is None:
        columns = CSV_SCHEMAS[name][1]
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _write_run_json(out, cfg, command, outputs, extra=None):
    record = {
        "library_version": __version__,
        "command": command,
        "seed": cfg["seed"],
        "config": cfg,
        "outputs": {name: {"csv_schema_version": CSV_SCHEMAS[name][0]} for name in outputs
                    if name in CSV_SCHEMAS},
    }
    if extra:
        record.update(extra)
    with open(os.path.join(out, "run.json"), "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")


def _outdir(out):
    if out is not None:
        os.makedirs(out, exist_ok=True)
    return out


# -- CT ----------------------------------------------------------------------------


def build_ct_data(cfg):
    """Operator and dataset bundle for a ``ct_rank_sweep`` config."""
    _require_kind(cfg, "ct_rank_sweep")
    g = cfg["geometry"]
    op = radon_operator(g["image_size"], g["n_angles"], g["n_detectors"])
    c = cfg["counts"]
    bundle = build_ct_bundle(
        g["image_size"],
        op,
        NoiseSpec(**cfg["noise"]),
        (c["unpaired_b"], c["unpaired_x"], c["paired"], c["test"]),
        master_seed=cfg["seed"],
        jitter=cfg["phantom_jitter"],
        workers=cfg["workers"],
    )
    return op, bundle


def run_gen_ct(cfg, out):
    """Generate and save the CT bundle (``out/bundle``)."""
    op, bundle = build_ct_data(cfg)
    _outdir(out)
    bundle.save(os.path.join(out, "bundle"))
    _write_run_json(out, cfg, "gen-ct", [])
    return bundle


def _mean_rel(pred, true):
    return float(np.mean(relative_errors(pred, true)))


def _rank_pairs(cfg):
    if cfg.get("rank_pairs"):
        return [(max(a, b), a, b, True) for a, b in cfg["rank_pairs"]]
    return [(r, r, r, False) for r in cfg["ranks"]]


def run_rank_sweep(cfg, out=None, bundle=None, op=None):
    """Linear PAIR versus truncated SVD over a list of latent ranks.

    With ``ranks`` each row uses ``r_x = r_b = rank``, clipped to the largest
    rank each space supports; the clipped values are reported in the
    ``r_x``/``r_b`` columns. With ``rank_pairs`` the pairs are used as given.
    Rows whose rank exceeds the numerical rank of the data are skipped.
    """
    _require_kind(cfg, "ct_rank_sweep")
    if bundle is None or op is None:
        op, bundle = build_ct_data(cfg)
    A = materialize(op)
    sA = svd(A)
    sx = svd(bundle.unpaired_x)
    sb = svd(bundle.unpaired_b)
    max_x, max_b = min(sx.shape), min(sb.shape)
    tx, tb = bundle.test_x, bundle.test_b
    # test-set projections reused by every rank
    ux_tx, ub_tb = sx.U.T @ tx, sb.U.T @ tb
    va_tx, ua_tb = sA.V.T @ tx, sA.U.T @ tb

    def one(item):
        rank, r_x, r_b, explicit = item
        if not explicit:
            r_x, r_b = min(r_x, max_x), min(r_b, max_b)
        try:
            ae_x = autoencoder_from_svd(sx, r_x)
            ae_b = autoencoder_from_svd(sb, r_b)
        except ValueError as exc:
            logger.warning("rank %d skipped: %s", rank, exc)
            return None
        maps = fit_empirical_latent_maps(ae_x.encode(bundle.paired_x), ae_b.encode(bundle.paired_b))
        zx, zb = ux_tx[:r_x], ub_tb[:r_b]
        r_a = min(rank, sA.sigma.size)
        Ua, Va, sa = sA.U[:, :r_a], sA.V[:, :r_a], sA.sigma[:r_a]
        return {
            "rank": rank,
            "r_x": r_x,
            "r_b": r_b,
            "ae_x_rel": _mean_rel(ae_x.D @ zx, tx),
            "ae_b_rel": _mean_rel(ae_b.D @ zb, tb),
            "pair_forward_rel": _mean_rel(ae_b.D @ (maps.M @ zx), tb),
            "pair_inverse_rel": _mean_rel(ae_x.D @ (maps.M_dag @ zb), tx),
            "tsvd_forward_rel": _mean_rel(Ua @ (sa[:, None] * va_tx[:r_a]), tb),
            "tsvd_inverse_rel": _mean_rel(Va @ (ua_tb[:r_a] / sa[:, None]), tx),
        }

    items = _rank_pairs(cfg)
    with ThreadPoolExecutor(max_workers=cfg["workers"]) as ex:
        rows = [r for r in ex.map(one, items) if r is not None]
    if out is not None:
        _outdir(out)
        write_csv(os.path.join(out, "rank_sweep.csv"), rows)
        _write_run_json(out, cfg, "rank-sweep", ["rank_sweep.csv"])
    return rows


def fit_ct_model(cfg, bundle=None):
    """Linear PAIR model at ``model_ranks`` (default: the largest listed rank)."""
    _require_kind(cfg, "ct_rank_sweep")
    if bundle is None:
        _, bundle = build_ct_data(cfg)
    if cfg.get("model_ranks"):
        r_x, r_b = cfg["model_ranks"]
    else:
        r = max(cfg["ranks"]) if cfg.get("ranks") else max(max(p) for p in cfg["rank_pairs"])
        r_x, r_b = r, r
    r_x = min(r_x, min(bundle.unpaired_x.shape))
    r_b = min(r_b, min(bundle.unpaired_b.shape))
    ae_x = autoencoder_from_svd(svd(bundle.unpaired_x), r_x)
    ae_b = autoencoder_from_svd(svd(bundle.unpaired_b), r_b)
    maps = fit_empirical_latent_maps(ae_x.encode(bundle.paired_x), ae_b.encode(bundle.paired_b))
    return PairModel(ae_x, ae_b, maps, meta={"kind": "linear-pair", "mode": "empirical",
                                             "r_x": r_x, "r_b": r_b})


# -- MNIST ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MnistData:
    """Clean images and their noisy blurred observations, as columns."""

    X_train: np.ndarray
    B_train: np.ndarray
    X_test: np.ndarray
    B_test: np.ndarray
    op: object


def _observe(op, X, noise, seed, partition):
    B = op.apply(X)
    return np.column_stack(
        [add_noise(B[:, i], noise, sample_rng(seed, partition, i)) for i in range(B.shape[1])]
    )


def prepare_mnist(cfg):
    _require_kind(cfg, "mnist_pair")
    d = cfg["data"]
    train, _, test = load_mnist_split(d["data_dir"], d["n_train"], d["n_val"], d["n_test"])
    op = gaussian_blur_operator(train.height, train.width, cfg["blur"]["ksize"], cfg["blur"]["sigma"])
    noise = NoiseSpec(**cfg["noise"])
    X_train, X_test = train.columns(), test.columns()
    B_train = _observe(op, X_train, noise, cfg["seed"], "paired")
    B_test = _observe(op, X_test, noise, cfg["seed"], "test")
    return MnistData(X_train, B_train, X_test, B_test, op)


def _stack(cols, h=28, w=28):
    return cols.T.reshape(-1, h, w)


def train_mnist_pair(cfg, data: MnistData):
    """Train both autoencoders (concurrently) and fit the latent maps on all
    training pairs. Returns ``(model, loss_x, loss_b)``."""
    spec = pair_autoencoder_spec()
    seed = cfg["seed"]
    jobs = {
        "x": (data.X_train, _train_cfg(cfg["training"], derive_seed(seed, "ae_x"))),
        "b": (data.B_train, _train_cfg(cfg["training"], derive_seed(seed, "ae_b"))),
    }
    with ThreadPoolExecutor(max_workers=min(2, cfg["workers"])) as ex:
        futs = {k: ex.submit(train_autoencoder, spec, _stack(v[0]), v[1]) for k, v in jobs.items()}
        (px, cx), (pb, cb) = futs["x"].result(), futs["b"].result()
    probe = NeuralPairModel(spec, px, pb, None)
    maps = fit_empirical_latent_maps(probe.encode_x(data.X_train), probe.encode_b(data.B_train))
    return NeuralPairModel(spec, px, pb, maps), cx, cb


def _mnist_model(cfg, data):
    if cfg.get("model_dir"):
        model, manifest = load_model(cfg["model_dir"])
        if manifest["kind"] != "neural-pair":
            raise ConfigError(f"model_dir holds a {manifest['kind']} model, need neural-pair")
        return model, None, None
    return train_mnist_pair(cfg, data)


def run_mnist_pipeline(cfg, out=None, data=None):
    """Train the MNIST PAIR network and report per-sample test errors of
    ``d_x(M_dag e_b(b))``. The trained model is saved to ``out/model``."""
    data = data if data is not None else prepare_mnist(cfg)
    model, cx, cb = _mnist_model(cfg, data)
    errors = relative_errors(model.inverse(data.B_test), data.X_test)
    result = {
        "model": model,
        "errors": errors,
        "mean_error": float(errors.mean()),
        "loss_x": cx,
        "loss_b": cb,
    }
    if out is not None:
        _outdir(out)
        write_csv(
            os.path.join(out, "mnist_errors.csv"),
            [{"sample_id": i, "pair_inverse_rel": e} for i, e in enumerate(errors)],
        )
        outputs = ["mnist_errors.csv"]
        if cx is not None:
            write_csv(
                os.path.join(out, "loss_curves.csv"),
                [{"epoch": e, "loss_x": a, "loss_b": b} for e, (a, b) in enumerate(zip(cx, cb))],
            )
            outputs.append("loss_curves.csv")
        save_model(model, os.path.join(out, "model"), config=cfg)
        _write_run_json(out, cfg, "mnist", outputs, {"mean_error": result["mean_error"]})
    return result


def run_e2e_comparison(cfg, out=None, data=None, model=None):
    """PAIR with maps fitted on the first ``J`` pairs versus an end-to-end
    network trained on the same pairs.

    The end-to-end network is trained from scratch on the smallest ``J`` with
    the ``initial`` schedule, then refined with the ``refine`` schedule each
    time ``J`` grows (warm start, fresh optimizer state).
    """
    data = data if data is not None else prepare_mnist(cfg)
    if model is None:
        model, _, _ = _mnist_model(cfg, data)
    seed = cfg["seed"]
    zx = model.encode_x(data.X_train)
    zb = model.encode_b(data.B_train)
    zb_test = model.encode_b(data.B_test)
    X_img, B_img = _stack(data.X_train), _stack(data.B_train)
    available = data.X_train.shape[1]

    rows, params = [], None
    for J in sorted(cfg["e2e"]["j_grid"]):
        if J > available:
            logger.warning("J=%d skipped: only %d training pairs available", J, available)
            continue
        maps = fit_empirical_latent_maps(zx[:, :J], zb[:, :J])
        pair_err = relative_errors(model.decode_x(maps.M_dag @ zb_test), data.X_test).mean()
        phase = "initial" if params is None else "refine"
        tcfg = _train_cfg(cfg["e2e"][phase], derive_seed(seed, "e2e", J))
        params, _ = train_end_to_end(model.spec, B_img[:J], X_img[:J], tcfg, warm_start=params)
        e2e = EndToEndModel(model.spec, params)
        e2e_err = relative_errors(e2e.inverse(data.B_test), data.X_test).mean()
        rows.append({"J": J, "pair_error": float(pair_err), "e2e_error": float(e2e_err)})
        logger.info("J=%d pair %.4f e2e %.4f", J, pair_err, e2e_err)
    if out is not None:
        _outdir(out)
        write_csv(os.path.join(out, "e2e_comparison.csv"), rows)
        if params is not None:
            save_model(EndToEndModel(model.spec, params), os.path.join(out, "e2e_model"), config=cfg)
        _write_run_json(out, cfg, "e2e", ["e2e_comparison.csv"])
    return rows


def run_ood_experiment(cfg, out=None, data=None, model=None):
    """PAIR metrics on MNIST test images and on synthetic letter glyphs.

    A baseline distribution is fitted on training-set metrics; each sample
    gets a flag when a latent-space metric exceeds the baseline threshold
    percentile. AUROC compares the test set against the glyph set, and the
    first half of the test set against the second half (null split).
    """
    data = data if data is not None else prepare_mnist(cfg)
    if model is None:
        model, _, _ = _mnist_model(cfg, data)
    o = cfg["ood"]
    seed = cfg["seed"]
    glyphs = make_ood_glyphs(o["count"], 28, np.random.default_rng(derive_seed(seed, "glyphs")))
    X_ood = glyphs.columns()
    B_ood = _observe(data.op, X_ood, NoiseSpec(**cfg["noise"]), seed, "ood")

    def metrics(B):
        return pair_metrics_batch(model.encode_b, model.decode_b, model.encode_x, model.decode_x,
                                  model.maps.M, model.maps.M_dag, B, model.inverse(B),
                                  ae_form=o["ae_form"])

    n_base = min(o["baseline_samples"], data.B_train.shape[1])
    baseline = fit_baseline(metrics(data.B_train[:, :n_base]))
    sets = {"in": metrics(data.B_test), "out": metrics(B_ood)}

    long_rows, flag_rows = [], []
    for name, vals in sets.items():
        n = len(vals[METRIC_NAMES[0]])
        flags = [
            ood_score(baseline, {k: vals[k][i] for k in METRIC_NAMES}, o["threshold"]).flagged
            for i in range(n)
        ]
        flag_rows.append({"set": name, "count": n, "flagged_fraction": float(np.mean(flags))})
        for i in range(n):
            for k in METRIC_NAMES:
                long_rows.append({"set": name, "sample_id": i, "metric": k, "value": vals[k][i]})
    half = len(sets["in"][METRIC_NAMES[0]]) // 2
    auc_rows = [
        {
            "metric": k,
            "auroc": auroc(sets["in"][k], sets["out"][k]),
            "null_auroc": auroc(sets["in"][k][:half], sets["in"][k][half:]),
        }
        for k in METRIC_NAMES
    ]
    if out is not None:
        _outdir(out)
        write_csv(os.path.join(out, "ood_metrics.csv"), long_rows)
        write_csv(os.path.join(out, "ood_auroc.csv"), auc_rows)
        write_csv(os.path.join(out, "ood_flags.csv"), flag_rows)
        baseline.save(os.path.join(out, "baseline.csv"))
        _write_run_json(out, cfg, "ood", ["ood_metrics.csv", "ood_auroc.csv", "ood_flags.csv"])
    return {"auroc": auc_rows, "flags": flag_rows, "metrics": sets, "baseline": baseline,
            "glyphs": glyphs}
