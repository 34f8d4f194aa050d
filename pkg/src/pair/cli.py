"""Command line entry point: ``pair <subcommand> --config PATH --seed N --out DIR``.

``--config`` accepts a JSON file, a ``run.json`` from an earlier run, or
``preset:<name>`` for the configs shipped with the package.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import experiments as ex
from ._version import __version__
from .datasets import DatasetBundle, MissingDataError
from .persistence import MANIFEST, ManifestError, read_manifest, save_model

SUBCOMMANDS = {
    "gen-ct": "generate a CT dataset bundle",
    "rank-sweep": "linear PAIR vs truncated SVD over latent ranks",
    "mnist": "train the MNIST PAIR network and score the test set",
    "e2e": "PAIR vs end-to-end network for growing numbers of pairs",
    "ood": "PAIR metrics on in- and out-of-distribution images",
    "save": "fit the model described by a config and save it",
    "info": "describe a config, saved model or dataset bundle",
}


def _parser():
    p = argparse.ArgumentParser(prog="pair", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in SUBCOMMANDS.items():
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=name != "info",
                       help="JSON config, run.json, or preset:<name>")
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        s.add_argument("--out", default=None, help="output directory")
        s.add_argument("--data-dir", default=None,
                       help="MNIST directory (default: $PAIR_DATA_DIR)")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "info":
            s.add_argument("path", nargs="?", help="model or bundle directory")
    return p


def _info(args):
    if args.path:
        if os.path.exists(os.path.join(args.path, MANIFEST)):
            from .persistence import load_model

            load_model(args.path)  # verifies hashes
            m = read_manifest(args.path)
            print(f"model kind: {m['kind']}")
            print(f"schema version: {m['schema_version']}, library {m['library_version']}")
            for fname, meta in sorted(m["files"].items()):
                print(f"  {fname}: shape {tuple(meta['shape'])}")
            print("hashes: ok")
            return 0
        if os.path.exists(os.path.join(args.path, "bundle.json")):
            b = DatasetBundle.load(args.path)
            print(json.dumps(b.descriptor, indent=2, sort_keys=True))
            for name in b.FIELDS:
                print(f"  {name}: {getattr(b, name).shape}")
            return 0
        print(f"{args.path}: neither a model nor a dataset bundle", file=sys.stderr)
        return 2
    if args.config:
        cfg = ex.load_config(args.config, args.seed)
        print(json.dumps(cfg, indent=2, sort_keys=True))
        return 0
    print(f"pair {__version__}; presets: {', '.join(ex.preset_names())}")
    return 0


def _run(args):
    cfg = ex.load_config(args.config, args.seed)
    if args.data_dir and cfg["kind"] == "mnist_pair":
        cfg["data"]["data_dir"] = args.data_dir
    out = args.out or os.path.join("runs", f"{cfg.get('name', cfg['kind'])}-{args.command}")
    cmd = args.command
    if cmd == "gen-ct":
        bundle = ex.run_gen_ct(cfg, out)
        print(f"wrote bundle with counts {bundle.descriptor['counts']} to {out}/bundle")
    elif cmd == "rank-sweep":
        rows = ex.run_rank_sweep(cfg, out)
        best = min(rows, key=lambda r: r["pair_inverse_rel"])
        print(f"{len(rows)} ranks; best PAIR inverse error {best['pair_inverse_rel']:.4f} "
              f"at rank {best['rank']}")
    elif cmd == "mnist":
        res = ex.run_mnist_pipeline(cfg, out)
        print(f"mean PAIR inverse relative error {res['mean_error']:.4f}")
    elif cmd == "e2e":
        for r in ex.run_e2e_comparison(cfg, out):
            print(f"J={r['J']}: PAIR {r['pair_error']:.4f}  end-to-end {r['e2e_error']:.4f}")
    elif cmd == "ood":
        res = ex.run_ood_experiment(cfg, out)
        for r in res["auroc"]:
            print(f"{r['metric']}: AUROC {r['auroc']:.3f} (null split {r['null_auroc']:.3f})")
    elif cmd == "save":
        if cfg["kind"] == "ct_rank_sweep":
            model = ex.fit_ct_model(cfg)
        else:
            model, _, _ = ex.train_mnist_pair(cfg, ex.prepare_mnist(cfg))
        path = os.path.join(out, "model")
        save_model(model, path, config=cfg)
        print(f"saved model to {path}")
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "info":
            return _info(args)
        return _run(args)
    except (ex.ConfigError, MissingDataError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
