"""Command-line entry point.

    scaffold-xai run     --config CFG [--out DIR] [--seed N] [--workers N]
    scaffold-xai explain --config CFG --instance I [--explainer lime|shap|both]
    scaffold-xai sweep   --config CFG --sweep KIND [--out DIR]
    scaffold-xai pca     --config CFG [--out DIR]

Exit codes: 0 ok, 2 bad config or arguments, 3 dataset error, 4 numeric failure.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import experiment as ex
from .dataset import DatasetError
from .explain import ExplainError
from .metrics import MetricError
from .models import ModelError
from .perturb import PerturbError

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _parser():
    p = argparse.ArgumentParser(prog="scaffold-xai", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment JSON config")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="threads for per-instance explanations")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("run", help="full experiment: tables, fidelity, metrics"))
    sp = sub.add_parser("explain", help="baseline vs attacked explanation of one test row")
    common(sp)
    sp.add_argument("--instance", type=int, required=True, help="row index within the test split")
    sp.add_argument("--explainer", choices=("lime", "shap", "both"), default="both")
    sp = sub.add_parser("sweep", help="robustness sweep on run 0")
    common(sp)
    sp.add_argument("--sweep", choices=ex.SWEEP_KINDS, required=True)
    common(sub.add_parser("pca", help="2-D PCA of real rows and LIME perturbations"))
    return p


def _fail(code, msg):
    print(f"error: {msg}", file=sys.stderr)
    return code


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ex.load_config(args.config).with_overrides(seed=args.seed)
        out_dir = args.out or cfg.path(cfg["output_dir"])
        workers = max(1, args.workers)
        if args.command == "run":
            report = ex.run_experiment(cfg, workers=workers, out_dir=out_dir)
            failed = [k for k, ok in report["self_checks"].items() if not ok]
            if failed:
                logging.warning("self-checks failed: %s", ", ".join(failed))
            print(json.dumps(report["aggregate"], indent=2, sort_keys=True))
        elif args.command == "explain":
            methods = ("lime", "shap") if args.explainer == "both" else (args.explainer,)
            result = ex.explain_instance(cfg, args.instance, methods, workers)
            print(json.dumps(result, indent=2, sort_keys=True))
        elif args.command == "sweep":
            prep = ex.prepare(cfg, 0)
            result = ex.sweep_to_dict(ex.run_sweep(args.sweep, prep, workers))
            report = {"config": cfg.raw, "sweeps": {args.sweep: result}}
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "sweep.csv"), "w", encoding="utf-8") as fh:
                fh.write(ex.sweep_csv(report))
            print(json.dumps(result, indent=2, sort_keys=True))
        else:
            prep = ex.prepare(cfg, 0)
            rows = ex.pca_table(prep)
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "pca.csv"), "w", encoding="utf-8") as fh:
                fh.write(ex.pca_csv(cfg.raw, rows))
            print(json.dumps({"explained_variance": rows[0].explained_variance.tolist()}))
    except ex.ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except IndexError as exc:
        return _fail(EXIT_CONFIG, exc)
    except DatasetError as exc:
        return _fail(EXIT_DATA, exc)
    except (ExplainError, ModelError, PerturbError, MetricError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
