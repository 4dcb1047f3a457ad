"""End-to-end experiments driven by one JSON config.

Seeds: every random stage draws from
``SeedSequence(master_seed, spawn_key=(STAGE_IDS[stage], run, *extra))``.
Stage ids are fixed constants, so adding a stage never shifts the streams of
existing ones.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .dataset import (
    Dataset,
    DatasetError,
    add_uncorrelated_features,
    load_csv,
    load_schema,
    normalize,
    split_indices,
    synth_dataset,
)
from .explain import (
    LimeConfig,
    ShapConfig,
    explain_rows,
    instance_seed,
    kernel_shap_explain,
    lime_explain,
)
from .metrics import (
    OccurrenceTable,
    attack_effectiveness,
    classification_metrics,
    feature_groups,
    fidelity,
    pca_2d,
    top_k_occurrence,
)
from .models import build_scaffold, make_rule_classifier
from .perturb import (
    PerturbationConfig,
    kmeans_background,
    perturb_lime,
    train_ood_detector,
    zeros_background,
)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


STAGE_IDS = {
    "synthetic": 1,
    "uncorrelated": 2,
    "split": 3,
    "background": 4,
    "ood_lime": 5,
    "ood_shap": 6,
    "explain_lime": 7,
    "explain_shap": 8,
    "sweep": 9,
    "pca": 10,
}


def derive_seed(master, stage, *key):
    ss = np.random.SeedSequence(int(master), spawn_key=(STAGE_IDS[stage], *map(int, key)))
    return int(ss.generate_state(1)[0])


SWEEP_KINDS = ("ood_f1", "kernel_width", "distance_norm", "background", "cross_explainer")

DEFAULTS = {
    "name": "experiment",
    "dataset": None,
    "n_uncorrelated": 1,
    "corr_tolerance": 0.05,
    "biased_rule": {"kind": "threshold", "feature": "@sensitive", "threshold": "midpoint",
                    "output_on_match": 1},
    "unbiased_rule": None,
    "train_fraction": 0.9,
    "explainers": ["lime", "shap"],
    "lime": {"n_samples": 1000, "kernel_width_factor": 0.75, "distance_norm": "l2",
             "ridge_lambda": 1.0},
    "shap": {"n_coalitions": None, "background_k": 10, "snap_background": True,
             "exact_if_feasible": True},
    "perturbation": {"noise_std": 1.0, "mask_probability": 0.5, "samples_per_point": 1},
    "forest": {"n_trees": 100, "max_depth": None, "min_samples_split": 2},
    "ood_threshold": 0.5,
    "n_runs": 3,
    "max_test_rows": None,
    "sweeps": [],
    "sweep_options": {
        "max_rows": 100,
        "ood_f1_explainers": ["lime", "shap"],
        "depth_caps": [1, 2, 3, 5, 8, None],
        "train_fractions": [0.1, 0.3, 1.0],
        "width_factors": [0.15, 0.35, 0.55, 0.75, 0.95],
        "background_ks": [5, 10, 15],
        "bin_width": 0.05,
    },
    "pca": False,
    "seed": 0,
    "output_dir": "out",
}


def _merge(defaults, given, where):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown key '{where}{key}'")
        if isinstance(defaults[key], dict) and key not in ("biased_rule",):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}{key}' must be an object")
            out[key] = _merge(defaults[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


@dataclass
class ExperimentConfig:
    """Resolved experiment settings; ``raw`` is the full echo written to
    every output."""

    raw: dict
    base_dir: str = "."

    def __getitem__(self, key):
        return self.raw[key]

    @classmethod
    def from_dict(cls, data, base_dir="."):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        raw = _merge(DEFAULTS, data, "")
        cfg = cls(raw, base_dir)
        cfg.validate()
        return cfg

    def validate(self):
        r = self.raw
        ds = r["dataset"]
        if not isinstance(ds, dict) or not (("csv" in ds and "schema" in ds) or "synthetic" in ds):
            raise ConfigError("dataset needs {csv, schema} or {synthetic: {...}}")
        if r["n_uncorrelated"] not in (0, 1, 2):
            raise ConfigError("n_uncorrelated must be 0, 1 or 2")
        if r["n_uncorrelated"] == 0 and not r["unbiased_rule"]:
            raise ConfigError("n_uncorrelated = 0 needs an explicit unbiased_rule")
        if not 0 < r["train_fraction"] < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        bad = [e for e in r["explainers"] if e not in ("lime", "shap")]
        if bad or not r["explainers"]:
            raise ConfigError(f"explainers must be a non-empty subset of lime/shap, got {r['explainers']}")
        bad = [s for s in r["sweeps"] if s not in SWEEP_KINDS]
        if bad:
            raise ConfigError(f"unknown sweeps {bad}; expected {SWEEP_KINDS}")
        if not isinstance(r["n_runs"], int) or r["n_runs"] < 1:
            raise ConfigError("n_runs must be a positive integer")
        if not 0 < r["ood_threshold"] < 1:
            raise ConfigError("ood_threshold must lie in (0, 1)")
        if r["lime"]["distance_norm"] not in ("l1", "l2"):
            raise ConfigError("lime.distance_norm must be l1 or l2")
        if not isinstance(r["seed"], int):
            raise ConfigError("seed must be an integer")
        for rule_key in ("biased_rule", "unbiased_rule"):
            rule = r[rule_key]
            if rule is not None and (not isinstance(rule, dict) or "kind" not in rule):
                raise ConfigError(f"{rule_key} must be an object with a 'kind'")

    def path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def with_overrides(self, **kw):
        raw = copy.deepcopy(self.raw)
        raw.update({k: v for k, v in kw.items() if v is not None})
        cfg = ExperimentConfig(raw, self.base_dir)
        cfg.validate()
        return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data, os.path.dirname(os.path.abspath(path)))


# ------------------------------------------------------------ preparation

def load_dataset(cfg):
    ds = cfg["dataset"]
    if "synthetic" in ds:
        params = dict(ds["synthetic"])
        return synth_dataset(
            n=params.get("n", 2000),
            m=params.get("m", 8),
            sensitive_base_rate=params.get("sensitive_base_rate", 0.514),
            seed=derive_seed(cfg["seed"], "synthetic"),
        )
    return load_csv(cfg.path(ds["csv"]), load_schema(cfg.path(ds["schema"])))


def _resolve_feature(ref, d):
    if isinstance(ref, int):
        return ref
    if ref == "@sensitive":
        return d.sensitive_index
    if isinstance(ref, str) and ref.startswith("@uncorrelated_"):
        k = int(ref.rsplit("_", 1)[1])
        if not 1 <= k <= len(d.uncorrelated_indices):
            raise ConfigError(f"{ref} does not exist")
        return d.uncorrelated_indices[k - 1]
    if ref not in d.feature_names:
        raise ConfigError(f"unknown feature {ref!r}")
    return d.feature_names.index(ref)


def _resolve_value(spec, j, train, d):
    """Turn a threshold/match spec into normalized units.

    Named statistics are computed on the training rows; numbers are raw
    (pre-normalization) feature values.
    """
    col = train.rows[:, j]
    if spec == "midpoint":
        return 0.5 * (col.min() + col.max())
    if spec == "mean":
        return float(col.mean())
    if spec == "median":
        return float(np.median(col))
    if isinstance(spec, (int, float)):
        if d.stats is None or j in d.uncorrelated_indices:
            return float(spec)
        return float((spec - d.stats.means[j]) / d.stats.stds[j])
    raise ConfigError(f"bad threshold spec {spec!r}")


def build_rule(spec, train, d):
    spec = dict(spec)
    kind = spec.get("kind")
    feats = spec.get("features", [spec.get("feature")])
    idx = [_resolve_feature(f, d) for f in feats]
    thr = spec.get("threshold")
    if kind == "threshold":
        thr = _resolve_value(thr if thr is not None else "midpoint", idx[0], train, d)
    match = spec.get("match_value")
    if kind == "equals" and match is not None:
        match = _resolve_value(match, idx[0], train, d)
    try:
        return make_rule_classifier(kind, idx, threshold=thr, match_value=match,
                                    output_on_match=spec.get("output_on_match", 1))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def default_unbiased_rule(n_uncorrelated):
    if n_uncorrelated == 1:
        return {"kind": "threshold", "feature": "@uncorrelated_1", "threshold": 0.5,
                "output_on_match": 1}
    return {"kind": "xor", "features": ["@uncorrelated_1", "@uncorrelated_2"],
            "threshold": 0.5, "output_on_match": 1}


@dataclass
class Prepared:
    """State of one run up to (excluding) detector training."""

    cfg: ExperimentConfig
    run: int
    data: Dataset
    train: Dataset
    test: Dataset
    biased: object
    unbiased: object
    background: object
    _scaffolds: dict = field(default_factory=dict, repr=False)

    @property
    def seed(self):
        return self.cfg["seed"]

    def groups(self):
        groups = feature_groups(self.data.sensitive_index, self.data.uncorrelated_indices)
        if not self.data.uncorrelated_indices:
            # psi reads existing columns; track those instead
            idx = [j for j in self.unbiased.indices if j != self.data.sensitive_index]
            if idx:
                groups["unbiased_feature"] = idx
        return groups

    def test_rows(self, limit=None):
        limit = limit if limit is not None else self.cfg["max_test_rows"]
        rows = self.test.rows
        return rows if limit is None else rows[:limit]

    def perturbation(self, kind):
        p = self.cfg["perturbation"]
        return PerturbationConfig(
            kind=kind,
            noise_std=p["noise_std"],
            mask_probability=p["mask_probability"],
            samples_per_point=p["samples_per_point"],
            seed=derive_seed(self.seed, f"ood_{kind}", self.run, 0),
        )

    def train_detector(self, kind, max_depth="default", train_fraction=1.0, tag=0):
        forest = self.cfg["forest"]
        depth = forest["max_depth"] if max_depth == "default" else max_depth
        pcfg = self.perturbation(kind)
        return train_ood_detector(
            self.train.rows, pcfg, self.background if kind == "shap" else None,
            n_trees=forest["n_trees"], max_depth=depth,
            min_samples_split=forest["min_samples_split"],
            train_fraction=train_fraction,
            seed=derive_seed(self.seed, f"ood_{kind}", self.run, 1, tag),
        )

    def scaffold(self, kind):
        """Scaffold trained against ``kind`` perturbations (cached)."""
        if kind not in self._scaffolds:
            ood, f1 = self.train_detector(kind)
            e = build_scaffold(self.biased, self.unbiased, ood, self.cfg["ood_threshold"])
            self._scaffolds[kind] = (e, f1)
        return self._scaffolds[kind]

    def lime_config(self, **kw):
        lc = self.cfg["lime"]
        M = self.data.n_features
        cfg = LimeConfig(
            n_samples=lc["n_samples"],
            kernel_width=lc["kernel_width_factor"] * math.sqrt(M),
            distance_norm=lc["distance_norm"],
            ridge_lambda=lc["ridge_lambda"],
            noise_std=self.cfg["perturbation"]["noise_std"],
            seed=derive_seed(self.seed, "explain_lime", self.run),
        )
        return replace(cfg, **kw)

    def shap_config(self, background=None, **kw):
        sc = self.cfg["shap"]
        cfg = ShapConfig(
            background=background or self.background,
            n_coalitions=sc["n_coalitions"],
            exact_if_feasible=sc["exact_if_feasible"],
            seed=derive_seed(self.seed, "explain_shap", self.run),
        )
        return replace(cfg, **kw)

    def explainer_config(self, method, **kw):
        return self.lime_config(**kw) if method == "lime" else self.shap_config(**kw)


def prepare(cfg, run=0, dataset=None):
    """Load, normalize, inject features, split, and build f, psi and the
    SHAP background for run ``run``."""
    d = dataset if dataset is not None else load_dataset(cfg)
    d, _ = normalize(d)
    if cfg["n_uncorrelated"]:
        d = add_uncorrelated_features(
            d, cfg["n_uncorrelated"], seed=derive_seed(cfg["seed"], "uncorrelated", run),
            corr_tolerance=cfg["corr_tolerance"],
        )
    tr_idx, te_idx = split_indices(d.n_rows, cfg["train_fraction"], derive_seed(cfg["seed"], "split", run))
    train, test = d.subset(tr_idx), d.subset(te_idx)
    biased = build_rule(cfg["biased_rule"], train, d)
    unbiased = build_rule(cfg["unbiased_rule"] or default_unbiased_rule(cfg["n_uncorrelated"]), train, d)
    sc = cfg["shap"]
    k = min(sc["background_k"], train.n_rows)
    background = kmeans_background(train.rows, k, seed=derive_seed(cfg["seed"], "background", run),
                                   snap=sc["snap_background"])
    return Prepared(cfg, run, d, train, test, biased, unbiased, background)


# ------------------------------------------------------------------ runs

def _explain(prep, model, method, rows, workers, **cfg_kw):
    return explain_rows(model, rows, method, prep.explainer_config(method, **cfg_kw), workers=workers)


def run_single(prep, workers=1):
    test = prep.test
    rows = prep.test_rows()
    groups = prep.groups()
    sens = test.rows[:, prep.data.sensitive_index]
    f_pred = prep.biased.predict(test.rows)
    result = {
        "run": prep.run,
        "n_train": int(prep.train.n_rows),
        "n_test": int(test.n_rows),
        "n_explained": int(rows.shape[0]),
        "biased": classification_metrics(f_pred, test.labels, sens),
        "unbiased": classification_metrics(prep.unbiased.predict(test.rows), test.labels, sens),
        "explainers": {},
    }
    checks = {}
    names = prep.data.feature_names
    for method in prep.cfg["explainers"]:
        e, f1 = prep.scaffold(method)
        e_pred = e.predict(test.rows)
        base_exps = _explain(prep, prep.biased, method, rows, workers)
        att_exps = _explain(prep, e, method, rows, workers)
        base_tab = top_k_occurrence(base_exps, groups)
        att_tab = top_k_occurrence(att_exps, groups)
        labels, to_psi, p_ood = e.route(test.rows)
        expected = np.where(p_ood < e.ood_threshold, prep.biased.predict(test.rows),
                            prep.unbiased.predict(test.rows))
        checks[f"{method}_routing_exact"] = bool((labels == expected).all())
        checks[f"{method}_occurrence_columns_sum_to_100"] = bool(
            np.allclose(att_tab.percentages.sum(axis=0), 100.0)
            and np.allclose(base_tab.percentages.sum(axis=0), 100.0)
        )
        if method == "shap":
            gap = max(abs(x.attributions.sum() - (x.prediction - x.base_value))
                      for x in base_exps + att_exps)
            checks["shap_efficiency"] = bool(gap <= 1e-9)
        result["explainers"][method] = {
            "ood_f1": f1,
            "fidelity": fidelity(e, prep.biased, test.rows),
            "routed_to_unbiased": float(to_psi.mean()),
            "scaffold": classification_metrics(e_pred, test.labels, sens),
            "baseline": base_tab.to_dict(),
            "attack": att_tab.to_dict(),
            "effectiveness": attack_effectiveness(att_tab),
            "baseline_effectiveness": attack_effectiveness(base_tab),
            "example": {
                "row": 0,
                "baseline": base_exps[0].to_dict(names),
                "attack": att_exps[0].to_dict(names),
            },
        }
    checks["fidelity_self"] = fidelity(prep.biased, prep.biased, test.rows) == 1.0
    result["self_checks"] = checks
    return result


def _aggregate(runs, explainers):
    agg = {
        "biased_accuracy": float(np.mean([r["biased"]["accuracy"] for r in runs])),
        "biased_parity_ratio": float(np.mean([r["biased"]["demographic_parity_ratio"] for r in runs])),
        "explainers": {},
    }
    for m in explainers:
        per = [r["explainers"][m] for r in runs]

        def table(key):
            return OccurrenceTable.mean([
                OccurrenceTable(p[key]["groups"],
                                np.array([p[key]["percentages"][g] for g in p[key]["groups"]]),
                                p[key]["n_explanations"])
                for p in per
            ]).to_dict()

        agg["explainers"][m] = {
            "ood_f1": float(np.mean([p["ood_f1"] for p in per])),
            "fidelity": float(np.mean([p["fidelity"] for p in per])),
            "scaffold_accuracy": float(np.mean([p["scaffold"]["accuracy"] for p in per])),
            "effectiveness": float(np.mean([p["effectiveness"] for p in per])),
            "baseline": table("baseline"),
            "attack": table("attack"),
        }
    return agg


def run_experiment(cfg, workers=1, out_dir=None):
    """Execute all runs (and configured sweeps) and write the report files.

    Returns the report dict.
    """
    dataset = load_dataset(cfg)
    runs, preps = [], []
    for run in range(cfg["n_runs"]):
        prep = prepare(cfg, run, dataset)
        preps.append(prep)
        runs.append(run_single(prep, workers))
        log.info("run %d done", run)
    report = {
        "config": cfg.raw,
        "dataset": preps[0].data.summary(),
        "runs": runs,
        "aggregate": _aggregate(runs, cfg["explainers"]),
        "sweeps": {},
    }
    for kind in cfg["sweeps"]:
        report["sweeps"][kind] = sweep_to_dict(run_sweep(kind, preps[0], workers))
    pca_rows = pca_table(preps[0]) if cfg["pca"] else None
    report["self_checks"] = {
        k: all(r["self_checks"][k] for r in runs) for k in runs[0]["self_checks"]
    }
    write_outputs(report, out_dir or cfg.path(cfg["output_dir"]), pca_rows)
    return report


# ----------------------------------------------------------------- sweeps

@dataclass
class SweepCurve:
    x_values: list
    y_values: list
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {"x": list(self.x_values), "y": list(self.y_values), "metadata": self.metadata}


def bin_curve(x, y, width):
    """Mean (x, y) per bin of width ``width`` along x; empty bins dropped."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    bins = np.floor(x / width + 1e-12).astype(int)
    xs, ys = [], []
    for b in np.unique(bins):
        sel = bins == b
        xs.append(float(x[sel].mean()))
        ys.append(float(y[sel].mean()))
    return xs, ys


def _effectiveness(prep, model, method, rows, workers, **kw):
    exps = _explain(prep, model, method, rows, workers, **kw)
    return attack_effectiveness(top_k_occurrence(exps, prep.groups())), exps


def run_sweep(kind, prep, workers=1):
    """Robustness sweeps on one prepared run.

    Returns a :class:`SweepCurve` (or a dict of them keyed by explainer) for
    ``ood_f1`` / ``kernel_width`` / ``distance_norm``, and a dict of
    occurrence tables for ``background`` / ``cross_explainer``.
    """
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"unknown sweep kind {kind!r}")
    opts = prep.cfg["sweep_options"]
    rows = prep.test_rows(opts["max_rows"])
    groups = prep.groups()
    M = prep.data.n_features

    if kind == "ood_f1":
        curves = {}
        for method in opts["ood_f1_explainers"]:
            points = []
            tag = 0
            for depth in opts["depth_caps"]:
                for frac in opts["train_fractions"]:
                    tag += 1
                    ood, f1 = prep.train_detector(method, max_depth=depth, train_fraction=frac, tag=tag)
                    e = build_scaffold(prep.biased, prep.unbiased, ood, prep.cfg["ood_threshold"])
                    eff, _ = _effectiveness(prep, e, method, rows, workers)
                    points.append({"max_depth": depth, "train_fraction": frac, "f1": f1,
                                   "effectiveness": eff})
            xs, ys = bin_curve([p["f1"] for p in points], [p["effectiveness"] for p in points],
                               opts["bin_width"])
            curves[method] = SweepCurve(xs, ys, {"kind": kind, "explainer": method,
                                                 "bin_width": opts["bin_width"], "points": points})
        return curves

    if kind == "kernel_width":
        e, _ = prep.scaffold("lime")
        ys = []
        for factor in opts["width_factors"]:
            eff, _ = _effectiveness(prep, e, "lime", rows, workers, kernel_width=factor * math.sqrt(M))
            ys.append(eff)
        return SweepCurve(list(opts["width_factors"]), ys, {"kind": kind, "explainer": "lime",
                                                            "x": "kernel width / sqrt(M)"})

    if kind == "distance_norm":
        e, _ = prep.scaffold("lime")
        ys = [_effectiveness(prep, e, "lime", rows, workers, distance_norm=n)[0] for n in ("l1", "l2")]
        return SweepCurve([1.0, 2.0], ys, {"kind": kind, "explainer": "lime",
                                           "x": "norm order", "labels": ["l1", "l2"]})

    if kind == "background":
        e, _ = prep.scaffold("shap")
        out = {}
        sc = prep.cfg["shap"]
        for k in opts["background_ks"]:
            bg = kmeans_background(prep.train.rows, k, seed=derive_seed(prep.seed, "sweep", prep.run, k),
                                   snap=sc["snap_background"])
            if k == sc["background_k"]:
                bg = prep.background
            exps = _explain(prep, e, "shap", rows, workers, background=bg)
            out[f"kmeans_{k}"] = top_k_occurrence(exps, groups)
        exps = _explain(prep, e, "shap", rows, workers, background=zeros_background(M))
        out["zeros"] = top_k_occurrence(exps, groups)
        return out

    out = {}
    for trained in ("lime", "shap"):
        e, _ = prep.scaffold(trained)
        for method in ("lime", "shap"):
            exps = _explain(prep, e, method, rows, workers)
            out[f"{trained}_trained_{method}_explained"] = top_k_occurrence(exps, groups)
    return out


def sweep_to_dict(result):
    if isinstance(result, SweepCurve):
        return result.to_dict()
    out = {}
    for key, value in result.items():
        if isinstance(value, OccurrenceTable):
            out[key] = {**value.to_dict(), "effectiveness": attack_effectiveness(value)}
        else:
            out[key] = value.to_dict()
    return out


# ------------------------------------------------------------- per-instance

def explain_instance(cfg, row_index, explainers=("lime", "shap"), workers=1):
    """Baseline-f and scaffold explanations of one test row, side by side."""
    prep = prepare(cfg, 0)
    if not 0 <= row_index < prep.test.n_rows:
        raise IndexError(f"row index {row_index} outside test split of {prep.test.n_rows} rows")
    x = prep.test.rows[row_index]
    names = prep.data.feature_names
    out = {"row_index": row_index, "feature_names": names, "explanations": {}}
    for method in explainers:
        e, f1 = prep.scaffold(method)
        base_cfg = prep.explainer_config(method)
        icfg = replace(base_cfg, seed=instance_seed(base_cfg.seed, row_index))
        fn = lime_explain if method == "lime" else kernel_shap_explain
        entry = {"ood_f1": f1}
        for label, model in (("baseline", prep.biased), ("attack", e)):
            exp = fn(model, x, icfg)
            entry[label] = exp.to_dict(names)
            if method == "shap":
                entry[label]["efficiency"] = {
                    "sum_attributions": float(exp.attributions.sum()),
                    "prediction_minus_base": float(exp.prediction - exp.base_value),
                    "holds": bool(abs(exp.attributions.sum() - (exp.prediction - exp.base_value)) <= 1e-9),
                }
        out["explanations"][method] = entry
    return out


# -------------------------------------------------------------------- PCA

def pca_table(prep):
    """PCA of training rows stacked with one LIME perturbation per row."""
    real = prep.train.rows
    pert = perturb_lime(real, PerturbationConfig(
        kind="lime", noise_std=prep.cfg["perturbation"]["noise_std"],
        seed=derive_seed(prep.seed, "pca", prep.run)))
    res = pca_2d(np.vstack([real, pert]))
    source = ["real"] * real.shape[0] + ["perturbed"] * pert.shape[0]
    return res, source


# ----------------------------------------------------------------- output

def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True)


def _config_header(config):
    return "# config: " + json.dumps(config, sort_keys=True, separators=(",", ":")) + "\n"


def occurrence_csv(report):
    buf = io.StringIO()
    buf.write(_config_header(report["config"]))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["explainer", "model", "group", "rank_1", "rank_2", "rank_3"])
    for method, ex in report["aggregate"]["explainers"].items():
        for model in ("baseline", "attack"):
            tab = ex[model]
            for g in tab["groups"]:
                vals = tab["percentages"][g] + [""] * (3 - len(tab["percentages"][g]))
                w.writerow([method, model, g, *[f"{v:.4f}" if v != "" else "" for v in vals]])
    return buf.getvalue()


def sweep_csv(report):
    buf = io.StringIO()
    buf.write(_config_header(report["config"]))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sweep", "series", "x", "y"])
    for kind, result in report["sweeps"].items():
        if "x" in result:
            series = {result["metadata"].get("explainer", kind): result}
        else:
            series = result
        for name, s in series.items():
            if "x" in s:
                for x, y in zip(s["x"], s["y"]):
                    w.writerow([kind, name, f"{x:.6f}", f"{y:.6f}"])
            else:
                w.writerow([kind, name, "", f"{s['effectiveness']:.6f}"])
    return buf.getvalue()


def pca_csv(config, pca_rows):
    res, source = pca_rows
    buf = io.StringIO()
    buf.write(_config_header(config))
    buf.write(f"# explained_variance: {res.explained_variance[0]:.10g},{res.explained_variance[1]:.10g}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "source"])
    for (a, b), s in zip(res.projected, source):
        w.writerow([f"{a:.8f}", f"{b:.8f}", s])
    return buf.getvalue()


def write_outputs(report, out_dir, pca_rows=None):
    os.makedirs(out_dir, exist_ok=True)
    envelope = {
        "envelope": {
            "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "package_version": __version__,
        },
        "report": report,
    }
    files = {
        "report.json": _dumps(envelope) + "\n",
        "occurrence.csv": occurrence_csv(report),
    }
    if report["sweeps"]:
        files["sweep.csv"] = sweep_csv(report)
    if pca_rows is not None:
        files["pca.csv"] = pca_csv(report["config"], pca_rows)
    for name, text in files.items():
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            fh.write(text)
    return sorted(files)


def report_bytes(report):
    """Canonical serialization of the timestamp-free report body."""
    return _dumps(report).encode()


__all__ = [
    "ConfigError",
    "DatasetError",
    "ExperimentConfig",
    "Prepared",
    "SweepCurve",
    "derive_seed",
    "explain_instance",
    "load_config",
    "prepare",
    "run_experiment",
    "run_single",
    "run_sweep",
]
