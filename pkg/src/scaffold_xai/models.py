"""Black-box classifiers: rule classifiers, a random forest used as the
out-of-distribution detector, and the scaffold that switches between a biased
and an innocuous classifier depending on the detector's verdict.

Every model implements ``predict(rows) -> (K,) int`` and
``predict_proba(rows) -> (K, 2)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import _tree

FORMAT_VERSION = 1


class ModelError(ValueError):
    pass


class BlackBox(Protocol):
    def predict(self, rows) -> np.ndarray: ...

    def predict_proba(self, rows) -> np.ndarray: ...


def _as_rows(rows, width=None):
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows.reshape(1, -1) if rows.size else rows.reshape(0, width or 0)
    if rows.ndim != 2:
        raise ModelError("rows must be a 2-D matrix")
    if width is not None and rows.shape[0] and rows.shape[1] != width:
        raise ModelError(f"expected {width} columns, got {rows.shape[1]}")
    return rows


def _onehot(labels):
    proba = np.zeros((labels.shape[0], 2))
    proba[np.arange(labels.shape[0]), labels] = 1.0
    return proba


RULE_KINDS = ("equals", "threshold", "xor")


@dataclass(frozen=True)
class RuleClassifier:
    """Deterministic rule over one or two columns.

    * ``equals``: match when ``x[i] == match_value``.
    * ``threshold``: match when ``x[i] > threshold`` (ties do not match).
    * ``xor``: binarize both columns at ``threshold`` (default 0.5) and match
      when exactly one is set.

    Matching rows get ``output_on_match``, the rest get the other class.
    """

    kind: str
    indices: tuple
    threshold: float | None = None
    match_value: float | None = None
    output_on_match: int = 1

    def match(self, rows):
        rows = _as_rows(rows)
        if self.kind == "equals":
            return rows[:, self.indices[0]] == self.match_value
        if self.kind == "threshold":
            return rows[:, self.indices[0]] > self.threshold
        a = rows[:, self.indices[0]] > self.threshold
        b = rows[:, self.indices[1]] > self.threshold
        return a ^ b

    def predict(self, rows):
        hit = self.match(rows)
        out = np.where(hit, self.output_on_match, 1 - self.output_on_match)
        return out.astype(int)

    def predict_proba(self, rows):
        return _onehot(self.predict(rows))

    def to_dict(self):
        return {
            "kind": self.kind,
            "indices": list(self.indices),
            "threshold": self.threshold,
            "match_value": self.match_value,
            "output_on_match": self.output_on_match,
        }


def make_rule_classifier(kind, indices, threshold=None, match_value=None, output_on_match=1):
    if kind not in RULE_KINDS:
        raise ModelError(f"unknown rule kind {kind!r}; expected one of {RULE_KINDS}")
    indices = tuple(int(i) for i in np.atleast_1d(indices))
    if kind == "xor":
        if len(indices) != 2 or indices[0] == indices[1]:
            raise ModelError("xor rule needs exactly two distinct indices")
        threshold = 0.5 if threshold is None else float(threshold)
    else:
        if len(indices) != 1:
            raise ModelError(f"{kind} rule needs exactly one index")
        if kind == "threshold":
            if threshold is None:
                raise ModelError("threshold rule needs a threshold")
            threshold = float(threshold)
        elif match_value is None:
            raise ModelError("equals rule needs a match_value")
    if output_on_match not in (0, 1):
        raise ModelError("output_on_match must be 0 or 1")
    mv = None if match_value is None else float(match_value)
    return RuleClassifier(kind, indices, threshold, mv, int(output_on_match))


@dataclass(frozen=True)
class DecisionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    @property
    def n_nodes(self):
        return self.feature.shape[0]

    @property
    def leaf_class(self):
        # ties go to class 0
        return (self.counts[:, 1] > self.counts[:, 0]).astype(np.int64)

    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def to_records(self):
        return [
            {
                "feature": int(self.feature[i]),
                "threshold": float(self.threshold[i]),
                "left": int(self.left[i]),
                "right": int(self.right[i]),
                "counts": [int(c) for c in self.counts[i]],
            }
            for i in range(self.n_nodes)
        ]

    @classmethod
    def from_records(cls, records):
        return cls(
            np.array([r["feature"] for r in records], dtype=np.int64),
            np.array([r["threshold"] for r in records], dtype=float),
            np.array([r["left"] for r in records], dtype=np.int64),
            np.array([r["right"] for r in records], dtype=np.int64),
            np.array([r["counts"] for r in records], dtype=np.int64).reshape(-1, 2),
        )


@dataclass
class RandomForest:
    """Bagged Gini CART trees; probabilities are hard-vote fractions."""

    trees: list
    n_features: int
    features_per_split: int
    seed: int
    max_depth: int | None = None
    min_samples_split: int = 2
    _packed: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n_trees(self):
        return len(self.trees)

    def _pack(self):
        if self._packed is None:
            sizes = [t.n_nodes for t in self.trees]
            offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
            self._packed = (
                offsets,
                np.concatenate([t.feature for t in self.trees]),
                np.concatenate([t.threshold for t in self.trees]),
                np.concatenate([t.left for t in self.trees]),
                np.concatenate([t.right for t in self.trees]),
                np.concatenate([t.leaf_class for t in self.trees]),
            )
        return self._packed

    def votes(self, rows):
        """Number of trees voting for class 1, per row."""
        rows = np.ascontiguousarray(_as_rows(rows, self.n_features))
        if rows.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return _tree.forest_votes(rows, *self._pack())

    def predict_proba(self, rows):
        p1 = self.votes(rows) / self.n_trees
        return np.column_stack([1.0 - p1, p1])

    def predict(self, rows):
        # argmax with ties to class 0
        return (self.votes(rows) * 2 > self.n_trees).astype(int)

    def to_dict(self):
        return {
            "n_features": self.n_features,
            "features_per_split": self.features_per_split,
            "seed": self.seed,
            "max_depth": self.max_depth,
            "min_samples_split": self.min_samples_split,
            "trees": [t.to_records() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            trees=[DecisionTree.from_records(r) for r in data["trees"]],
            n_features=data["n_features"],
            features_per_split=data["features_per_split"],
            seed=data["seed"],
            max_depth=data["max_depth"],
            min_samples_split=data["min_samples_split"],
        )


def fit_random_forest(X, y, n_trees=100, seed=0, max_depth=None, min_samples_split=2,
                      features_per_split=None):
    """Fit ``n_trees`` Gini trees on bootstrap resamples with ceil(sqrt(M))
    candidate features per split (unless overridden)."""
    X = np.ascontiguousarray(_as_rows(X))
    y = np.asarray(y).astype(np.int64)
    if X.shape[0] == 0:
        raise ModelError("empty input")
    if y.shape != (X.shape[0],):
        raise ModelError("X and y lengths differ")
    if X.shape[0] < 2 or np.unique(y).size < 2:
        raise ModelError("single-class input")
    if not np.isin(y, (0, 1)).all():
        raise ModelError("labels must be 0 or 1")
    n, m = X.shape
    k = features_per_split or int(math.ceil(math.sqrt(m)))
    depth = -1 if max_depth is None else int(max_depth)
    seeds = np.random.SeedSequence(seed).generate_state(n_trees, dtype=np.uint32)
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng(int(seeds[t]))
        boot = rng.integers(0, n, size=n).astype(np.int64)
        arrays = _tree.grow_tree(X, y, boot, k, depth, int(min_samples_split), int(seeds[t] & 0x7FFFFFFF))
        trees.append(DecisionTree(*arrays))
    return RandomForest(trees, m, k, int(seed), max_depth, int(min_samples_split))


def forest_predict_proba(rf, rows):
    return rf.predict_proba(rows)


@dataclass(frozen=True)
class Scaffold:
    """Routes rows the detector deems in-distribution to ``biased`` and the
    rest to ``unbiased``.

    A row goes to ``unbiased`` when its OOD probability (fraction of trees
    voting OOD) is at least ``ood_threshold``.
    """

    biased: BlackBox
    unbiased: BlackBox
    ood_detector: RandomForest
    ood_threshold: float = 0.5

    def route(self, rows):
        """Return (labels, routed_to_unbiased, ood_probability) per row."""
        rows = _as_rows(rows, self.ood_detector.n_features)
        p_ood = self.ood_detector.predict_proba(rows)[:, 1]
        to_psi = p_ood >= self.ood_threshold
        labels = np.empty(rows.shape[0], dtype=int)
        if (~to_psi).any():
            labels[~to_psi] = self.biased.predict(rows[~to_psi])
        if to_psi.any():
            labels[to_psi] = self.unbiased.predict(rows[to_psi])
        return labels, to_psi, p_ood

    def predict(self, rows):
        return self.route(rows)[0]

    def predict_proba(self, rows):
        rows = _as_rows(rows, self.ood_detector.n_features)
        _, to_psi, _ = self.route(rows)
        proba = np.empty((rows.shape[0], 2))
        if (~to_psi).any():
            proba[~to_psi] = self.biased.predict_proba(rows[~to_psi])
        if to_psi.any():
            proba[to_psi] = self.unbiased.predict_proba(rows[to_psi])
        return proba

    def predict_diagnostic(self, rows):
        labels, to_psi, p_ood = self.route(rows)
        return [
            (int(label), "psi" if psi else "f", float(p))
            for label, psi, p in zip(labels, to_psi, p_ood)
        ]


def build_scaffold(f, psi, ood, threshold=0.5):
    if not 0 < threshold < 1:
        raise ModelError("ood_threshold must lie in (0, 1)")
    for name, model in (("f", f), ("psi", psi)):
        width = _model_width(model)
        if width is not None and width > ood.n_features:
            raise ModelError(
                f"{name} reads column {width - 1} but the detector has {ood.n_features} columns"
            )
    return Scaffold(f, psi, ood, float(threshold))


def _model_width(model):
    """Smallest column count the model can consume, when knowable."""
    if isinstance(model, RuleClassifier):
        return max(model.indices) + 1
    if isinstance(model, RandomForest):
        return model.n_features
    if isinstance(model, Scaffold):
        return model.ood_detector.n_features
    return None


def scaffold_predict(e, rows, diagnostic=False):
    return e.predict_diagnostic(rows) if diagnostic else e.predict(rows)


def model_to_dict(model):
    if isinstance(model, RuleClassifier):
        return {"version": FORMAT_VERSION, "kind": "rule", "params": model.to_dict()}
    if isinstance(model, RandomForest):
        return {"version": FORMAT_VERSION, "kind": "random_forest", "params": model.to_dict()}
    if isinstance(model, Scaffold):
        return {
            "version": FORMAT_VERSION,
            "kind": "scaffold",
            "params": {
                "biased": model_to_dict(model.biased),
                "unbiased": model_to_dict(model.unbiased),
                "ood_detector": model_to_dict(model.ood_detector),
                "ood_threshold": model.ood_threshold,
            },
        }
    raise ModelError(f"cannot serialize {type(model).__name__}")


def model_from_dict(data):
    if data.get("version") != FORMAT_VERSION:
        raise ModelError(f"unsupported model format version {data.get('version')!r}")
    kind, params = data["kind"], data["params"]
    if kind == "rule":
        return make_rule_classifier(**params)
    if kind == "random_forest":
        return RandomForest.from_dict(params)
    if kind == "scaffold":
        return build_scaffold(
            model_from_dict(params["biased"]),
            model_from_dict(params["unbiased"]),
            model_from_dict(params["ood_detector"]),
            params["ood_threshold"],
        )
    raise ModelError(f"unknown model kind {kind!r}")


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
