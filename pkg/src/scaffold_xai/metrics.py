"""Evaluation metrics: top-k occurrence tables, fidelity, classification and
parity metrics, and the 2-D PCA projection used to compare real rows with
their perturbations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .explain import rank_features


class MetricError(ValueError):
    pass


GROUP_ORDER = ("sensitive", "uncorrelated_1", "uncorrelated_2", "unbiased_feature", "other")


def feature_groups(sensitive_index, uncorrelated_indices=()):
    groups = {"sensitive": [int(sensitive_index)]}
    for k, j in enumerate(uncorrelated_indices, start=1):
        groups[f"uncorrelated_{k}"] = [int(j)]
    return groups


@dataclass
class OccurrenceTable:
    """Percentage of explanations whose rank-r feature belongs to each group."""

    groups: list
    percentages: np.ndarray  # len(groups) x k
    n_explanations: int = 0

    def get(self, group, rank=1):
        return float(self.percentages[self.groups.index(group), rank - 1])

    def to_dict(self):
        return {
            "groups": list(self.groups),
            "n_explanations": self.n_explanations,
            "percentages": {
                g: [float(v) for v in row] for g, row in zip(self.groups, self.percentages)
            },
        }

    @classmethod
    def mean(cls, tables):
        return cls(
            list(tables[0].groups),
            np.mean([t.percentages for t in tables], axis=0),
            sum(t.n_explanations for t in tables),
        )


def top_k_occurrence(explanations, groups, k=3):
    """``groups`` maps a group name to feature indices; features in no group
    count as ``other``."""
    if not explanations:
        raise MetricError("no explanations")
    names = [g for g in GROUP_ORDER if g in groups and g != "other"]
    names += [g for g in groups if g not in names and g != "other"]
    owner = {}
    for g in names:
        for j in groups[g]:
            if j in owner:
                raise MetricError(f"feature {j} is in two groups")
            owner[int(j)] = g
    names.append("other")
    M = len(explanations[0].attributions)
    if any(j >= M or j < 0 for j in owner):
        raise MetricError("group index out of range")
    k = min(k, M)
    counts = np.zeros((len(names), k))
    for exp in explanations:
        order = rank_features(exp)
        for r in range(k):
            counts[names.index(owner.get(int(order[r]), "other")), r] += 1
    return OccurrenceTable(names, 100.0 * counts / len(explanations), len(explanations))


def attack_effectiveness(table):
    """Percent of explanations whose top feature is not the sensitive one."""
    return 100.0 - table.get("sensitive", 1)


def fidelity(e, f, rows):
    rows = np.asarray(rows, dtype=float)
    if rows.shape[0] == 0:
        raise MetricError("no rows")
    return float((np.asarray(e.predict(rows)) == np.asarray(f.predict(rows))).mean())


def parity_ratio(preds, groups):
    preds = np.asarray(preds).astype(int)
    groups = np.asarray(groups)
    levels = np.unique(groups)
    if levels.size != 2:
        raise MetricError("demographic parity needs exactly two groups")
    p0 = preds[groups == levels[0]].mean()
    p1 = preds[groups == levels[1]].mean()
    if p0 == p1:
        return 1.0
    if p0 == 0 or p1 == 0:
        return 0.0
    return float(min(p0 / p1, p1 / p0))


def classification_metrics(preds, labels, sensitive_column=None):
    preds = np.asarray(preds).astype(int)
    labels = np.asarray(labels).astype(int)
    if preds.size == 0:
        raise MetricError("empty input")
    if preds.shape != labels.shape:
        raise MetricError("preds and labels differ in length")
    tp = int(((preds == 1) & (labels == 1)).sum())
    denom = int((preds == 1).sum() + (labels == 1).sum())
    out = {
        "accuracy": float((preds == labels).mean()),
        "f1": 2.0 * tp / denom if denom else 0.0,
    }
    if sensitive_column is not None:
        out["demographic_parity_ratio"] = parity_ratio(preds, sensitive_column)
    return out


@dataclass
class PCAResult:
    projected: np.ndarray
    explained_variance: np.ndarray
    components: np.ndarray  # 2 x M, orthonormal rows
    mean: np.ndarray
    eigenvalues: np.ndarray = field(repr=False, default=None)


def pca_2d(X):
    """Project centered data on the top two covariance eigenvectors."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise MetricError("PCA needs at least two rows")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    n_comp = min(2, X.shape[1])
    comps = vecs[:, :n_comp].T
    # deterministic sign: largest loading positive
    for i in range(n_comp):
        if comps[i, np.argmax(np.abs(comps[i]))] < 0:
            comps[i] = -comps[i]
    ev = np.zeros(2)
    ev[:n_comp] = vals[:n_comp]
    proj = np.zeros((X.shape[0], 2))
    proj[:, :n_comp] = Xc @ comps.T
    return PCAResult(proj, ev, comps, mean, vals)
