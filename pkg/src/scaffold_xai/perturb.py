"""Explainer-style perturbations and the training data for the OOD detector.

LIME-style points add isotropic Gaussian noise; SHAP-style points overwrite a
random subset of features with values from a background distribution
(k-means centers or a single all-zero point).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .models import fit_random_forest

log = logging.getLogger(__name__)


class PerturbError(ValueError):
    pass


@dataclass(frozen=True)
class Background:
    centers: np.ndarray
    kind: str = "kmeans"

    @property
    def k(self):
        return self.centers.shape[0]

    def to_dict(self):
        return {"kind": self.kind, "centers": self.centers.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["centers"], dtype=float), data["kind"])


def zeros_background(n_features):
    return Background(np.zeros((1, n_features)), "zeros")


@dataclass(frozen=True)
class PerturbationConfig:
    kind: str = "lime"
    noise_std: float = 1.0
    mask_probability: float = 0.5
    samples_per_point: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("lime", "shap"):
            raise PerturbError(f"unknown perturbation kind {self.kind!r}")
        if self.noise_std <= 0:
            raise PerturbError("noise_std must be positive")
        if not 0 <= self.mask_probability <= 1:
            raise PerturbError("mask_probability must lie in [0, 1]")
        if self.samples_per_point < 1:
            raise PerturbError("samples_per_point must be at least 1")


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            # fewer distinct points than k; duplicates get repaired later
            centers[c] = X[rng.integers(n)]
        else:
            centers[c] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    return centers


def _assign(X, centers):
    d2 = (
        (X ** 2).sum(axis=1)[:, None]
        - 2.0 * X @ centers.T
        + (centers ** 2).sum(axis=1)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(X.shape[0]), labels]


def kmeans(X, k, seed=0, max_iters=300, tol=1e-8):
    """Lloyd's algorithm with k-means++ seeding.

    Returns ``(centers, labels, inertia_history)``; the history holds the
    within-cluster sum of squares after each assignment step.
    """
    X = np.asarray(X, dtype=float)
    if k < 1:
        raise PerturbError("k must be at least 1")
    if k > X.shape[0]:
        raise PerturbError(f"k={k} exceeds the number of points ({X.shape[0]})")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(X, k, rng)
    history = []
    for _ in range(max_iters):
        labels, d2 = _assign(X, centers)
        history.append(float(d2.sum()))
        new = centers.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = X[members].mean(axis=0)
            else:
                # reseed an empty cluster at the point farthest from its center
                far = int(d2.argmax())
                new[c] = X[far]
                d2[far] = 0.0
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift < tol:
            break
    labels, d2 = _assign(X, centers)
    history.append(float(d2.sum()))
    return centers, labels, history


def snap_to_observed(centers, X):
    """Move every center coordinate to the closest value seen in that column."""
    out = np.array(centers, dtype=float, copy=True)
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        pos = np.clip(np.searchsorted(vals, out[:, j]), 1, max(vals.size - 1, 1))
        lo, hi = vals[pos - 1], vals[np.minimum(pos, vals.size - 1)]
        out[:, j] = np.where(np.abs(out[:, j] - lo) <= np.abs(hi - out[:, j]), lo, hi)
    return out


def kmeans_background(X, k=10, seed=0, max_iters=300, tol=1e-8, snap=False):
    """k-means centers as a SHAP background.

    With ``snap=True`` each coordinate is rounded to the nearest observed
    value of its column, so binary and count features keep realistic values.
    """
    X = np.asarray(X, dtype=float)
    centers, _, _ = kmeans(X, k, seed, max_iters, tol)
    if snap:
        centers = snap_to_observed(centers, X)
    return Background(centers, "kmeans")


def perturb_lime(rows, cfg):
    """Gaussian perturbations, ``samples_per_point`` consecutive rows per input."""
    if cfg.kind != "lime":
        raise PerturbError("perturb_lime needs a lime config")
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    rng = np.random.default_rng(cfg.seed)
    base = np.repeat(rows, cfg.samples_per_point, axis=0)
    return base + cfg.noise_std * rng.standard_normal(base.shape)


def perturb_shap(rows, background, cfg):
    """Replace each feature with probability ``mask_probability`` by the value
    of one uniformly drawn background center (one center per output row)."""
    if cfg.kind != "shap":
        raise PerturbError("perturb_shap needs a shap config")
    if background is None or background.k == 0:
        raise PerturbError("empty background")
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    rng = np.random.default_rng(cfg.seed)
    base = np.repeat(rows, cfg.samples_per_point, axis=0)
    which = rng.integers(0, background.k, size=base.shape[0])
    mask = rng.random(base.shape) < cfg.mask_probability
    return np.where(mask, background.centers[which], base)


def _row_keys(rows):
    # +0.0 folds -0.0 onto 0.0 so equal values hash equal
    rows = np.ascontiguousarray(rows + 0.0)
    return {r.tobytes() for r in rows}


def build_ood_dataset(X, X_p):
    """Stack real rows (label 0) and perturbed rows (label 1); perturbed rows
    identical to some real row are labeled 0."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X_p = np.asarray(X_p, dtype=float)
    if X_p.size == 0:
        X_p = X_p.reshape(0, X.shape[1])
    if X_p.ndim != 2 or X_p.shape[1] != X.shape[1]:
        raise PerturbError("X and X_p must have the same number of columns")
    real = _row_keys(X)
    flags = np.array(
        [r.tobytes() not in real for r in np.ascontiguousarray(X_p + 0.0)], dtype=int
    )
    combined = np.vstack([X, X_p])
    labels = np.concatenate([np.zeros(X.shape[0], dtype=int), flags])
    return combined, labels


def generate_perturbations(X, cfg, background=None):
    if cfg.kind == "lime":
        return perturb_lime(X, cfg)
    if background is None:
        raise PerturbError("shap perturbations need a background")
    return perturb_shap(X, background, cfg)


def f1_score(pred, truth):
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    tp = int((pred & truth).sum())
    denom = int(pred.sum()) + int(truth.sum())
    return 2.0 * tp / denom if denom else 0.0


def train_ood_detector(X, cfg, background=None, n_trees=100, max_depth=None,
                       min_samples_split=2, train_fraction=1.0, seed=0):
    """Fit a forest that separates real rows from their perturbations.

    The labeled set is split 80/20; the forest sees ``train_fraction`` of the
    80% part and the F1 (OOD = positive) is measured on the 20%.
    Returns ``(forest, held_out_f1)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise PerturbError("no rows to perturb")
    if not 0 < train_fraction <= 1:
        raise PerturbError("train_fraction must lie in (0, 1]")
    X_p = generate_perturbations(X, cfg, background)
    rows, labels = build_ood_dataset(X, X_p)
    if labels.min() == labels.max():
        raise PerturbError("degenerate OOD labels: every perturbation duplicates a real row")
    rng = np.random.default_rng(seed)
    order = rng.permutation(rows.shape[0])
    n_fit = int(round(0.8 * rows.shape[0]))
    fit_idx, held_idx = order[:n_fit], order[n_fit:]
    if train_fraction < 1:
        fit_idx = fit_idx[: max(2, int(round(train_fraction * n_fit)))]
    if np.unique(labels[fit_idx]).size < 2:
        raise PerturbError("training part of the OOD set has a single class")
    forest = fit_random_forest(
        rows[fit_idx], labels[fit_idx], n_trees=n_trees, seed=seed,
        max_depth=max_depth, min_samples_split=min_samples_split,
    )
    f1 = f1_score(forest.predict(rows[held_idx]), labels[held_idx])
    log.debug("ood detector (%s, depth=%s, frac=%s): held-out F1 %.3f",
              cfg.kind, max_depth, train_fraction, f1)
    return forest, f1
