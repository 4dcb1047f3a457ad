"""Tabular LIME and Kernel SHAP written against the BlackBox contract, plus a
brute-force Shapley enumeration used to check Kernel SHAP.

All explainers attribute the positive-class probability ``predict_proba[:, 1]``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations

import numpy as np
from scipy.special import comb

from .perturb import Background


class ExplainError(ValueError):
    pass


@dataclass
class Explanation:
    attributions: np.ndarray
    base_value: float
    target_row: np.ndarray
    method: str
    prediction: float = float("nan")
    seed: int | None = None
    score: float | None = None
    config: dict = field(default_factory=dict)

    def ranking(self):
        return rank_features(self)

    def to_dict(self, feature_names=None):
        names = feature_names or [str(i) for i in range(len(self.attributions))]
        out = {
            "method": self.method,
            "base_value": float(self.base_value),
            "prediction": float(self.prediction),
            "attributions": [
                {"feature": names[i], "value": float(v)}
                for i, v in enumerate(self.attributions)
            ],
            "ranking": [int(i) for i in self.ranking()],
            "seed": self.seed,
            "config": self.config,
        }
        if self.score is not None:
            out["score"] = float(self.score)
        return out


def rank_features(exp):
    """Feature indices by decreasing |attribution|; ties keep index order."""
    a = np.abs(np.asarray(getattr(exp, "attributions", exp), dtype=float))
    return np.argsort(-a, kind="stable")


def _positive_proba(model, rows):
    return np.asarray(model.predict_proba(rows), dtype=float)[:, 1]


# ---------------------------------------------------------------- LIME

@dataclass(frozen=True)
class LimeConfig:
    n_samples: int = 1000
    kernel_width: float | None = None  # None -> 0.75 * sqrt(M)
    distance_norm: str = "l2"
    ridge_lambda: float = 1.0
    noise_std: float = 1.0
    seed: int = 0

    def width_for(self, n_features):
        return self.kernel_width if self.kernel_width is not None else 0.75 * math.sqrt(n_features)

    def check(self, n_features):
        if self.n_samples < n_features + 2:
            raise ExplainError(f"n_samples must be at least M + 2 = {n_features + 2}")
        if self.width_for(n_features) <= 0:
            raise ExplainError("kernel_width must be positive")
        if self.ridge_lambda < 0:
            raise ExplainError("ridge_lambda must be non-negative")
        if self.distance_norm not in ("l2", "l1"):
            raise ExplainError(f"unknown distance norm {self.distance_norm!r}")


def lime_kernel_weight(distance, width):
    if np.any(np.asarray(width) <= 0):
        raise ExplainError("kernel width must be positive")
    d = np.asarray(distance, dtype=float)
    if np.any(d < 0):
        raise ExplainError("distance must be non-negative")
    w = np.exp(-(d ** 2) / width ** 2)
    return float(w) if w.ndim == 0 else w


def lime_neighborhood(x, cfg):
    """The perturbation sample and its kernel weights for instance ``x``."""
    x = np.asarray(x, dtype=float)
    m = x.shape[0]
    cfg.check(m)
    rng = np.random.default_rng(cfg.seed)
    samples = x + cfg.noise_std * rng.standard_normal((cfg.n_samples, m))
    diff = samples - x
    if cfg.distance_norm == "l2":
        dist = np.sqrt((diff ** 2).sum(axis=1))
    else:
        dist = np.abs(diff).sum(axis=1)
    return samples, lime_kernel_weight(dist, cfg.width_for(m))


def weighted_ridge(X, y, w, lam):
    """Minimize sum w_i (y_i - b - X_i.beta)^2 + lam |beta|^2 with the
    intercept ``b`` unpenalized. Returns ``(beta, b)``."""
    sw = w.sum()
    if sw <= 0:
        raise ExplainError("all sample weights are zero")
    xm = (w[:, None] * X).sum(axis=0) / sw
    ym = float((w * y).sum() / sw)
    Xc = X - xm
    A = Xc.T @ (w[:, None] * Xc) + lam * np.eye(X.shape[1])
    rhs = Xc.T @ (w * (y - ym))
    try:
        beta = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        raise ExplainError("singular normal equations; use ridge_lambda > 0") from None
    if not np.all(np.isfinite(beta)):
        raise ExplainError("non-finite regression coefficients")
    return beta, ym - float(xm @ beta)


def weighted_r2(X, y, w, beta, intercept):
    pred = intercept + X @ beta
    ym = (w * y).sum() / w.sum()
    ss_tot = (w * (y - ym) ** 2).sum()
    ss_res = (w * (y - pred) ** 2).sum()
    return 1.0 if ss_tot == 0 else float(1.0 - ss_res / ss_tot)


def lime_explain(model, x, cfg=LimeConfig()):
    x = np.asarray(x, dtype=float)
    samples, weights = lime_neighborhood(x, cfg)
    target = _positive_proba(model, samples)
    beta, intercept = weighted_ridge(samples, target, weights, cfg.ridge_lambda)
    # a flat target gives exact zeros rather than round-off noise
    if np.ptp(target) == 0:
        beta = np.zeros_like(beta)
        intercept = float(target[0])
    return Explanation(
        attributions=beta,
        base_value=intercept,
        target_row=x,
        method="lime",
        prediction=float(_positive_proba(model, x[None, :])[0]),
        seed=cfg.seed,
        score=weighted_r2(samples, target, weights, beta, intercept),
        config=asdict(cfg),
    )


# ---------------------------------------------------------- Kernel SHAP

@dataclass(frozen=True)
class ShapConfig:
    background: Background
    n_coalitions: int | None = None  # None -> 2M + 2048
    exact_if_feasible: bool = True
    seed: int = 0

    def budget_for(self, n_features):
        return self.n_coalitions if self.n_coalitions is not None else 2 * n_features + 2048

    def echo(self):
        return {
            "n_coalitions": self.n_coalitions,
            "exact_if_feasible": self.exact_if_feasible,
            "seed": self.seed,
            "background_kind": self.background.kind,
            "background_k": int(self.background.k),
        }


def shapley_kernel_weight(M, s):
    if not 0 < s < M:
        raise ExplainError("kernel weight is only defined for 0 < s < M")
    return (M - 1) / (comb(M, s, exact=True) * s * (M - s))


def _all_coalitions(M):
    """Every proper non-empty coalition as a boolean matrix, by size."""
    rows = []
    for s in range(1, M):
        for present in combinations(range(M), s):
            z = np.zeros(M, dtype=bool)
            z[list(present)] = True
            rows.append(z)
    return np.array(rows, dtype=bool).reshape(-1, M)


def _sample_coalitions(M, n, rng):
    sizes = np.arange(1, M)
    p = (M - 1) / (sizes * (M - sizes))
    p = p / p.sum()
    drawn = rng.choice(sizes, size=n, p=p)
    Z = np.zeros((n, M), dtype=bool)
    for i, s in enumerate(drawn):
        Z[i, rng.choice(M, size=s, replace=False)] = True
    return Z


def coalition_values(model, x, Z, centers):
    """Mean positive-class probability of ``x`` with absent features taken
    from each center, averaged over centers, one value per coalition."""
    n, k = Z.shape[0], centers.shape[0]
    rows = np.where(Z[:, None, :], x[None, None, :], centers[None, :, :])
    vals = _positive_proba(model, rows.reshape(n * k, -1))
    return vals.reshape(n, k).mean(axis=1)


def _constrained_wls(Z, y, w, delta):
    """WLS of y on Z subject to sum(phi) == delta, eliminating the last phi."""
    M = Z.shape[1]
    if M == 1:
        return np.array([delta])
    Zf = Z.astype(float)
    X = Zf[:, :-1] - Zf[:, -1:]
    t = y - Zf[:, -1] * delta
    A = X.T @ (w[:, None] * X)
    rhs = X.T @ (w * t)
    try:
        head = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        raise ExplainError("degenerate coalition design matrix") from None
    return np.append(head, delta - head.sum())


def kernel_shap_explain(model, x, cfg):
    x = np.asarray(x, dtype=float)
    M = x.shape[0]
    bg = cfg.background
    if bg is None or bg.k == 0:
        raise ExplainError("empty background")
    if bg.centers.shape[1] != M:
        raise ExplainError("background width does not match the instance")
    budget = cfg.budget_for(M)
    if budget < 2 * M:
        raise ExplainError(f"coalition budget must be at least 2M = {2 * M}")
    base = float(_positive_proba(model, bg.centers).mean())
    fx = float(_positive_proba(model, x[None, :])[0])
    delta = fx - base
    rng = np.random.default_rng(cfg.seed)
    exact = cfg.exact_if_feasible and 2 ** M - 2 <= budget
    if M == 1:
        phi, method = np.array([delta]), "shap"
    elif exact:
        Z = _all_coalitions(M)
        sizes = Z.sum(axis=1)
        w = np.array([shapley_kernel_weight(M, int(s)) for s in sizes])
        y = coalition_values(model, x, Z, bg.centers) - base
        phi = _constrained_wls(Z, y, w, delta)
    else:
        Z = _sample_coalitions(M, budget, rng)
        which = rng.integers(0, bg.k, size=budget)
        rows = np.where(Z, x[None, :], bg.centers[which])
        y = _positive_proba(model, rows) - base
        phi = _constrained_wls(Z, y, np.ones(budget), delta)
    return Explanation(
        attributions=phi,
        base_value=base,
        target_row=x,
        method="shap",
        prediction=fx,
        seed=cfg.seed,
        config={**cfg.echo(), "mode": "exact" if exact or M == 1 else "sampled"},
    )


def exact_shapley(model, x, background, max_features=15):
    """Shapley values by enumerating all 2^M coalitions."""
    x = np.asarray(x, dtype=float)
    M = x.shape[0]
    if M > max_features:
        raise ExplainError(f"exact enumeration limited to {max_features} features")
    masks = np.arange(2 ** M)
    Z = ((masks[:, None] >> np.arange(M)) & 1).astype(bool)
    v = coalition_values(model, x, Z, background.centers)
    sizes = Z.sum(axis=1)
    fact = [math.factorial(i) for i in range(M + 1)]
    size_weight = np.array([fact[k] * fact[M - k - 1] / fact[M] for k in range(M)])
    phi = np.zeros(M)
    for j in range(M):
        without = masks[~Z[:, j]]
        s = sizes[without]
        w = size_weight[s]
        phi[j] = float((w * (v[without | (1 << j)] - v[without])).sum())
    return Explanation(
        attributions=phi,
        base_value=float(v[0]),
        target_row=x,
        method="exact_shapley",
        prediction=float(v[-1]),
        config={"background_kind": background.kind, "background_k": int(background.k)},
    )


# ----------------------------------------------------------- batching

def instance_seed(seed, index):
    """Per-instance seed so results do not depend on batching or workers."""
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(index),)).generate_state(1)[0])


def explain_rows(model, rows, method, cfg, workers=1, indices=None):
    """Explain every row; instance ``i`` uses ``instance_seed(cfg.seed, i)``.

    ``indices`` (default ``range(len(rows))``) are the identifiers fed to the
    seed derivation. Results come back in row order.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    indices = range(rows.shape[0]) if indices is None else indices
    fn = {"lime": lime_explain, "shap": kernel_shap_explain}.get(method)
    if fn is None:
        raise ExplainError(f"unknown explainer {method!r}")

    def one(args):
        idx, row = args
        return fn(model, row, replace(cfg, seed=instance_seed(cfg.seed, idx)))

    jobs = list(zip(indices, rows))
    if workers <= 1 or len(jobs) <= 1:
        return [one(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, jobs))
