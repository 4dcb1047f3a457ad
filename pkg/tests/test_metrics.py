import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scaffold_xai.explain import Explanation
from scaffold_xai.metrics import (
    MetricError,
    OccurrenceTable,
    attack_effectiveness,
    classification_metrics,
    feature_groups,
    fidelity,
    parity_ratio,
    pca_2d,
    top_k_occurrence,
)
from scaffold_xai.models import make_rule_classifier


def _exp(a):
    a = np.asarray(a, dtype=float)
    return Explanation(a, 0.0, np.zeros_like(a), "lime")


def test_singleton_occurrence():
    tab = top_k_occurrence([_exp([0.1, 0.9, 0.0, 0.2])], feature_groups(1, [3]))
    assert tab.groups == ["sensitive", "uncorrelated_1", "other"]
    assert tab.get("sensitive", 1) == 100.0
    assert tab.get("uncorrelated_1", 2) == 100.0
    assert tab.get("other", 3) == 100.0
    assert attack_effectiveness(tab) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 9), st.integers(1, 40), st.integers(0, 2**31))
def test_columns_sum_to_100(m, n, seed):
    rng = np.random.default_rng(seed)
    exps = [_exp(rng.normal(size=m)) for _ in range(n)]
    tab = top_k_occurrence(exps, feature_groups(0, [m - 1, m - 2]))
    assert np.allclose(tab.percentages.sum(axis=0), 100.0)
    assert tab.percentages.min() >= 0


def test_occurrence_errors():
    with pytest.raises(MetricError):
        top_k_occurrence([], feature_groups(0))
    with pytest.raises(MetricError, match="range"):
        top_k_occurrence([_exp([1, 2])], feature_groups(5))
    with pytest.raises(MetricError, match="two groups"):
        top_k_occurrence([_exp([1, 2])], {"sensitive": [0], "uncorrelated_1": [0]})


def test_occurrence_mean_and_dict():
    a = top_k_occurrence([_exp([1, 0, 0])], feature_groups(0))
    b = top_k_occurrence([_exp([0, 1, 0])], feature_groups(0))
    m = OccurrenceTable.mean([a, b])
    assert m.get("sensitive", 1) == 50.0 and m.n_explanations == 2
    assert m.to_dict()["percentages"]["other"][0] == 50.0


def test_fidelity_self_is_one():
    f = make_rule_classifier("threshold", [0], threshold=0.0)
    g = make_rule_classifier("threshold", [0], threshold=1.0)
    X = np.linspace(-2, 2, 41)[:, None]
    assert fidelity(f, f, X) == 1.0
    assert fidelity(f, g, X) == pytest.approx(31 / 41)
    with pytest.raises(MetricError):
        fidelity(f, f, np.zeros((0, 1)))


def test_parity_rules():
    g = np.array([0, 0, 1, 1])
    assert parity_ratio([1, 1, 0, 0], g) == 0.0
    assert parity_ratio([1, 0, 1, 0], g) == 1.0
    assert parity_ratio([0, 0, 0, 0], g) == 1.0
    assert parity_ratio([1, 0, 1, 1], g) == 0.5
    with pytest.raises(MetricError):
        parity_ratio([1, 0], [1, 1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=2, max_size=60))
def test_parity_symmetric_under_group_swap(pairs):
    preds, groups = map(np.array, zip(*pairs))
    if np.unique(groups).size < 2:
        return
    assert parity_ratio(preds, groups) == parity_ratio(preds, 1 - groups)
    assert 0.0 <= parity_ratio(preds, groups) <= 1.0


def test_classification_metrics():
    out = classification_metrics([1, 1, 0, 0], [1, 0, 0, 1], [1, 1, 0, 0])
    assert out == {"accuracy": 0.5, "f1": 0.5, "demographic_parity_ratio": 0.0}
    with pytest.raises(MetricError):
        classification_metrics([], [])


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 60), st.integers(2, 7), st.integers(0, 2**31))
def test_pca_invariants(n, m, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, m)) @ rng.normal(size=(m, m))
    res = pca_2d(X)
    gram = res.components @ res.components.T
    assert np.allclose(gram, np.eye(2), atol=1e-10)
    assert res.explained_variance[0] >= res.explained_variance[1] >= 0
    assert np.all(np.diff(res.eigenvalues) <= 1e-12)
    # Eckart-Young: reconstruction error of the rank-2 projection equals
    # the discarded eigenvalue mass, and beats a random 2-D subspace
    Xc = X - res.mean
    recon = res.projected @ res.components
    err = ((Xc - recon) ** 2).sum()
    assert err == pytest.approx(res.eigenvalues[2:].sum() * (n - 1), rel=1e-6, abs=1e-8)
    Q, _ = np.linalg.qr(rng.normal(size=(m, 2)))
    assert err <= ((Xc - Xc @ Q @ Q.T) ** 2).sum() + 1e-8


def test_pca_matches_svd():
    X = np.random.default_rng(0).normal(size=(100, 4)) * [3, 2, 1, 0.5]
    res = pca_2d(X)
    _, s, vt = np.linalg.svd(X - X.mean(axis=0), full_matrices=False)
    assert np.allclose(res.explained_variance, s[:2] ** 2 / 99)
    assert np.allclose(np.abs(res.components), np.abs(vt[:2]))
