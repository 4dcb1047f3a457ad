import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scaffold_xai.perturb import (
    Background,
    PerturbationConfig,
    PerturbError,
    build_ood_dataset,
    kmeans,
    kmeans_background,
    perturb_lime,
    perturb_shap,
    snap_to_observed,
    train_ood_detector,
    zeros_background,
)


def test_kmeans_k1_is_column_mean():
    X = np.random.default_rng(0).normal(size=(50, 3))
    bg = kmeans_background(X, k=1, seed=0)
    assert np.allclose(bg.centers[0], X.mean(axis=0))


def test_kmeans_exact_fit_on_repeated_points():
    pts = np.array([[0.0, 0], [5, 5], [-4, 3]])
    X = np.repeat(pts, 7, axis=0)
    centers, labels, hist = kmeans(X, 3, seed=2)
    assert hist[-1] == 0.0
    assert sorted(map(tuple, centers)) == sorted(map(tuple, pts))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8))
def test_kmeans_inertia_non_increasing_and_centers_are_means(seed, k):
    X = np.random.default_rng(seed).normal(size=(80, 3))
    centers, labels, hist = kmeans(X, k, seed=seed)
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))
    for c in range(k):
        members = X[labels == c]
        if len(members):
            assert np.allclose(centers[c], members.mean(axis=0), atol=1e-6)


def test_kmeans_errors_and_determinism():
    X = np.random.default_rng(0).normal(size=(5, 2))
    with pytest.raises(PerturbError):
        kmeans(X, 6)
    with pytest.raises(PerturbError):
        kmeans(X, 0)
    a = kmeans(X, 3, seed=1)[0]
    assert np.array_equal(a, kmeans(X, 3, seed=1)[0])


def test_kmeans_fewer_distinct_points_than_k():
    X = np.array([[1.0, 1.0]] * 4 + [[2.0, 2.0]] * 4)
    centers, labels, hist = kmeans(X, 3, seed=0)
    assert np.isfinite(centers).all()
    assert hist[-1] == 0.0


def test_snap_to_observed():
    X = np.array([[0.0, 1.0], [1.0, 3.0], [1.0, 7.0]])
    out = snap_to_observed(np.array([[0.4, 4.9], [0.6, 100.0]]), X)
    assert out.tolist() == [[0.0, 3.0], [1.0, 7.0]]


def test_background_serialization():
    bg = zeros_background(4)
    assert bg.k == 1 and bg.kind == "zeros" and not bg.centers.any()
    again = Background.from_dict(bg.to_dict())
    assert again.kind == "zeros" and np.array_equal(again.centers, bg.centers)


@pytest.mark.parametrize("kw", [dict(kind="x"), dict(noise_std=0), dict(samples_per_point=0),
                                dict(mask_probability=1.5)])
def test_config_validation(kw):
    with pytest.raises(PerturbError):
        PerturbationConfig(**kw)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**31))
def test_lime_shape(n, m, reps, seed):
    X = np.random.default_rng(seed).normal(size=(n, m))
    out = perturb_lime(X, PerturbationConfig("lime", samples_per_point=reps, seed=seed))
    assert out.shape == (n * reps, m)


def test_lime_noise_is_standard_normal():
    X = np.zeros((20000, 2))
    out = perturb_lime(X, PerturbationConfig("lime", seed=0))
    assert abs(out.mean()) < 0.02 and abs(out.std() - 1) < 0.02


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31))
def test_shap_entries_come_from_row_or_background(n, m, k, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, m))
    bg = Background(rng.normal(size=(k, m)))
    out = perturb_shap(X, bg, PerturbationConfig("shap", samples_per_point=2, seed=seed))
    base = np.repeat(X, 2, axis=0)
    for j in range(m):
        ok = (out[:, j] == base[:, j]) | np.isin(out[:, j], bg.centers[:, j])
        assert ok.all()


def test_shap_mask_rate():
    X = np.ones((5000, 4))
    out = perturb_shap(X, zeros_background(4), PerturbationConfig("shap", seed=1))
    assert abs((out == 0).mean() - 0.5) < 0.02


def test_ood_dataset_dedup_counts():
    X = np.array([[0.0, 1.0], [2.0, 3.0], [-0.0, 5.0]])
    Xp = np.array([[2.0, 3.0], [0.0, 5.0], [9.0, 9.0], [-0.0, 1.0]])
    rows, labels = build_ood_dataset(X, Xp)
    assert rows.shape == (7, 2)
    assert labels[:3].tolist() == [0, 0, 0]
    # three of the four perturbed rows duplicate a real row (signed zero folded)
    assert labels[3:].tolist() == [0, 0, 1, 0]


def test_identity_perturbation_is_degenerate():
    X = np.random.default_rng(0).normal(size=(30, 3))


    rows, labels = build_ood_dataset(X, X.copy())
    assert labels.sum() == 0
    cfg = PerturbationConfig("shap", mask_probability=0.0)
    with pytest.raises(PerturbError, match="degenerate"):
        train_ood_detector(X, cfg, background=zeros_background(3), n_trees=3)


def test_detector_separates_lime_noise_and_capacity_matters():
    rng = np.random.default_rng(0)
    # discrete-ish real data is easy to tell apart from Gaussian noise
    X = np.column_stack([rng.integers(0, 2, 800), rng.poisson(2, 800), rng.integers(0, 5, 800)]).astype(float)
    cfg = PerturbationConfig("lime", seed=1)
    _, f1_full = train_ood_detector(X, cfg, n_trees=20, seed=0)
    _, f1_stump = train_ood_detector(X, cfg, n_trees=20, seed=0, max_depth=1)
    assert f1_full >= 0.9
    assert f1_stump < f1_full


def test_detector_needs_background_for_shap():
    with pytest.raises(PerturbError):
        train_ood_detector(np.zeros((4, 2)), PerturbationConfig("shap"))
