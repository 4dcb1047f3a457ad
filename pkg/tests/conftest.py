import os

import numpy as np
import pytest

from scaffold_xai.dataset import Dataset

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA = os.path.join(ROOT, "data")
CONFIGS = os.path.join(ROOT, "configs")


class LinearProbe:
    """p(x) = clip(b + w.x) used as a black box with known structure."""

    def __init__(self, w, b=0.0, clip=False):
        self.w = np.asarray(w, dtype=float)
        self.b = float(b)
        self.clip = clip

    def _p(self, rows):
        p = self.b + np.asarray(rows, dtype=float) @ self.w
        return np.clip(p, 0, 1) if self.clip else p

    def predict_proba(self, rows):
        p = self._p(rows)
        return np.column_stack([1 - p, p])

    def predict(self, rows):
        return (self._p(rows) > 0.5).astype(int)


class ConstantModel:
    def __init__(self, value=0.3):
        self.value = value

    def predict_proba(self, rows):
        n = np.atleast_2d(rows).shape[0]
        return np.column_stack([np.full(n, 1 - self.value), np.full(n, self.value)])

    def predict(self, rows):
        return (self.predict_proba(rows)[:, 1] > 0.5).astype(int)


class TableModel:
    """Arbitrary set function v(S) read off the 0/1 pattern of x against a
    zero background; lets Shapley values be checked on any game."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def predict_proba(self, rows):
        rows = np.atleast_2d(rows)
        bits = (rows != 0).astype(int)
        code = bits @ (1 << np.arange(rows.shape[1]))
        p = self.values[code]
        return np.column_stack([1 - p, p])

    def predict(self, rows):
        return (self.predict_proba(rows)[:, 1] > 0.5).astype(int)


@pytest.fixture
def small_dataset():
    rng = np.random.default_rng(3)
    sens = (rng.random(60) < 0.5).astype(float)
    rows = np.column_stack([sens, rng.normal(size=60), rng.poisson(3, size=60).astype(float)])
    return Dataset(["s", "a", "b"], rows, sens.astype(int), 0)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")


# acceptance lines collected here are repeated in the terminal summary so they
# survive output capturing
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
