import numpy as np
import pytest

from trimpanel import PanelDataset


def panel(y1, y2, dx, x2=None):
    """Dataset with the given outcomes and regressor differences (x2 = 0 by default)."""
    dx = np.asarray(dx, dtype=float)
    if dx.ndim == 1:
        dx = dx.reshape(-1, 1)
    x2 = np.zeros_like(dx) if x2 is None else np.asarray(x2, dtype=float).reshape(dx.shape)
    return PanelDataset(np.atleast_1d(y1), np.atleast_1d(y2), dx + x2, x2)


def random_panel(rng, n, k, censor=0.0, integer=False):
    if integer:
        x1 = rng.integers(-2, 3, (n, k)).astype(float)
        x2 = rng.integers(-2, 3, (n, k)).astype(float)
        y1 = np.maximum(0, rng.integers(-2, 4, n)).astype(float)
        y2 = np.maximum(0, rng.integers(-2, 4, n)).astype(float)
    else:
        x1, x2 = rng.normal(size=(n, k)), rng.normal(size=(n, k))
        y1 = np.maximum(0.0, rng.normal(size=n) - censor)
        y2 = np.maximum(0.0, rng.normal(size=n) - censor)
    return PanelDataset(y1, y2, x1, x2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
