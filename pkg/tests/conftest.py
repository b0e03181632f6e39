from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from nedcal import EmbeddingSet, SupportSet

settings.register_profile("nedcal", max_examples=60, deadline=None)
settings.load_profile("nedcal")

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def three_points():
    """Support {(0,0):A, (1,0):B, (4,0):B}."""
    return SupportSet.from_arrays(
        np.array([[0.0, 0.0], [1.0, 0.0], [4.0, 0.0]]), [0, 1, 1], label_names=["A", "B"]
    )


def blobs(n_per_class=20, n_classes=3, dim=4, spread=0.5, sep=10.0, seed=0) -> SupportSet:
    """Isotropic Gaussian blobs with centers ``sep`` apart on the axes."""
    rng = np.random.default_rng(seed)
    centers = sep * np.eye(n_classes, dim)
    x = np.concatenate([c + spread * rng.standard_normal((n_per_class, dim)) for c in centers])
    y = np.repeat(np.arange(n_classes), n_per_class)
    return SupportSet.from_arrays(x, y)


def random_set(n=50, dim=3, n_classes=3, seed=0) -> EmbeddingSet:
    rng = np.random.default_rng(seed)
    y = np.arange(n) % n_classes
    return SupportSet.from_arrays(rng.standard_normal((n, dim)), y)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.RESULTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
