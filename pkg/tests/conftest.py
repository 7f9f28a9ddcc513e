import numpy as np
import pytest

from npcal.data import Dataset, PredictionSet, SyntheticSpec, generate_gaussian_mixture


@pytest.fixture
def small_ds():
    return generate_gaussian_mixture(SyntheticSpec(3, 60, 4, 1.0, seed=1))


@pytest.fixture
def blobs():
    """Well separated 4-class data with a train/test split."""
    ds = generate_gaussian_mixture(SyntheticSpec(4, 400, 5, 0.5, seed=2, radius_scale=8.0))
    return ds


def random_predictions(n, c, seed=0, embed=None):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(c), n)
    emb = rng.standard_normal((n, embed)) if embed else None
    return PredictionSet(probs, emb)


@pytest.fixture
def make_preds():
    return random_predictions


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one status line per acceptance criterion for the terminal summary."""

    def record(name, ok, detail):
        line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
