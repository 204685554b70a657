import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from droptriple import _kernels  # noqa: E402
from droptriple.corpus import CorpusConfig, generate_corpus  # noqa: E402

BACKENDS = ["numpy"] + (["numba"] if _kernels.numba is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per kernel backend."""
    monkeypatch.setenv(_kernels.FLAG, "1" if request.param == "numpy" else "0")
    assert _kernels.backend() == request.param
    return request.param


def unit_rows(rng, n, d):
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


@pytest.fixture
def small_corpus():
    return generate_corpus(CorpusConfig(num_train=40, num_test=12, seed=3))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
