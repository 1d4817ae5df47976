import pathlib
import sys

import numpy as np
import pytest

# Ensure project root is importable as a module namespace
ROOT = pathlib.Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from nvsim.settings import reset_settings  # noqa: E402


@pytest.fixture(autouse=True)
def fresh_settings():
    # settings are cached per process; tests that monkeypatch NVSIM_* need a fresh read
    reset_settings()
    yield
    reset_settings()


@pytest.fixture
def check_valid():
    """Assert a DensityMatrix is unit-trace, Hermitian and positive semidefinite."""

    def check(rho):
        m = rho.entries
        assert abs(np.trace(m) - 1.0) < 1e-9
        assert np.max(np.abs(m - m.conj().T)) < 1e-10
        assert np.min(np.linalg.eigvalsh(m)) > -1e-9

    return check
