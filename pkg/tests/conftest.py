import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # oracles/synth helpers


def _dataset_dir(name, required):
    candidates = []
    env = os.environ.get("NNM_DATA_DIR")
    if env:
        candidates.append(Path(env) / name)
    candidates.append(Path(__file__).resolve().parent.parent / "data" / name)
    candidates.append(Path.cwd() / "data" / name)
    for c in candidates:
        if all((c / f).exists() for f in required):
            return c
    return None


def require_ml100k():
    d = _dataset_dir("ml-100k", ["u.data", "u.item"])
    if d is None:
        pytest.skip("MovieLens 100K not available: place the GroupLens ml-100k "
                    "directory (u.data, u.item) under ./data or set NNM_DATA_DIR")
    return d


def require_ml1m():
    d = _dataset_dir("ml-1m", ["ratings.dat", "movies.dat"])
    if d is None:
        pytest.skip("MovieLens 1M not available: place the GroupLens ml-1m "
                    "directory (ratings.dat, movies.dat) under ./data or set "
                    "NNM_DATA_DIR")
    return d


@pytest.fixture(scope="session")
def ml100k_dir():
    return require_ml100k()


@pytest.fixture(scope="session")
def ml1m_dir():
    return require_ml1m()
