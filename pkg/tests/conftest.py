import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
FIXTURE_DIR = ROOT / "data" / "fixture"

# make tests/oracles.py importable regardless of rootdir
sys.path.insert(0, str(Path(__file__).resolve().parent))


@pytest.fixture
def movies():
    """Tiny movie-exchange instance with a hand-checkable optimum.

    Rows (interacted): Spider-Man 3, Batman Returns, Titanic.
    Columns (cold): Iron Man, Casablanca.  The exact optimal plan for
    p0 -> q1 ships 0.3 and 0.5 to Iron Man and 0.1 + 0.1 to Casablanca
    at linear cost 0.18; every basic exchange direction strictly
    increases the cost, so the vertex is the unique optimum.
    """
    M = np.array([
        [0.15, 0.80],
        [0.10, 0.95],
        [0.90, 0.05],
    ])
    p0 = np.array([0.4, 0.5, 0.1])
    q1 = np.array([0.8, 0.2])
    best_plan = np.array([
        [0.3, 0.1],
        [0.5, 0.0],
        [0.0, 0.1],
    ])
    return M, p0, q1, best_plan


@pytest.fixture
def fixture_ratings():
    return FIXTURE_DIR / "u.data"


@pytest.fixture
def fixture_genome():
    return FIXTURE_DIR / "genome.csv"
