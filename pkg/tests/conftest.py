import itertools

import numpy as np
import pytest

from admg_effects import fixture
from admg_effects.graph import Admg


def random_admg(rng, n, p_dir=0.4, p_bi=0.3):
    names = [f"V{i}" for i in range(n)]
    directed = [(names[i], names[j]) for i, j in itertools.combinations(range(n), 2) if rng.random() < p_dir]
    bidirected = [(names[i], names[j]) for i, j in itertools.combinations(range(n), 2) if rng.random() < p_bi]
    return Admg(random=names, directed=directed, bidirected=bidirected)


@pytest.fixture
def graphs():
    names = [
        "backdoor", "bow", "frontdoor", "two_districts", "instruments", "shielded",
        "sequential", "nested", "saturated", "unsaturated", "hidden_dag", "hidden_projection",
    ]
    return {n: fixture(n) for n in names}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


PERTURB_BASES = ("backdoor", "frontdoor", "two_districts", "sequential", "nested")


def perturbed_fixture(rng):
    """A shipped graph with one edge of each kind possibly dropped and a
    bidirected edge possibly added; treatment T, outcome Y."""
    g = fixture(PERTURB_BASES[rng.integers(len(PERTURB_BASES))])
    d, b = sorted(g.directed), sorted(g.bidirected)
    if rng.random() < 0.5 and d:
        d.pop(rng.integers(len(d)))
    if rng.random() < 0.5 and b:
        b.pop(rng.integers(len(b)))
    if rng.random() < 0.5:
        b.append(tuple(sorted(rng.choice(g.random, 2, replace=False))))
    return Admg(random=g.random, directed=d, bidirected=set(b))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
