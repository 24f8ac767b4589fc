import os
from collections import deque

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def _offsets(connectivity):
    offs = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                steps = abs(dx) + abs(dy) + abs(dz)
                if steps == 0:
                    continue
                if connectivity == 6 and steps != 1:
                    continue
                offs.append((dx, dy, dz))
    return offs


def flood_fill_components(mask, connectivity):
    """Component count by breadth-first search over plain Python tuples."""
    mask = np.asarray(mask, dtype=bool)
    nx, ny, nz = mask.shape
    filled = set(zip(*np.nonzero(mask)))
    seen = set()
    offs = _offsets(connectivity)
    count = 0
    for start in sorted(filled):
        if start in seen:
            continue
        count += 1
        seen.add(start)
        queue = deque([start])
        while queue:
            x, y, z = queue.popleft()
            for dx, dy, dz in offs:
                nb = (x + dx, y + dy, z + dz)
                if nb in filled and nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
    return count


def random_two_class(rng, n_max=8, d_max=3, n_min=2):
    """Random labeled point set with both classes present."""
    n = int(rng.integers(n_min, n_max + 1))
    d = int(rng.integers(1, d_max + 1))
    X = rng.normal(size=(n, d)) * rng.uniform(0.5, 3.0)
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    y[0], y[1] = 1.0, -1.0
    X[y > 0] += rng.normal(size=d) * rng.uniform(0.0, 2.0)
    return X, y


def random_points(rng, n_max=10, d_max=3, n_min=1):
    n = int(rng.integers(n_min, n_max + 1))
    d = int(rng.integers(1, d_max + 1))
    return rng.normal(size=(n, d)) * rng.uniform(0.5, 3.0)


@pytest.fixture
def rng():
    # test-side randomness only; the package itself never uses numpy generators
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}  # criterion number -> latest result line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
