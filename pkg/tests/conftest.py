import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=40)
settings.load_profile("repo")


@pytest.fixture
def rng():
    from sphvox.geometry import make_rng

    return make_rng(20240607)


def random_cloud(rng, n=64, scale=0.9):
    """Points strictly inside the unit ball."""
    from sphvox.geometry import PointCloud

    p = rng.normal(size=(n, 3))
    p *= (scale * rng.uniform(0.05, 1.0, n) / np.linalg.norm(p, axis=1))[:, None]
    return PointCloud(p)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, ok, detail, seconds):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  ({seconds:.1f} s)  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
