import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bbsi import make_layout, random_spd_like

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def spd(n, bs, w, seed=0, **kw):
    """Synthetic diagonally dominant matrix with a uniform layout."""
    return random_spd_like(make_layout(n, bs, w), seed=seed, **kw)


def dense_block(d, layout, a, b):
    off = layout.offsets
    s = layout.block_sizes
    return d[off[a]:off[a] + s[a], off[b]:off[b] + s[b]]


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


# one summary line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = {}


def record(number, ok, detail, soft=False):
    status = "PASS" if ok else ("WARN" if soft else "FAIL")
    ACCEPTANCE[number] = f"criterion {number:2d}: {status}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
