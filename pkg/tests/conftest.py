from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import settings

from bbeltrami import GlobalTorusField, TrigPolynomial

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by the test")
    config._acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    store = item.config._acceptance
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    if rep.failed:
        store[n] = ("FAIL", title, detail)
    elif rep.when == "call" and n not in store:
        store[n] = ("PASS", title, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = getattr(config, "_acceptance", {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        status, title, detail = store[n]
        line = f"criterion {n}: {status}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def babc() -> GlobalTorusField:
    return GlobalTorusField.babc(1.0, 2.0)


# Critical points of H = -2 sin y - cos x on {z = 0} with their values.
BABC_POINTS = {
    (0.0, math.pi / 2): -3.0,
    (math.pi, math.pi / 2): -1.0,
    (0.0, 3 * math.pi / 2): 1.0,
    (math.pi, 3 * math.pi / 2): 3.0,
}


def sum_two_squares_count(mu: int) -> int:
    """Lattice points with k1^2 + k2^2 = mu by brute force over the square."""
    r = math.isqrt(mu)
    return sum(1 for a in range(-r, r + 1) for b in range(-r, r + 1) if a * a + b * b == mu)


def random_poly(rng: np.random.Generator, kmax: int = 3, nterms: int = 4) -> TrigPolynomial:
    terms = {}
    for _ in range(nterms):
        k = (int(rng.integers(-kmax, kmax + 1)), int(rng.integers(-kmax, kmax + 1)))
        terms[(*k, str(rng.choice(["cos", "sin"])))] = float(rng.normal())
    return TrigPolynomial(terms)
