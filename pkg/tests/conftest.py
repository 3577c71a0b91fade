import numpy as np
import pytest

from prismquant.gmm import MixtureDictionary


def random_spd(rng, n, lo=0.1, hi=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * rng.uniform(lo, hi, n)) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def dyadic_dict():
    """K=4, n=2 mixture with priors (1/2, 1/4, 1/8, 1/8)."""
    rng = np.random.default_rng(3)
    covs = np.stack([random_spd(rng, 2) for _ in range(4)])
    means = rng.normal(scale=4.0, size=(4, 2))
    return MixtureDictionary.from_params([0.5, 0.25, 0.125, 0.125], means, covs)


ACCEPTANCE_LINES = {}


@pytest.fixture
def report():
    """Record the one-line verdict of an acceptance criterion."""

    def _report(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
