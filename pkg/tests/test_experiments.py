import io
import math

import numpy as np
import pytest

from prismquant import ratealloc as ra
from prismquant.errors import InvalidInputError
from prismquant.experiments import (
    SweepSpec,
    SynthSpec,
    csv_text,
    curve,
    map_error_summary,
    rate_at_nmse,
    rd_sweep,
    read_csv,
    synth_mixture,
    theory_upper_rate,
)


@pytest.fixture(scope="module")
def small():
    return synth_mixture(SynthSpec(K=3, n=4, seed=5, sample_count=5000))


def test_synth_protocol():
    d, data = synth_mixture(SynthSpec(K=6, n=5, seed=2, sample_count=60_000))
    assert np.all((d.eigvals >= 0.1 - 1e-9) & (d.eigvals <= 10.0 + 1e-9))
    assert np.all(d.means == 0)
    freq = np.bincount(data.labels, minlength=6) / len(data)
    assert np.all(np.abs(freq - d.priors) <= 3 * np.sqrt(d.priors * (1 - d.priors) / len(data)))
    d2, data2 = synth_mixture(SynthSpec(K=6, n=5, seed=2, sample_count=60_000))
    assert d2.to_bytes() == d.to_bytes() and np.array_equal(data2.samples, data.samples)
    one, _ = synth_mixture(SynthSpec(K=1, n=3, seed=0, sample_count=10))
    assert one.K == 1 and not np.allclose(one.eigvecs[0], np.eye(3))
    lu, _ = synth_mixture(SynthSpec(K=2, n=50, seed=0, sample_count=10, eigenvalue_draw="log-uniform"))
    assert lu.eigvals.min() >= 0.1 - 1e-9
    with pytest.raises(InvalidInputError):
        SynthSpec(K=2, n=2, variance_range=(1.0, 0.5))


def test_sweep_structure(small):
    d, data = small
    sweep = SweepSpec(levels=np.logspace(-3, 1, 8), curves=("theory-lower", "theory-upper", "genie", "map", "tc", "wutc"))
    pts = rd_sweep(d, data, sweep)
    assert len(pts) == 6 * 8
    names = [p.curve for p in pts]
    assert names == sorted(names, key=["theory-lower", "theory-upper", "genie", "map", "tc", "wutc"].index)
    _, r_lo, d_lo = curve(pts, "theory-lower")
    _, r_up, _ = curve(pts, "theory-upper")
    assert np.allclose(r_up - r_lo, ra.label_entropy(d.priors) / d.n, atol=1e-12, rtol=0)
    for name in ("theory-lower", "genie", "map"):
        _, r, e = curve(pts, name)
        assert np.all(np.diff(r) <= 1e-12) and np.all(np.diff(e) >= -1e-12)
    # the largest level submerges every mode
    assert r_lo[-1] == 0 and d_lo[-1] == pytest.approx(1.0)
    m = [p for p in pts if p.curve == "map"][0]
    assert m.map_disagreement <= map_error_summary(d, data)["union_bound"]


def test_csv_roundtrip_and_determinism(small):
    d, data = small
    sweep = SweepSpec(levels=np.array([0.05, 0.5, 5.0]))
    a, b = csv_text(rd_sweep(d, data, sweep)), csv_text(rd_sweep(d, data, sweep))
    assert a == b
    assert a.splitlines()[0] == "curve,mu,rate_bits_per_dim,nmse,label_bits_per_dim,coef_bits_per_dim,map_disagreement"
    back = read_csv(io.StringIO(a))
    assert csv_text(back) == a


def test_sweep_spec_validation():
    with pytest.raises(InvalidInputError):
        SweepSpec(levels=np.array([1.0, 0.5]))
    with pytest.raises(InvalidInputError):
        SweepSpec(curves=("genie", "bogus"))
    assert SweepSpec().levels.size == 50


def test_rate_interpolation(small):
    d, _ = small
    mu = 0.3
    r, dist = ra.evaluate(ra.pooled_spectrum(d), mu)
    target = dist / d.signal_power()
    assert theory_upper_rate(d, target) == pytest.approx(r + ra.label_entropy(d.priors) / d.n, abs=1e-9)
    rates = np.array([0.0, 1.0, 2.0])
    nm = np.array([1.0, 0.25, 0.0625])
    assert rate_at_nmse(rates, nm, 0.125) == pytest.approx(1.5)
    assert rate_at_nmse(rates, nm, 0.5) == pytest.approx(0.5)
    assert math.isfinite(map_error_summary(d, synth_mixture(SynthSpec(K=3, n=4, seed=5, sample_count=100))[1])["std_error"])
