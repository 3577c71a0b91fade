"""Acceptance checks; each test prints one PASS/FAIL line (also summarized at the end of the run)."""

import hashlib
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from prismquant import ratealloc as ra
from prismquant.codec import CodecConfig, decode_stream, encode_stream, prune_dictionary
from prismquant.coding import build_label_code, entropy_bits
from prismquant.experiments import (
    SweepSpec,
    SynthSpec,
    curve,
    map_error_summary,
    measure,
    rate_at_nmse,
    rd_sweep,
    sample_moment_dictionary,
    synth_mixture,
    theory_upper_rate,
)
from prismquant.gmm import EmConfig, MixtureDictionary, fit_em_trace, sample
from prismquant.quantizer import design_ecsq

from oracles import brute_force_min_rate, kkt_instances

LEVELS = np.logspace(-5, 1, 50)


@pytest.fixture(scope="module")
def k8n32():
    return synth_mixture(SynthSpec(K=8, n=32, seed=7, sample_count=100_000))


def test_sandwich_identity(report):
    t0 = time.perf_counter()
    dicts = [synth_mixture(SynthSpec(K=k, n=n, seed=s, sample_count=10))[0] for k, n, s in [(1, 3, 0), (2, 1, 1), (8, 32, 7), (16, 4, 2), (128, 2, 3)]]
    x = sample(dicts[1], 500, seed=0).samples
    dicts.append(fit_em_trace(x, 2, EmConfig(restarts=1, max_iters=30))[0])
    worst_id, worst_bound = 0.0, -math.inf
    for d in dicts:
        h = ra.label_entropy(d.priors) / d.n
        for mu in LEVELS:
            b = ra.sandwich(d, mu)
            worst_id = max(worst_id, abs((b.r_upper - b.r_cond) - h))
            worst_bound = max(worst_bound, b.r_upper - b.r_cond - math.log2(d.K) / d.n)
    elapsed = time.perf_counter() - t0
    ok = worst_id <= 1e-12 and worst_bound <= 1e-15 and elapsed < 1.0
    report(1, ok, f"max |gap - H/n| = {worst_id:.1e}, max (gap - log2K/n) = {worst_bound:.2e}, {elapsed:.2f}s")
    assert ok


def test_global_level_optimality(report):
    t0 = time.perf_counter()
    worst = 0.0
    cases = kkt_instances()
    for priors, lams, dist in cases:
        s = ra._spectrum_from_arrays(priors, lams)
        rate = ra.evaluate(s, ra.solve_level_for_distortion(s, dist))[0]
        brute = brute_force_min_rate(priors, lams, dist, grid=61 if len(priors) == 3 else 401)
        worst = max(worst, abs(rate - brute))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 60
    report(2, ok, f"{len(cases)} instances, max |R_global - R_bruteforce| = {worst:.1e} bits/dim, {elapsed:.1f}s")
    assert ok


def test_wutc_dominance(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    violations, non_strict, checked = 0, 0, 0
    for m in range(20):
        k, n = int(rng.integers(2, 9)), int(rng.integers(2, 17))
        d, _ = synth_mixture(SynthSpec(K=k, n=n, seed=100 + m, sample_count=1))
        spec = ra.pooled_spectrum(d)
        strict = False
        for mu in LEVELS:
            rate, d_pq = ra.evaluate(spec, mu)
            d_wu = ra.wutc_allocation(d, rate).total_distortion
            checked += 1
            if d_pq > d_wu * (1 + 1e-12):
                violations += 1
            strict |= d_pq < d_wu * (1 - 1e-9)
        non_strict += not strict
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and non_strict == 0 and elapsed < 300
    report(3, ok, f"20 mixtures, {checked} rates: {violations} violations, {non_strict} mixtures without strict gain, {elapsed:.1f}s")
    assert ok


def test_huffman_anchor(report):
    t0 = time.perf_counter()
    dyadic = [0.5, 0.25, 0.125, 0.125]
    anchor = build_label_code(dyadic).expected_length(dyadic)
    rng = np.random.default_rng(0)
    bad = 0
    for _ in range(500):
        p = rng.dirichlet(np.full(int(rng.integers(1, 65)), float(rng.uniform(0.05, 5))))
        p = np.maximum(p, 1e-12)
        p /= p.sum()
        h, length = entropy_bits(p), build_label_code(p).expected_length(p)
        bad += not (h - 1e-12 <= length < h + 1)
    elapsed = time.perf_counter() - t0
    ok = anchor == 1.75 and bad == 0 and elapsed < 1.0
    report(4, ok, f"dyadic L = {anchor!r} bits; {bad}/500 random priors outside [H, H+1); {elapsed:.2f}s")
    assert ok


def test_ecsq_shaping(report):
    t0 = time.perf_counter()
    gaps = {}
    for rule in ("centroid", "midpoint"):
        gaps[rule] = [r - 0.5 * math.log2(1.0 / design_ecsq(1.0, r, rule).expected_distortion) for r in (4, 5, 6)]
    elapsed = time.perf_counter() - t0
    ok = all(abs(g - 0.255) <= 0.03 for g in gaps["centroid"]) and elapsed < 60
    detail = ", ".join(f"{rule} " + "/".join(f"{g:.4f}" for g in v) for rule, v in gaps.items())
    report(5, ok, f"gap at r=4/5/6: {detail} bits (target 0.255 +/- 0.03)")
    assert ok


def test_operational_tracking(report, k8n32):
    t0 = time.perf_counter()
    d, data = k8n32
    pts = rd_sweep(d, data, SweepSpec(levels=LEVELS, curves=("genie", "map")))
    _, rg, eg = curve(pts, "genie")
    _, rm, em = curve(pts, "map")
    sel = (eg >= 0.01) & (eg <= 0.5)
    gaps = rg[sel] - np.array([theory_upper_rate(d, e) for e in eg[sel]])
    # also at the interval ends, by interpolating the genie curve
    ends = [rate_at_nmse(rg, eg, e) - theory_upper_rate(d, e) for e in (0.01, 0.5)]
    genie_gap = max(np.max(np.abs(gaps)), *map(abs, ends))
    selm = (em >= 0.01) & (em <= 0.5)
    map_gap = max(abs(r - rate_at_nmse(rg, eg, e)) for r, e in zip(rm[selm], em[selm]))
    elapsed = time.perf_counter() - t0
    covered = eg.min() <= 0.01 and eg.max() >= 0.5
    ok = covered and genie_gap <= 0.3 and map_gap <= 0.05 and elapsed < 600
    report(
        6,
        ok,
        f"{sel.sum()} genie points in D in [0.01,0.5]: max |genie - theory-upper| = {genie_gap:.4f} bits/dim; "
        f"max |map - genie| = {map_gap:.4f}; {elapsed:.0f}s",
    )
    assert ok


def test_map_error_bound(report):
    t0 = time.perf_counter()
    configs = [(2, 2, 0), (3, 1, 1), (4, 4, 2), (8, 8, 3), (8, 16, 4), (8, 32, 7), (16, 8, 5), (5, 3, 6)]
    worst, lines = -math.inf, []
    for k, n, s in configs:
        d, data = synth_mixture(SynthSpec(K=k, n=n, seed=s, sample_count=20_000))
        m = map_error_summary(d, data)
        worst = max(worst, m["empirical"] - m["union_bound"] - 3 * m["std_error"])
        lines.append(f"{m['empirical']:.3f}<={m['union_bound']:.3f}")
    # separated mixtures with non-zero means, where the bound is informative
    for s in range(4):
        rng = np.random.default_rng(s)
        covs = np.stack([np.diag(rng.uniform(0.1, 10, 6)) for _ in range(4)])
        d = MixtureDictionary.from_params(np.full(4, 0.25), rng.normal(scale=3, size=(4, 6)), covs)
        m = map_error_summary(d, sample(d, 20_000, seed=s))
        worst = max(worst, m["empirical"] - m["union_bound"] - 3 * m["std_error"])
        lines.append(f"{m['empirical']:.3f}<={m['union_bound']:.3f}")
    elapsed = time.perf_counter() - t0
    ok = worst <= 0 and elapsed < 120
    report(7, ok, f"{len(lines)} configs, empirical<=bound: {' '.join(lines)}; {elapsed:.0f}s")
    assert ok


def test_em_contract(report):
    t0 = time.perf_counter()
    _, data = synth_mixture(SynthSpec(K=8, n=16, seed=3, sample_count=10_000))
    d, trace = fit_em_trace(data.samples, 8, EmConfig())
    ll = np.array(trace.loglik)
    steps = [t for t in range(1, len(ll)) if (t - 1) not in trace.splits]
    min_step = min(ll[t] - ll[t - 1] for t in steps)
    # a run in which one component is forced to collapse
    base = MixtureDictionary.from_params([0.5, 0.5], [[-5.0], [5.0]], [[[1.0]], [[1.0]]])
    x = sample(base, 5000, seed=3).samples
    init = MixtureDictionary.from_params([0.5, 0.5 - 1e-6, 1e-6], [[-5.0], [5.0], [400.0]], [[[1.0]], [[1.0]], [[0.01]]])
    dc, tc = fit_em_trace(x, 3, EmConfig(restarts=1, max_iters=50), init=init)
    elapsed = time.perf_counter() - t0
    ok = min_step >= -1e-9 and d.priors.min() >= 1e-4 and dc.priors.min() >= 1e-4 and elapsed < 120
    report(
        8,
        ok,
        f"K=8,n=16,10^4 samples: {len(ll)} iterations, min loglik step {min_step:.2e}, min prior {d.priors.min():.4f}; "
        f"collapse run: {len(tc.splits)} split(s), min prior {dc.priors.min():.4f}; {elapsed:.0f}s",
    )
    assert ok


_SUBPROCESS_ENCODE = """
import hashlib, sys
from prismquant.codec import CodecConfig, encode_stream
from prismquant.experiments import SynthSpec, synth_mixture
d, data = synth_mixture(SynthSpec(K=8, n=32, seed=7, sample_count=20000))
print(hashlib.sha256(encode_stream(data, d, CodecConfig(total_rate=1.0)).to_bytes()).hexdigest())
"""


def test_lossless_layers(report):
    t0 = time.perf_counter()
    d, data = synth_mixture(SynthSpec(K=8, n=32, seed=7, sample_count=20_000))
    failures = []
    for mode in ("prismquant-map", "prismquant-genie", "tc-single", "wutc"):
        for tau in (1, 4, None):
            for rate in (0.5, 1.0, 3.0):
                cfg = CodecConfig(mode, total_rate=rate, tau=tau)
                bs = encode_stream(data, d, cfg)
                blob = bs.to_bytes()
                if not np.array_equal(decode_stream(blob, d), bs.reconstruction):
                    failures.append(f"roundtrip {mode}/{tau}/{rate}")
                if encode_stream(data, d, cfg).to_bytes() != blob:
                    failures.append(f"repeat {mode}/{tau}/{rate}")
                if mode.startswith("prismquant"):
                    p = prune_dictionary(d, bs.level)
                    pb = encode_stream(data, p, cfg)
                    if pb.to_bytes() != blob or not np.array_equal(decode_stream(blob, p), bs.reconstruction):
                        failures.append(f"pruned {mode}/{tau}/{rate}")
    here = hashlib.sha256(encode_stream(data, d, CodecConfig(total_rate=1.0)).to_bytes()).hexdigest()
    other = subprocess.run([sys.executable, "-c", _SUBPROCESS_ENCODE], capture_output=True, text=True, check=True).stdout.strip()
    if other != here:
        failures.append("cross-process bytes differ")
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60
    report(9, ok, f"36 streams + cross-process check: {len(failures)} failures {failures[:3]}; {elapsed:.0f}s")
    assert ok


def _operational(x, d, mode, tau, nominal):
    rates, nmses = [], []
    for r in nominal:
        bs, _, e = measure(x, d, CodecConfig(mode, total_rate=r, tau=tau))
        rates.append(bs.bits_per_dim)
        nmses.append(e)
    return np.array(rates), np.array(nmses)


def _nmse_at(rates, nmses, target):
    order = np.argsort(rates)
    return float(np.exp(np.interp(target, rates[order], np.log(nmses[order]))))


def test_mixture_mismatch_gap(report, k8n32):
    t0 = time.perf_counter()
    d, data = k8n32
    x = data.samples
    tc_dict = sample_moment_dictionary(x)
    targets = np.array([0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0])
    nominal = np.concatenate([[0.2], targets, [4.2]])
    gaps = {}
    for tau in (1, None):
        rp, ep = _operational(x, d, "prismquant-map", tau, nominal)
        rt, et = _operational(x, tc_dict, "tc-single", tau, nominal)
        gaps[tau] = np.array([10 * math.log10(_nmse_at(rt, et, r) / _nmse_at(rp, ep, r)) for r in targets])
    g = gaps[1]
    exceeds = bool(np.all(g > 0))
    widening = bool(np.all(np.diff(g) >= 0))
    elapsed = time.perf_counter() - t0
    ok = exceeds and widening and elapsed < 300
    fmt = lambda v: " ".join(f"{a:g}:{b:+.3f}" for a, b in zip(targets, v))
    report(
        10,
        ok,
        f"D_TC/D_PQ in dB at matched total rate (tau=1) {fmt(g)}; exceeds everywhere={exceeds}, widening={widening} "
        f"[label-free reference, tau=inf: {fmt(gaps[None])}]; {elapsed:.0f}s",
    )
    assert ok
