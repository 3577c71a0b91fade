#!/usr/bin/env python3
"""PrismQuant vs single-covariance TC and WUTC at a list of total rates.

Prints NMSE (dB) per codec and the TC/PQ and WUTC/PQ distortion ratios.
"""

import argparse
import math

from prismquant.codec import CodecConfig
from prismquant.experiments import SynthSpec, measure, sample_moment_dictionary, synth_mixture


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--K", type=int, default=8)
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--count", type=int, default=100_000)
    ap.add_argument("--rates", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0, 3.0, 4.0])
    ap.add_argument("--tau", type=int, default=1, help="label amortization (0 = infinite)")
    args = ap.parse_args(argv)

    tau = args.tau or None
    d, data = synth_mixture(SynthSpec(K=args.K, n=args.n, seed=args.seed, sample_count=args.count))
    tc = sample_moment_dictionary(data.samples)
    db = lambda v: 10 * math.log10(v)
    print(f"{'rate':>6} {'pq bpd':>8} {'pq dB':>8} {'tc dB':>8} {'wutc dB':>8} {'tc/pq dB':>9} {'wutc/pq dB':>11}")
    for r in args.rates:
        bp, _, ep = measure(data.samples, d, CodecConfig("prismquant-map", total_rate=r, tau=tau))
        _, _, et = measure(data.samples, tc, CodecConfig("tc-single", total_rate=r, tau=tau))
        _, _, ew = measure(data.samples, d, CodecConfig("wutc", total_rate=r, tau=tau))
        print(
            f"{r:6.2f} {bp.bits_per_dim:8.4f} {db(ep):8.3f} {db(et):8.3f} {db(ew):8.3f} "
            f"{db(et / ep):9.3f} {db(ew / ep):11.3f}"
        )


if __name__ == "__main__":
    main()
