"""Command-line driver.

Every subcommand prints a single JSON summary line on stdout. Errors from
the library exit with status 2 and a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import ratealloc
from .codec import MODES, Bitstream, CodecConfig, decode_stream, encode_stream, prune_dictionary
from .dataset import partition_dataset, read_dataset
from .errors import InvalidInputError, PrismQuantError
from .experiments import CURVES, SweepSpec, SynthSpec, nmse, rd_sweep, synth_mixture, write_csv
from .gmm import EmConfig, LabeledSamples, MixtureDictionary, fit_em_trace, map_error_union_bound


def _tau(text: str) -> int | None:
    if text.lower() in ("inf", "infinity", "0"):
        return None
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("tau must be a positive integer or 'inf'")
    return value


def _levels(text: str) -> np.ndarray:
    """``lo:hi:count`` (log-spaced) or a comma-separated list."""
    if ":" in text:
        lo, hi, count = text.split(":")
        return np.logspace(math.log10(float(lo)), math.log10(float(hi)), int(count))
    return np.array([float(v) for v in text.split(",")])


def _load_samples(path) -> np.ndarray:
    x = np.load(path)
    if x.ndim != 2:
        raise InvalidInputError(f"{path}: expected an m x n sample array, got shape {x.shape}")
    return x.astype(np.float64, copy=False)


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def cmd_synth(args) -> dict:
    spec = SynthSpec(
        K=args.K,
        n=args.n,
        seed=args.seed,
        sample_count=args.count,
        variance_range=tuple(args.variance_range),
        eigenvalue_draw=args.eigenvalue_draw,
    )
    d, data = synth_mixture(spec)
    d.save(args.dict)
    np.save(args.samples, data.samples)
    np.save(args.labels, data.labels)
    return {
        "command": "synth",
        "K": d.K,
        "n": d.n,
        "samples": len(data),
        "checksum": f"{d.checksum:016x}",
        "label_entropy_bits": ratealloc.label_entropy(d.priors),
    }


def cmd_fit(args) -> dict:
    x = _load_samples(args.samples)
    cfg = EmConfig(max_iters=args.max_iters, loglik_rel_tol=args.tol, seed=args.seed, restarts=args.restarts)
    d, trace = fit_em_trace(x, args.K, cfg)
    d.save(args.dict)
    if args.json:
        Path(args.json).write_text(d.to_json())
    return {
        "command": "fit",
        "K": d.K,
        "n": d.n,
        "iterations": len(trace.loglik),
        "avg_loglik": trace.loglik[-1],
        "splits": len(trace.splits),
        "converged": trace.converged,
        "checksum": f"{d.checksum:016x}",
    }


def cmd_ingest(args) -> dict:
    records = read_dataset(args.input)
    part = partition_dataset(records, args.n)
    np.save(args.out, part.blocks)
    meta = {
        "record_count": part.record_count,
        "record_length": part.record_length,
        "complex_valued": part.complex_valued,
        "n": part.n,
        "blocks_per_record": part.blocks_per_record,
        "padding": part.padding,
    }
    Path(str(args.out) + ".json").write_text(json.dumps(meta, sort_keys=True))
    return {"command": "ingest", "blocks": int(part.blocks.shape[0]), **meta}


def cmd_encode(args) -> dict:
    d = MixtureDictionary.load(args.dict)
    x = _load_samples(args.samples)
    labels = np.load(args.labels) if args.labels else None
    if (args.rate is None) == (args.level is None):
        raise InvalidInputError("give exactly one of --rate and --level")
    cfg = CodecConfig(args.mode, total_rate=args.rate, tau=args.tau, level=args.level)
    bs = encode_stream(x, d, cfg, labels=labels)
    blob = bs.to_bytes()
    Path(args.out).write_bytes(blob)
    return {
        "command": "encode",
        "mode": bs.mode,
        "vectors": bs.count,
        "bytes": len(blob),
        "total_rate": bs.total_rate,
        "level": bs.level,
        "bits_per_dim": bs.bits_per_dim,
        "label_bits_per_dim": bs.label_bits_per_dim,
        "coef_bits_per_dim": bs.coef_bits_per_dim,
        "nmse": nmse(x, bs.reconstruction),
    }


def cmd_decode(args) -> dict:
    d = MixtureDictionary.load(args.dict)
    bs = Bitstream.from_bytes(Path(args.input).read_bytes())
    xhat = decode_stream(bs, d)
    np.save(args.out, xhat)
    out = {"command": "decode", "mode": bs.mode, "vectors": bs.count, "bits_per_dim": bs.bits_per_dim}
    if args.reference:
        out["nmse"] = nmse(_load_samples(args.reference), xhat)
    return out


def cmd_bounds(args) -> dict:
    d = MixtureDictionary.load(args.dict)
    ent = ratealloc.entropy_terms(d)
    power = d.signal_power()
    rows = []
    for mu in _levels(args.levels):
        sw = ratealloc.sandwich(d, float(mu))
        rows.append({"mu": float(mu), "r_cond": sw.r_cond, "r_upper": sw.r_upper, "nmse": sw.distortion / power})
    out = {
        "command": "bounds",
        "label_rate": ratealloc.label_entropy(d.priors) / d.n,
        "log2K_over_n": math.log2(d.K) / d.n,
        "h_cond_bits": ent.h_cond,
        "h_label_bits": ent.h_label,
        "map_error_bound": map_error_union_bound(d),
        "points": rows,
    }
    if args.labels:
        lab = np.load(args.labels)
        freq = np.bincount(lab, minlength=d.K) / lab.size
        out["empirical_label_entropy_bits"] = ratealloc.label_entropy(freq)
    return out


def cmd_sweep(args) -> dict:
    d = MixtureDictionary.load(args.dict)
    x = _load_samples(args.samples)
    labels = np.load(args.labels) if args.labels else None
    sweep = SweepSpec(levels=_levels(args.levels), curves=tuple(args.curves), tau=args.tau)
    points = rd_sweep(d, LabeledSamples(x, labels), sweep)
    with open(args.out, "w", newline="") as fh:
        write_csv(points, fh)
    return {"command": "sweep", "rows": len(points), "curves": list(sweep.curves), "out": str(args.out)}


def cmd_prune(args) -> dict:
    d = MixtureDictionary.load(args.dict)
    p = prune_dictionary(d, args.level)
    return {
        "command": "prune",
        "level": p.level,
        "active_counts": [int(v) for v in p.active_counts],
        "memory_ratio": p.memory_ratio,
    }


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="prismquant", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="draw a synthetic mixture and samples")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=100_000)
    p.add_argument("--variance-range", type=float, nargs=2, default=(0.1, 10.0), metavar=("LO", "HI"))
    p.add_argument("--eigenvalue-draw", choices=("uniform", "log-uniform"), default="uniform")
    p.add_argument("--dict", required=True, help="output PQDICT file")
    p.add_argument("--samples", required=True, help="output .npy samples")
    p.add_argument("--labels", required=True, help="output .npy oracle labels")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit a mixture dictionary with EM")
    p.add_argument("--samples", required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--dict", required=True, help="output PQDICT file")
    p.add_argument("--json", help="also write a JSON export")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("ingest", help="partition a PQDATA1 file into real blocks")
    p.add_argument("--input", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True, help="output .npy blocks (metadata goes to <out>.json)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("encode", help="encode samples into a PQBS1 bitstream")
    p.add_argument("--samples", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--mode", choices=MODES, default="prismquant-map")
    p.add_argument("--rate", type=float, help="total rate in bits/dim")
    p.add_argument("--level", type=float, help="pin the water level instead of a rate")
    p.add_argument("--tau", type=_tau, default=1, help="label amortization window (or 'inf')")
    p.add_argument("--labels", help="oracle labels (.npy) for genie mode")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a PQBS1 bitstream")
    p.add_argument("--input", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True, help="output .npy reconstruction")
    p.add_argument("--reference", help="original samples, to report NMSE")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("bounds", help="sandwich bounds and separability summary")
    p.add_argument("--dict", required=True)
    p.add_argument("--levels", default="1e-5:1e1:50")
    p.add_argument("--labels", help="labels (.npy) for the empirical label entropy")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("sweep", help="rate-distortion sweep to CSV")
    p.add_argument("--dict", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--labels")
    p.add_argument("--levels", default="1e-5:1e1:50")
    p.add_argument("--curves", nargs="+", choices=CURVES, default=["theory-lower", "theory-upper", "genie", "map"])
    p.add_argument("--tau", type=_tau, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("prune", help="report the modes kept at a water level")
    p.add_argument("--dict", required=True)
    p.add_argument("--level", type=float, required=True)
    p.set_defaults(func=cmd_prune)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _emit(args.func(args))
    except (PrismQuantError, OSError, ValueError) as exc:
        print(f"prismquant {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
