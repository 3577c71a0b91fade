#!/usr/bin/env python3
"""Shaping gap of the entropy-matched uniform quantizer on N(0, 1) versus rate."""

import math

import numpy as np

from prismquant.quantizer import design_ecsq

print(f"{'rate':>5} {'step':>9} {'gap centroid':>13} {'gap midpoint':>13}")
for r in np.arange(0.5, 8.01, 0.5):
    qc, qm = design_ecsq(1.0, r, "centroid"), design_ecsq(1.0, r, "midpoint")
    gc = r - 0.5 * math.log2(1 / qc.expected_distortion)
    gm = r - 0.5 * math.log2(1 / qm.expected_distortion)
    print(f"{r:5.2f} {qc.step:9.5f} {gc:13.4f} {gm:13.4f}")
print(f"high-rate limit 0.5*log2(pi*e/6) = {0.5 * math.log2(math.pi * math.e / 6):.4f}")
