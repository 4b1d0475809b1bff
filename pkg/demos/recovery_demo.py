"""COMP and separate decoding on a full-size instance."""

from __future__ import annotations

import math

import numpy as np

from gtlab.designs import DesignParams, comp_reduce, gen_instance
from gtlab.recovery import comp_recover, separate_decoding

rng = np.random.default_rng(1)
for design in ("cc", "bernoulli"):
    for c in (1.5, 2.2, 3.0):
        p = DesignParams.from_scaling(10**5, 0.3, c, design)
        inst = gen_instance(p, rng)
        red = comp_reduce(inst)
        comp = comp_recover(inst)
        positives = int(inst.outcomes.sum())
        # separate decoding only filters anything under the Bernoulli design
        sep = separate_decoding(inst, math.ceil(1.5 * p.q * positives)).overlap if design == "bernoulli" else None
        print(f"{design:10s} c={c}: k={p.k} m={p.m} survivors={red.N} "
              f"COMP overlap={comp.overlap:.3f} separate overlap={'-' if sep is None else f'{sep:.3f}'}")
