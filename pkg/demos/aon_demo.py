"""All-or-nothing: a uniform solution's overlap with the truth as c crosses 1/ln 2."""

from __future__ import annotations

from gtlab.recovery import aon_experiment

summary, _ = aon_experiment(0.3, [0.5, 1.0, 1.2, 1.44, 1.7, 2.0, 3.0], 60, 60, rng=0)
for row in summary:
    bar = "#" * int(40 * row["mean_overlap"])
    print(f"c={row['c']:4.2f} overlap={row['mean_overlap']:.3f} {bar}")
