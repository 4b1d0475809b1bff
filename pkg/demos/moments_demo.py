"""First-moment exponent and the second-moment margin."""

from __future__ import annotations

from gtlab.designs import DesignParams
from gtlab.moments import second_moment_margin, second_moment_table, solve_first_moment
from gtlab.thresholds import LN2

print("first moment at theta=0.3, c=1 (limit (1-ln2)/ln2 ="
      f" {(1 - LN2) / LN2:.4f}):")
for exp10 in (6, 9, 12, 18):
    p = DesignParams.from_scaling(10**exp10, 0.3, 1.0, "cc")
    N, M = p.center_dimensions()
    s = solve_first_moment(N, M, p.k, p.delta)
    print(f"  n=1e{exp10}: exponent={s.exponent_per_kDelta:.4f} minus 1/Delta={s.exponent_per_kDelta - 1 / p.delta:.4f}")

print("\nsecond-moment margin (bound minus max F):")
for c in (0.2, 0.6, 1.0, 1.4):
    print(f"  c={c}: {second_moment_margin(c):.5f}")
print("\nF along the overlap at c=1:")
for row in second_moment_table(1.0, [0.1, 0.3, 0.5, 0.7, 0.9, 0.99]):
    print(f"  alpha={row.alpha:.2f} F={row.F:.4f} bound={row.bound:.4f} ({row.source})")
