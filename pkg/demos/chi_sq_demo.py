"""Chi-squared divergence between planted and null Bernoulli graphs."""

from __future__ import annotations

import math

from gtlab.moments import analytic_chi_sq, bern_chi_sq, exact_chi_sq_oracle

print("tiny instance N=4, M=3, k=2, q=0.5:")
print(f"  enumeration {exact_chi_sq_oracle('bern', 4, 3, 2, 0.5):.12f}")
print(f"  overlap sum {analytic_chi_sq(4, 3, 2, 0.5):.12f}\n")
for c, label in ((0.5, "hard"), (1.5, "easy")):
    for n in (10**3, 10**4, 10**5):
        led = bern_chi_sq(0.3, c, math.inf, 1.0, n)
        print(f"{label} c={c} n={n:>6d}: low-overlap sum={led.T_low:.4f} total={led.total:.4g}")
