"""Where recovery and detection become possible or tractable, by design."""

from __future__ import annotations

from gtlab.thresholds import THETA_STAR, c_alg, c_inf, c_ld, classify_region

print(f"recovery possible above c = {c_inf():.9f}, easy above c = {c_alg():.9f}")
print(f"Bernoulli low-degree curve changes formula at theta = {THETA_STAR:.7f}\n")
print("theta   c_ld(cc)   c_ld(bern)")
for theta in (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7):
    print(f"{theta:5.2f}  {c_ld(theta, 'cc'):9.5f}  {c_ld(theta, 'bern'):10.5f}")

print("\nregion of a few points for the constant-column design:")
for theta, c in ((0.2, 1.6), (0.2, 1.3), (0.5, 1.6), (0.5, 1.0)):
    print(f"  theta={theta} c={c}: {classify_region(theta, c, 'cc')}")
