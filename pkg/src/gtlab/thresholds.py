"""Closed-form thresholds for the test budget constant c and the phase classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from .numerics import lambert_w0_branch

LN2 = math.log(2.0)

# breakpoint between the Lambert-W branch and the rational branch of the Bernoulli curve
THETA_STAR = 0.5 * (1.0 - 1.0 / (4.0 * LN2 - 1.0))

DESIGNS = ("constant_column", "bernoulli")


def normalize_design(design: str) -> str:
    d = design.lower().replace("-", "_")
    if d in ("cc", "constant_column"):
        return "constant_column"
    if d in ("bern", "bernoulli"):
        return "bernoulli"
    raise ValueError(f"unknown design {design!r}")


def c_inf() -> float:
    """Information-theoretic recovery constant 1/ln 2."""
    return 1.0 / LN2


def c_alg() -> float:
    """Constant above which COMP-style recovery is efficient, 1/ln^2 2."""
    return 1.0 / LN2**2


def c_ld_cc(theta: float) -> float:
    """Low-degree detection threshold for the constant-column design."""
    if theta < 2.0 / 3.0:
        return (1.0 - theta / (2.0 * (1.0 - theta))) / LN2**2
    return 0.0


def _c_ld_bern_lambert(theta: float) -> float:
    # argument is -exp(-1 - a ln2) = -(1 - s)/e with s = 1 - 2^{-a}
    s = -math.expm1(-(theta / (1.0 - theta)) * LN2)
    return -lambert_w0_branch(s) / LN2**2


def _c_ld_bern_rational(theta: float) -> float:
    return (1.0 - 2.0 * theta) / ((1.0 - theta) * LN2)


def c_ld_bern(theta: float) -> float:
    """Low-degree detection threshold for the Bernoulli design."""
    if theta < THETA_STAR:
        return _c_ld_bern_lambert(theta)
    if theta < 0.5:
        return _c_ld_bern_rational(theta)
    return 0.0


def c_ld(theta: float, design: str) -> float:
    if normalize_design(design) == "constant_column":
        return c_ld_cc(theta)
    return c_ld_bern(theta)


def tau(c: float) -> float:
    """Exponent function whose comparison with theta/(1-theta) decides low-degree hardness."""
    if c <= 1.0 / (2.0 * LN2**2):
        return 1.0 - c * LN2
    if c < 1.0 / LN2**2:
        return c * LN2 - (1.0 + math.log(c * LN2**2)) / LN2
    return 0.0


def ld_equivalence_check(theta: float, c: float) -> bool:
    """True when the c > c_LD and tau(c) < theta/(1-theta) criteria agree."""
    return (c > c_ld_bern(theta)) == (tau(c) < theta / (1.0 - theta))


@dataclass(frozen=True)
class PhasePoint:
    theta: float
    c: float
    design: str
    region: str
    on_boundary: bool = False


def classify_region(theta: float, c: float, design: str) -> str:
    return classify_point(theta, c, design).region


def classify_point(theta: float, c: float, design: str) -> PhasePoint:
    """Region of the (theta, c) plane.

    Curves are treated as exact. A point sitting exactly on c_inf or on the
    low-degree curve gets the label the inequalities below produce, and
    ``on_boundary`` is set so callers can tell.
    """
    design = normalize_design(design)
    ci, ca, cl = c_inf(), c_alg(), c_ld(theta, design)
    if c > ca:
        region = "easy"
    elif c > ci:
        region = "I" if c < cl else "II"
    else:
        region = "III" if c >= cl else "IV"
    tie = c == ci or c == cl or c == ca
    return PhasePoint(theta, c, design, region, tie)


def phase_diagram(design: str, theta_grid: Iterable[float], c_grid: Iterable[float] | None = None) -> list[dict]:
    """Rows of threshold values per theta, one row per (theta, c) pair.

    With no c grid the region column is omitted.
    """
    design = normalize_design(design)
    thetas = list(theta_grid)
    cs = list(c_grid) if c_grid is not None else [None]
    if not thetas or not cs:
        raise ValueError("grids must be nonempty")
    rows = []
    for th in thetas:
        base = {"theta": th, "c_inf": c_inf(), "c_alg": c_alg(), "c_ld": c_ld(th, design)}
        for c in cs:
            row = dict(base)
            if c is not None:
                pt = classify_point(th, c, design)
                row.update(c=c, region=pt.region, on_boundary=pt.on_boundary)
            rows.append(row)
    return rows
