"""Closed-form critical points and per-term exponential rates.

The contour integrands split into three exponent families (left tangent,
right tangent, geometric walk); their critical points on (0,2) have exact
expressions and clean geometric meanings: 1 -+ slope of the tangent or
chord, with the critical value an entropy integral along that segment.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

from .curves import bernoulli_entropy

__all__ = [
    "CriticalData",
    "critical_data",
    "phi_on_circle",
    "term_rate",
    "dominant_rate",
    "tangency_candidates",
]


def _phi_left(z, t, s, d):
    return s * cmath.log(2 - z) - d * cmath.log(z) + 0.5 * t * (1 - z)


def _phi_right(z, t, s, d):
    return -s * cmath.log(z) + d * cmath.log(2 - z) + 0.5 * t * (1 - z)


def _phi_rw(z, s, d):
    return s * cmath.log(2 - z) + d * cmath.log(z)


def z_star_left(t, s, d):
    return (t + s - d - math.sqrt((t + s - d) ** 2 + 4 * t * d)) / t


def z_star_right(t, s, d):
    return (t - s + d - math.sqrt((t - s + d) ** 2 + 4 * t * s)) / t


def z_star_rw(s, d):
    return 2.0 * d / (s + d)


@dataclass(frozen=True)
class CriticalData:
    """Critical point, critical value, and the geometric encoding of one factor."""

    kind: str
    z_star: float
    phi_star: float
    slope: float
    tangency_x: float | None = None

    def __post_init__(self):
        if not (0.0 < self.z_star < 2.0):
            raise ValueError(f"critical point {self.z_star} outside (0,2)")


def critical_data(kind, t, s, d) -> CriticalData:
    """Critical point / value of the (left | right | rw) exponent at (t, s, d).

    (s, d) are relative coordinates: pin minus anchor for left/right kinds,
    increments between consecutive pins for the rw kind.  left/right require
    the relative (x, a) = (s-d, s+d) to sit strictly below the wedge and on
    or above the time-t parabola; rw requires s > 0, d > 0.
    """
    t = float(t)
    s = float(s)
    d = float(d)
    if kind == "rw":
        if s <= 0 or d <= 0:
            raise ValueError("rw kind needs s > 0 and d > 0")
        z = z_star_rw(s, d)
        phi = (_phi_rw(z, s, d)).real
        slope = 1.0 - z
        return CriticalData("rw", z, phi, slope)
    x = s - d
    a = s + d
    if not (a < -abs(x) + 1e-12):
        raise ValueError("point must lie strictly below the wedge apex line")
    cap = -t / 2 - x * x / (2 * t) if abs(x) <= t else -abs(x)
    if a < cap - 1e-9:
        raise ValueError("point must lie on or above the time-t parabola")
    if kind == "left":
        z = z_star_left(t, s, d)
        phi = (_phi_left(z, t, s, d)).real
        slope = 1.0 - z
        xt = -t * slope  # tangency abscissa relative to the anchor
        return CriticalData("left", z, phi, slope, xt)
    if kind == "right":
        z = z_star_right(t, s, d)
        phi = (_phi_right(z, t, s, d)).real
        slope = z - 1.0
        xt = -t * slope
        return CriticalData("right", z, phi, slope, xt)
    raise ValueError(f"unknown kind {kind!r}")


def phi_on_circle(kind, t, s, d, z_star, theta):
    """Re Phi(z_star e^{i theta}) for saddle-profile checks."""
    z = z_star * cmath.exp(1j * theta)
    if kind == "left":
        return _phi_left(z, t, s, d).real
    if kind == "right":
        return _phi_right(z, t, s, d).real
    return _phi_rw(z, s, d).real


# ---------------------------------------------------------------------------
# per-term rates


def _phi_isle(scene, k, kp, word):
    """Phi_star of a single isle word(k,k'): left + rw chain + right pieces."""
    t = scene.t
    if not word:
        if k >= kp:
            raise ValueError("empty isle needs k < k'")
        sk, dk = scene.anchor_sd(k).s, scene.anchor_sd(k).d
        skp, dkp = scene.anchor_sd(kp).s, scene.anchor_sd(kp).d
        return critical_data("rw", t, skp - sk, dk - dkp).phi_star
    sd = [scene.pin_sd(j) for j in word]
    ak = scene.anchor_sd(k)
    akp = scene.anchor_sd(kp)
    total = critical_data("left", t, sd[0].s - ak.s, sd[0].d - ak.d).phi_star
    for p, q in zip(sd[:-1], sd[1:]):
        total += critical_data("rw", t, q.s - p.s, p.d - q.d).phi_star
    total += critical_data("right", t, sd[-1].s - akp.s, sd[-1].d - akp.d).phi_star
    return total


def term_rate(scene, term) -> float:
    """Exponential rate Phi_Sigma of a preferred generic term.

    term is a words.GenericTerm (product of cyclic traces of isles); each
    isle contributes its closed-form Phi_star, summed over the whole term.
    Raises ValueError on non-preferred terms (the closed-curve bookkeeping
    is only defined for those).
    """
    if not term.preferred:
        raise ValueError("term rate is defined for preferred terms only")
    total = 0.0
    for trace in term.traces:
        for isle in trace.isles:
            total += _phi_isle(scene, isle.k, isle.kp, isle.word)
    return total


def dominant_rate(scene, max_ops=None):
    """Minimize term_rate over preferred non-degenerate terms.

    Returns {"rate", "argmin_terms", "gap"}; ties within 1e-12 are all
    reported.  max_ops defaults to m + 2.
    """
    from .words import term_enumerate

    if max_ops is None:
        max_ops = scene.m + 2
    if max_ops < scene.m:
        raise ValueError("max_ops must be at least m")
    terms = [
        g
        for g in term_enumerate(scene, max_ops)
        if g.preferred and not g.degenerate
    ]
    if not terms:
        raise ValueError("no preferred non-degenerate terms enumerated")
    rated = sorted(((term_rate(scene, g), i) for i, g in enumerate(terms)))
    best = rated[0][0]
    argmin = [terms[i] for (r, i) in rated if r <= best + 1e-12]
    gap = min((r for (r, i) in rated if r > best + 1e-12), default=math.inf) - best
    return {"rate": best, "argmin_terms": argmin, "gap": gap}


def tangency_candidates(g, t, pins):
    """Tangency abscissae of each pin against wedges anchored on the curve g.

    Used by rate_profile to seed anchor candidates: for a pin (x, a), the
    left/right tangency points of the optimal wedge sit where the tangent
    line from the pin touches p[xhat, g(xhat)](t); solving the fixed point
    xhat ~ pin abscissa gives good anchor guesses, so we simply return the
    pin abscissae and their t-shifted neighbours clipped to finite slope.
    """
    out = []
    for (x, a) in pins:
        out.append(round(float(x), 12))
        for dx in (-t, t):
            out.append(round(float(x + dx), 12))
    return out
