"""Piecewise curve arithmetic for 1-Lipschitz height profiles.

Curves are stored exactly as ordered quadratic segments (lines and
parabola arcs of curvature +-1/(2t)) plus linear tails, so that entropy
integrals, envelopes, and Hopf-Lax evolutions are closed-form.  All
operations return new curves; nothing mutates in place.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Parabola",
    "PLCurve",
    "SDPoint",
    "parabola_eval",
    "parabola_curve",
    "wedge",
    "massif",
    "line_curve",
    "chord_through",
    "hopf_lax",
    "bernoulli_entropy",
    "entropy_primitive",
    "relative_entropy",
    "curve_max",
    "curve_min",
    "hypo_contains",
    "to_sd",
    "sd_to_xa",
]

BREAK_TOL = 1e-12
SLOPE_TOL = 1e-9


# ---------------------------------------------------------------------------
# basic entropy / flux functions


def bernoulli_entropy(u):
    """Return (eta, flux) for the Bernoulli entropy pair at slope u.

    eta(u) = (1+u)/2 log(1+u) + (1-u)/2 log(1-u) with 0 log 0 = 0, and
    flux(u) = -((1-u^2)/4) log((1+u)/(1-u)) + u/2, both extended by their
    limits at u = +-1.  Raises ValueError outside [-1, 1].
    """
    u = float(u)
    if abs(u) > 1.0 + 1e-12:
        raise ValueError(f"slope {u} outside [-1, 1]")
    u = max(-1.0, min(1.0, u))
    if 1.0 - abs(u) < 1e-300:
        return math.log(2.0), math.copysign(0.5, u)
    eta = 0.5 * (1 + u) * math.log1p(u) + 0.5 * (1 - u) * math.log1p(-u)
    flux = -0.25 * (1 - u * u) * (math.log1p(u) - math.log1p(-u)) + 0.5 * u
    return eta, flux


def entropy_primitive(v):
    """Antiderivative H(v) = int_0^v eta(u) du, closed form."""
    v = float(v)
    v = max(-1.0, min(1.0, v))
    lp = (1 + v) ** 2 / 4.0 * math.log1p(v) if v > -1.0 else 0.0
    lm = (1 - v) ** 2 / 4.0 * math.log1p(-v) if v < 1.0 else 0.0
    return lp - lm - 0.5 * v


# ---------------------------------------------------------------------------
# parabolas (fundamental solutions)


@dataclass(frozen=True)
class Parabola:
    """Apex data (xhat, ahat) of the fundamental wedge/parabola family."""

    xhat: float
    ahat: float

    def __call__(self, t, x):
        return parabola_eval(self, t, x)


def parabola_eval(p: Parabola, t, x):
    """Evaluate p[xhat,ahat](t,x): quadratic cap inside |x-xhat|<=t, slopes +-1 outside.

    Total in (t, x); t=0 gives the wedge ahat - |x - xhat|.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    u = np.asarray(x, dtype=float) - p.xhat
    if t == 0:
        out = -np.abs(u)
    else:
        out = np.where(np.abs(u) <= t, -t / 2.0 - u * u / (2.0 * t), -np.abs(u))
    out = out + p.ahat
    if np.ndim(x) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class SDPoint:
    """A point in the +-45 degree coordinates."""

    s: float
    d: float

    def to_xa(self):
        return self.s - self.d, self.s + self.d


def to_sd(x, a) -> SDPoint:
    """Rotate (x, a) to (s, d) = ((x+a)/2, (-x+a)/2)."""
    return SDPoint(0.5 * (x + a), 0.5 * (-x + a))


def sd_to_xa(s, d):
    return s - d, s + d


# ---------------------------------------------------------------------------
# piecewise curves

# A segment on [lo, hi] stores quadratic coefficients (c0, c1, c2) for
# q(y) = c0 + c1*y + c2*y**2.  Tails are linear with slopes in [-1, 1].


def _qval(c, y):
    return c[0] + y * (c[1] + y * c[2])


def _qslope(c, y):
    return c[1] + 2.0 * c[2] * y


class PLCurve:
    """A 1-Lipschitz profile: quadratic segments between breakpoints, linear tails.

    breakpoints : strictly increasing 1-d array (at least one point)
    segs        : list of (c0, c1, c2) per interval, len == len(breakpoints)-1
    tails       : (left_slope, right_slope), both in [-1, 1]
    """

    def __init__(self, breakpoints, segs, tails, validate=True):
        self.x = np.asarray(breakpoints, dtype=float)
        self.segs = [tuple(float(c) for c in s) for s in segs]
        self.tails = (float(tails[0]), float(tails[1]))
        if len(self.x) != len(self.segs) + 1:
            raise ValueError("need exactly one segment per consecutive breakpoint pair")
        # heights at breakpoints, for cheap continuity checks and evaluation
        vals = [0.0] * len(self.x)
        if self.segs:
            for i, c in enumerate(self.segs):
                vals[i] = _qval(c, self.x[i])
                vals[i + 1] = _qval(c, self.x[i + 1])
        self._y0 = _qval(self.segs[0], self.x[0]) if self.segs else 0.0
        if validate:
            self._validate()

    # -- construction helpers ------------------------------------------------

    @classmethod
    def single_point(cls, x0, a0, tails):
        """Curve with one breakpoint and two linear tails (e.g. a wedge)."""
        c = cls(np.asarray([x0], dtype=float), [], tails, validate=False)
        c._y0 = float(a0)
        c._validate()
        return c

    def _validate(self):
        if len(self.x) == 0:
            raise ValueError("empty curve")
        dx = np.diff(self.x)
        if np.any(dx <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        for i, c in enumerate(self.segs):
            if i > 0:
                left = _qval(self.segs[i - 1], self.x[i])
                right = _qval(c, self.x[i])
                scale = max(1.0, abs(left), abs(right))
                if abs(left - right) > 1e-9 * scale:
                    raise ValueError(
                        f"discontinuity {left - right:.3e} at breakpoint {self.x[i]}"
                    )
            for yy in (self.x[i], self.x[i + 1]):
                m = _qslope(c, yy)
                if abs(m) > 1.0 + SLOPE_TOL:
                    raise ValueError(f"slope {m} outside [-1,1] at y={yy}")
        for m in self.tails:
            if abs(m) > 1.0 + SLOPE_TOL:
                raise ValueError(f"tail slope {m} outside [-1,1]")

    # -- evaluation -----------------------------------------------------------

    def __call__(self, y):
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.empty_like(y_arr)
        x = self.x
        v_left = self._y0 if not self.segs else _qval(self.segs[0], x[0])
        v_right = self._y0 if not self.segs else _qval(self.segs[-1], x[-1])
        left = y_arr < x[0]
        right = y_arr > x[-1]
        out[left] = v_left + self.tails[0] * (y_arr[left] - x[0])
        out[right] = v_right + self.tails[1] * (y_arr[right] - x[-1])
        mid = ~(left | right)
        if np.any(mid):
            ym = y_arr[mid]
            if not self.segs:
                out[mid] = self._y0
            else:
                idx = np.clip(np.searchsorted(x, ym, side="right") - 1, 0, len(self.segs) - 1)
                vals = np.empty_like(ym)
                for j in np.unique(idx):
                    sel = idx == j
                    vals[sel] = _qval(self.segs[j], ym[sel])
                out[mid] = vals
        if np.ndim(y) == 0:
            return float(out[0])
        return out

    def slope_left(self, y):
        """One-sided slope from the left at y."""
        y = float(y)
        if y <= self.x[0]:
            return self.tails[0]
        if y > self.x[-1]:
            return self.tails[1]
        i = int(np.searchsorted(self.x, y - 1e-15, side="left")) - 1
        i = min(max(i, 0), len(self.segs) - 1)
        return _qslope(self.segs[i], y) if self.segs else self.tails[0]

    def slope_right(self, y):
        """One-sided slope from the right at y."""
        y = float(y)
        if y < self.x[0]:
            return self.tails[0]
        if y >= self.x[-1]:
            return self.tails[1]
        i = int(np.searchsorted(self.x, y + 1e-15, side="right")) - 1
        i = min(max(i, 0), len(self.segs) - 1)
        return _qslope(self.segs[i], y) if self.segs else self.tails[1]

    def value_left_end(self):
        return self._y0 if not self.segs else _qval(self.segs[0], self.x[0])

    def value_right_end(self):
        return self._y0 if not self.segs else _qval(self.segs[-1], self.x[-1])

    # -- transforms -----------------------------------------------------------

    def negate(self) -> "PLCurve":
        segs = [(-c0, -c1, -c2) for (c0, c1, c2) in self.segs]
        out = PLCurve(self.x.copy(), segs, (-self.tails[0], -self.tails[1]), validate=False)
        out._y0 = -self._y0
        return out

    def pieces(self):
        """All pieces as (lo, hi, (c0,c1,c2)) with +-inf tails included."""
        v_left = self.value_left_end()
        v_right = self.value_right_end()
        mL, mR = self.tails
        out = [(-math.inf, self.x[0], (v_left - mL * self.x[0], mL, 0.0))]
        for i, c in enumerate(self.segs):
            out.append((self.x[i], self.x[i + 1], c))
        out.append((self.x[-1], math.inf, (v_right - mR * self.x[-1], mR, 0.0)))
        return out

    def simplified(self, tol=1e-11) -> "PLCurve":
        """Merge adjacent segments whose quadratics agree (drops noise breakpoints)."""
        if not self.segs:
            return self
        bx = [self.x[0]]
        segs = []
        cur = self.segs[0]
        for i in range(1, len(self.segs)):
            nxt = self.segs[i]
            xm = self.x[i]
            scale = max(1.0, abs(_qval(cur, xm)))
            same = (
                abs(_qval(cur, xm) - _qval(nxt, xm)) < tol * scale
                and abs(_qslope(cur, xm) - _qslope(nxt, xm)) < 1e-9
                and abs(cur[2] - nxt[2]) < 1e-9
            )
            if not same:
                bx.append(xm)
                segs.append(cur)
                cur = nxt
        bx.append(self.x[-1])
        segs.append(cur)
        # drop redundant end breakpoints where segment continues a tail exactly
        out = PLCurve(np.asarray(bx), segs, self.tails, validate=False)
        out._y0 = self._y0
        return out

    # -- serialization ----------------------------------------------------------

    def to_dict(self):
        segments = []
        for c in self.segs:
            if c[2] == 0.0:
                segments.append({"kind": "linear", "params": {"c0": c[0], "c1": c[1]}})
            else:
                t_eff = abs(1.0 / (2.0 * c[2]))
                xh = -c[1] / (2.0 * c[2])
                if c[2] < 0:
                    ah = _qval(c, xh) + t_eff / 2.0
                    sign = "cap"
                else:
                    ah = _qval(c, xh) - t_eff / 2.0
                    sign = "cup"
                segments.append(
                    {
                        "kind": "arc",
                        "params": {"c0": c[0], "c1": c[1], "c2": c[2]},
                        "annot": {"xhat": xh, "ahat": ah, "t": t_eff, "sign": sign},
                    }
                )
        return {
            "breakpoints": [float(v) for v in self.x],
            "segments": segments,
            "tails": {"left_slope": self.tails[0], "right_slope": self.tails[1]},
            "anchor_value": self.value_left_end(),
        }

    @classmethod
    def from_dict(cls, d) -> "PLCurve":
        segs = []
        for s in d["segments"]:
            p = s["params"]
            if s["kind"] == "linear":
                segs.append((p["c0"], p["c1"], 0.0))
            else:
                segs.append((p["c0"], p["c1"], p["c2"]))
        out = cls(
            np.asarray(d["breakpoints"], dtype=float),
            segs,
            (d["tails"]["left_slope"], d["tails"]["right_slope"]),
            validate=False,
        )
        out._y0 = float(d.get("anchor_value", out._y0))
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "PLCurve":
        return cls.from_dict(json.loads(s))

    def __repr__(self):
        return f"PLCurve({len(self.segs)} segs on [{self.x[0]:.4g},{self.x[-1]:.4g}])"


# ---------------------------------------------------------------------------
# constructors


def parabola_curve(p: Parabola, t) -> PLCurve:
    """p[xhat,ahat](t) as a PLCurve (single cap between the +-1 flanks)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return wedge(p.xhat, p.ahat)
    c2 = -1.0 / (2.0 * t)
    c1 = -2.0 * c2 * p.xhat
    c0 = p.ahat - t / 2.0 + c2 * p.xhat * p.xhat
    return PLCurve([p.xhat - t, p.xhat + t], [(c0, c1, c2)], (1.0, -1.0))


def wedge(xhat, ahat) -> PLCurve:
    """The wedge ahat - |x - xhat|."""
    return PLCurve.single_point(xhat, ahat, (1.0, -1.0))


def line_curve(x0, a0, slope) -> PLCurve:
    return PLCurve.single_point(x0, a0, (slope, slope))


def chord_through(x0, a0, x1, a1, tails=None) -> PLCurve:
    """Single linear segment joining two points; tails default to the chord slope."""
    m = (a1 - a0) / (x1 - x0)
    if tails is None:
        tails = (m, m)
    return PLCurve([x0, x1], [(a0 - m * x0, m, 0.0)], tails)


def massif(anchors, t) -> PLCurve:
    """max_k p[xhat_k, ahat_k](t) as a PLCurve."""
    curves = [parabola_curve(Parabola(x, a), t) for x, a in anchors]
    out = curves[0]
    for c in curves[1:]:
        out = curve_max(out, c)
    return out


# ---------------------------------------------------------------------------
# envelopes (max / min of curves)


def _quad_roots(ca, cb, lo, hi):
    """Roots of (ca - cb) inside (lo, hi), sorted."""
    a = ca[2] - cb[2]
    b = ca[1] - cb[1]
    c = ca[0] - cb[0]
    roots = []
    if abs(a) < 1e-15:
        if abs(b) > 1e-15:
            roots = [-c / b]
    else:
        disc = b * b - 4 * a * c
        if disc > 0:
            sq = math.sqrt(disc)
            roots = [(-b - sq) / (2 * a), (-b + sq) / (2 * a)]
        elif disc == 0:
            roots = [-b / (2 * a)]
    eps = 1e-13 * max(1.0, abs(lo) if np.isfinite(lo) else 1.0, abs(hi) if np.isfinite(hi) else 1.0)
    return sorted(r for r in roots if lo + eps < r < hi - eps)


def _envelope(pieces, prefer_max=True, span_hint=None):
    """Upper (or lower) envelope of quadratic pieces covering all of R.

    pieces: list of (lo, hi, coeffs); los/his may be +-inf.  The pieces must
    jointly cover the line.  Returns a PLCurve.
    """
    finite = [b for p in pieces for b in (p[0], p[1]) if np.isfinite(b)]
    if span_hint is not None:
        finite += list(span_hint)
    if not finite:
        finite = [0.0]
    cut = sorted(set(finite))
    # pairwise intersections refine the grid
    extra = []
    n = len(pieces)
    for i in range(n):
        for j in range(i + 1, n):
            lo = max(pieces[i][0], pieces[j][0])
            hi = min(pieces[i][1], pieces[j][1])
            if lo < hi:
                extra.extend(_quad_roots(pieces[i][2], pieces[j][2], lo, hi))
    grid = sorted(set(cut) | set(extra))
    # dedupe near-identical breakpoints
    dedup = []
    for g in grid:
        if not dedup or g - dedup[-1] > 1e-11 * max(1.0, abs(g)):
            dedup.append(g)
    grid = dedup
    sign = 1.0 if prefer_max else -1.0

    def best_at(y):
        best, bv = None, -math.inf
        for (lo, hi, c) in pieces:
            if lo - 1e-9 <= y <= hi + 1e-9:
                v = sign * _qval(c, y)
                if v > bv + 0.0:
                    bv, best = v, c
        return best

    # winners on each cell plus the two tails
    cells = []
    probes = []
    if len(grid) == 1:
        probes = [grid[0] - 0.5, grid[0] + 0.5]
        cells = [(-math.inf, grid[0]), (grid[0], math.inf)]
    else:
        probes.append(grid[0] - 0.5)
        cells.append((-math.inf, grid[0]))
        for i in range(len(grid) - 1):
            probes.append(0.5 * (grid[i] + grid[i + 1]))
            cells.append((grid[i], grid[i + 1]))
        probes.append(grid[-1] + 0.5)
        cells.append((grid[-1], math.inf))
    winners = [best_at(p) for p in probes]
    if any(w is None for w in winners):
        raise RuntimeError("envelope candidates do not cover the line")
    # assemble: interior cells become segments, the two end cells become tails
    segs = [win for win in winners[1:-1]]
    bx = list(grid)
    left_winner = winners[0]
    right_winner = winners[-1]
    mL = _qslope(left_winner, grid[0])
    mR = _qslope(right_winner, grid[-1])
    if not segs:
        out = PLCurve.single_point(grid[0], _qval(left_winner, grid[0]), (mL, mR))
        return out.simplified()
    out = PLCurve(np.asarray(bx), segs, (mL, mR), validate=False)
    out._y0 = _qval(segs[0], bx[0])
    return out.simplified()


def curve_max(f: PLCurve, g: PLCurve) -> PLCurve:
    return _envelope(f.pieces() + g.pieces(), prefer_max=True)


def curve_min(f: PLCurve, g: PLCurve) -> PLCurve:
    return curve_max(f.negate(), g.negate()).negate()


def hypo_contains(f: PLCurve, x, a, tol=1e-12) -> bool:
    """Membership in hyp(f) = {(x, a): f(x) <= a} (the region on/above the graph)."""
    return f(x) <= a + tol


# ---------------------------------------------------------------------------
# Hopf-Lax evolutions


def hopf_lax(f: PLCurve, t, direction="forward") -> PLCurve:
    """Exact Hopf-Lax evolution of a piecewise-quadratic 1-Lipschitz curve.

    forward : sup_y [ f(y) + p(t, x - y) ]  (heights decrease; the entropy flow)
    backward: the time-reversed entropy evolution, computed as -HL_fw_t(-f);
              it opens convex kinks into rarefaction arcs and sustains concave
              kinks, matching the characteristics/shear-and-cut picture.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if direction == "backward":
        return hopf_lax(f.negate(), t, "forward").negate()
    if direction != "forward":
        raise ValueError("direction must be 'forward' or 'backward'")
    if t == 0:
        return f
    candidates = []
    # segment images: stationary-point contribution where 1 - 2 t c2 > 0
    for (lo, hi, c) in f.pieces():
        A, B, C = c[0], c[1], c[2]
        D = 1.0 - 2.0 * t * C
        if D <= 1e-12:
            continue
        # image interval under x = y - t*(B + 2C y)
        def xmap(y, B=B, C=C):
            return y - t * (B + 2.0 * C * y)

        nlo = xmap(lo) if np.isfinite(lo) else -math.inf
        nhi = xmap(hi) if np.isfinite(hi) else math.inf
        base = A - t / 2.0 - t * B * B / 2.0
        # v(x) = base + B (x + tB) + (C/D) (x + tB)^2
        c0 = base + B * t * B + (C / D) * (t * B) ** 2
        c1 = B + (C / D) * 2.0 * t * B
        c2 = C / D
        candidates.append((nlo, nhi, (c0, c1, c2)))
    # breakpoint caps p[xb, f(xb)](t) with their +-1 flanks (keep the envelope
    # total on R and supply rarefaction fans at concave kinks)
    c2 = -1.0 / (2.0 * t)
    for xb in f.x:
        xb = float(xb)
        fb = f(xb)
        cap_c1 = -2.0 * c2 * xb
        cap_c0 = fb - t / 2.0 + c2 * xb * xb
        candidates.append((xb - t, xb + t, (cap_c0, cap_c1, c2)))
        candidates.append((-math.inf, xb - t, (fb - xb, 1.0, 0.0)))
        candidates.append((xb + t, math.inf, (fb + xb, -1.0, 0.0)))
    span = (float(f.x[0]) - t, float(f.x[-1]) + t)
    return _envelope(candidates, prefer_max=True, span_hint=span)


# ---------------------------------------------------------------------------
# entropy integrals


def _entropy_integral_piece(c, lo, hi):
    """Exact integral of eta(q'(y)) over [lo, hi] for one quadratic piece."""
    if hi <= lo:
        return 0.0
    B, C = c[1], c[2]
    if C == 0.0:
        eta, _ = bernoulli_entropy(B)
        return eta * (hi - lo)
    m_lo = B + 2.0 * C * lo
    m_hi = B + 2.0 * C * hi
    return (entropy_primitive(m_hi) - entropy_primitive(m_lo)) / (2.0 * C)


def relative_entropy(f: PLCurve, g: PLCurve, window=None) -> float:
    """Segment-exact integral of eta(f') - eta(g') dx.

    f and g must agree outside a bounded set; `window` (a pair) may widen or
    assert the integration range.  Raises if the difference support is not
    contained in the effective window.
    """
    lo = min(f.x[0], g.x[0])
    hi = max(f.x[-1], g.x[-1])
    if window is not None:
        wl, wr = float(window[0]), float(window[1])
    else:
        wl, wr = lo, hi
    # difference support must lie inside [wl, wr]: outside, tails must agree
    for y in (min(wl, lo) - 1.0, max(wr, hi) + 1.0):
        if abs(f(y) - g(y)) > 1e-9 * max(1.0, abs(f(y))):
            raise ValueError("curves differ outside the integration window")
    if f.tails[0] != g.tails[0] or f.tails[1] != g.tails[1]:
        raise ValueError("tail slopes differ; difference support unbounded")
    wl = min(wl, lo)
    wr = max(wr, hi)
    cuts = sorted(
        {wl, wr}
        | {float(v) for v in f.x if wl < v < wr}
        | {float(v) for v in g.x if wl < v < wr}
    )
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (a + b)
        cf = _piece_at(f, mid)
        cg = _piece_at(g, mid)
        total += _entropy_integral_piece(cf, a, b) - _entropy_integral_piece(cg, a, b)
    return total


def _piece_at(f: PLCurve, y):
    for (lo, hi, c) in f.pieces():
        if lo <= y <= hi:
            return c
    raise RuntimeError("no piece at y")  # pragma: no cover
