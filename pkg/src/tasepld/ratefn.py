"""Random-walk rate functions and their minimizing curves.

The minimizer of the relative Bernoulli entropy through pinned points above
a massif of parabolas is a taut string: parabola arcs, tangent departures,
and chords.  It is built here exactly, by an incremental concave-hull sweep
over same-curvature arcs and pin points; everything downstream (rates,
up/down marks, isle cuts) reads off this construction.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .curves import (
    Parabola,
    PLCurve,
    bernoulli_entropy,
    curve_max,
    hypo_contains,
    massif,
    parabola_curve,
    relative_entropy,
    to_sd,
)

__all__ = [
    "Scene",
    "Assignment",
    "MinimizerBundle",
    "TautResult",
    "InfeasibleWord",
    "taut_minimizer",
    "rate_rel",
    "rate_discrete",
    "rate_profile",
    "one_point_formula",
    "curve_leq",
]

HULL_TOL = 1e-11


class InfeasibleWord(Exception):
    """Raised when a pin configuration admits no 1-Lipschitz curve."""


# ---------------------------------------------------------------------------
# scenes


@dataclass
class Scene:
    """A problem instance: massif anchors, horizon t, terminal pins, lattice N.

    Anchors must have s strictly increasing and d strictly decreasing; pins
    must have x strictly increasing and satisfy the discretized Hopf-Lax
    condition massif(t) <= a_i <= massif(0) at each x_i.
    """

    anchors: list
    t: float
    pins: list
    N: int | None = None

    def __post_init__(self):
        self.anchors = [(float(x), float(a)) for x, a in self.anchors]
        self.pins = [(float(x), float(a)) for x, a in self.pins]
        self.t = float(self.t)
        if self.t <= 0:
            raise ValueError("t must be > 0")
        s_hat = [to_sd(x, a).s for x, a in self.anchors]
        d_hat = [to_sd(x, a).d for x, a in self.anchors]
        if any(s_hat[i] >= s_hat[i + 1] for i in range(len(s_hat) - 1)):
            raise ValueError("anchor s-coordinates must be strictly increasing")
        if any(d_hat[i] <= d_hat[i + 1] for i in range(len(d_hat) - 1)):
            raise ValueError("anchor d-coordinates must be strictly decreasing")
        xs = [x for x, _ in self.pins]
        if any(xs[i] >= xs[i + 1] for i in range(len(xs) - 1)):
            raise ValueError("pin x-coordinates must be strictly increasing")
        s_pin = [to_sd(x, a).s for x, a in self.pins]
        d_pin = [to_sd(x, a).d for x, a in self.pins]
        if any(s_pin[i] >= s_pin[i + 1] for i in range(len(s_pin) - 1)):
            raise ValueError("pin s-coordinates must be strictly increasing")
        if any(d_pin[i] < d_pin[i + 1] - 1e-12 for i in range(len(d_pin) - 1)):
            raise ValueError("pin d-coordinates must be nonincreasing")
        m0 = self.massif_curve(0.0)
        mt = self.massif_curve(self.t)
        for x, a in self.pins:
            # paper's hypograph is the set above the graph; the Hopf-Lax pin
            # condition reads massif(t)(x) <= a <= massif(0)(x)
            if not hypo_contains(mt, x, a, tol=1e-9):
                raise ValueError(f"pin ({x},{a}) below the terminal massif")
            if hypo_contains(m0, x, a, tol=-1e-9):
                raise ValueError(f"pin ({x},{a}) above the initial massif")

    @property
    def m_hat(self):
        return len(self.anchors)

    @property
    def m(self):
        return len(self.pins)

    def massif_curve(self, t=None) -> PLCurve:
        return massif(self.anchors, self.t if t is None else t)

    def parabola(self, k: int) -> Parabola:
        """1-based anchor index, as in the math."""
        x, a = self.anchors[k - 1]
        return Parabola(x, a)

    def pin_sd(self, i: int):
        """1-based pin index -> SDPoint."""
        x, a = self.pins[i - 1]
        return to_sd(x, a)

    def anchor_sd(self, k: int):
        x, a = self.anchors[k - 1]
        return to_sd(x, a)

    def alphabet(self, k: int, kp: int):
        """Feasibility letters for the (k,k') entry: d_j <= d_hat_k and s_j <= s_hat_k'."""
        dk = self.anchor_sd(k).d
        sk = self.anchor_sd(kp).s
        out = []
        for j in range(1, self.m + 1):
            sd = self.pin_sd(j)
            if sd.d <= dk + 1e-12 and sd.s <= sk + 1e-12:
                out.append(j)
        return tuple(out)

    def to_dict(self):
        return {
            "anchors": [[x, a] for x, a in self.anchors],
            "t": self.t,
            "pins": [[x, a] for x, a in self.pins],
            "N": self.N,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(anchors=d["anchors"], t=d["t"], pins=d["pins"], N=d.get("N"))

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


# ---------------------------------------------------------------------------
# concave hull of same-curvature arcs and points (the taut-string engine)


def _arc_tangent_from_point(xp, ap, c, side):
    """Tangency abscissa of the line through (xp, ap) tangent to quadratic c.

    side=+1 looks rightward (contact > xp), side=-1 leftward.  Returns None
    when the point lies strictly below the extended parabola (no tangent).
    """
    c0, c1, c2 = c
    qx = c0 + c1 * xp + c2 * xp * xp
    disc = (qx - ap) / c2
    if disc < 0:
        return None
    return xp + side * math.sqrt(disc)


def _common_tangent(ca, cb):
    """Contact abscissae (ya, yb) of the common upper tangent of two equal-c2 caps."""
    c2 = ca[2]
    if abs(ca[1] - cb[1]) < 1e-15:
        return None
    m = 0.5 * (4.0 * c2 * (cb[0] - ca[0]) / (ca[1] - cb[1]) + ca[1] + cb[1])
    ya = (m - ca[1]) / (2.0 * c2)
    yb = (m - cb[1]) / (2.0 * c2)
    return ya, yb, m


def _concave_strip(elements, x_l, a_l, x_r, a_r):
    """Taut path from (x_l,a_l) to (x_r,a_r) above arc/point obstacle elements.

    elements: list of ("pt", x, a) / ("arc", lo, hi, c) sorted left-to-right,
    all with the same negative c2 on arcs.  Returns list of (lo, hi, coeffs)
    pieces covering [x_l, x_r].  Raises InfeasibleWord when no 1-Lipschitz
    concave chain exists.
    """
    if x_r <= x_l + 1e-14:
        return []
    elems = [("pt", x_l, a_l)] + list(elements) + [("pt", x_r, a_r)]
    xtol = 1e-12 * max(1.0, abs(x_l), abs(x_r))
    # chain entries: ["pt", x, a, slope_in] or ["arc", lo, hi, c, start]
    chain = []

    def arc_val(c, y):
        return c[0] + c[1] * y + c[2] * y * y

    def arc_slope(c, y):
        return c[1] + 2.0 * c[2] * y

    def bridge(top, el):
        """Bridge (m, cH, cE) from chain entry `top` to element `el`.

        cH / cE are contact abscissae on top / el; None means el is fully
        shadowed (arcs that cannot be entered, or a dominated point).
        """
        if top[0] == "pt":
            xh, ah = top[1], top[2]
        else:
            xh = top[2]
            ah = arc_val(top[3], xh)
        if el[0] == "pt":
            xe, ae = el[1], el[2]
            if top[0] == "pt" and xe <= xh + xtol:
                return "coincident" if ae <= ah + 1e-9 else "replace"
        else:
            lo, hi, c = el[1], el[2], el[3]

        if top[0] == "pt":
            if el[0] == "pt":
                m = (ae - ah) / (xe - xh)
                return m, xh, xe
            ystar = _arc_tangent_from_point(xh, ah, c, +1)
            cE = lo if ystar is None else max(ystar, lo)
            if cE > hi + xtol:
                return None
            cE = min(cE, hi)
            qc = arc_val(c, cE)
            if cE <= xh + xtol:
                # top sits on the arc start: enter tangentially
                if abs(qc - ah) < 1e-8 * max(1.0, abs(ah)):
                    return arc_slope(c, cE), xh, cE
                return None
            m = (qc - ah) / (cE - xh)
            return m, xh, cE
        # arc top: contact on top comes from el's leftward tangent or the
        # common upper tangent
        lo1, hi1, c1 = top[1], top[2], top[3]
        if el[0] == "pt":
            ystar = _arc_tangent_from_point(xe, ae, c1, -1)
            cH = hi1 if ystar is None else min(ystar, hi1)
            cH = max(cH, lo1)
            qc = arc_val(c1, cH)
            if xe <= cH + xtol:
                if abs(ae - qc) < 1e-8 * max(1.0, abs(ae)):
                    return arc_slope(c1, cH), cH, xe
                return None
            m = (ae - qc) / (xe - cH)
            return m, cH, xe
        lo2, hi2, c2seg = el[1], el[2], el[3]
        ct = _common_tangent(c1, c2seg)
        if ct is None:
            return None
        ya, yb, m = ct
        if yb > hi2 + xtol:
            return None  # el's arc is not enterable via the common tangent
        cE = max(yb, lo2)
        cH = min(max(ya, lo1), hi1)
        if cE > xtol + cH:
            m = (arc_val(c2seg, cE) - arc_val(c1, cH)) / (cE - cH) if cE > cH + xtol else m
        return m, cH, cE

    for el in elems:
        placed = False
        while not placed:
            if not chain:
                if el[0] == "pt":
                    chain.append(["pt", el[1], el[2], math.inf])
                else:
                    chain.append(["arc", el[1], el[2], el[3], el[1]])
                placed = True
                break
            top = chain[-1]
            br = bridge(top, el)
            if br == "coincident":
                placed = True
                break
            if br == "replace":
                # same abscissa, strictly higher point: swap it in
                slope_in = top[3] if top[0] == "pt" else arc_slope(top[3], top[2])
                chain.pop()
                if chain:
                    # re-bridge from the previous entry
                    continue
                chain.append(["pt", el[1], el[2], math.inf])
                placed = True
                break
            if br is None:
                if el[0] == "arc":
                    placed = True  # shadowed arc: contributes nothing
                    break
                raise InfeasibleWord("cannot bridge taut path to pin")
            m, cH, cE = br
            if top[0] == "pt":
                if top[3] <= m - 1e-12 and len(chain) > 1:
                    chain.pop()
                    continue
            else:
                if cH <= top[4] + xtol and len(chain) > 1:
                    chain.pop()
                    continue
                top[2] = min(top[2], cH)  # trim arc end
            if el[0] == "pt":
                chain.append(["pt", el[1], el[2], m])
            else:
                chain.append(["arc", el[1], el[2], el[3], min(cE, el[2])])
            placed = True

    # assemble pieces: arcs on their surviving contact ranges, chords between
    pieces = []

    def exit_point(entry):
        if entry[0] == "pt":
            return entry[1], entry[2]
        y = entry[2]
        return y, arc_val(entry[3], y)

    def enter_point(entry):
        if entry[0] == "pt":
            return entry[1], entry[2]
        y = entry[4]
        return y, arc_val(entry[3], y)

    for a, b in zip(chain[:-1], chain[1:]):
        if a[0] == "arc" and a[2] > a[4] + 1e-13:
            pieces.append((a[4], a[2], a[3]))
        xa, va = exit_point(a)
        xb, vb = enter_point(b)
        if xb > xa + 1e-13:
            m = (vb - va) / (xb - xa)
            if abs(m) > 1.0 + 1e-9:
                raise InfeasibleWord(f"taut chord slope {m} breaks the Lipschitz bound")
            pieces.append((xa, xb, (va - m * xa, m, 0.0)))
        elif vb > va + 1e-9 or vb < va - 1e-9:
            raise InfeasibleWord("discontinuous taut chain")
    last = chain[-1]
    if last[0] == "arc" and last[2] > last[4] + 1e-13:
        pieces.append((last[4], last[2], last[3]))
    return pieces


def _obstacle_elements(obstacle: PLCurve, x_l, x_r):
    """Arc pieces and endpoint points of a massif curve clipped to (x_l, x_r)."""
    out = []
    for (lo, hi, c) in obstacle.pieces():
        lo_c = max(lo, x_l)
        hi_c = min(hi, x_r)
        if hi_c <= lo_c + 1e-13:
            continue
        v_lo = c[0] + c[1] * lo_c + c[2] * lo_c * lo_c
        v_hi = c[0] + c[1] * hi_c + c[2] * hi_c * hi_c
        if c[2] < 0:
            out.append(("pt", lo_c, v_lo))
            out.append(("arc", lo_c, hi_c, c))
            out.append(("pt", hi_c, v_hi))
        else:
            out.append(("pt", lo_c, v_lo))
            out.append(("pt", hi_c, v_hi))
    out.sort(key=lambda e: e[1])
    return out


# ---------------------------------------------------------------------------
# the taut minimizer


@dataclass
class TautResult:
    """Entropy-minimizing curve through a word's pins, plus read-off geometry."""

    curve: PLCurve
    word: tuple
    k: int
    kp: int
    x_left: float
    x_right: float
    pin_slopes: dict  # letter -> (left_slope, right_slope)
    rate: float | None = None


def taut_minimizer(scene: Scene, k: int, kp: int, word) -> TautResult:
    """Minimizer of the Bernoulli entropy over curves merging with p_k(t) on
    the left and p_k'(t) on the right, pinned at the word's letters, above
    the required parabola maxima.

    word is an iterable of 1-based letters (strictly increasing); empty words
    are allowed (for k < k' this is the common-tangent hull, for k = k' it is
    p_k(t) itself).  Raises InfeasibleWord for impossible pin constraints.
    """
    word = tuple(int(j) for j in word)
    if any(word[i] >= word[i + 1] for i in range(len(word) - 1)):
        raise ValueError("word letters must be strictly increasing")
    t = scene.t
    m_hat = scene.m_hat
    pk = scene.parabola(k)
    pkp = scene.parabola(kp)
    if not word and k == kp:
        cur = parabola_curve(pk, t)
        return TautResult(cur, word, k, kp, pk.xhat, pk.xhat, {})

    corner_l = (pk.xhat - t, pk.ahat - t)
    corner_r = (pkp.xhat + t, pkp.ahat - t)
    pins = [(scene.pins[j - 1][0], scene.pins[j - 1][1]) for j in word]

    def massif_range(lo_k, hi_k):
        return massif([scene.anchors[i - 1] for i in range(lo_k, hi_k + 1)], t)

    obst_left = massif_range(k, m_hat)
    obst_mid = massif_range(1, m_hat)
    obst_right = massif_range(1, kp)

    # feasibility of each pin against the obstacle it must clear
    node_pts = [corner_l] + pins + [corner_r]
    obstacles = []
    if word:
        obstacles.append(obst_left)
        obstacles.extend([obst_mid] * (len(pins) - 1))
        obstacles.append(obst_right)
    else:
        obstacles.append(massif_range(min(k, kp), max(k, kp)))
    for (x, a) in pins:
        if a < obst_mid(x) - 1e-9:
            raise InfeasibleWord(f"pin ({x},{a}) strictly below the obstacle")

    pieces = []
    for (xl, al), (xr, ar), obst in zip(node_pts[:-1], node_pts[1:], obstacles):
        if xr <= xl + 1e-14:
            if abs(ar - al) > 1e-9:
                raise InfeasibleWord("coincident abscissae with different heights")
            continue
        if al < obst(xl) - 1e-9 or ar < obst(xr) - 1e-9:
            raise InfeasibleWord("strip endpoint below obstacle")
        elems = _obstacle_elements(obst, xl, xr)
        pieces.extend(_concave_strip(elems, xl, al, xr, ar))

    # assemble the global curve: +1 flank, strips, -1 flank
    bx = [corner_l[0]]
    segs = []
    for (lo, hi, c) in pieces:
        if hi <= lo + 1e-13:
            continue
        if bx and abs(lo - bx[-1]) > 1e-9:
            raise InfeasibleWord("taut pieces do not abut")
        bx.append(hi)
        segs.append(c)
    if not segs:
        raise InfeasibleWord("degenerate taut construction")
    curve = PLCurve(np.asarray(bx), segs, (1.0, -1.0), validate=False)
    curve = curve.simplified()
    curve._validate()

    # merge abscissae: first/last departure from p_k(t) / p_k'(t)
    pkt = parabola_curve(pk, t)
    pkpt = parabola_curve(pkp, t)
    x_left = _first_departure(curve, pkt, side="left")
    x_right = _first_departure(curve, pkpt, side="right")
    pin_slopes = {
        j: (curve.slope_left(x), curve.slope_right(x))
        for j, (x, a) in zip(word, pins)
    }
    return TautResult(curve, word, k, kp, x_left, x_right, pin_slopes)


def _same_piece(c1, c2, at, tol=1e-9):
    v1 = c1[0] + c1[1] * at + c1[2] * at * at
    v2 = c2[0] + c2[1] * at + c2[2] * at * at
    return (
        abs(v1 - v2) < tol * max(1.0, abs(v1))
        and abs((c1[1] + 2 * c1[2] * at) - (c2[1] + 2 * c2[2] * at)) < 1e-8
        and abs(c1[2] - c2[2]) < 1e-8
    )


def _first_departure(curve: PLCurve, ref: PLCurve, side):
    """Smallest (side='left') or largest (side='right') x where curve leaves ref."""
    ref_pieces = ref.pieces()

    def matches(lo, hi, c):
        mid = 0.5 * (lo + hi)
        for (rl, rh, rc) in ref_pieces:
            if rl - 1e-12 <= mid <= rh + 1e-12 and _same_piece(c, rc, mid):
                return True
        return False

    pieces = curve.pieces()
    if side == "left":
        x = pieces[0][1]
        for (lo, hi, c) in pieces:
            lo_ = max(lo, curve.x[0] - 1.0)
            hi_ = min(hi, curve.x[-1] + 1.0)
            if hi_ <= lo_:
                continue
            if matches(lo_, hi_, c):
                x = hi_
            else:
                return lo_
        return x
    x = pieces[-1][0]
    for (lo, hi, c) in reversed(pieces):
        lo_ = max(lo, curve.x[0] - 1.0)
        hi_ = min(hi, curve.x[-1] + 1.0)
        if hi_ <= lo_:
            continue
        if matches(lo_, hi_, c):
            x = lo_
        else:
            return hi_
    return x


# ---------------------------------------------------------------------------
# rates


def curve_leq(f: PLCurve, g: PLCurve, tol=1e-9) -> bool:
    """Exact check f <= g + tol everywhere (piecewise quadratic comparison)."""
    cuts = sorted(set(float(v) for v in f.x) | set(float(v) for v in g.x))
    lo_all = cuts[0] - 2.0
    hi_all = cuts[-1] + 2.0
    grid = [lo_all] + cuts + [hi_all]
    for a, b in zip(grid[:-1], grid[1:]):
        mid = 0.5 * (a + b)
        cf = _piece_of(f, mid)
        cg = _piece_of(g, mid)
        d = (cf[0] - cg[0], cf[1] - cg[1], cf[2] - cg[2])
        cands = [a, b]
        if abs(d[2]) > 1e-15:
            v = -d[1] / (2 * d[2])
            if a < v < b:
                cands.append(v)
        for y in cands:
            if d[0] + d[1] * y + d[2] * y * y > tol * max(1.0, abs(f(y))):
                return False
    # tails
    if f.tails[0] < g.tails[0] - 1e-12 or f.tails[1] > g.tails[1] + 1e-12:
        return False
    return True


def _piece_of(f: PLCurve, y):
    for (lo, hi, c) in f.pieces():
        if lo <= y <= hi:
            return c
    raise RuntimeError


def rate_rel(f: PLCurve, anchor, t) -> float:
    """I(f // p[anchor](t)): +inf unless p(t) <= f <= p(0), else the relative entropy."""
    p = anchor if isinstance(anchor, Parabola) else Parabola(*anchor)
    pt = parabola_curve(p, t)
    p0 = parabola_curve(p, 0.0)
    if not curve_leq(pt, f) or not curve_leq(f, p0):
        return math.inf
    return relative_entropy(f, pt, window=(p.xhat - t, p.xhat + t))


@dataclass
class Assignment:
    """Letters assigned to each anchor: map k (1-based) -> word tuple."""

    words: dict

    def covers(self, m):
        got = set()
        for w in self.words.values():
            got |= set(w)
        return got == set(range(1, m + 1))


@dataclass
class MinimizerBundle:
    """Optimal curves F_k with their words and the total rate."""

    curves: dict  # k -> PLCurve
    words: dict  # k -> tuple
    rate: float
    per_anchor_rate: dict = field(default_factory=dict)
    unique: bool = True
    ties: list = field(default_factory=list)

    def to_dict(self):
        return {
            "rate": self.rate,
            "unique": self.unique,
            "words": {str(k): list(w) for k, w in self.words.items()},
            "per_anchor_rate": {str(k): v for k, v in self.per_anchor_rate.items()},
            "curves": {str(k): c.to_dict() for k, c in self.curves.items()},
        }


def _contiguous_words(letters):
    """All contiguous sub-intervals of a letter tuple, plus the empty word."""
    out = [()]
    letters = list(letters)
    for i in range(len(letters)):
        for j in range(i, len(letters)):
            w = tuple(letters[i : j + 1])
            # contiguity in letter values, not just in the feasible subset
            if w[-1] - w[0] == len(w) - 1:
                out.append(w)
    return out


def rate_discrete(scene: Scene, exhaustive=False) -> MinimizerBundle:
    """Exact minimum of sum_k I(F_k // p_k(t)) over letter assignments.

    Search runs over per-anchor contiguous words by default (lossless for
    minimizers); `exhaustive=True` enumerates all subsets as a validation
    fallback.  Equal-rate assignments are reported via `unique`/`ties`, and
    the lexicographically smallest assignment wins.
    """
    m, m_hat, t = scene.m, scene.m_hat, scene.t
    if m == 0:
        return MinimizerBundle(curves={}, words={}, rate=0.0)
    cands = {}
    for k in range(1, m_hat + 1):
        letters = scene.alphabet(k, k)
        if exhaustive:
            words = [()]
            for r in range(1, len(letters) + 1):
                words.extend(itertools.combinations(letters, r))
        else:
            words = _contiguous_words(letters)
        entries = []
        for w in words:
            if not w:
                entries.append((w, None, 0.0))
                continue
            try:
                res = taut_minimizer(scene, k, k, w)
            except InfeasibleWord:
                continue
            # cross constraint: the curve must stay at or below every pin
            ok = all(res.curve(x) <= a + 1e-9 for (x, a) in scene.pins)
            if not ok:
                continue
            r = rate_rel(res.curve, scene.parabola(k), t)
            if math.isinf(r):
                continue
            entries.append((w, res, r))
        cands[k] = entries

    best = None
    best_key = None
    ties = []
    order = sorted(range(1, m_hat + 1))

    def rec(idx, chosen, partial):
        nonlocal best, best_key, ties
        if best is not None and partial > best[0] + 1e-12:
            return
        if idx == len(order):
            covered = set()
            for (w, _, _) in chosen:
                covered |= set(w)
            if covered != set(range(1, m + 1)):
                return
            key = tuple(w for (w, _, _) in chosen)
            if best is None or partial < best[0] - 1e-12:
                best = (partial, list(chosen))
                best_key = key
                ties = []
            elif abs(partial - best[0]) <= 1e-12:
                ties.append(key)
                if key < best_key:
                    best = (partial, list(chosen))
                    ties.append(best_key)
                    best_key = key
            return
        k = order[idx]
        for (w, res, r) in sorted(cands[k], key=lambda e: e[0]):
            rec(idx + 1, chosen + [(w, res, r)], partial + r)

    rec(0, [], 0.0)
    if best is None:
        return MinimizerBundle(curves={}, words={}, rate=math.inf, unique=True)
    _, chosen = best
    curves, words, per = {}, {}, {}
    for k, (w, res, r) in zip(order, chosen):
        if not w:
            continue
        curves[k] = res.curve
        words[k] = w
        per[k] = r
    return MinimizerBundle(
        curves=curves,
        words=words,
        rate=best[0],
        per_anchor_rate=per,
        unique=len(ties) == 0,
        ties=sorted(set(ties)),
    )


def one_point_formula(T, a) -> float:
    """Closed-form rate of pinning the wedge height at h(T,0) = a.

    Convention note: the stationary-antishock profile requires
    r = (1 + 2a/T)^(1/2) (so that h(T,0) = a); with it the rate is
    T r - (T/2)(1-r^2) log((1+r)/(1-r)), which vanishes at a = -T/2 and
    tends to T at a = 0.  Resolved against the grid taut-string oracle.
    """
    T = float(T)
    a = float(a)
    if T <= 0:
        raise ValueError("T must be > 0")
    if a > 1e-12 or a < -T / 2 - 1e-12:
        raise ValueError("a must lie in (-T/2, 0]")
    r2 = 1.0 + 2.0 * a / T
    r2 = min(max(r2, 0.0), 1.0)
    r = math.sqrt(r2)
    if r >= 1.0 - 1e-14:
        return T
    if r <= 0.0:
        return 0.0
    return T * r - 0.5 * T * (1.0 - r2) * (math.log1p(r) - math.log1p(-r))


def rate_profile(scene_g, t, target, mesh, span=None, max_anchors=3):
    """Continuum rate from an initial curve g to pins or to a terminal curve.

    target: ("pins", [(x,a), ...]) minimizes rate_discrete over anchor sets
    drawn from pin-tangency abscissae plus a uniform grid of spacing `mesh`;
    target: ("curve", f, window) samples f at gap <= mesh and widens the
    window until the value moves by < 1e-3.  Returns (value, info).
    """
    g = scene_g
    kind = target[0]
    if kind == "curve":
        f = target[1]
        window = target[2] if len(target) > 2 else (float(f.x[0]), float(f.x[-1]))
        prev = None
        w = list(window)
        info = {"windows": []}
        for _ in range(6):
            n = max(3, int(math.ceil((w[1] - w[0]) / mesh)) + 1)
            xs = np.linspace(w[0], w[1], n)
            pins = [(float(x), float(f(float(x)))) for x in xs]
            val, sub = rate_profile(g, t, ("pins", pins), mesh, span=tuple(w),
                                    max_anchors=max_anchors)
            info["windows"].append({"window": list(w), "value": val})
            if prev is not None and abs(val - prev) < 1e-3:
                info["converged"] = True
                return val, info
            prev = val
            half = 0.5 * (w[1] - w[0])
            w = [w[0] - half, w[1] + half]
        info["converged"] = False
        info["warning"] = "window refinement did not settle below 1e-3"
        return prev, info

    pins = sorted((float(x), float(a)) for x, a in target[1])
    if span is None:
        span = (pins[0][0] - 2 * t, pins[-1][0] + 2 * t)
    # candidate anchor abscissae: uniform grid (origin-anchored so meshes nest)
    lo = math.floor(span[0] / mesh) * mesh
    grid = [lo + i * mesh for i in range(int((span[1] - lo) / mesh) + 1)]
    cand = sorted(set(round(x, 12) for x in grid))
    # plus tangency abscissae of each pin against wedges at each candidate
    from .steepest import tangency_candidates

    cand = sorted(set(cand) | set(tangency_candidates(g, t, pins)))
    best = math.inf
    best_info = None
    for r in range(1, max_anchors + 1):
        for combo in itertools.combinations(cand, r):
            anchors = [(x, float(g(x))) for x in combo]
            try:
                sc = Scene(anchors=anchors, t=t, pins=pins)
            except ValueError:
                continue
            b = rate_discrete(sc)
            if b.rate < best - 1e-15:
                best = b.rate
                best_info = {"anchors": anchors, "words": b.words}
    return best, {"choice": best_info, "mesh": mesh, "candidates": len(cand)}
