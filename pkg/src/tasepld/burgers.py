"""Elementary weak solutions of the Burgers Hamilton-Jacobi flow.

The slope field u = dh/dx of a piecewise-quadratic profile is a piecewise
linear complete graph (vertical segments at jumps).  Shear transport moves
the graph along characteristics; overhangs are rectified by equal-area
vertical cuts.  Cuts are found exactly: the rectified height is the upper
(forward) or lower (backward) envelope of the branch potentials, which are
quadratics, so crossings - the cut positions - are closed form and area
balance holds by construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .curves import PLCurve, _envelope, bernoulli_entropy, curve_max, hopf_lax
from .ratefn import MinimizerBundle, Scene

__all__ = [
    "CompleteGraph",
    "cg_from_curve",
    "curve_from_cg",
    "shear_and_cut",
    "shear_only",
    "ElementarySolution",
    "build_elementary",
    "jv_rate",
    "shock_production",
    "hl_project",
    "hl_forward_grid",
]


@dataclass
class CompleteGraph:
    """Planar curve in (x, u): ordered vertices, verticals at jumps.

    `h_ref` is the height at the first vertex, so the profile can be
    rebuilt by integrating u along the graph.
    """

    vertices: np.ndarray  # (n, 2) columns x, u
    h_ref: float

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must be (n, 2)")
        if np.any(np.abs(self.vertices[:, 1]) > 1 + 1e-9):
            raise ValueError("u values must lie in [-1, 1]")

    def is_graph(self, tol=1e-12):
        return bool(np.all(np.diff(self.vertices[:, 0]) >= -tol))

    def jumps(self, tol=1e-11):
        """(x, u_left, u_right) for each vertical segment."""
        out = []
        v = self.vertices
        for i in range(len(v) - 1):
            if abs(v[i + 1, 0] - v[i, 0]) <= tol and abs(v[i + 1, 1] - v[i, 1]) > 1e-12:
                out.append((float(v[i, 0]), float(v[i, 1]), float(v[i + 1, 1])))
        return out


def cg_from_curve(f: PLCurve, window) -> CompleteGraph:
    """Complete graph of u = f' clipped to [window[0], window[1]]."""
    lo, hi = float(window[0]), float(window[1])
    verts = [(lo, f.slope_right(lo))]
    cuts = [float(v) for v in f.x if lo < v < hi]
    for x in cuts:
        ml, mr = f.slope_left(x), f.slope_right(x)
        verts.append((x, ml))
        if abs(ml - mr) > 1e-12:
            verts.append((x, mr))
    verts.append((hi, f.slope_left(hi)))
    # mark interior curvature: piecewise linear u needs interior vertices only
    # at breakpoints, which the loop above supplies.
    return CompleteGraph(np.asarray(verts), float(f(lo)))


def curve_from_cg(cg: CompleteGraph) -> PLCurve:
    """Integrate the graph back to a height profile (tails extend end slopes)."""
    v = cg.vertices
    bx = [v[0, 0]]
    segs = []
    h = cg.h_ref
    for i in range(len(v) - 1):
        x0, u0 = v[i]
        x1, u1 = v[i + 1]
        if x1 - x0 <= 1e-13:
            continue
        # u linear on [x0, x1]: h quadratic
        du = (u1 - u0) / (x1 - x0)
        c2 = du / 2.0
        c1 = u0 - du * x0
        c0 = h - (c1 * x0 + c2 * x0 * x0)
        segs.append((c0, c1, c2))
        bx.append(x1)
        h = c0 + c1 * x1 + c2 * x1 * x1
    out = PLCurve(np.asarray(bx), segs, (v[0, 1], v[-1, 1]), validate=False)
    out._y0 = cg.h_ref
    return out


def shear_only(cg: CompleteGraph, dt, direction) -> np.ndarray:
    """Sheared vertices (x -+ dt*u, u) without rectification."""
    sgn = -1.0 if direction == "forward" else 1.0
    v = cg.vertices.copy()
    v[:, 0] = v[:, 0] + sgn * dt * v[:, 1]
    return v


def shear_and_cut(cg: CompleteGraph, dt, direction="forward") -> CompleteGraph:
    """Characteristic transport with equal-area vertical rectification.

    forward: (x, u) -> (x - dt u, u); backward: (x, u) -> (x + dt u, u).
    Overhangs become verticals placed where the branch potentials cross,
    which is exactly the equal-area (Maxwell) position.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be forward or backward")
    dt = float(dt)
    if dt == 0.0:
        return CompleteGraph(cg.vertices.copy(), cg.h_ref)
    v = shear_only(cg, dt, direction)
    # potential (height) along the traversal; quadratic per segment
    u0 = cg.vertices[0, 1]
    sgn = -1.0 if direction == "forward" else 1.0
    h_ref = cg.h_ref - sgn * (-dt) * 0.5 * (1.0 + u0 * u0)
    pieces = []
    P = h_ref
    xs = v[:, 0]
    us = v[:, 1]
    for i in range(len(v) - 1):
        x0, x1 = xs[i], xs[i + 1]
        q0, q1 = us[i], us[i + 1]
        dP = 0.5 * (q0 + q1) * (x1 - x0)
        if abs(x1 - x0) > 1e-14:
            du = (q1 - q0) / (x1 - x0)
            c2 = du / 2.0
            c1 = q0 - du * x0
            c0 = P - (c1 * x0 + c2 * x0 * x0)
            lo, hi = (x0, x1) if x1 > x0 else (x1, x0)
            pieces.append((lo, hi, (c0, c1, c2)))
        P += dP
    # extend the two ends so the envelope is total
    xl, ul = xs[0], us[0]
    Pl = h_ref
    pieces.append((-math.inf, xl, (Pl - ul * xl, ul, 0.0)))
    xr, ur = xs[-1], us[-1]
    pieces.append((xr, math.inf, (P - ur * xr, ur, 0.0)))
    prefer_max = direction == "forward"
    H = _envelope(pieces, prefer_max=prefer_max, span_hint=(float(np.min(xs)), float(np.max(xs))))
    lo_w = float(np.min(xs))
    hi_w = float(np.max(xs))
    return cg_from_curve(H, (lo_w, hi_w))


# ---------------------------------------------------------------------------
# entropy production of a jump


def shock_production(u_left, u_right):
    """sigma*[eta] - [flux] with sigma = (u-+u+)/2 and [phi] = phi(u+)-phi(u-).

    Positive exactly for antishocks (downward jumps); entropic jumps give a
    negative value and contribute 0 to the Jensen-Varadhan rate.
    """
    el, fl = bernoulli_entropy(u_left)
    er, fr = bernoulli_entropy(u_right)
    sigma = 0.5 * (u_left + u_right)
    return sigma * (er - el) - (fr - fl)


# ---------------------------------------------------------------------------
# elementary solutions


@dataclass
class ElementarySolution:
    """Single-layer elementary solution on [0, t].

    h(tau) = max{ HL_bk_{t-tau}(F_k), HL_fw_tau(g) }; antishocks of the
    components survive the maximum and carry the whole entropy production.
    """

    scene: Scene
    g: PLCurve
    bundle: MinimizerBundle
    t: float
    events: list = field(default_factory=list)
    trajectories: list = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False)

    def component(self, k, tau) -> PLCurve:
        key = ("comp", k, round(float(tau), 14))
        if key not in self._cache:
            Fk = self.bundle.curves[k]
            self._cache[key] = hopf_lax(Fk, self.t - tau, "backward")
        return self._cache[key]

    def base(self, tau) -> PLCurve:
        key = ("base", round(float(tau), 14))
        if key not in self._cache:
            self._cache[key] = hopf_lax(self.g, tau, "forward")
        return self._cache[key]

    def profile(self, tau) -> PLCurve:
        key = ("max", round(float(tau), 14))
        if key not in self._cache:
            cur = self.base(tau)
            for k in sorted(self.bundle.curves):
                cur = curve_max(cur, self.component(k, tau))
            self._cache[key] = cur.simplified()
        return self._cache[key]

    def component_shocks(self, k, tau):
        """Concave kinks (xi, b, u_left, u_right) of component k at time tau."""
        c = self.component(k, tau)
        out = []
        for x in c.x:
            x = float(x)
            ml, mr = c.slope_left(x), c.slope_right(x)
            if ml > mr + 1e-9:
                out.append((x, c(x), ml, mr))
        return out

    def shocks(self, tau):
        """All component antishocks at tau, tagged by component."""
        out = []
        for k in sorted(self.bundle.curves):
            for (x, b, ml, mr) in self.component_shocks(k, tau):
                out.append({"component": k, "x": x, "b": b, "u_left": ml, "u_right": mr})
        return out

    def sample_csv(self, taus, xs):
        lines = ["tau,x,h"]
        for tau in taus:
            prof = self.profile(tau)
            for x in xs:
                lines.append(f"{tau!r},{x!r},{prof(float(x))!r}")
        return "\n".join(lines) + "\n"

    def shock_manifest(self):
        return json.dumps(
            {
                "trajectories": [
                    {
                        "component": tr["component"],
                        "points": tr["points"],
                    }
                    for tr in self.trajectories
                ],
                "events": self.events,
            },
            sort_keys=True,
        )


def build_elementary(g: PLCurve, scene: Scene, bundle: MinimizerBundle,
                     n_grid=33) -> ElementarySolution:
    """Construct the single-layer elementary solution for a minimizer bundle.

    Validates terminal pins (h(t, x_j) = a_j on assigned letters) and the
    initial condition h(0) = g, locates shock-merge events by bisection on
    the per-component kink counts, and records sampled trajectories.
    """
    t = scene.t
    for k, w in bundle.words.items():
        Fk = bundle.curves[k]
        for j in w:
            x, a = scene.pins[j - 1]
            if abs(Fk(x) - a) > 1e-9:
                raise ValueError(f"minimizer curve {k} misses pin {j}")
    sol = ElementarySolution(scene=scene, g=g, bundle=bundle, t=t)
    # initial condition check
    xs = np.linspace(g.x[0] - t - 1, g.x[-1] + t + 1, 257)
    h0 = sol.profile(0.0)
    err = float(np.max(np.abs(h0(xs) - g(xs))))
    if err > 1e-9:
        raise ValueError(f"h(0) misses g by {err}")
    # event detection: kink-count changes per component
    events = []
    taus = np.linspace(1e-9, t - 1e-9, n_grid)
    for k in sorted(bundle.curves):
        counts = [len(sol.component_shocks(k, tau)) for tau in taus]
        for i in range(len(taus) - 1):
            if counts[i] != counts[i + 1]:
                lo, hi = taus[i], taus[i + 1]
                nlo = counts[i]
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    if len(sol.component_shocks(k, mid)) == nlo:
                        lo = mid
                    else:
                        hi = mid
                events.append({"component": k, "tau": 0.5 * (lo + hi), "kind": "merge"})
    sol.events = sorted(events, key=lambda e: e["tau"])
    # sampled trajectories (grid plus events)
    tau_samples = sorted(set(float(v) for v in taus) | {e["tau"] + 1e-12 for e in sol.events})
    for k in sorted(bundle.curves):
        tracks = {}
        for tau in tau_samples:
            for i, (x, b, ml, mr) in enumerate(sol.component_shocks(k, tau)):
                tracks.setdefault(i, []).append((tau, x, b, ml, mr))
        for i, pts in tracks.items():
            sol.trajectories.append({"component": k, "points": pts})
    return sol


def jv_rate(sol: ElementarySolution, tol=1e-11) -> float:
    """Jensen-Varadhan rate: integral over tau of the summed positive
    entropy production of the antishocks, adaptive quadrature between
    merge events."""
    t = sol.t

    def integrand(tau):
        total = 0.0
        for s in sol.shocks(tau):
            ul, ur = s["u_left"], s["u_right"]
            if ul <= ur + 1e-12:
                raise ValueError("unclassified or entropic jump among component shocks")
            total += max(shock_production(ul, ur), 0.0)
        return total

    cuts = [0.0] + [e["tau"] for e in sol.events] + [t]
    cuts = sorted(set(round(c, 14) for c in cuts))
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a < 1e-12:
            continue
        val, _ = quad(integrand, a + 1e-11, b - 1e-11, epsabs=tol, epsrel=1e-12, limit=80)
        total += val
    return total


# ---------------------------------------------------------------------------
# grid Hopf-Lax and the mid-projection onto the Hopf-Lax space


def hl_forward_grid(xs, f, t):
    """Discrete forward Hopf-Lax on a uniform grid (brute-force sup)."""
    xs = np.asarray(xs, dtype=float)
    f = np.asarray(f, dtype=float)
    if t <= 0:
        return f.copy()
    diff = xs[None, :] - xs[:, None]  # diff[j, i] = x_i - y_j
    with np.errstate(invalid="ignore"):
        p = np.where(np.abs(diff) <= t, -t / 2 - diff * diff / (2 * t), -np.abs(diff))
    return np.max(f[:, None] + p, axis=0)


def hl_project(profiles, partition, eps, xs):
    """Project sampled profiles onto the Hopf-Lax space via the mid construction.

    profiles: list of height arrays h(t_i) on the grid xs, one per partition
    time (including t_0 = 0).  Checks the approximate sandwich
    HL_fw(h_{i-1}) - eps <= h_i <= h_{i-1} + eps (raising with the first bad
    layer), then returns g with g(0) = h(0) and
    g(t_i) = mid{HL_fw(g(t_{i-1})), h(t_i) + i*eps, g(t_{i-1})}.
    """
    xs = np.asarray(xs, dtype=float)
    hs = [np.asarray(p, dtype=float) for p in profiles]
    if len(hs) != len(partition):
        raise ValueError("need one profile per partition time")
    for i in range(1, len(hs)):
        dt = partition[i] - partition[i - 1]
        fw = hl_forward_grid(xs, hs[i - 1], dt)
        if np.any(hs[i] < fw - eps - 1e-12) or np.any(hs[i] > hs[i - 1] + eps + 1e-12):
            raise ValueError(f"approximate Hopf-Lax sandwich violated at layer {i}")
    out = [hs[0].copy()]
    for i in range(1, len(hs)):
        dt = partition[i] - partition[i - 1]
        a = hl_forward_grid(xs, out[-1], dt)
        b = hs[i] + i * eps
        c = out[-1]
        stack = np.stack([a, b, c])
        mid = np.sum(stack, axis=0) - np.max(stack, axis=0) - np.min(stack, axis=0)
        out.append(mid)
    return out
