"""Truncated-lattice kernels, the Opu calculus, and Fredholm determinants.

All operators act on a finite window of the integer d-axis.  Q powers are
exact (binomial closed forms); the left/right exponential kernels are
1-d contour integrals evaluated by trapezoid quadrature on per-entry
saddle-radius circles (spectrally accurate and cancellation-free), with an
exact series oracle for cross-checks.  Down marks are eliminated through
the flip identity before any numerics; nested non-circular contours are
realized numerically only inside the small independent oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

__all__ = [
    "Window",
    "Kernel",
    "QuadSpec",
    "LatticeData",
    "lattice_data",
    "default_window",
    "base_kernels",
    "q_pow_kernel",
    "s_left_kernel",
    "s_right_kernel",
    "s_kernel_series",
    "opu",
    "opu_grouped",
    "opu_updown_sum",
    "fredholm_det",
    "under_probability",
    "pinning_probability",
    "opu_oracle_single",
    "opu_oracle_pair",
]


@dataclass(frozen=True)
class Window:
    """Integer d-axis window [mu_min, mu_max], inclusive."""

    mu_min: int
    mu_max: int

    def __post_init__(self):
        if self.mu_min >= self.mu_max:
            raise ValueError("mu_min must be < mu_max")

    @property
    def size(self):
        return self.mu_max - self.mu_min + 1

    def mus(self):
        return np.arange(self.mu_min, self.mu_max + 1)


@dataclass
class Kernel:
    """Dense matrix over a window with row/col index <-> lattice mu mapping."""

    matrix: np.ndarray
    window: Window

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        n = self.window.size
        if self.matrix.shape != (n, n):
            raise ValueError("matrix does not match window")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("kernel entries must be finite")

    def csv_dump(self):
        lines = ["row,col,value"]
        mus = self.window.mus()
        for i, mu in enumerate(mus):
            for j, nu in enumerate(mus):
                v = self.matrix[i, j]
                if v != 0.0:
                    lines.append(f"{mu},{nu},{v!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class QuadSpec:
    """Contour quadrature parameters: radius (None = per-entry saddle), nodes."""

    radius: float | None = None
    nodes: int = 256
    tol: float = 1e-12

    def __post_init__(self):
        if self.radius is not None and not (0.0 < self.radius < 2.0):
            raise ValueError("contour radius must lie in (0, 2)")


# ---------------------------------------------------------------------------
# lattice rounding (integer parts are implicit in the formulas)


@dataclass(frozen=True)
class LatticeData:
    """Integerized scene data: scaled times and (s, d) lattice coordinates."""

    N: int
    T: float  # N * t
    S_hat: tuple
    D_hat: tuple
    S: tuple
    D: tuple
    rounding: tuple  # max |rounded - exact| over all coordinates


def lattice_data(scene, N=None) -> LatticeData:
    """Round N-scaled (s, d) coordinates half-to-even onto the integer lattice."""
    N = int(N if N is not None else scene.N)
    if N <= 0:
        raise ValueError("lattice scale N must be positive")
    sh, dh, s, d = [], [], [], []
    errs = []

    def r(x):
        v = round(N * x)
        errs.append(abs(v - N * x))
        return int(v)

    for k in range(1, scene.m_hat + 1):
        sd = scene.anchor_sd(k)
        sh.append(r(sd.s))
        dh.append(r(sd.d))
    for i in range(1, scene.m + 1):
        sd = scene.pin_sd(i)
        s.append(r(sd.s))
        d.append(r(sd.d))
    return LatticeData(
        N=N,
        T=N * scene.t,
        S_hat=tuple(sh),
        D_hat=tuple(dh),
        S=tuple(s),
        D=tuple(d),
        rounding=(max(errs) if errs else 0.0,),
    )


def default_window(lat: LatticeData, pad=None) -> Window:
    """[min scaled d - B, max scaled d-hat + B]; B covers the Q/Poisson tails."""
    if pad is None:
        pad = 44 + int(3.0 * math.sqrt(lat.T + 1.0))
    lo = min(min(lat.D, default=0), min(lat.D_hat)) - pad
    hi = max(max(lat.D, default=0), max(lat.D_hat)) + pad
    return Window(int(lo), int(hi))


# ---------------------------------------------------------------------------
# base kernels


@lru_cache(maxsize=None)
def _q_pow_1d(n: int, dmin: int, dmax: int):
    """Exact Q^n(delta) for delta in [dmin, dmax] (Fraction -> float)."""
    out = np.zeros(dmax - dmin + 1)
    for idx, delta in enumerate(range(dmin, dmax + 1)):
        if n == 0:
            out[idx] = 1.0 if delta == 0 else 0.0
        elif n > 0:
            if delta >= 0:
                out[idx] = float(
                    Fraction(math.comb(n + delta - 1, delta), 2 ** (n + delta))
                )
        else:
            # coefficients of (2 - z)^m: the paper's displayed inverse drops
            # the 2^{m-delta} factor; this one satisfies Q Q^{-1} = Id exactly
            m = -n
            if 0 <= delta <= m:
                out[idx] = float(math.comb(m, delta) * 2 ** (m - delta) * (-1) ** delta)
    return out


def q_pow_kernel(n: int, window: Window) -> Kernel:
    """Q^n as a Toeplitz matrix on the window; n < 0 uses the exact inverse."""
    W = window.size
    span = W - 1
    vals = _q_pow_1d(int(n), -span, span)
    idx = np.arange(W)
    mat = vals[(idx[:, None] - idx[None, :]) + span]
    return Kernel(mat, window)


_RADIUS_GRID = np.concatenate(
    [np.geomspace(0.02, 0.5, 60), np.linspace(0.5, 1.98, 120)]
)


def _saddle_radius(t, a_log2mz, a_logz):
    """Radius minimizing the circle's peak integrand magnitude.

    The integrand is e^{(t/2) z} (2-z)^{a1} z^{-a2}; its maximum over the
    circle |z| = r is controlled by the theta = 0 and theta = pi values,
    and choosing r to minimize that bound keeps the trapezoid sum
    cancellation-free.
    """
    a1, a2 = float(a_log2mz), float(a_logz)
    r = _RADIUS_GRID
    log2mz = np.log(2.0 + r) if a1 > 0 else np.log(2.0 - r)
    G = 0.5 * t * r + a1 * log2mz - a2 * np.log(r)
    return float(r[int(np.argmin(G))])


def _contour_kernel_1d(t, n, deltas, kind, quad: QuadSpec):
    """Trapezoid contour integrals for the left/right exponential kernels.

    kind 'left':  f(z) = e^{(t/2)(z-1)} (2-z)^n z^{-1-delta}
    kind 'right': f(z) = e^{(t/2)(z-1)} z^{-n} (2-z)^{-1-delta}
    """
    out = np.zeros(len(deltas))
    for idx, delta in enumerate(deltas):
        if kind == "left" and delta < 0:
            continue  # analytic integrand: exact zero
        if kind == "right" and n <= 0:
            continue
        if quad.radius is not None:
            r = quad.radius
        elif kind == "left":
            r = _saddle_radius(t, n, 1 + delta)
        else:
            r = _saddle_radius(t, -(1 + delta), n)
        M = quad.nodes
        prev = None
        est = None
        for attempt in range(7):
            theta = 2 * np.pi * np.arange(M) / M
            z = r * np.exp(1j * theta)
            if kind == "left":
                vals = np.exp(0.5 * t * (z - 1)) * (2 - z) ** n * z ** (-1 - delta)
            else:
                vals = np.exp(0.5 * t * (z - 1)) * z ** (-n) * (2 - z) ** (-1 - delta)
            est = float(np.mean(vals * z).real)
            if prev is not None:
                if abs(est - prev) <= quad.tol * max(1.0, abs(est)):
                    break
                # huge coefficient-extraction entries cannot beat the float
                # cancellation floor; relative 1e-8 suffices since they only
                # ever multiply exponentially small partners
                if attempt >= 3 and abs(est - prev) <= 1e-8 * abs(est):
                    break
            prev = est
            M *= 2
        else:
            raise RuntimeError(
                f"contour quadrature failed to stabilize for {kind} kernel "
                f"(t={t}, n={n}, delta={delta})"
            )
        out[idx] = est
    return out


@lru_cache(maxsize=None)
def _s_kernel_cached(t: float, n: int, kind: str, dmin: int, dmax: int,
                     radius, nodes: int, tol: float):
    quad = QuadSpec(radius=radius, nodes=nodes, tol=tol)
    deltas = list(range(dmin, dmax + 1))
    return _contour_kernel_1d(t, n, deltas, kind, quad)


def _toeplitz_from_1d(vals, window: Window):
    W = window.size
    span = W - 1
    idx = np.arange(W)
    return vals[(idx[:, None] - idx[None, :]) + span]


def s_left_kernel(t, n, window: Window, quad: QuadSpec = QuadSpec()) -> Kernel:
    """S-left with scaled time t and exponent n (rows mu-hat, cols mu)."""
    span = window.size - 1
    vals = _s_kernel_cached(float(t), int(n), "left", -span, span,
                            quad.radius, quad.nodes, quad.tol)
    return Kernel(_toeplitz_from_1d(np.asarray(vals), window), window)


def s_right_kernel(t, n, window: Window, quad: QuadSpec = QuadSpec()) -> Kernel:
    """S-right with scaled time t and exponent n (rows mu, cols mu-hat)."""
    span = window.size - 1
    vals = _s_kernel_cached(float(t), int(n), "right", -span, span,
                            quad.radius, quad.nodes, quad.tol)
    return Kernel(_toeplitz_from_1d(np.asarray(vals), window), window)


def base_kernels(kind, window: Window, quad: QuadSpec = QuadSpec(), **params) -> Kernel:
    """Spec surface: kind in {Q_pow, Q_inv, S_left, S_right} with params."""
    if kind == "Q_pow":
        return q_pow_kernel(params["n"], window)
    if kind == "Q_inv":
        return q_pow_kernel(-1, window)
    if kind == "S_left":
        return s_left_kernel(params["t"], params["n"], window, quad)
    if kind == "S_right":
        return s_right_kernel(params["t"], params["n"], window, quad)
    raise ValueError(f"unknown kernel kind {kind!r}")


def s_kernel_series(t, n, delta, kind, dps=40):
    """Exact power-series oracle for the S kernels (mpmath, slow)."""
    import mpmath as mp

    with mp.workdps(dps):
        tt = mp.mpf(t) / 2
        if kind == "left":
            if delta < 0:
                return 0.0
            # coefficient of z^delta in e^{t/2 (z-1)} (2-z)^n
            total = mp.mpf(0)
            if n >= 0:
                lmax = min(n, delta)
                for l in range(lmax + 1):
                    c = mp.binomial(n, l) * mp.mpf(2) ** (n - l) * (-1) ** l
                    total += c * tt ** (delta - l) / mp.factorial(delta - l)
            else:
                m = -n
                l = 0
                while True:
                    if l > delta:
                        break
                    c = mp.binomial(m + l - 1, l) * mp.mpf(2) ** (n - l)
                    total += c * tt ** (delta - l) / mp.factorial(delta - l)
                    l += 1
            return float(total * mp.e ** (-tt * 2 / 2))
        # right kernel: coefficient of z^{n-1} in e^{t/2(z-1)} (2-z)^{-1-delta}
        if n <= 0:
            return 0.0
        total = mp.mpf(0)
        if delta >= 0:
            for l in range(n):
                c = mp.binomial(delta + l, l) * mp.mpf(2) ** (-1 - delta - l)
                total += c * tt ** (n - 1 - l) / mp.factorial(n - 1 - l)
        else:
            p = -1 - delta  # (2-z)^p, polynomial of degree p >= 0
            for l in range(min(p, n - 1) + 1):
                c = mp.binomial(p, l) * mp.mpf(2) ** (p - l) * (-1) ** l
                total += c * tt ** (n - 1 - l) / mp.factorial(n - 1 - l)
        return float(total * mp.e ** (-tt))


# ---------------------------------------------------------------------------
# Opu operators


def _indicator(window: Window, cutoff, above: bool):
    mus = window.mus()
    return (mus >= cutoff).astype(float) if above else (mus < cutoff).astype(float)


class OpuFactory:
    """Builds Opu matrices for one lattice scene over a fixed window.

    All down marks are flipped away before numerics; the all-up operators
    are explicit products S_left . 1-up . Q-powers ... 1-up . S_right.
    """

    def __init__(self, lat: LatticeData, window: Window, quad: QuadSpec = QuadSpec()):
        self.lat = lat
        self.window = window
        self.quad = quad
        self._memo = {}

    def ind_up_pin(self, i):
        return _indicator(self.window, self.lat.D[i - 1], above=True)

    def ind_down_pin(self, i):
        return _indicator(self.window, self.lat.D[i - 1], above=False)

    def ind_down_anchor(self, k):
        return _indicator(self.window, self.lat.D_hat[k - 1], above=False)

    def q_pow(self, n):
        return q_pow_kernel(n, self.window).matrix

    def opu_empty(self, k, kp):
        return self.q_pow(self.lat.S_hat[kp - 1] - self.lat.S_hat[k - 1])

    def all_up(self, k, kp, word):
        key = ("allup", k, kp, tuple(word))
        if key in self._memo:
            return self._memo[key]
        lat = self.lat
        if not word:
            out = self.opu_empty(k, kp)
        else:
            w = list(word)
            mat = s_left_kernel(
                lat.T, lat.S_hat[k - 1] - lat.S[w[0] - 1], self.window, self.quad
            ).matrix
            mat = mat * self.ind_up_pin(w[0])[None, :]
            for a, b in zip(w[:-1], w[1:]):
                mat = mat @ self.q_pow(lat.S[b - 1] - lat.S[a - 1])
                mat = mat * self.ind_up_pin(b)[None, :]
            right = s_right_kernel(
                lat.T, lat.S_hat[kp - 1] - lat.S[w[-1] - 1], self.window, self.quad
            ).matrix
            out = mat @ right
        self._memo[key] = out
        return out

    def opu(self, k, kp, word, marks=None):
        """Opu_{kk'}{word with marks}; marks default to all-down."""
        word = tuple(word)
        if marks is None:
            marks = tuple("down" for _ in word)
        marks = tuple(marks)
        key = ("opu", k, kp, word, marks)
        if key in self._memo:
            return self._memo[key]
        flip_at = next((i for i, m in enumerate(marks) if m == "down"), None)
        if flip_at is None:
            out = self.all_up(k, kp, word)
        else:
            shorter = word[:flip_at] + word[flip_at + 1 :]
            shorter_marks = marks[:flip_at] + marks[flip_at + 1 :]
            upped = marks[:flip_at] + ("up",) + marks[flip_at + 1 :]
            out = self.opu(k, kp, shorter, shorter_marks) - self.opu(k, kp, word, upped)
        self._memo[key] = out
        return out

    def opu_grouped(self, groups):
        """Opu{(w1)_{k1}(w2)_{k2}...}: left fold of the factorization identity.

        groups: [(word, marks, k_left, k_right)], with consecutive anchors
        matching; the linking identity is
        Opu{(u)_k(v)} = Opu{u union v} - Opu{u} 1down_k Opu{v}.
        """
        groups = list(groups)
        for (ga, gb) in zip(groups[:-1], groups[1:]):
            if ga[3] != gb[2]:
                raise ValueError("group anchor chain must match")
        if len(groups) == 1:
            w, marks, k, kp = groups[0]
            return self.opu(k, kp, w, marks)
        (w1, m1, k0, kmid), (w2, m2, _, k2) = groups[0], groups[1]
        if w1 and w2 and max(w1) >= min(w2):
            raise ValueError("grouped words must be strictly letter-ordered")
        merged = (tuple(w1) + tuple(w2), tuple(m1) + tuple(m2), k0, k2)
        left = self.opu_grouped([merged] + groups[2:])
        right = self.opu(k0, kmid, w1, m1) * self.ind_down_anchor(kmid)[None, :]
        right = right @ self.opu_grouped(groups[1:])
        return left - right

    def padding_report(self, mat, edge=5):
        """Largest entry magnitude within `edge` rows/cols of the window edge."""
        peak = float(np.max(np.abs(mat))) if mat.size else 0.0
        if peak == 0.0:
            return {"peak": 0.0, "edge": 0.0, "ok": True}
        e = float(
            max(
                np.max(np.abs(mat[:edge, :])),
                np.max(np.abs(mat[-edge:, :])),
                np.max(np.abs(mat[:, :edge])),
                np.max(np.abs(mat[:, -edge:])),
            )
        )
        return {"peak": peak, "edge": e, "ok": e <= 1e-10 * max(1.0, peak)}


def opu(scene, word, sigma, k, kp, window=None, N=None, quad=QuadSpec()):
    """Spec surface: Opu kernel for a scene word with up/down marks."""
    lat = lattice_data(scene, N)
    window = window or default_window(lat)
    fac = OpuFactory(lat, window, quad)
    marks = sigma.marks if hasattr(sigma, "marks") else tuple(sigma)
    mat = fac.opu(k, kp, tuple(word), marks)
    rep = fac.padding_report(mat)
    if not rep["ok"]:
        raise RuntimeError(
            f"window too small: edge mass {rep['edge']:.2e} vs peak {rep['peak']:.2e}"
        )
    return Kernel(mat, window)


def opu_grouped(scene, groups, window=None, N=None, quad=QuadSpec()):
    """Spec surface: grouped operator via the factorization identity."""
    lat = lattice_data(scene, N)
    window = window or default_window(lat)
    fac = OpuFactory(lat, window, quad)
    return Kernel(fac.opu_grouped(groups), window)


def opu_updown_sum(scene, k, kp, window=None, N=None, quad=QuadSpec(),
                   sigma_oracle=None, full_word=None, drop_empty=None):
    """Tree-signed sum of sandwiched Opu* kernels for the (k,k') entry.

    Returns sum over tree nodes of parity * 1down_k Opu{w, sigma*(w)} 1down_k',
    dropping the empty word when k >= k' (where it cancels the -Opu{empty}
    term of the determinant formula).
    """
    from .words import updown_tree

    lat = lattice_data(scene, N)
    window = window or default_window(lat)
    fac = OpuFactory(lat, window, quad)
    if sigma_oracle is None:
        nodes = updown_tree(scene, k, kp, full_word=full_word)
        from .words import make_sigma_oracle

        oracle = make_sigma_oracle(scene, k, kp)
    else:
        oracle = sigma_oracle
        nodes = updown_tree(oracle, full_word=full_word)
    if drop_empty is None:
        drop_empty = k >= kp
    dk = fac.ind_down_anchor(k)
    dkp = fac.ind_down_anchor(kp)
    total = np.zeros((window.size, window.size))
    for n in nodes:
        w = n["word"]
        if drop_empty and not w:
            continue
        marks = oracle(w) if w else ()
        mat = fac.opu(k, kp, w, marks)
        total += n["parity"] * (dk[:, None] * mat * dkp[None, :])
    return Kernel(total, window)


# ---------------------------------------------------------------------------
# Fredholm determinants


def _assemble(blocks):
    if isinstance(blocks, np.ndarray):
        return blocks
    if isinstance(blocks, Kernel):
        return blocks.matrix
    rows = []
    for row in blocks:
        rows.append([b.matrix if isinstance(b, Kernel) else np.asarray(b) for b in row])
    return np.block(rows)


def fredholm_det(blocks, backend="direct", tol=1e-16):
    """det(Id + A) for a matrix or an m x m array of kernels/blocks.

    backend 'direct' evaluates the dense determinant; 'simon' runs the
    trace-power recursion D_n/n! = (1/n) sum_j (-1)^{j-1} tr(A^j) D_{n-j}/(n-j)!
    truncated when the increment falls below tol * partial sum; 'both'
    returns (direct, simon).
    """
    A = _assemble(blocks)
    n = A.shape[0]
    if backend in ("direct", "both"):
        direct = float(np.linalg.det(np.eye(n) + A))
        if backend == "direct":
            return direct
    # simon recursion
    traces = []
    P = [1.0]
    total = 1.0
    Ak = np.eye(n)
    max_terms = min(4 * n + 20, 400)
    for j in range(1, max_terms + 1):
        Ak = Ak @ A
        traces.append(float(np.trace(Ak)))
        pn = 0.0
        for jj in range(1, j + 1):
            pn += (-1) ** (jj - 1) * traces[jj - 1] * P[j - jj]
        pn /= j
        P.append(pn)
        total += pn
        if abs(pn) < tol * max(1.0, abs(total)) and j >= 3:
            break
        if j > n and abs(pn) > 1e6 * max(1.0, abs(total)):
            raise RuntimeError("trace-power recursion diverges beyond the dimension")
    simon = total
    if backend == "simon":
        return simon
    if backend == "both":
        return direct, simon
    raise ValueError(f"unknown backend {backend!r}")


# ---------------------------------------------------------------------------
# probabilities


def _under_matrix(fac: OpuFactory, scene, d_override=None):
    """Block matrix of the determinant formula (full-word, all-down)."""
    lat = fac.lat
    m_hat = scene.m_hat
    full = tuple(range(1, scene.m + 1))
    W = fac.window.size
    blocks = []
    # pin indicators may be overridden with perturbed cut levels (d^rho)
    cuts = list(lat.D) if d_override is None else list(d_override)
    mus = fac.window.mus()

    def ind_up(i):
        return (mus >= cuts[i - 1]).astype(float)

    def all_up_cut(k, kp, word):
        if not word:
            return fac.opu_empty(k, kp)
        w = list(word)
        mat = s_left_kernel(lat.T, lat.S_hat[k - 1] - lat.S[w[0] - 1], fac.window,
                            fac.quad).matrix
        mat = mat * ind_up(w[0])[None, :]
        for a, b in zip(w[:-1], w[1:]):
            mat = mat @ fac.q_pow(lat.S[b - 1] - lat.S[a - 1])
            mat = mat * ind_up(b)[None, :]
        right = s_right_kernel(lat.T, lat.S_hat[kp - 1] - lat.S[w[-1] - 1],
                               fac.window, fac.quad).matrix
        return mat @ right

    def opu_all_down(k, kp):
        # flip expansion: Opu{full all-down} = sum_w (-1)^{|w|} Opu{w all-up}
        total = np.zeros((W, W))
        import itertools

        for r in range(0, len(full) + 1):
            for w in itertools.combinations(full, r):
                total += (-1) ** len(w) * all_up_cut(k, kp, w)
        return total

    for k in range(1, m_hat + 1):
        row = []
        dk = fac.ind_down_anchor(k)
        for kp in range(1, m_hat + 1):
            entry = opu_all_down(k, kp)
            if k >= kp:
                entry = entry - fac.opu_empty(k, kp)
            dkp = fac.ind_down_anchor(kp)
            row.append(dk[:, None] * entry * dkp[None, :])
        blocks.append(row)
    return np.block(blocks)


def under_probability(scene, window=None, N=None, quad=QuadSpec(),
                      d_override=None, full_output=False):
    """P[h(t, x_i) <= a_i for all pins] via the determinantal formula.

    `d_override` replaces the scaled pin cut levels (used by the
    inclusion-exclusion sum); the report carries the applied rounding,
    window, and padding check, and flags values outside [-eps, 1+eps].
    """
    lat = lattice_data(scene, N)
    window = window or default_window(lat)
    fac = OpuFactory(lat, window, quad)
    A = _under_matrix(fac, scene, d_override=d_override)
    rep = fac.padding_report(A)
    if not rep["ok"]:
        raise RuntimeError(
            f"window padding check failed: edge {rep['edge']:.2e} vs peak {rep['peak']:.2e};"
            " increase the window pad"
        )
    val = fredholm_det(A, backend="direct")
    eps = 1e-8
    flagged = not (-eps <= val <= 1 + eps)
    out = {
        "value": float(min(max(val, -eps), 1.0 + eps)) if flagged else float(val),
        "raw": float(val),
        "flagged": flagged,
        "window": (window.mu_min, window.mu_max),
        "rounding": lat.rounding[0],
        "lattice": {"S_hat": lat.S_hat, "D_hat": lat.D_hat, "S": lat.S, "D": lat.D},
    }
    if full_output:
        out["matrix"] = A
    return out


def pinning_probability(scene, d_minus, d_plus, window=None, N=None,
                        quad=QuadSpec()):
    """Inclusion-exclusion sum of under probabilities over the d bands.

    d_minus/d_plus are macroscopic levels per pin (d_i^- < d_i^+); the
    lattice cuts N*d are used directly in the indicators.
    """
    import itertools

    m = scene.m
    d_minus = [float(v) for v in d_minus]
    d_plus = [float(v) for v in d_plus]
    if len(d_minus) != m or len(d_plus) != m:
        raise ValueError("need one band per pin")
    if any(a >= b for a, b in zip(d_minus, d_plus)):
        raise ValueError("need d_minus < d_plus componentwise")
    lat = lattice_data(scene, N)
    window = window or default_window(lat)
    total = 0.0
    pieces = {}
    for rho in itertools.product((-1, 1), repeat=m):
        cuts = [
            lat.N * (d_plus[i] if rho[i] > 0 else d_minus[i]) for i in range(m)
        ]
        res = under_probability(scene, window=window, N=lat.N, quad=quad,
                                d_override=cuts)
        sign = 1
        for r in rho:
            sign *= r
        total += sign * res["raw"]
        pieces[rho] = res["raw"]
    if total < -1e-10:
        raise RuntimeError(f"pinning probability {total} below cancellation slack")
    return {"value": float(total), "pieces": pieces,
            "window": (window.mu_min, window.mu_max), "rounding": lat.rounding[0]}


# ---------------------------------------------------------------------------
# independent contour oracles (small N cross-checks)


def opu_oracle_single(scene, i, mark, k, kp, window=None, N=None,
                      M0=192, M1=384, Mres=96):
    """Direct nested-contour evaluation of Opu{ i with one mark } at small N.

    Realizes the defining double contour integral: circles for the up mark;
    for the down mark the inner cycle is a main circle around 0 plus a small
    circle around 2 - z0 (the two together enclose {0, 2-z0} but not 2).
    """
    lat = lattice_data(scene, N)
    window = window or default_window(lat)
    T = lat.T
    Sh, Dh, S, D = lat.S_hat, lat.D_hat, lat.S, lat.D
    n_left = S[i - 1] - Sh[k - 1]  # exponent of (2-z)^{-n_left}
    n_right = Sh[kp - 1] - S[i - 1]  # exponent of z^{-n_right}
    mus = window.mus().astype(float)
    di = float(D[i - 1])

    if mark == "up":
        r0, r1 = 0.8, 0.8
    else:
        r0, r1 = 0.5, 1.2
    th0 = 2 * np.pi * (np.arange(M0) + 0.5) / M0
    z0 = r0 * np.exp(1j * th0)
    th1 = 2 * np.pi * (np.arange(M1) + 0.5) / M1
    z1 = r1 * np.exp(1j * th1)

    # A[a, p] = phi_left(z0_a; mu_p) * z0_a / M0
    A = (
        np.exp(0.5 * T * (z0 - 1))[:, None]
        * z0[:, None] ** (-1.0 - (mus[None, :] - di))
        * (2 - z0)[:, None] ** (-float(n_left))
        * z0[:, None]
        / M0
    )
    # B[b, q] = phi_right(z1_b; mu'_q) * z1_b / M1
    def phi_right(w):
        return (
            np.exp(0.5 * T * (w - 1))[:, None]
            * w[:, None] ** (-float(n_right))
            * (2 - w)[:, None] ** (-1.0 - (di - mus[None, :]))
        )

    sgn = 1.0 if mark == "up" else -1.0
    B = phi_right(z1) * z1[:, None] / M1
    R = sgn * (2 - z1)[None, :] / (2 - z1[None, :] - z0[:, None])
    out = np.real(A.T @ R @ B)
    if mark == "down":
        # add the residual cycle: small circle around 2 - z0_a
        rho = r0 / 3.0
        thc = 2 * np.pi * (np.arange(Mres) + 0.5) / Mres
        ring = rho * np.exp(1j * thc)
        extra = np.zeros((len(mus), len(mus)))
        for a in range(M0):
            w = 2 - z0[a] + ring  # (Mres,)
            Rv = sgn * (2 - w) / (2 - w - z0[a])
            Bv = phi_right(w) * (ring / Mres)[:, None] * Rv[:, None]
            extra += np.real(np.outer(A[a], np.sum(Bv, axis=0)))
        out = out + extra
    return Kernel(out, window)


def opu_oracle_pair(scene, i, j, k, kp, window=None, N=None,
                    M0=128, M1=192, M2=192):
    """Direct triple-contour evaluation of Opu{ ij both up } at small N."""
    lat = lattice_data(scene, N)
    window = window or default_window(lat)
    T = lat.T
    Sh, S, D = lat.S_hat, lat.S, lat.D
    mus = window.mus().astype(float)
    di, dj = float(D[i - 1]), float(D[j - 1])
    n_left = S[i - 1] - Sh[k - 1]
    n_rw = S[j - 1] - S[i - 1]
    mu_rw = D[i - 1] - D[j - 1]
    n_right = Sh[kp - 1] - S[j - 1]
    r0, r1, r2 = 0.5, 0.8, 1.0
    z0 = r0 * np.exp(1j * 2 * np.pi * (np.arange(M0) + 0.5) / M0)
    z1 = r1 * np.exp(1j * 2 * np.pi * (np.arange(M1) + 0.5) / M1)
    z2 = r2 * np.exp(1j * 2 * np.pi * (np.arange(M2) + 0.5) / M2)
    A = (
        np.exp(0.5 * T * (z0 - 1))[:, None]
        * z0[:, None] ** (-1.0 - (mus[None, :] - di))
        * (2 - z0)[:, None] ** (-float(n_left))
        * z0[:, None]
        / M0
    )  # (M0, W)
    frw = z1 ** (-1.0 - mu_rw) * (2 - z1) ** (-float(n_rw))
    U = (z1[None, :] / (z1[None, :] - z0[:, None])) * frw[None, :] * (z1 / M1)[None, :]
    # (M0, M1)
    B = (
        np.exp(0.5 * T * (z2 - 1))[:, None]
        * z2[:, None] ** (-float(n_right))
        * (2 - z2)[:, None] ** (-1.0 - (dj - mus[None, :]))
        * z2[:, None]
        / M2
    )  # (M2, W)
    V = (2 - z2)[None, :] / (2 - z2[None, :] - z1[:, None])  # (M1, M2)
    out = np.real(A.T @ (U @ (V @ B)))
    return Kernel(out, window)
