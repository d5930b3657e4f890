"""Letter/word combinatorics: up-down marks, the flip-iteration tree,
isle decomposition, and generic-term enumeration.

Words are strictly increasing tuples of 1-based letters with set semantics.
The up/down mark of a letter is read off the taut minimizer: concave kink
or flat = up, convex kink = down.  The up-down iteration rewrites the
all-down operator as a signed sum over tree words; the output signs are
the per-word parities (-1)^{#up}, which is what makes the signed sum
reproduce the all-down operator exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .ratefn import InfeasibleWord, Scene, taut_minimizer

__all__ = [
    "Word",
    "SigmaWord",
    "sigma_star",
    "parity",
    "updown_tree",
    "tree_to_json",
    "flip_expand",
    "isle_decompose",
    "lli",
    "Isle",
    "GenericTrace",
    "GenericTerm",
    "term_enumerate",
    "enumerate_isles",
]

UP = "up"
DOWN = "down"


def Word(letters):
    """Canonical word: strictly increasing tuple of 1-based letters."""
    w = tuple(int(j) for j in letters)
    if any(w[i] >= w[i + 1] for i in range(len(w) - 1)):
        raise ValueError("letters must be strictly increasing")
    return w


@dataclass(frozen=True)
class SigmaWord:
    """A word with an up/down mark per letter."""

    word: tuple
    marks: tuple

    def __post_init__(self):
        if len(self.word) != len(self.marks):
            raise ValueError("marks must index exactly the word's letters")
        if any(m not in (UP, DOWN) for m in self.marks):
            raise ValueError("marks must be 'up' or 'down'")

    def mark_of(self, j):
        return self.marks[self.word.index(j)]


def parity(marks) -> int:
    """(-1)^{number of up marks}."""
    return -1 if sum(1 for m in marks if m == UP) % 2 else 1


# ---------------------------------------------------------------------------
# sigma_star from the taut minimizer


def sigma_star(scene: Scene, k: int, kp: int, word, flat_tol=1e-9):
    """Classify each letter of the word up/down from the minimizer's kinks.

    Returns (SigmaWord, x_left, x_right).  Flat letters (equal one-sided
    slopes) count as up, matching the >= branch of the kink criterion.
    """
    word = Word(word)
    res = taut_minimizer(scene, k, kp, word)
    marks = []
    for j in word:
        ml, mr = res.pin_slopes[j]
        marks.append(UP if ml >= mr - flat_tol else DOWN)
    return SigmaWord(word, tuple(marks)), res.x_left, res.x_right


def make_sigma_oracle(scene: Scene, k: int, kp: int):
    """Memoized word -> mark tuple using the scene's taut minimizers."""
    cache = {}

    def oracle(word):
        w = Word(word)
        if w not in cache:
            sw, _, _ = sigma_star(scene, k, kp, w)
            cache[w] = sw.marks
        return cache[w]

    return oracle


# ---------------------------------------------------------------------------
# the up-down iteration


def updown_tree(scene_or_oracle, k=None, kp=None, full_word=None):
    """Run the up-down iteration from the full word.

    Accepts either (scene, k, kp) - the full word defaults to the (k,k')
    alphabet - or a callable oracle word -> marks together with full_word.
    Returns a list of node dicts {word, kept, parity, activated, parent}
    in construction (BFS) order; `parity` is (-1)^{#up in sigma_star(word)},
    the coefficient of Opu*{word} in the expansion of the all-down operator.
    """
    if callable(scene_or_oracle):
        oracle = scene_or_oracle
        if full_word is None:
            raise ValueError("full_word required with an oracle")
        root = Word(full_word)
    else:
        scene = scene_or_oracle
        oracle = make_sigma_oracle(scene, k, kp)
        root = Word(full_word if full_word is not None else scene.alphabet(k, kp))

    nodes = []
    seen = {}
    queue = [(root, frozenset())]
    seen[(root, frozenset())] = None
    while queue:
        word, kept = queue.pop(0)
        marks = oracle(word) if word else ()
        activated = tuple(
            j for j, m in zip(word, marks) if m == UP and j not in kept
        )
        nodes.append(
            {
                "word": word,
                "kept": kept,
                "parity": parity(marks),
                "activated": activated,
                "parent": seen[(word, kept)],
            }
        )
        # children: delete a nonempty subset of activated letters, keep the rest up
        act = list(activated)
        for mask in range(1, 1 << len(act)):
            deleted = {act[i] for i in range(len(act)) if mask & (1 << i)}
            child = tuple(j for j in word if j not in deleted)
            child_kept = frozenset((set(kept) | set(act)) - deleted)
            key = (child, child_kept)
            if key in seen:
                raise RuntimeError("up-down graph is not a tree; duplicate node key")
            seen[key] = (word, kept)
            queue.append(key)
    return nodes


def tree_to_json(nodes) -> str:
    enc = []
    index = {(n["word"], n["kept"]): i for i, n in enumerate(nodes)}
    for n in nodes:
        enc.append(
            {
                "word": list(n["word"]),
                "kept": sorted(n["kept"]),
                "parity": n["parity"],
                "activated": list(n["activated"]),
                "parent": index.get(n["parent"]) if n["parent"] is not None else None,
            }
        )
    return json.dumps(enc, sort_keys=True)


def flip_expand(full_word, oracle):
    """Symbolic flip expansion of Opu{full, all-down} into Opu*{w} terms.

    Independent of the tree: applies the flip identity letter by letter to
    (word, marks) states until every state's marks equal sigma_star(word).
    Returns {word: coefficient}.
    """
    from collections import defaultdict

    full_word = Word(full_word)
    out = defaultdict(int)
    stack = [(full_word, tuple(DOWN for _ in full_word), 1)]
    while stack:
        word, marks, coef = stack.pop()
        target = oracle(word) if word else ()
        flip_at = None
        for i, j in enumerate(word):
            if marks[i] == DOWN and target[i] == UP:
                flip_at = i
                break
        if flip_at is None:
            out[word] += coef
            continue
        # Opu{... i down ...} = Opu{word minus i} - Opu{... i up ...}
        child = word[:flip_at] + word[flip_at + 1 :]
        child_marks = marks[:flip_at] + marks[flip_at + 1 :]
        stack.append((child, child_marks, coef))
        up_marks = marks[:flip_at] + (UP,) + marks[flip_at + 1 :]
        stack.append((word, up_marks, -coef))
    return dict(out)


# ---------------------------------------------------------------------------
# isles


@dataclass(frozen=True)
class Isle:
    """An indecomposable word factor with its anchor pair."""

    word: tuple
    k: int
    kp: int

    def label(self):
        w = "".join(str(j) for j in self.word) if self.word else "0"
        return f"{w}({self.k}{self.kp})"


def _touch_intervals(scene, res):
    """(k, lo, hi) intervals where the minimizer coincides with p_k(t)."""
    from .curves import parabola_curve

    out = []
    t = scene.t
    for k2 in range(1, scene.m_hat + 1):
        ref = parabola_curve(scene.parabola(k2), t)
        for (lo, hi, c) in res.curve.pieces():
            lo_ = max(lo, res.curve.x[0])
            hi_ = min(hi, res.curve.x[-1])
            if hi_ - lo_ < 1e-10:
                continue
            mid = 0.5 * (lo_ + hi_)
            for (rl, rh, rc) in ref.pieces():
                if rl - 1e-12 <= mid <= rh + 1e-12:
                    if (
                        abs(c[2] - rc[2]) < 1e-9
                        and abs(c[1] - rc[1]) < 1e-8
                        and abs(c[0] - rc[0]) < 1e-8
                    ):
                        out.append((k2, lo_, hi_))
                    break
    out.sort(key=lambda r: r[1])
    return out


def isle_decompose(scene: Scene, k: int, kp: int, word):
    """Cut the minimizer at its parabola touches: the unique isle factorization.

    Returns a list of Isle records whose anchor chain starts at k and ends
    at k'; each factor's own minimizer is piecewise linear strictly between
    its merges (criterion (b) is validated).
    """
    word = Word(word)
    res = taut_minimizer(scene, k, kp, word)
    touches = _touch_intervals(scene, res)
    # interior touches split the word; the two boundary rides belong to k, k'
    interior = [
        (k2, lo, hi)
        for (k2, lo, hi) in touches
        if lo > res.x_left - 1e-10 and hi < res.x_right + 1e-10 and hi - lo > 1e-9
    ]
    cuts = []  # (anchor index, cut abscissa)
    for (k2, lo, hi) in interior:
        cuts.append((k2, lo, hi))
    cuts.sort(key=lambda r: r[1])
    factors = []
    cur_k = k
    cur_letters = list(word)
    lo_edge = res.x_left
    for (k2, lo, hi) in cuts:
        inside = tuple(j for j in cur_letters if scene.pins[j - 1][0] <= lo + 1e-12)
        cur_letters = [j for j in cur_letters if j not in inside]
        factors.append(Isle(inside, cur_k, k2))
        cur_k = k2
    factors.append(Isle(tuple(cur_letters), cur_k, kp))
    for f in factors:
        if not f.word and f.k >= f.kp:
            raise RuntimeError("empty factor with k >= k' violates the word convention")
    return factors


def is_isle(scene: Scene, k: int, kp: int, word) -> bool:
    """Criterion (b): piecewise linear strictly between the merges."""
    word = Word(word)
    try:
        res = taut_minimizer(scene, k, kp, word)
    except InfeasibleWord:
        return False
    for (lo, hi, c) in res.curve.pieces():
        lo_ = max(lo, res.x_left + 1e-10)
        hi_ = min(hi, res.x_right - 1e-10)
        if hi_ - lo_ > 1e-9 and abs(c[2]) > 1e-12:
            return False
    return True


def lli(scene: Scene, left: Isle, right: Isle, criterion="a") -> bool:
    """The separation order: left (k1,k2) strictly precedes right (k2,k3).

    criterion 'a' compares merge abscissae x_R <= x_L; criterion 'c' checks
    letterwise order plus disjointness of the hypograph differences on a
    grid (used as a brute-force cross-check).
    """
    if left.kp != right.k:
        raise ValueError("isles must share the middle anchor")
    res_l = taut_minimizer(scene, left.k, left.kp, left.word)
    res_r = taut_minimizer(scene, right.k, right.kp, right.word)
    if criterion == "a":
        return res_l.x_right <= res_r.x_left + 1e-11
    if criterion == "c":
        import numpy as np

        if left.word and right.word and max(left.word) >= min(right.word):
            return False
        from .curves import parabola_curve

        mid = parabola_curve(scene.parabola(left.kp), scene.t)
        lo = min(res_l.curve.x[0], res_r.curve.x[0]) - 0.5
        hi = max(res_l.curve.x[-1], res_r.curve.x[-1]) + 0.5
        xs = np.linspace(lo, hi, 4001)
        occ_l = res_l.curve(xs) > mid(xs) + 1e-9
        occ_r = res_r.curve(xs) > mid(xs) + 1e-9
        return not bool(np.any(occ_l & occ_r))
    raise ValueError("criterion must be 'a' or 'c'")


# ---------------------------------------------------------------------------
# generic terms


@dataclass(frozen=True)
class GenericTrace:
    """Cyclic product tr(1v Opu{w1} 1v ... Opu{wn} 1v): a closed anchor chain."""

    isles: tuple  # tuple of Isle with matching anchor chain, cyclically

    def __post_init__(self):
        n = len(self.isles)
        for i in range(n):
            if self.isles[i].kp != self.isles[(i + 1) % n].k:
                raise ValueError("anchor chain must close cyclically")

    def letters(self):
        out = set()
        for isle in self.isles:
            out |= set(isle.word)
        return out

    def size(self):
        return len(self.isles)

    def canonical(self):
        rots = [
            tuple(self.isles[i:] + self.isles[:i]) for i in range(len(self.isles))
        ]
        return min(tuple((f.word, f.k, f.kp) for f in r) for r in rots)

    def label(self):
        return "tr(" + " ".join(f.label() for f in self.isles) + ")"


@dataclass(frozen=True)
class GenericTerm:
    """A product of generic traces with preferred/degenerate classification."""

    traces: tuple
    preferred: bool
    degenerate: bool
    size: int

    def label(self):
        return " * ".join(tr.label() for tr in self.traces)


def enumerate_isles(scene: Scene, k: int, kp: int):
    """All isle words over the (k,k') alphabet (plus the empty isle if k<k')."""
    import itertools

    letters = scene.alphabet(k, kp)
    out = []
    if k < kp and is_isle(scene, k, kp, ()):
        out.append(Isle((), k, kp))
    for r in range(1, len(letters) + 1):
        for w in itertools.combinations(letters, r):
            try:
                if is_isle(scene, k, kp, w):
                    out.append(Isle(tuple(w), k, kp))
            except (InfeasibleWord, ValueError):
                continue
    return out


def _trace_preferred(scene, trace: GenericTrace) -> bool:
    n = len(trace.isles)
    for i in range(n):
        a = trace.isles[i]
        b = trace.isles[(i + 1) % n]
        try:
            if lli(scene, a, b):
                return False
        except ValueError:
            return False
    return True


def term_enumerate(scene: Scene, max_ops: int):
    """All generic terms with total operator count <= max_ops.

    Traces are cyclic chains of isles with matching anchors; terms are
    multisets of traces.  Each term carries preferred / degenerate flags;
    callers filter as needed.
    """
    import itertools

    isles = {}
    for k in range(1, scene.m_hat + 1):
        for kp in range(1, scene.m_hat + 1):
            isles[(k, kp)] = enumerate_isles(scene, k, kp)

    # enumerate cyclic chains up to length max_ops, canonicalized
    traces = {}
    def extend(chain, start_k, budget):
        last_kp = chain[-1].kp
        if last_kp == start_k:
            tr = GenericTrace(tuple(chain))
            traces.setdefault(tr.canonical(), tr)
        if budget == 0:
            return
        for nxt in isles.get((last_kp, None), []):
            pass
        for kp in range(1, scene.m_hat + 1):
            for nxt in isles[(last_kp, kp)]:
                extend(chain + [nxt], start_k, budget - 1)

    for k in range(1, scene.m_hat + 1):
        for kp in range(1, scene.m_hat + 1):
            for first in isles[(k, kp)]:
                extend([first], k, max_ops - 1)

    trace_list = sorted(traces.values(), key=lambda tr: (tr.size(), tr.canonical()))
    # multisets of traces within the size budget
    out = []

    def build(idx, current, size):
        if current:
            letters = set()
            for tr in current:
                letters |= tr.letters()
            degenerate = letters != set(range(1, scene.m + 1))
            preferred = all(_trace_preferred(scene, tr) for tr in current)
            out.append(
                GenericTerm(
                    traces=tuple(current),
                    preferred=preferred,
                    degenerate=degenerate,
                    size=size,
                )
            )
        for i in range(idx, len(trace_list)):
            tr = trace_list[i]
            if size + tr.size() > max_ops:
                continue
            build(i, current + [tr], size + tr.size())

    build(0, [], 0)
    return out
