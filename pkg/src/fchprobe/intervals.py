"""Canonical sets of closed integer year intervals, and the MTL-to-interval compiler.

An ``IntervalSet`` is kept sorted, disjoint and maximally coalesced: two
spans are merged whenever they overlap or touch (``[1,2]`` and ``[3,4]``
become ``[1,4]``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

from . import mtl
from .mtl import TimeBound

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IntervalSet:
    spans: tuple = ()

    @classmethod
    def from_spans(cls, spans: Iterable) -> "IntervalSet":
        out = []
        for a, b in sorted((int(a), int(b)) for a, b in spans):
            if a > b:
                continue
            if out and a <= out[-1][1] + 1:
                if b > out[-1][1]:
                    out[-1][1] = b
            else:
                out.append([a, b])
        return cls(tuple((a, b) for a, b in out))

    @classmethod
    def from_points(cls, points: Iterable[int]) -> "IntervalSet":
        return cls.from_spans((t, t) for t in points)

    @classmethod
    def from_mask(cls, mask: np.ndarray, offset: int) -> "IntervalSet":
        """Spans of the true runs of ``mask``; index ``i`` is point ``offset + i``."""
        m = np.asarray(mask, dtype=np.int8)
        if m.size == 0:
            return cls()
        edges = np.diff(np.concatenate(([0], m, [0])))
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1) - 1
        return cls(tuple((int(a) + offset, int(b) + offset) for a, b in zip(starts, ends)))

    @classmethod
    def from_json(cls, data) -> "IntervalSet":
        return cls.from_spans(tuple(pair) for pair in data)

    def to_json(self) -> list:
        return [[a, b] for a, b in self.spans]

    def __str__(self):
        if not self.spans:
            return "∅"
        return " ∪ ".join(f"[{a},{b}]" for a, b in self.spans)

    def __iter__(self):
        return iter(self.spans)

    def __len__(self):
        return len(self.spans)

    def __bool__(self):
        return bool(self.spans)

    def __contains__(self, t):
        return member(self, t)

    def size(self) -> int:
        """Number of integer points covered."""
        return sum(b - a + 1 for a, b in self.spans)

    def points(self):
        for a, b in self.spans:
            yield from range(a, b + 1)

    def union(self, other: "IntervalSet") -> "IntervalSet":
        return union(self, other)

    def intersect(self, other: "IntervalSet") -> "IntervalSet":
        return intersect(self, other)

    def complement(self, universe) -> "IntervalSet":
        return complement(self, universe)

    def clip(self, lo: int, hi: int) -> "IntervalSet":
        return IntervalSet.from_spans((max(a, lo), min(b, hi)) for a, b in self.spans)

    def issubset(self, other: "IntervalSet") -> bool:
        return intersect(self, other) == self


EMPTY = IntervalSet()


def union(a: IntervalSet, b: IntervalSet) -> IntervalSet:
    return IntervalSet.from_spans(a.spans + b.spans)


def intersect(a: IntervalSet, b: IntervalSet) -> IntervalSet:
    out = []
    i = j = 0
    sa, sb = a.spans, b.spans
    while i < len(sa) and j < len(sb):
        lo = max(sa[i][0], sb[j][0])
        hi = min(sa[i][1], sb[j][1])
        if lo <= hi:
            out.append((lo, hi))
        if sa[i][1] < sb[j][1]:
            i += 1
        else:
            j += 1
    # inputs are canonical, so the pieces are already disjoint and non-adjacent
    return IntervalSet(tuple(out))


def _bounds(universe) -> tuple:
    if isinstance(universe, TimeBound):
        return universe.lo, universe.hi
    lo, hi = universe
    if lo > hi:
        raise ValueError(f"empty universe [{lo},{hi}]")
    return lo, hi


def complement(a: IntervalSet, universe) -> IntervalSet:
    lo, hi = _bounds(universe)
    out = []
    cursor = lo
    for s, e in a.spans:
        if s < lo or e > hi:
            raise ValueError(f"span [{s},{e}] outside universe [{lo},{hi}]")
        if s > cursor:
            out.append((cursor, s - 1))
        cursor = e + 1
    if cursor <= hi:
        out.append((cursor, hi))
    return IntervalSet(tuple(out))


def member(a: IntervalSet, t: int) -> bool:
    # spans are few; a linear scan beats bisect bookkeeping here
    for s, e in a.spans:
        if s <= t <= e:
            return True
        if s > t:
            return False
    return False


# --- compiler -------------------------------------------------------------------


class UntilMode(str, Enum):
    PAPER = "paper"
    EXACT = "exact"


@dataclass(frozen=True)
class CompileMode:
    until_mode: UntilMode = UntilMode.PAPER

    def __post_init__(self):
        object.__setattr__(self, "until_mode", UntilMode(self.until_mode))


@dataclass
class Divergence:
    """A year where the helper-chain Until and the exact Until disagree."""

    formula: str
    paper: IntervalSet
    exact: IntervalSet
    witness: int

    def to_json(self) -> dict:
        return {
            "formula": self.formula,
            "paper": self.paper.to_json(),
            "exact": self.exact.to_json(),
            "witness": self.witness,
        }


class MtlCompiler:
    """Bottom-up translation of a formula into the IntervalSet where it holds.

    Intermediate sets live on the window ``[u_lo, u_hi + horizon]`` so that
    negation near the upper edge of the universe agrees with the point
    semantics (events are false past the universe); the final set is clipped
    to the universe. One method per operator so the rules can be overridden
    individually.
    """

    def __init__(self, mode: CompileMode | str = CompileMode(), track_divergence: bool = True):
        if isinstance(mode, str):
            mode = CompileMode(mode)
        self.mode = mode
        self.track_divergence = track_divergence
        self.divergences: list[Divergence] = []

    def compile(self, h: mtl.History, phi: mtl.Formula) -> IntervalSet:
        mtl._check_atoms(h, phi)
        u = h.universe
        self.window = (u.lo, u.hi + mtl.horizon(phi))
        self.history = h
        return self.visit(phi).clip(u.lo, u.hi)

    def visit(self, phi) -> IntervalSet:
        lo, hi = self.window
        if isinstance(phi, mtl.AP):
            res = self.ap(phi)
        elif isinstance(phi, mtl.Finally):
            res = self.finally_(phi.bound, self.visit(phi.child))
        elif isinstance(phi, mtl.Globally):
            res = self.globally(phi.bound, self.visit(phi.child))
        elif isinstance(phi, mtl.Next):
            res = self.next_(self.visit(phi.child))
        elif isinstance(phi, mtl.Until):
            res = self.until(phi, self.visit(phi.left), self.visit(phi.right))
        elif isinstance(phi, mtl.Not):
            res = complement(self.visit(phi.child), self.window)
        elif isinstance(phi, mtl.And):
            res = intersect(self.visit(phi.left), self.visit(phi.right))
        else:
            res = union(self.visit(phi.left), self.visit(phi.right))
        return res.clip(lo, hi)

    def ap(self, phi: mtl.AP) -> IntervalSet:
        return IntervalSet.from_spans(self.history.events[phi.name])

    def finally_(self, b: TimeBound, child: IntervalSet) -> IntervalSet:
        return IntervalSet.from_spans((n1 - b.hi, n2 - b.lo) for n1, n2 in child)

    def globally(self, b: TimeBound, child: IntervalSet) -> IntervalSet:
        # spans are maximal; shorter ones than the window vanish (start > end)
        return IntervalSet.from_spans((n1 - b.lo, n2 - b.hi) for n1, n2 in child)

    def next_(self, child: IntervalSet) -> IntervalSet:
        return IntervalSet.from_spans((n1 - 1, n2 - 1) for n1, n2 in child)

    def until(self, phi: mtl.Until, left: IntervalSet, right: IntervalSet) -> IntervalSet:
        exact = until_exact(phi.bound, left, right)
        if self.mode.until_mode is UntilMode.EXACT:
            return exact
        paper = until_paper(phi.bound, left, right)
        if self.track_divergence and paper != exact:
            u = self.history.universe
            p_in = paper.clip(u.lo, u.hi)
            e_in = exact.clip(u.lo, u.hi)
            if p_in != e_in:
                diff = union(
                    intersect(p_in, complement(e_in, (u.lo, u.hi))),
                    intersect(e_in, complement(p_in, (u.lo, u.hi))),
                )
                d = Divergence(mtl.format_mtl(phi), p_in, e_in, diff.spans[0][0])
                log.debug("until divergence for %s at %d: paper %s, exact %s", d.formula, d.witness, p_in, e_in)
                self.divergences.append(d)
        return paper


def _until_chain(b: TimeBound, left: IntervalSet, right: IntervalSet, slack: int) -> IntervalSet:
    """Helper chain per maximal left span ``[n1, n2]``.

    ``slack`` = 0 requires the left operand at ``t`` itself, ``slack`` = 1
    only strictly after ``t``. Needs ``b.lo >= 1``.
    """
    pieces = []
    for n1, n2 in left:
        start = n1 - slack
        helper1 = IntervalSet.from_spans([(start + b.lo, n2 + 1)])
        helper2 = intersect(helper1, right)
        reach = IntervalSet.from_spans((m1 - b.hi, m2 - b.lo) for m1, m2 in helper2)
        pieces.extend(intersect(reach, IntervalSet(((start, n2),))).spans)
    return IntervalSet.from_spans(pieces)


def until_paper(b: TimeBound, left: IntervalSet, right: IntervalSet) -> IntervalSet:
    """Until as the published helper1/helper2 rule chain.

    Bounds containing 0 split off ``U[0,0]``, which is just the right operand.
    """
    if b.lo == 0:
        if b.hi == 0:
            return right
        return union(_until_chain(TimeBound(1, b.hi), left, right, 0), right)
    return _until_chain(b, left, right, 0)


def until_exact(b: TimeBound, left: IntervalSet, right: IntervalSet) -> IntervalSet:
    """Until computed on intervals so that it matches the point semantics.

    ``d`` = 0 and ``d`` = 1 need nothing of the left operand; for ``d >= 2``
    the left operand must cover ``t+1 .. t+d-1``, i.e. ``t`` may sit one year
    before a left span.
    """
    parts = []
    if b.lo == 0:
        parts.append(right)
    if b.lo <= 1 <= b.hi:
        parts.append(IntervalSet.from_spans((m1 - 1, m2 - 1) for m1, m2 in right))
    if b.hi >= 2:
        parts.append(_until_chain(TimeBound(max(b.lo, 2), b.hi), left, right, 1))
    out = EMPTY
    for p in parts:
        out = union(out, p)
    return out


def compile_mtl(h: mtl.History, phi: mtl.Formula, mode: CompileMode | str = CompileMode()) -> IntervalSet:
    """IntervalSet of the universe years where ``phi`` holds."""
    if h.universe.lo > h.universe.hi:
        raise ValueError("empty universe")
    return MtlCompiler(mode).compile(h, phi)
