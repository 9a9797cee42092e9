"""Metric temporal logic over historical events.

Formulas are immutable dataclasses. ``eval_point`` is a literal recursive
reading of the point semantics; ``validity_set`` evaluates the same semantics
over whole truth arrays and is the reference the interval compiler is checked
against.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from . import _kernels

#: Discrete time unit; all bounds and time points count in these.
TIME_UNIT = "year"

DEFAULT_UNIVERSE = (1, 2024)


class MtlError(ValueError):
    pass


class MtlSyntaxError(MtlError):
    def __init__(self, message: str, text: str, pos: int):
        super().__init__(f"{message} at position {pos}: {text!r}")
        self.text = text
        self.pos = pos


class UnknownEventError(KeyError):
    pass


@dataclass(frozen=True, order=True)
class TimeBound:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo < 0 or self.hi < 0:
            raise MtlError(f"time bound must be natural: [{self.lo},{self.hi}]")
        if self.lo > self.hi:
            raise MtlError(f"time bound reversed: [{self.lo},{self.hi}]")

    def __str__(self):
        return f"[{self.lo},{self.hi}]"


# --- AST --------------------------------------------------------------------


@dataclass(frozen=True)
class AP:
    name: str


@dataclass(frozen=True)
class Finally:
    bound: TimeBound
    child: "Formula"


@dataclass(frozen=True)
class Globally:
    bound: TimeBound
    child: "Formula"


@dataclass(frozen=True)
class Until:
    bound: TimeBound
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Next:
    child: "Formula"


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


Formula = Union[AP, Finally, Globally, Until, Next, Not, And, Or]

OPERATORS = ("AP", "F", "G", "N", "U", "Not", "And", "Or")

_OP_NAMES = {
    AP: "AP",
    Finally: "F",
    Globally: "G",
    Next: "N",
    Until: "U",
    Not: "Not",
    And: "And",
    Or: "Or",
}


def operator_name(phi: Formula) -> str:
    """Short name of the outermost operator (``"F"``, ``"And"``, ...)."""
    return _OP_NAMES[type(phi)]


def children(phi: Formula) -> tuple:
    if isinstance(phi, AP):
        return ()
    if isinstance(phi, (Finally, Globally, Next, Not)):
        return (phi.child,)
    return (phi.left, phi.right)


def depth(phi: Formula) -> int:
    return 1 + max((depth(c) for c in children(phi)), default=0)


def atoms(phi: Formula) -> set:
    if isinstance(phi, AP):
        return {phi.name}
    out = set()
    for c in children(phi):
        out |= atoms(c)
    return out


def contains_until(phi: Formula) -> bool:
    return isinstance(phi, Until) or any(contains_until(c) for c in children(phi))


def horizon(phi: Formula) -> int:
    """How far into the future the truth of ``phi`` at ``t`` can look."""
    if isinstance(phi, AP):
        return 0
    if isinstance(phi, (Finally, Globally)):
        return phi.bound.hi + horizon(phi.child)
    if isinstance(phi, Next):
        return 1 + horizon(phi.child)
    if isinstance(phi, Until):
        return phi.bound.hi + max(horizon(phi.left), horizon(phi.right))
    if isinstance(phi, Not):
        return horizon(phi.child)
    return max(horizon(phi.left), horizon(phi.right))


# --- concrete syntax ----------------------------------------------------------

_PREC = {Or: 1, And: 2}


def _prec(phi: Formula) -> int:
    return _PREC.get(type(phi), 3)


def format_mtl(phi: Formula) -> str:
    """Canonical text; ``parse_mtl(format_mtl(phi)) == phi``."""
    if isinstance(phi, AP):
        return phi.name
    if isinstance(phi, Finally):
        return f"F{phi.bound}({format_mtl(phi.child)})"
    if isinstance(phi, Globally):
        return f"G{phi.bound}({format_mtl(phi.child)})"
    if isinstance(phi, Next):
        return f"N({format_mtl(phi.child)})"
    if isinstance(phi, Until):
        return f"U{phi.bound}({format_mtl(phi.left)}, {format_mtl(phi.right)})"
    if isinstance(phi, Not):
        inner = format_mtl(phi.child)
        return f"!{inner}" if _prec(phi.child) == 3 else f"!({inner})"
    sym = "&" if isinstance(phi, And) else "|"
    p = _prec(phi)
    left = format_mtl(phi.left)
    right = format_mtl(phi.right)
    if _prec(phi.left) < p:
        left = f"({left})"
    if _prec(phi.right) <= p:
        right = f"({right})"
    return f"{left} {sym} {right}"


_TOKEN = re.compile(r"\s*(?:(?P<ap>[a-z][a-z0-9_]*)|(?P<nat>[0-9]+)|(?P<op>[FGNU](?![a-z0-9_]))|(?P<sym>[()\[\],!&|]))")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = []
        pos = 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            m = _TOKEN.match(text, pos)
            if not m or m.end() == pos:
                raise MtlSyntaxError("unexpected character", text, pos)
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start))
            pos = m.end()
        self.i = 0

    def peek(self):
        if self.i < len(self.tokens):
            return self.tokens[self.i]
        return ("eof", "", len(self.text))

    def take(self, kind=None, value=None):
        tok = self.peek()
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            want = value if value is not None else kind
            raise MtlSyntaxError(f"expected {want!r}, found {tok[1] or 'end of input'!r}", self.text, tok[2])
        self.i += 1
        return tok

    def parse(self) -> Formula:
        phi = self.disj()
        tok = self.peek()
        if tok[0] != "eof":
            raise MtlSyntaxError(f"unexpected {tok[1]!r}", self.text, tok[2])
        return phi

    def disj(self):
        phi = self.conj()
        while self.peek()[1] == "|":
            self.take()
            phi = Or(phi, self.conj())
        return phi

    def conj(self):
        phi = self.unary()
        while self.peek()[1] == "&":
            self.take()
            phi = And(phi, self.unary())
        return phi

    def bound(self) -> TimeBound:
        start = self.take("sym", "[")[2]
        lo = int(self.take("nat")[1])
        self.take("sym", ",")
        hi = int(self.take("nat")[1])
        self.take("sym", "]")
        if lo > hi:
            raise MtlSyntaxError(f"time bound reversed [{lo},{hi}]", self.text, start)
        return TimeBound(lo, hi)

    def unary(self):
        kind, value, pos = self.peek()
        if kind == "ap":
            self.take()
            return AP(value)
        if kind == "op":
            self.take()
            if value == "N":
                self.take("sym", "(")
                phi = self.disj()
                self.take("sym", ")")
                return Next(phi)
            b = self.bound()
            self.take("sym", "(")
            first = self.disj()
            if value == "U":
                self.take("sym", ",")
                second = self.disj()
                self.take("sym", ")")
                return Until(b, first, second)
            self.take("sym", ")")
            return Finally(b, first) if value == "F" else Globally(b, first)
        if value == "!":
            self.take()
            return Not(self.unary())
        if value == "(":
            self.take()
            phi = self.disj()
            self.take("sym", ")")
            return phi
        raise MtlSyntaxError(f"unexpected {value or 'end of input'!r}", self.text, pos)


def parse_mtl(text: str) -> Formula:
    return _Parser(text).parse()


# --- histories and point semantics -------------------------------------------


@dataclass(frozen=True)
class History:
    """Named events, each a tuple of closed ``(start, end)`` year intervals."""

    events: Mapping[str, tuple]
    universe: TimeBound = field(default_factory=lambda: TimeBound(*DEFAULT_UNIVERSE))

    def __post_init__(self):
        lo, hi = self.universe.lo, self.universe.hi
        frozen = {}
        for name, spans in self.events.items():
            spans = tuple(sorted((int(a), int(b)) for a, b in spans))
            for a, b in spans:
                if a > b:
                    raise MtlError(f"event {name!r} has reversed interval [{a},{b}]")
                if a < lo or b > hi:
                    raise MtlError(f"event {name!r} interval [{a},{b}] outside universe {self.universe}")
            frozen[name] = spans
        object.__setattr__(self, "events", frozen)

    @classmethod
    def from_events(cls, events: Iterable, universe: TimeBound | tuple | None = None) -> "History":
        """Build from objects with ``name``, ``start`` and ``end`` attributes."""
        if universe is None:
            universe = TimeBound(*DEFAULT_UNIVERSE)
        elif not isinstance(universe, TimeBound):
            universe = TimeBound(*universe)
        spans: dict = {}
        for ev in events:
            spans.setdefault(ev.name, []).append((ev.start, ev.end))
        return cls(spans, universe)

    def holds(self, name: str, t: int) -> bool:
        try:
            spans = self.events[name]
        except KeyError:
            raise UnknownEventError(name) from None
        return any(a <= t <= b for a, b in spans)


def _check_atoms(h: History, phi: Formula) -> None:
    missing = sorted(atoms(phi) - set(h.events))
    if missing:
        raise UnknownEventError(", ".join(missing))


def _eval(h: History, phi: Formula, t: int) -> bool:
    if isinstance(phi, AP):
        return h.holds(phi.name, t)
    if isinstance(phi, Finally):
        return any(_eval(h, phi.child, t + d) for d in range(phi.bound.lo, phi.bound.hi + 1))
    if isinstance(phi, Globally):
        return all(_eval(h, phi.child, t + d) for d in range(phi.bound.lo, phi.bound.hi + 1))
    if isinstance(phi, Next):
        return _eval(h, phi.child, t + 1)
    if isinstance(phi, Until):
        for d in range(phi.bound.lo, phi.bound.hi + 1):
            if _eval(h, phi.right, t + d) and all(_eval(h, phi.left, k) for k in range(t + 1, t + d)):
                return True
        return False
    if isinstance(phi, Not):
        return not _eval(h, phi.child, t)
    if isinstance(phi, And):
        return _eval(h, phi.left, t) and _eval(h, phi.right, t)
    return _eval(h, phi.left, t) or _eval(h, phi.right, t)


def eval_point(h: History, phi: Formula, t: int) -> bool:
    """Whether ``phi`` holds at year ``t``; events are false outside their intervals."""
    if not h.universe.lo <= t <= h.universe.hi:
        raise MtlError(f"time point {t} outside universe {h.universe}")
    _check_atoms(h, phi)
    return _eval(h, phi, t)


def truth_array(h: History, phi: Formula, length: int) -> np.ndarray:
    """Truth of ``phi`` at years ``u_lo .. u_lo + length - 1``.

    Entries within ``horizon`` of the end may be wrong (reads past the array
    count as false); callers size ``length`` to cover what they need.
    """
    _check_atoms(h, phi)
    kernels = _kernels.backend()
    base = h.universe.lo

    def go(p):
        if isinstance(p, AP):
            arr = np.zeros(length, dtype=np.bool_)
            for a, b in h.events[p.name]:
                arr[max(a - base, 0) : max(b - base + 1, 0)] = True
            return arr
        if isinstance(p, Finally):
            return kernels["F"](go(p.child), p.bound.lo, p.bound.hi)
        if isinstance(p, Globally):
            return kernels["G"](go(p.child), p.bound.lo, p.bound.hi)
        if isinstance(p, Next):
            return kernels["N"](go(p.child))
        if isinstance(p, Until):
            return kernels["U"](go(p.left), go(p.right), p.bound.lo, p.bound.hi)
        if isinstance(p, Not):
            return ~go(p.child)
        if isinstance(p, And):
            return go(p.left) & go(p.right)
        return go(p.left) | go(p.right)

    return go(phi)


def validity_set(h: History, phi: Formula):
    """All years of the universe where ``phi`` holds, as an IntervalSet."""
    from .intervals import IntervalSet

    width = h.universe.hi - h.universe.lo + 1
    arr = truth_array(h, phi, width + horizon(phi))
    return IntervalSet.from_mask(arr[:width], h.universe.lo)


def validity_set_pointwise(h: History, phi: Formula):
    """``validity_set`` by calling ``eval_point`` at every year (slow)."""
    from .intervals import IntervalSet

    years = range(h.universe.lo, h.universe.hi + 1)
    return IntervalSet.from_points(t for t in years if eval_point(h, phi, t))


# --- random formulas -----------------------------------------------------------

DEFAULT_WEIGHTS = {"AP": 2.0, "F": 1.0, "G": 1.0, "N": 1.0, "U": 1.0, "Not": 1.0, "And": 1.0, "Or": 1.0}


def sample_formula(
    rng_seed,
    events: Sequence[str],
    max_depth: int = 2,
    weights: Mapping[str, float] | None = None,
    max_bound: int = 50,
) -> Formula:
    """Draw a random formula of depth at most ``max_depth``.

    ``rng_seed`` may be an int or a ``random.Random`` (which is advanced).
    Operators missing from ``weights`` are never drawn.
    """
    if not events:
        raise MtlError("cannot sample a formula without events")
    if max_depth < 1:
        raise MtlError("max_depth must be at least 1")
    rng = rng_seed if isinstance(rng_seed, random.Random) else random.Random(rng_seed)
    weights = dict(DEFAULT_WEIGHTS if weights is None else weights)
    unknown = set(weights) - set(OPERATORS)
    if unknown:
        raise MtlError(f"unknown operators in weights: {sorted(unknown)}")
    ops = [op for op in OPERATORS if weights.get(op, 0) > 0]
    events = sorted(events)

    def bound():
        lo = rng.randint(0, max_bound)
        return TimeBound(lo, rng.randint(lo, max_bound))

    def draw(d):
        if d <= 1 or not ops:
            return AP(rng.choice(events))
        op = rng.choices(ops, weights=[weights[o] for o in ops])[0]
        if op == "AP":
            return AP(rng.choice(events))
        if op == "F":
            return Finally(bound(), draw(d - 1))
        if op == "G":
            return Globally(bound(), draw(d - 1))
        if op == "N":
            return Next(draw(d - 1))
        if op == "U":
            b = bound()
            return Until(b, draw(d - 1), draw(d - 1))
        if op == "Not":
            return Not(draw(d - 1))
        if op == "And":
            return And(draw(d - 1), draw(d - 1))
        return Or(draw(d - 1), draw(d - 1))

    return draw(max_depth)
