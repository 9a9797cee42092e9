"""Differential checks of the interval compiler against the point semantics."""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Callable

from . import mtl
from .intervals import (
    CompileMode,
    IntervalSet,
    MtlCompiler,
    complement,
    intersect,
)
from .mtl import History, TimeBound

HS = History(
    {"charles_dickens": [(1812, 1870)], "victorian_era": [(1837, 1901)]},
    TimeBound(1, 2024),
)
BEN10 = History({"ben_10": [(2005, 2008)]}, TimeBound(1, 2024))

# (history, formula text, mode, expected interval text)
REFERENCE_FIXTURES = [
    (HS, "charles_dickens", "paper", "[1812,1870]"),
    (HS, "victorian_era", "paper", "[1837,1901]"),
    (HS, "F[0,40](victorian_era)", "paper", "[1797,1901]"),
    (HS, "G[30,50](victorian_era)", "paper", "[1807,1851]"),
    (HS, "N(victorian_era)", "paper", "[1836,1900]"),
    (HS, "U[10,20](charles_dickens, victorian_era)", "paper", "[1817,1861]"),
    (HS, "!victorian_era", "paper", "[1,1836] ∪ [1902,2024]"),
    (HS, "charles_dickens & victorian_era", "paper", "[1837,1870]"),
    (HS, "charles_dickens | victorian_era", "paper", "[1812,1901]"),
    (BEN10, "F[1,3](ben_10)", "paper", "[2002,2007]"),
]

# (history, formula text, year, expected truth)
REFERENCE_QUERIES = [
    (HS, "charles_dickens", 1800, False),
    (HS, "victorian_era", 1900, True),
    (HS, "F[0,40](victorian_era)", 1800, True),
    (HS, "G[30,50](victorian_era)", 1800, False),
    (HS, "N(victorian_era)", 1836, True),
    (HS, "U[10,20](charles_dickens, victorian_era)", 1800, False),
    (HS, "!victorian_era", 1800, True),
    (HS, "charles_dickens & victorian_era", 1900, False),
    (HS, "charles_dickens | victorian_era", 1900, True),
    (BEN10, "F[1,3](ben_10)", 2000, False),
]

NO_UNTIL = {k: v for k, v in mtl.DEFAULT_WEIGHTS.items() if k != "U"}


def random_history(rng: random.Random, n_events: int = 8, universe=(1, 300), max_spans: int = 3) -> History:
    lo, hi = universe
    events = {}
    for i in range(n_events):
        spans = []
        for _ in range(rng.randint(1, max_spans)):
            a = rng.randint(lo, hi)
            b = min(hi, a + rng.randint(0, (hi - lo) // 3))
            spans.append((a, b))
        events[f"e{i}"] = spans
    return History(events, TimeBound(lo, hi))


@dataclass
class TrialFailure:
    formula: str
    history: dict
    compiled: list
    expected: list
    witness: int

    def __str__(self):
        return (
            f"{self.formula} at year {self.witness}: compiled {IntervalSet.from_json(self.compiled)}, "
            f"expected {IntervalSet.from_json(self.expected)}"
        )


@dataclass
class SelftestReport:
    fixtures_passed: int = 0
    fixtures_failed: list = field(default_factory=list)
    exact_trials: int = 0
    exact_failures: list = field(default_factory=list)
    until_trials: int = 0
    soundness_violations: list = field(default_factory=list)
    gaps: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.fixtures_failed or self.exact_failures or self.soundness_violations)

    @property
    def gap_points(self) -> int:
        return sum(g["missing_points"] for g in self.gaps)

    def summary(self) -> str:
        lines = [
            f"fixtures: {self.fixtures_passed} passed, {len(self.fixtures_failed)} failed",
            f"exact (no Until): {self.exact_trials} trials, {len(self.exact_failures)} mismatches",
            f"Until soundness: {self.until_trials} trials, {len(self.soundness_violations)} violations",
            f"Until completeness gap: {len(self.gaps)} formulas, {self.gap_points} missing points",
        ]
        return "\n".join(lines)

    def gap_report(self) -> dict:
        return {
            "until_trials": self.until_trials,
            "formulas_with_gap": len(self.gaps),
            "missing_points": self.gap_points,
            "gaps": self.gaps,
        }


def _first_difference(a: IntervalSet, b: IntervalSet, universe: TimeBound) -> int:
    u = (universe.lo, universe.hi)
    diff = intersect(a, complement(b, u)).spans or intersect(b, complement(a, u)).spans
    return diff[0][0]


def run_fixtures(report: SelftestReport, compiler_factory: Callable[[CompileMode], MtlCompiler]) -> None:
    for h, text, mode, expected in REFERENCE_FIXTURES:
        got = compiler_factory(CompileMode(mode)).compile(h, mtl.parse_mtl(text))
        if str(got) == expected:
            report.fixtures_passed += 1
        else:
            report.fixtures_failed.append(f"{text}: got {got}, expected {expected}")
    for h, text, t, expected in REFERENCE_QUERIES:
        phi = mtl.parse_mtl(text)
        got = compiler_factory(CompileMode("paper")).compile(h, phi)
        if (t in got) == expected and mtl.eval_point(h, phi, t) == expected:
            report.fixtures_passed += 1
        else:
            report.fixtures_failed.append(f"{text} at {t}: expected {expected}")


def run_exact_trials(
    report: SelftestReport,
    n: int,
    seed: int,
    compiler_factory: Callable[[CompileMode], MtlCompiler],
    max_depth: int = 3,
    max_bound: int = 30,
) -> None:
    rng = random.Random(f"exact:{seed}")
    for _ in range(n):
        h = random_history(rng, n_events=rng.randint(1, 8))
        phi = mtl.sample_formula(rng, sorted(h.events), max_depth, NO_UNTIL, max_bound)
        got = compiler_factory(CompileMode("paper")).compile(h, phi)
        want = mtl.validity_set(h, phi)
        report.exact_trials += 1
        if got != want:
            report.exact_failures.append(
                TrialFailure(mtl.format_mtl(phi), dict(h.events), got.to_json(), want.to_json(),
                             _first_difference(got, want, h.universe))
            )


def sample_until(rng: random.Random, events, max_bound: int = 30) -> mtl.Until:
    """An Until at the root over Until-free operands of depth at most 2."""
    lo = rng.randint(0, max_bound)
    bound = TimeBound(lo, rng.randint(lo, max_bound))
    left = mtl.sample_formula(rng, events, 2, NO_UNTIL, max_bound)
    right = mtl.sample_formula(rng, events, 2, NO_UNTIL, max_bound)
    return mtl.Until(bound, left, right)


def run_until_trials(
    report: SelftestReport,
    n: int,
    seed: int,
    compiler_factory: Callable[[CompileMode], MtlCompiler],
    max_bound: int = 30,
) -> None:
    rng = random.Random(f"until:{seed}")
    for _ in range(n):
        h = random_history(rng, n_events=rng.randint(1, 8))
        phi = sample_until(rng, sorted(h.events), max_bound)
        got = compiler_factory(CompileMode("paper")).compile(h, phi)
        want = mtl.validity_set(h, phi)
        report.until_trials += 1
        text = mtl.format_mtl(phi)
        if not got.issubset(want):
            report.soundness_violations.append(
                TrialFailure(text, dict(h.events), got.to_json(), want.to_json(),
                             _first_difference(got, want, h.universe))
            )
            continue
        if got != want:
            missing = intersect(want, complement(got, (h.universe.lo, h.universe.hi)))
            report.gaps.append({
                "formula": text,
                "history": {k: [list(s) for s in v] for k, v in h.events.items()},
                "paper": got.to_json(),
                "exact": want.to_json(),
                "missing_points": missing.size(),
                "witness": missing.spans[0][0],
            })


def run_selftest(n: int = 1000, seed: int = 0, compiler_factory=None) -> SelftestReport:
    """Reference fixtures, then ``n`` exact trials and ``n`` Until soundness trials."""
    factory = compiler_factory or (lambda mode: MtlCompiler(mode, track_divergence=False))
    report = SelftestReport()
    run_fixtures(report, factory)
    if n > 0:
        run_exact_trials(report, n, seed, factory)
        run_until_trials(report, n, seed, factory)
    return report


def write_gap_report(report: SelftestReport, path) -> None:
    from ._io import atomic_write_text

    atomic_write_text(path, json.dumps(report.gap_report(), indent=1, sort_keys=True) + "\n")
