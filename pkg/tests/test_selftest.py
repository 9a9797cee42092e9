from __future__ import annotations

import json

from fchprobe import selftest
from fchprobe.intervals import IntervalSet, MtlCompiler


class ShiftedFinally(MtlCompiler):
    def finally_(self, b, child):
        return IntervalSet.from_spans((n1 - b.hi + 1, n2 - b.lo + 1) for n1, n2 in child)


def test_fixtures_only_with_zero_trials():
    rep = selftest.run_selftest(n=0)
    assert rep.ok
    assert rep.exact_trials == rep.until_trials == 0
    assert rep.fixtures_passed == len(selftest.REFERENCE_FIXTURES) + len(selftest.REFERENCE_QUERIES)


def test_small_run_passes_and_writes_gap_report(tmp_path):
    rep = selftest.run_selftest(n=60, seed=3)
    assert rep.ok, rep.summary()
    path = tmp_path / "gap.json"
    selftest.write_gap_report(rep, path)
    data = json.loads(path.read_text())
    assert data["until_trials"] == 60
    assert data["missing_points"] == rep.gap_points
    for gap in data["gaps"]:
        assert gap["missing_points"] > 0 and "witness" in gap


def test_injected_fault_is_caught():
    rep = selftest.run_selftest(n=20, compiler_factory=lambda mode: ShiftedFinally(mode, track_divergence=False))
    assert not rep.ok
    assert rep.fixtures_failed
    assert "F[" in str(rep.fixtures_failed[0])
