import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from journal_factory import outcome_journal, random_case
from rangeforge.corpus import SampleRecord
from rangeforge.scoring import (
    ConfusionCounts,
    CostParams,
    SkewModel,
    UnknownNodeError,
    apply_skew,
    correct_skew,
    cost_score,
    journal_nodes,
    rank_tools,
    tally,
)

ZERO = CostParams(0, 0, 0, 0, 0, 0, 0, 300)


def four():
    samples = [
        SampleRecord("a", "exe", "malicious", False, 1, "x"),
        SampleRecord("b", "exe", "benign", False, 1, "y"),
        SampleRecord("c", "doc", "benign", False, 1, "z"),
        SampleRecord("d", "doc", "malicious", False, 1, "w"),
    ]
    rows = [("a", "Done", ("static", 5.0)), ("b", "Done", ("dynamic", 100.0)), ("c", "Done", None), ("d", "Done", None)]
    return samples, outcome_journal(rows)


def test_four_sample_hand_tally():
    samples, j = four()
    c = tally(j, samples)
    assert (c.tp, c.fp, c.tn, c.fn) == (1, 1, 1, 1)
    assert c.tp_static == 1 and c.tp_dynamic == 0
    assert c.per_type == {"doc": {"tp": 0, "fp": 0, "tn": 1, "fn": 1}, "exe": {"tp": 1, "fp": 1, "tn": 0, "fn": 0}}


def test_perfect_detector_on_all_malicious():
    samples = [SampleRecord(f"m{i}", "exe", "malicious", False, 1, "d") for i in range(7)]
    c = tally(outcome_journal([(s.sample_id, "Done", ("static", 1.0)) for s in samples]), samples)
    assert (c.tp, c.fp, c.tn, c.fn) == (7, 0, 0, 0)


def test_incomplete_excluded_and_reported():
    samples = [SampleRecord("a", "exe", "malicious", False, 1, "d"), SampleRecord("b", "exe", "benign", False, 1, "e")]
    c = tally(outcome_journal([("a", "Incomplete", None), ("b", "Done", None)]), samples)
    assert c.tn == 1 and c.tp + c.fp + c.fn == 0 and c.incomplete == ["a"]


def test_all_zero_params_total_zero():
    samples, j = four()
    assert cost_score(tally(j, samples), j, ZERO).total == 0


def test_single_tp_saving():
    params = CostParams(0, 0, 0, 0, 0, 0, 100, 300)
    c = ConfusionCounts(tp=1, tp_detections=[("a", 0.0, "exe", False)])
    assert cost_score(c, params=params).total == -100


def spreadsheet(samples, rows, p):
    """Independent recomputation straight from the rows."""
    by_id = {s.sample_id: s for s in samples}
    total = p.device_cost
    for sid, status, det in rows:
        if status != "Done":
            continue
        total += p.resource_rate * 1.5
        mal = by_id[sid].label == "malicious"
        if det and not mal:
            total += p.labor_rate * p.triage_hours + p.fp_incident_cost
        elif det and mal:
            total -= p.tp_saving_base * max(0.0, 1 - det[1] / p.detection_horizon_s)
        elif mal:
            total += p.fn_incident_cost
    return total


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_cost_matches_spreadsheet(seed):
    sset, rows = random_case(seed)
    rnd = random.Random(seed)
    p = CostParams(*(rnd.uniform(0, 1000) for _ in range(7)), detection_horizon_s=rnd.uniform(50, 400))
    j = outcome_journal(rows)
    got = cost_score(tally(j, sset), j, p).total
    want = spreadsheet(sset.samples, rows, p)
    assert math.isclose(got, want, rel_tol=1e-9, abs_tol=1e-6)


def test_converting_tp_to_fn_increases_total():
    samples, j = four()
    worse = outcome_journal([("a", "Done", None), ("b", "Done", ("dynamic", 100.0)), ("c", "Done", None), ("d", "Done", None)])
    p = CostParams()
    assert cost_score(tally(worse, samples), worse, p).total > cost_score(tally(j, samples), j, p).total


def test_faster_detection_never_costs_more():
    samples, _ = four()
    slow = outcome_journal([("a", "Done", ("static", 80.0))])
    fast = outcome_journal([("a", "Done", ("static", 8.0))])
    p = CostParams()
    assert cost_score(tally(fast, samples[:1]), fast, p).total <= cost_score(tally(slow, samples[:1]), slow, p).total


@pytest.mark.parametrize("k", [0.1, 10.0])
def test_currency_scaling_is_linear(k):
    sset, rows = random_case(7, 40)
    j = outcome_journal(rows)
    c = tally(j, sset)
    base = cost_score(c, j, CostParams()).total
    assert math.isclose(cost_score(c, j, CostParams().scaled(k)).total, k * base, rel_tol=1e-9)


def test_rank_tools_orders_by_total():
    sset, rows = random_case(3, 30)
    j = outcome_journal(rows)
    good = cost_score(tally(j, sset), j)
    bad = cost_score(tally(outcome_journal([(s, st_, None) for s, st_, _ in rows]), sset))
    assert rank_tools({"good": good, "bad": bad}) == ["good", "bad"]


class TestSkew:
    def test_zero_offsets_identity(self):
        _, j = four()
        out = correct_skew(j, SkewModel.zero(journal_nodes(j)))
        assert out.to_text() == j.to_text()

    def test_single_node_shift(self):
        _, j = four()
        out = correct_skew(j, SkewModel({"n0": 5.0, "n1": 0.0}))
        before = sorted(ev.sim_time for ev in j.events() if ev.node == "n0")
        after = sorted(ev.sim_time for ev in out.events() if ev.node == "n0")
        assert [round(a - b, 6) for a, b in zip(after, before)] == [-5.0] * len(before)

    def test_round_trip(self):
        _, j = four()
        skew = SkewModel({"n0": 3.25, "n1": -117.5})
        assert correct_skew(apply_skew(j, skew), skew).to_text() == j.to_text()

    def test_unknown_node(self):
        _, j = four()
        with pytest.raises(UnknownNodeError):
            correct_skew(j, SkewModel({"n0": 1.0}))

    def test_idempotent_after_full_correction(self):
        _, j = four()
        skew = SkewModel({"n0": 9.0, "n1": 2.0})
        once = correct_skew(apply_skew(j, skew), skew)
        twice = correct_skew(once, SkewModel.zero(journal_nodes(once)))
        assert twice.to_text() == once.to_text()
