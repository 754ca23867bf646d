import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rangeforge.errors import ValidationError
from rangeforge.lifecycle import (
    DYNAMIC,
    STATIC,
    Determination,
    Event,
    IllegalTransitionError,
    NotDoneError,
    ResourceDraw,
    StageTimings,
    State,
    TRANSITIONS,
    Trial,
    advance,
    revert,
    trial_wall_time,
)

T = StageTimings()
R = ResourceDraw(1.0, 100.0)


def run(events):
    """Drive a trial from t=0 through (event, time, determination) triples."""
    trial = Trial("main:s#1", "s")
    for ev, now, det in events:
        trial = advance(trial, ev, T, now, det)
    return trial


def booted():
    return [(Event.START, 0.0, None), (Event.BOOTED, 60.0, None)]


def test_static_verdict_skips_dynamic():
    det = Determination(STATIC, 10.0, R)
    t = run(booted() + [(Event.VERDICT, 70.0, det)])
    assert t.state is State.COLLECTING
    assert t.determination.stage == STATIC and t.determination.t_det_s == 10.0
    assert State.DYNAMIC_EXEC not in t.history


def test_timeouts_without_verdict():
    t = run(booted() + [(Event.STATIC_TIMEOUT, 152.0, None), (Event.DYNAMIC_TIMEOUT, 212.0, None)])
    assert t.state is State.COLLECTING and t.determination is None


def test_collecting_crash():
    t = run(booted() + [(Event.VERDICT, 61.0, Determination(STATIC, 1.0, R)), (Event.CRASH, 62.0, None)])
    assert t.state is State.CRASHED and t.determination is None


def full(events_after_boot, collect_at):
    t = run(booted() + events_after_boot + [(Event.COLLECTED, collect_at, None)])
    return revert(t, T, collect_at + T.revert_s)


def test_wall_time_no_determination():
    t = full([(Event.STATIC_TIMEOUT, 152.0, None), (Event.DYNAMIC_TIMEOUT, 212.0, None)], 272.0)
    assert t.state is State.DONE
    assert trial_wall_time(t, T) == 280.0 < 300


def test_wall_time_static_at_zero():
    t = full([(Event.VERDICT, 60.0, Determination(STATIC, 0.0, R))], 120.0)
    assert trial_wall_time(t, T) == 128.0


def test_wall_time_dynamic_at_122():
    det = Determination(DYNAMIC, 122.0, R)
    t = full([(Event.STATIC_TIMEOUT, 152.0, None), (Event.VERDICT, 182.0, det)], 242.0)
    assert trial_wall_time(t, T) == 60 + 92 + 30 + 60 + 8 == 250.0


def test_wall_time_needs_done():
    with pytest.raises(NotDoneError):
        trial_wall_time(run(booted()), T)


def test_verdict_during_boot_is_illegal():
    t = run([(Event.START, 0.0, None)])
    with pytest.raises(IllegalTransitionError):
        advance(t, Event.VERDICT, T, 1.0, Determination(STATIC, 0.0, R))


def test_second_verdict_rejected():
    t = run(booted() + [(Event.STATIC_TIMEOUT, 152.0, None)])
    t = advance(t, Event.VERDICT, T, 160.0, Determination(DYNAMIC, 100.0, R))
    with pytest.raises(IllegalTransitionError):
        advance(t, Event.VERDICT, T, 161.0, Determination(DYNAMIC, 101.0, R))


def test_out_of_bounds_determination():
    with pytest.raises(ValidationError):
        run(booted() + [(Event.VERDICT, 70.0, Determination(STATIC, 93.0, R))])


def test_retry_and_give_up():
    t = run([(Event.START, 0.0, None), (Event.CRASH, 5.0, None)])
    fresh = advance(t, Event.RETRY, T, 5.0)
    assert (fresh.state, fresh.attempt, fresh.trial_id) == (State.PROVISIONED, 2, "main:s#2")
    assert advance(t, Event.GIVE_UP, T, 5.0).state is State.INCOMPLETE


def test_revert_uses_revert_s():
    t = run(booted() + [(Event.VERDICT, 60.0, Determination(STATIC, 0.0, R)), (Event.COLLECTED, 120.0, None)])
    assert t.state is State.REVERTING
    assert revert(t, T, 128.0).state is State.DONE


@given(st.lists(st.sampled_from(list(Event)), max_size=30), st.integers(0, 10**6))
def test_fuzzed_event_sequences_stay_closed(events, seed):
    rnd = random.Random(seed)
    trial = Trial("x#1", "x")
    now = 0.0
    for ev in events:
        now += rnd.uniform(0, 50)
        det = None
        if ev is Event.VERDICT:
            det = Determination(STATIC if trial.state is State.STATIC_SCAN else DYNAMIC, 92.0, R)
        before = trial
        try:
            trial = advance(trial, ev, T, now, det)
        except (IllegalTransitionError, ValidationError):
            assert trial is before
            assert (before.state, ev) not in TRANSITIONS or ev is Event.VERDICT
            continue
        assert trial.state in State
        if trial.state is State.CRASHED:
            assert trial.determination is None
        if trial.determination is not None and trial.determination.stage == STATIC:
            assert State.DYNAMIC_EXEC not in trial.history
