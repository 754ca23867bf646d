"""Per-trial VM lifecycle.

A trial walks one sample through boot, a static stage (file at rest on the
guest), an optional dynamic stage (file executed), data collection and an
in-memory snapshot revert. Trials are immutable; ``advance`` returns the
successor.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from enum import Enum

from rangeforge.errors import RangeForgeError, ValidationError


class State(str, Enum):
    PROVISIONED = "Provisioned"
    BOOTING = "Booting"
    STATIC_SCAN = "StaticScan"
    DYNAMIC_EXEC = "DynamicExec"
    COLLECTING = "Collecting"
    REVERTING = "Reverting"
    DONE = "Done"
    CRASHED = "Crashed"
    INCOMPLETE = "Incomplete"


class Event(str, Enum):
    START = "start"
    BOOTED = "booted"
    VERDICT = "verdict"
    STATIC_TIMEOUT = "static_timeout"
    DYNAMIC_TIMEOUT = "dynamic_timeout"
    COLLECTED = "collected"
    REVERTED = "reverted"
    CRASH = "crash"
    RETRY = "retry"
    GIVE_UP = "give_up"


ACTIVE_STATES = frozenset(
    {State.BOOTING, State.STATIC_SCAN, State.DYNAMIC_EXEC, State.COLLECTING, State.REVERTING}
)
TERMINAL_STATES = frozenset({State.DONE, State.INCOMPLETE})

TRANSITIONS: dict[tuple[State, Event], State] = {
    (State.PROVISIONED, Event.START): State.BOOTING,
    (State.BOOTING, Event.BOOTED): State.STATIC_SCAN,
    (State.STATIC_SCAN, Event.VERDICT): State.COLLECTING,
    (State.STATIC_SCAN, Event.STATIC_TIMEOUT): State.DYNAMIC_EXEC,
    (State.DYNAMIC_EXEC, Event.VERDICT): State.COLLECTING,
    (State.DYNAMIC_EXEC, Event.DYNAMIC_TIMEOUT): State.COLLECTING,
    (State.COLLECTING, Event.COLLECTED): State.REVERTING,
    (State.REVERTING, Event.REVERTED): State.DONE,
    (State.CRASHED, Event.RETRY): State.PROVISIONED,
    (State.CRASHED, Event.GIVE_UP): State.INCOMPLETE,
}
for _s in ACTIVE_STATES:
    TRANSITIONS[(_s, Event.CRASH)] = State.CRASHED

STATIC = "static"
DYNAMIC = "dynamic"
ACTIONS = ("blocked", "warned", "quarantined", "flagged")


class IllegalTransitionError(RangeForgeError):
    def __init__(self, state: State, event: Event) -> None:
        self.state = state
        self.event = event
        super().__init__(f"illegal transition: event {event.value!r} in state {state.value!r}")


class NotDoneError(RangeForgeError):
    pass


@dataclass(frozen=True)
class StageTimings:
    """Stage budgets in seconds.

    ``static_timeout_s`` is the time a sample sits on disk before it is
    executed; the other stages follow the one-minute scheduling quantum.
    """

    boot_s: float = 60.0
    static_timeout_s: float = 92.0
    dynamic_timeout_s: float = 60.0
    collect_s: float = 60.0
    revert_s: float = 8.0

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value < 0:
                raise ValidationError(f"stage timing {name} must be nonnegative")

    @property
    def max_trial_s(self) -> float:
        return self.boot_s + self.static_timeout_s + self.dynamic_timeout_s + self.collect_s + self.revert_s


@dataclass(frozen=True, slots=True)
class ResourceDraw:
    cpu_s: float
    peak_mem_mb: float


@dataclass(frozen=True, slots=True)
class Determination:
    stage: str
    t_det_s: float
    resources: ResourceDraw
    action: str = "flagged"
    verdict: str = "malicious"
    path: str = "model"  # "signature" or "model"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "stage": self.stage,
            "t_det_s": self.t_det_s,
            "action": self.action,
            "path": self.path,
            "cpu_s": self.resources.cpu_s,
            "peak_mem_mb": self.resources.peak_mem_mb,
        }

    def within_bounds(self, timings: StageTimings) -> bool:
        if self.stage == STATIC:
            return 0.0 <= self.t_det_s <= timings.static_timeout_s
        return (
            timings.static_timeout_s
            <= self.t_det_s
            <= timings.static_timeout_s + timings.dynamic_timeout_s
        )


@dataclass(frozen=True, slots=True)
class Trial:
    trial_id: str
    sample_id: str
    node: str | None = None
    attempt: int = 1
    state: State = State.PROVISIONED
    started_at: float | None = None
    presented_at: float | None = None
    static_end: float | None = None
    dynamic_end: float | None = None
    determination: Determination | None = None
    history: tuple[State, ...] = (State.PROVISIONED,)

    @property
    def active(self) -> bool:
        return self.state in ACTIVE_STATES


def advance(
    trial: Trial,
    event: Event,
    timings: StageTimings,
    now: float,
    determination: Determination | None = None,
) -> Trial:
    """Apply one lifecycle event at simulated time ``now``.

    ``determination`` is required with ``Event.VERDICT`` and forbidden
    otherwise. Illegal events raise without touching the trial.
    """
    event = Event(event)
    target = TRANSITIONS.get((trial.state, event))
    if target is None:
        raise IllegalTransitionError(trial.state, event)
    if (event is Event.VERDICT) != (determination is not None):
        raise IllegalTransitionError(trial.state, event)

    changes: dict = {"state": target, "history": trial.history + (target,)}
    if event is Event.START:
        changes["started_at"] = now
    elif event is Event.BOOTED:
        changes["presented_at"] = now
    elif event is Event.VERDICT:
        if trial.determination is not None:
            raise IllegalTransitionError(trial.state, event)
        expected = STATIC if trial.state is State.STATIC_SCAN else DYNAMIC
        if determination.stage != expected or not determination.within_bounds(timings):
            raise ValidationError(
                f"{trial.trial_id}: determination {determination.stage}@{determination.t_det_s}s "
                f"does not fit stage {trial.state.value}"
            )
        changes["determination"] = determination
        if trial.state is State.STATIC_SCAN:
            changes["static_end"] = now
        else:
            changes["dynamic_end"] = now
    elif event is Event.STATIC_TIMEOUT:
        changes["static_end"] = now
    elif event is Event.DYNAMIC_TIMEOUT:
        changes["dynamic_end"] = now
    elif event is Event.CRASH:
        changes["determination"] = None
    elif event is Event.RETRY:
        return Trial(
            trial_id=_retry_id(trial.trial_id, trial.attempt + 1),
            sample_id=trial.sample_id,
            attempt=trial.attempt + 1,
        )
    return replace(trial, **changes)


def _retry_id(trial_id: str, attempt: int) -> str:
    base, sep, _ = trial_id.rpartition("#")
    return f"{base if sep else trial_id}#{attempt}"


def trial_id_for(phase: str, sample_id: str, attempt: int = 1) -> str:
    return f"{phase}:{sample_id}#{attempt}"


def revert(trial: Trial, timings: StageTimings, now: float) -> Trial:
    """Finish the snapshot revert; the slot is clean for a fresh trial."""
    return advance(trial, Event.REVERTED, timings, now)


def trial_wall_time(trial: Trial, timings: StageTimings) -> float:
    if trial.state is not State.DONE:
        raise NotDoneError(f"{trial.trial_id} is in state {trial.state.value}, not Done")
    static_dur = trial.static_end - trial.presented_at
    dynamic_dur = 0.0 if State.DYNAMIC_EXEC not in trial.history else trial.dynamic_end - trial.static_end
    return timings.boot_s + static_dur + dynamic_dur + timings.collect_s + timings.revert_s
