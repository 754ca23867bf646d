"""Discrete-event engine for a full endpoint-detector evaluation.

One run is a sequence of phases on a single simulated clock: template
deployment, a QA pre-run on a representative subset, the main sweep over
every sample, a completeness check, and teardown. During a sweep trials are
admitted FIFO under three hard limits (hypervisor API connections,
concurrent control-plane tasks, simultaneous VMs) plus per-node slot
capacity.

Control-plane accounting: powering a VM on (Booting) and reverting its
snapshot (Reverting) each hold one task and one API connection for the
stage's duration. Guest stages hold only the VM slot.
"""

from __future__ import annotations

import heapq
import socket
from collections import deque
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

from rangeforge import cluster
from rangeforge.config import PHASES, Limits, QaParams, ResolvedRun, RunConfig, resolve
from rangeforge.corpus import SampleRecord, SampleSet, proportional_subset
from rangeforge.detector import (
    EgressAttempt,
    EgressPolicy,
    draw_crash,
    draw_egress,
    draw_resources,
    evaluate_dynamic,
    evaluate_static,
    filter_egress,
    stage_rng,
)
from rangeforge.errors import RangeForgeError
from rangeforge.journal import DigestMismatchError, JournalEvent, RunJournal
from rangeforge.lifecycle import (
    Determination,
    Event,
    State,
    Trial,
    advance,
    revert,
    trial_id_for,
    trial_wall_time,
)
from rangeforge.simtime import to_s, to_us

__all__ = [
    "Limits",
    "QaParams",
    "QaReport",
    "RunConfig",
    "RunState",
    "Simulator",
    "audit_journal",
    "completeness_check",
    "qa_run",
    "replay_journal",
    "run_challenge",
]

# heap event kinds
_BOOTED = "booted"
_STATIC_VERDICT = "static_verdict"
_STATIC_TIMEOUT = "static_timeout"
_DYNAMIC_VERDICT = "dynamic_verdict"
_DYNAMIC_TIMEOUT = "dynamic_timeout"
_COLLECTED = "collected"
_REVERTED = "reverted"
_CRASH = "crash"
_EGRESS = "egress"


class LimitViolation(RangeForgeError):
    """A limit was exceeded; always a harness bug."""


@dataclass
class RunState:
    sim_clock: int = 0  # microseconds
    events: list = field(default_factory=list)
    ready: deque = field(default_factory=deque)
    revert_wait: deque = field(default_factory=deque)
    active_tasks: int = 0
    open_connections: int = 0
    active_vms: int = 0
    attempts: dict[str, int] = field(default_factory=dict)
    completion: dict[str, str] = field(default_factory=dict)
    peak_tasks: int = 0
    peak_connections: int = 0
    peak_vms: int = 0

    def snapshot(self) -> dict:
        return {
            "sim_clock_s": to_s(self.sim_clock),
            "pending_events": len(self.events),
            "ready": len(self.ready),
            "active_tasks": self.active_tasks,
            "open_connections": self.open_connections,
            "active_vms": self.active_vms,
            "done": sum(1 for v in self.completion.values() if v == State.DONE.value),
            "incomplete": sum(1 for v in self.completion.values() if v == State.INCOMPLETE.value),
        }


@dataclass
class _Live:
    trial: Trial
    sample: SampleRecord
    node_index: int
    static: Determination | None = None
    dynamic: Determination | None = None


@dataclass
class SweepResult:
    phase: str
    start_us: int
    end_us: int
    wall_times: dict[str, float]
    completion: dict[str, str]
    determinations: int
    crashes: int
    bound_violations: list[str]

    @property
    def makespan_s(self) -> float:
        return to_s(self.end_us - self.start_us)


class Simulator:
    """Owns the clock, the journal and the cluster state for one run."""

    def __init__(self, resolved: ResolvedRun, journal: RunJournal) -> None:
        self.resolved = resolved
        self.config: RunConfig = resolved.config
        self.limits: Limits = self.config.limits
        self.timings = self.config.timings
        self.model = resolved.model
        self.journal = journal
        self.nodes: list[cluster.LogicalNode] = list(resolved.nodes)
        self.vm_cap = min(self.limits.max_concurrent_vms, cluster.total_capacity(self.nodes))
        self.egress = EgressPolicy()
        self.state = RunState()
        self._seq = 0
        self._live: dict[str, _Live] = {}
        self.peak_node_busy = [0] * len(self.nodes)

    # -- plumbing ------------------------------------------------------------

    def _emit(self, kind: str, payload: dict, node: str | None = None, at: int | None = None) -> None:
        t = self.state.sim_clock if at is None else at
        self.journal.emit(kind, to_s(t), payload, node)

    def _push(self, at: int, kind: str, trial_id: str) -> None:
        self._seq += 1
        heapq.heappush(self.state.events, (at, self._seq, kind, trial_id))

    def _transition(self, live: _Live, event: Event, determination: Determination | None = None, **extra) -> None:
        before = live.trial.state
        live.trial = advance(live.trial, event, self.timings, to_s(self.state.sim_clock), determination)
        payload = {
            "phase": self._phase,
            "trial": live.trial.trial_id,
            "sample": live.trial.sample_id,
            "attempt": live.trial.attempt,
            "from": before.value,
            "to": live.trial.state.value,
        }
        payload.update(extra)
        self._emit("transition", payload, self.nodes[live.node_index].logical_id if live.node_index >= 0 else None)

    def _node_id(self, live: _Live) -> str:
        return self.nodes[live.node_index].logical_id

    # -- admission -----------------------------------------------------------

    def _pick_node(self) -> int:
        best, best_free = -1, 0
        for i, node in enumerate(self.nodes):
            free = node.free_slots
            if free > best_free:
                best, best_free = i, free
        return best

    def _control_headroom(self) -> bool:
        s = self.state
        return s.active_tasks < self.limits.max_concurrent_tasks and s.open_connections < self.limits.max_api_connections

    def admit(self, trial: Trial, sample: SampleRecord) -> bool:
        """Start ``trial`` if every limit has headroom and a slot is free; otherwise leave it queued."""
        s = self.state
        if s.active_vms >= self.vm_cap or not self._control_headroom():
            return False
        idx = self._pick_node()
        if idx < 0:
            return False
        taken = cluster.acquire_slot(self.nodes[idx])
        if taken is None:
            return False
        self.nodes[idx] = taken
        self.peak_node_busy[idx] = max(self.peak_node_busy[idx], taken.busy_slots)
        s.active_vms += 1
        s.active_tasks += 1
        s.open_connections += 1
        s.peak_vms = max(s.peak_vms, s.active_vms)
        s.peak_tasks = max(s.peak_tasks, s.active_tasks)
        s.peak_connections = max(s.peak_connections, s.open_connections)
        s.attempts[sample.sample_id] = trial.attempt

        live = _Live(replace(trial, node=taken.logical_id), sample, idx)
        self._live[trial.trial_id] = live
        self._emit(
            "admit",
            {"phase": self._phase, "trial": trial.trial_id, "sample": sample.sample_id, "attempt": trial.attempt},
            taken.logical_id,
        )
        self._transition(live, Event.START)
        self._push(s.sim_clock + to_us(self.timings.boot_s), _BOOTED, trial.trial_id)
        return True

    def _start_revert(self, live: _Live) -> None:
        s = self.state
        s.active_tasks += 1
        s.open_connections += 1
        s.peak_tasks = max(s.peak_tasks, s.active_tasks)
        s.peak_connections = max(s.peak_connections, s.open_connections)
        usage = live.trial.determination.resources if live.trial.determination else draw_resources(
            self.model, stage_rng(self.config.seed, live.trial.trial_id, "resources")
        )
        self._transition(live, Event.COLLECTED, cpu_s=usage.cpu_s, peak_mem_mb=usage.peak_mem_mb)
        self._push(s.sim_clock + to_us(self.timings.revert_s), _REVERTED, live.trial.trial_id)

    def dispatch(self) -> None:
        """Hand free control-plane capacity to waiting reverts first, then FIFO admissions."""
        s = self.state
        while s.revert_wait and self._control_headroom():
            self._start_revert(s.revert_wait.popleft())
        while s.ready:
            trial, sample = s.ready[0]
            if not self.admit(trial, sample):
                break
            s.ready.popleft()

    def handle_crash(self, live: _Live) -> None:
        """Requeue the sample for another attempt, or give up once attempts run out."""
        s = self.state
        trial = live.trial
        if trial.attempt < self.limits.max_attempts:
            fresh = advance(trial, Event.RETRY, self.timings, to_s(s.sim_clock))
            self._emit(
                "transition",
                {
                    "phase": self._phase,
                    "trial": fresh.trial_id,
                    "sample": fresh.sample_id,
                    "attempt": fresh.attempt,
                    "from": State.CRASHED.value,
                    "to": State.PROVISIONED.value,
                },
            )
            s.ready.append((fresh, live.sample))
        else:
            live.trial = advance(trial, Event.GIVE_UP, self.timings, to_s(s.sim_clock))
            self._emit(
                "transition",
                {
                    "phase": self._phase,
                    "trial": trial.trial_id,
                    "sample": trial.sample_id,
                    "attempt": trial.attempt,
                    "from": State.CRASHED.value,
                    "to": State.INCOMPLETE.value,
                },
            )
            s.completion[trial.sample_id] = State.INCOMPLETE.value
            self._result_completion[trial.sample_id] = State.INCOMPLETE.value

    # -- event handlers ------------------------------------------------------

    def _release_vm(self, live: _Live) -> None:
        s = self.state
        self.nodes[live.node_index] = cluster.release_slot(self.nodes[live.node_index])
        s.active_vms -= 1

    def _release_control(self) -> None:
        self.state.active_tasks -= 1
        self.state.open_connections -= 1

    def _determine(self, live: _Live, det: Determination) -> None:
        self._transition(live, Event.VERDICT, det)
        self._emit(
            "determination",
            {"phase": self._phase, "trial": live.trial.trial_id, "sample": live.trial.sample_id, **det.to_dict()},
            self._node_id(live),
        )
        self._result_determinations += 1

    def _handle(self, kind: str, trial_id: str) -> None:
        live = self._live[trial_id]
        now = self.state.sim_clock
        seed = self.config.seed
        tm = self.timings
        fixed = self.config.fixed_lifecycle

        if kind == _BOOTED:
            self._release_control()
            self._transition(live, Event.BOOTED)
            live.static = _quantized(
                evaluate_static(self.model, live.sample, stage_rng(seed, trial_id, "static"), tm)
            )
            window = live.static.t_det_s if live.static else tm.static_timeout_s
            egress = draw_egress(self.model, stage_rng(seed, trial_id, "egress"), window)
            if egress is not None:
                self._push(now + to_us(egress), _EGRESS, trial_id)
            if live.static is not None:
                hold = tm.static_timeout_s + tm.dynamic_timeout_s if fixed else live.static.t_det_s
                self._push(now + to_us(hold), _STATIC_VERDICT, trial_id)
            else:
                self._push(now + to_us(tm.static_timeout_s), _STATIC_TIMEOUT, trial_id)

        elif kind == _STATIC_VERDICT:
            self._determine(live, live.static)
            self._push(now + to_us(tm.collect_s), _COLLECTED, trial_id)

        elif kind == _STATIC_TIMEOUT:
            self._transition(live, Event.STATIC_TIMEOUT)
            live.dynamic = _quantized(
                evaluate_dynamic(self.model, live.sample, stage_rng(seed, trial_id, "dynamic"), tm)
            )
            crash = draw_crash(self.model, live.sample, stage_rng(seed, trial_id, "crash"), tm)
            verdict_off = None if live.dynamic is None else to_us(live.dynamic.t_det_s) - to_us(tm.static_timeout_s)
            if crash is not None and (verdict_off is None or to_us(crash) < verdict_off):
                self._push(now + to_us(crash), _CRASH, trial_id)
            elif verdict_off is not None:
                self._push(now + (to_us(tm.dynamic_timeout_s) if fixed else verdict_off), _DYNAMIC_VERDICT, trial_id)
            else:
                self._push(now + to_us(tm.dynamic_timeout_s), _DYNAMIC_TIMEOUT, trial_id)

        elif kind == _DYNAMIC_VERDICT:
            self._determine(live, live.dynamic)
            self._push(now + to_us(tm.collect_s), _COLLECTED, trial_id)

        elif kind == _DYNAMIC_TIMEOUT:
            self._transition(live, Event.DYNAMIC_TIMEOUT)
            self._push(now + to_us(tm.collect_s), _COLLECTED, trial_id)

        elif kind == _COLLECTED:
            if self._control_headroom() and not self.state.revert_wait:
                self._start_revert(live)
            else:
                self.state.revert_wait.append(live)

        elif kind == _REVERTED:
            self._release_control()
            self._release_vm(live)
            before = live.trial.state
            live.trial = revert(live.trial, tm, to_s(now))
            self._emit(
                "transition",
                {
                    "phase": self._phase,
                    "trial": trial_id,
                    "sample": live.trial.sample_id,
                    "attempt": live.trial.attempt,
                    "from": before.value,
                    "to": State.DONE.value,
                },
                self.nodes[live.node_index].logical_id,
            )
            self.state.completion[live.trial.sample_id] = State.DONE.value
            self._result_completion[live.trial.sample_id] = State.DONE.value
            self._result_wall[live.trial.sample_id] = trial_wall_time(live.trial, tm)
            if not _within(live.trial.determination, tm):
                self._result_violations.append(trial_id)
            del self._live[trial_id]

        elif kind == _CRASH:
            node = self._node_id(live)
            self._emit(
                "crash",
                {"phase": self._phase, "trial": trial_id, "sample": live.trial.sample_id, "attempt": live.trial.attempt},
                node,
            )
            self._transition(live, Event.CRASH)
            self._release_vm(live)
            self._result_crashes += 1
            del self._live[trial_id]
            self.handle_crash(live)

        elif kind == _EGRESS:
            rec = filter_egress(self.egress, EgressAttempt(trial_id, to_s(now), self._node_id(live)))
            self._emit(
                "egress_blocked",
                {"phase": self._phase, "trial": trial_id, "sample": live.trial.sample_id, "delivered": rec.delivered},
                rec.node,
            )

    # -- sweeps --------------------------------------------------------------

    def sweep(self, phase: str, samples: Sequence[SampleRecord], start_us: int) -> SweepResult:
        """Run every sample to Done or Incomplete, starting at ``start_us``."""
        s = self.state
        s.sim_clock = start_us
        self._phase = phase
        self._result_completion: dict[str, str] = {}
        self._result_wall: dict[str, float] = {}
        self._result_violations: list[str] = []
        self._result_determinations = 0
        self._result_crashes = 0
        for sample in samples:
            s.ready.append((Trial(trial_id_for(phase, sample.sample_id), sample.sample_id), sample))
        self.dispatch()
        events = s.events
        while events:
            now = events[0][0]
            s.sim_clock = now
            while events and events[0][0] == now:
                _, _, kind, trial_id = heapq.heappop(events)
                self._handle(kind, trial_id)
            self.dispatch()
        if s.ready or s.revert_wait or self._live:
            raise LimitViolation(f"sweep {phase} stalled with work left; limits admit nothing")
        return SweepResult(
            phase,
            start_us,
            s.sim_clock,
            self._result_wall,
            self._result_completion,
            self._result_determinations,
            self._result_crashes,
            self._result_violations,
        )

    def audit(self, phase: str) -> dict:
        s = self.state
        payload = {
            "phase": phase,
            "peak_tasks": s.peak_tasks,
            "peak_connections": s.peak_connections,
            "peak_vms": s.peak_vms,
            "peak_node_busy": max(self.peak_node_busy, default=0),
            "limits": {
                "max_concurrent_tasks": self.limits.max_concurrent_tasks,
                "max_api_connections": self.limits.max_api_connections,
                "max_concurrent_vms": self.vm_cap,
            },
        }
        payload["ok"] = (
            s.peak_tasks <= self.limits.max_concurrent_tasks
            and s.peak_connections <= self.limits.max_api_connections
            and s.peak_vms <= self.vm_cap
            and all(p <= n.vm_capacity for p, n in zip(self.peak_node_busy, self.nodes))
        )
        self._emit("audit", payload)
        return payload


def _quantized(det: Determination | None) -> Determination | None:
    if det is None:
        return None
    return replace(det, t_det_s=to_s(to_us(det.t_det_s)))


def _within(det: Determination | None, timings) -> bool:
    return det is None or det.within_bounds(timings)


# -- QA ----------------------------------------------------------------------


@dataclass
class QaReport:
    phase: str
    subset_size: int
    completed: int
    incomplete: list[str]
    determinations: int
    crashes: int
    failure_classes: list[dict]
    makespan_s: float

    @property
    def go(self) -> bool:
        return not self.failure_classes

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "subset_size": self.subset_size,
            "completed": self.completed,
            "incomplete": list(self.incomplete),
            "determinations": self.determinations,
            "crashes": self.crashes,
            "failure_classes": self.failure_classes,
            "makespan_s": self.makespan_s,
            "go": self.go,
        }


def _qa_report(result: SweepResult, subset: Sequence[SampleRecord], qa: QaParams) -> QaReport:
    incomplete = [sid for sid, st in result.completion.items() if st == State.INCOMPLETE.value]
    failures: list[dict] = []
    n = len(subset)
    if n and len(incomplete) / n > qa.max_incomplete_fraction:
        failures.append(
            {"class": "crash_loop", "detail": f"{len(incomplete)}/{n} samples hit the attempt cap"}
        )
    if any(s.malicious for s in subset) and result.determinations == 0:
        failures.append({"class": "zero_determination", "detail": "detector made no determinations"})
    slow = sorted(sid for sid, w in result.wall_times.items() if w > qa.max_trial_s)
    if slow or result.bound_violations:
        failures.append(
            {
                "class": "timing_anomaly",
                "detail": f"{len(slow)} trials over {qa.max_trial_s}s, "
                f"{len(result.bound_violations)} determinations outside stage bounds",
            }
        )
    return QaReport(
        phase=result.phase,
        subset_size=n,
        completed=sum(1 for st in result.completion.values() if st == State.DONE.value),
        incomplete=sorted(incomplete),
        determinations=result.determinations,
        crashes=result.crashes,
        failure_classes=failures,
        makespan_s=result.makespan_s,
    )


def qa_subset(sample_set: SampleSet, subset_size: int, seed: int) -> SampleSet:
    size = min(subset_size, len(sample_set))
    return proportional_subset(sample_set, size, seed)


# -- runs ----------------------------------------------------------------------


def _header(resolved: ResolvedRun) -> dict:
    cfg = resolved.config
    return {
        "run": cfg.name,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "inputs": dict(sorted(resolved.inputs.items())),
        "detector_name": resolved.model.name,
        "sample_set_digest": resolved.sample_set.digest(),
    }


@dataclass
class RunOutcome:
    journal: RunJournal
    qa: QaReport | None
    phases: dict[str, dict]
    incomplete: list[str]
    aborted: bool

    @property
    def digest(self) -> str:
        return self.journal.trailer["digest"]


def execute(
    config: RunConfig,
    base_dir: str | Path | None = None,
    listeners: Iterable[Callable[[JournalEvent], None]] = (),
    resolved: ResolvedRun | None = None,
) -> RunOutcome:
    """Run every configured phase and close the journal."""
    resolved = resolved or resolve(config, base_dir)
    journal = RunJournal(_header(resolved), listeners=listeners)
    sim = Simulator(resolved, journal)
    samples = resolved.sample_set.samples
    t = 0
    phases: dict[str, dict] = {}
    qa_report: QaReport | None = None
    incomplete: list[str] = []
    aborted = False

    sim._emit("run", {"event": "start", "samples": len(samples)}, at=0)
    for phase in config.phases:
        if phase in ("main", "qa_pre", "qa_post") and not samples:
            continue
        if aborted and phase in ("main", "qa_post"):
            continue
        start = t
        sim._emit("phase", {"phase": phase, "event": "start"}, at=t)
        if phase == "deploy":
            plan = cluster.plan_template_distribution(sim.nodes, config.deploy_mode, config.cluster_timing)
            t += to_us(plan.estimated_duration)
            info = plan.to_dict()
        elif phase == "qa_pre":
            subset = qa_subset(resolved.sample_set, config.qa.subset_size, config.seed)
            result = sim.sweep(phase, subset.samples, t)
            t = result.end_us
            qa_report = _qa_report(result, subset.samples, config.qa)
            sim.audit(phase)
            sim._emit("qa", qa_report.to_dict(), at=t)
            info = {"go": qa_report.go, "subset_size": qa_report.subset_size}
            if not qa_report.go and config.qa.halt_on_no_go:
                aborted = True
        elif phase == "main":
            result = sim.sweep(phase, samples, t)
            t = result.end_us
            sim.audit(phase)
            info = {
                "done": sum(1 for v in result.completion.values() if v == State.DONE.value),
                "incomplete": sum(1 for v in result.completion.values() if v == State.INCOMPLETE.value),
                "crashes": result.crashes,
                "egress_blocked": len(sim.egress.log),
            }
        elif phase == "qa_post":
            incomplete = completeness_check(journal, resolved.sample_set)
            sim._emit("qa", {"phase": phase, "incomplete": incomplete, "complete": not incomplete}, at=t)
            info = {"incomplete": len(incomplete)}
        else:  # teardown
            vm_count = min(sim.vm_cap, cluster.total_capacity(sim.nodes))
            t += to_us(cluster.teardown_duration(vm_count, config.limits.max_concurrent_tasks, config.cluster_timing))
            info = {"deleted_vms": vm_count}
        sim.state.sim_clock = t
        info["duration_s"] = to_s(t - start)
        phases[phase] = info
        sim._emit("phase", {"phase": phase, "event": "end", **info}, at=t)
    sim._emit("run", {"event": "end", "aborted": aborted}, at=t)

    summary = {
        "duration_s": to_s(t),
        "phases": phases,
        "aborted": aborted,
        "incomplete": len(incomplete),
    }
    journal.close(summary)
    return RunOutcome(journal, qa_report, phases, incomplete, aborted)


def run_challenge(
    config: RunConfig,
    base_dir: str | Path | None = None,
    listeners: Iterable[Callable[[JournalEvent], None]] = (),
) -> RunJournal:
    """Simulate one tool's evaluation; the journal is a pure function of ``config``."""
    return execute(config, base_dir, listeners).journal


def qa_run(config: RunConfig, subset_size: int | None = None, base_dir: str | Path | None = None) -> QaReport:
    """Run only the QA sweep over a representative subset of the sample set."""
    resolved = resolve(config, base_dir)
    size = config.qa.subset_size if subset_size is None else subset_size
    if size > len(resolved.sample_set):
        raise RangeForgeError(f"QA subset of {size} exceeds the {len(resolved.sample_set)}-sample set")
    journal = RunJournal(_header(resolved))
    sim = Simulator(resolved, journal)
    subset = qa_subset(resolved.sample_set, size, config.seed)
    result = sim.sweep("qa_pre", subset.samples, 0)
    report = _qa_report(result, subset.samples, config.qa)
    journal.close({"qa": report.to_dict()})
    report.journal = journal  # type: ignore[attr-defined]
    return report


def completeness_check(journal: RunJournal, sample_set: SampleSet | Iterable[SampleRecord], phase: str = "main") -> list[str]:
    """Sample ids without a Done trial in ``phase``; empty means the range may be reset."""
    done = set()
    for ev in journal.events():
        p = ev.payload
        if ev.kind == "transition" and p.get("phase") == phase and p.get("to") == State.DONE.value:
            done.add(p["sample"])
    return [s.sample_id for s in sample_set if s.sample_id not in done]


# -- audits and replay ---------------------------------------------------------

_CONTROL_STATES = {State.BOOTING.value, State.REVERTING.value}
_VM_STATES = {
    State.BOOTING.value,
    State.STATIC_SCAN.value,
    State.DYNAMIC_EXEC.value,
    State.COLLECTING.value,
    State.REVERTING.value,
}


def audit_journal(journal: RunJournal) -> dict:
    """Peak concurrency reconstructed from transitions alone.

    Tasks and API connections are trials in Booting or Reverting; VMs are
    trials in any guest state; per-node counts use each event's node.
    """
    tasks = vms = peak_tasks = peak_vms = 0
    node_busy: dict[str, int] = {}
    node_peak: dict[str, int] = {}
    last_t = float("-inf")
    monotone = True
    for ev in journal.events():
        if ev.sim_time < last_t:
            monotone = False
        last_t = ev.sim_time
        if ev.kind != "transition":
            continue
        src, dst = ev.payload["from"], ev.payload["to"]
        d_task = (dst in _CONTROL_STATES) - (src in _CONTROL_STATES)
        d_vm = (dst in _VM_STATES) - (src in _VM_STATES)
        tasks += d_task
        vms += d_vm
        if ev.node is not None and d_vm:
            node_busy[ev.node] = node_busy.get(ev.node, 0) + d_vm
            node_peak[ev.node] = max(node_peak.get(ev.node, 0), node_busy[ev.node])
        peak_tasks = max(peak_tasks, tasks)
        peak_vms = max(peak_vms, vms)
    return {
        "peak_tasks": peak_tasks,
        "peak_connections": peak_tasks,
        "peak_vms": peak_vms,
        "node_peak": node_peak,
        "final_tasks": tasks,
        "final_vms": vms,
        "monotone": monotone,
    }


@dataclass
class ReplayResult:
    digest: str
    state: RunState
    counts: object | None = None
    score: object | None = None
    rerun_digest: str | None = None


def replay_journal(journal: RunJournal, base_dir: str | Path | None = None, rerun: bool = False) -> ReplayResult:
    """Verify the digest, rebuild the final state, and re-derive reports."""
    from rangeforge.scoring import cost_score, tally

    digest = journal.verify()
    state = RunState()
    for ev in journal.events():
        state.sim_clock = max(state.sim_clock, to_us(ev.sim_time))
        p = ev.payload
        if ev.kind != "transition" or p.get("phase") != "main":
            continue
        state.attempts[p["sample"]] = max(state.attempts.get(p["sample"], 0), p["attempt"])
        if p["to"] in (State.DONE.value, State.INCOMPLETE.value):
            state.completion[p["sample"]] = p["to"]
    peaks = audit_journal(journal)
    state.peak_tasks = state.peak_connections = peaks["peak_tasks"]
    state.peak_vms = peaks["peak_vms"]
    state.active_tasks = state.open_connections = peaks["final_tasks"]
    state.active_vms = peaks["final_vms"]

    result = ReplayResult(digest, state)
    cfg_data = journal.header.get("config")
    if cfg_data is None:
        return result
    config = RunConfig.from_dict(cfg_data)
    resolved = resolve(config, base_dir)
    for ref, want in journal.header.get("inputs", {}).items():
        if resolved.inputs.get(ref) != want:
            raise DigestMismatchError(f"input {ref} changed since the run was recorded")
    result.counts = tally(journal, resolved.sample_set)
    result.score = cost_score(result.counts, journal, config.cost, tool=resolved.model.name)
    if rerun:
        result.rerun_digest = execute(config, base_dir, resolved=resolved).digest
    return result


# -- progress feed -------------------------------------------------------------


class SocketFeed:
    """Mirror journal events as JSON lines to a local TCP or Unix socket."""

    def __init__(self, address: str) -> None:
        if address.startswith("unix:"):
            self.sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            self.sock.connect(address[5:])
        else:
            host, _, port = address.rpartition(":")
            self.sock = socket.create_connection((host or "127.0.0.1", int(port)))

    def __call__(self, event: JournalEvent) -> None:
        self.sock.sendall(event.to_line().encode() + b"\n")

    def close(self) -> None:
        self.sock.close()
