"""Turn a closed run journal into confusion counts and an operational cost.

The cost model is a declared linear decomposition, lower is better::

    total = device_cost
          + resource_rate * sum(cpu_s)
          + labor_rate * triage_hours * fp
          + fp_incident_cost * fp
          + fn_incident_cost * fn
          - sum over TPs of tp_saving_base * max(0, 1 - t_det / detection_horizon_s)
"""

from __future__ import annotations

import math
from collections import defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field, fields

from rangeforge.corpus import SampleRecord, SampleSet
from rangeforge.errors import RangeForgeError, ValidationError
from rangeforge.journal import JournalEvent, RunJournal
from rangeforge.simtime import to_s, to_us

FORMULA = (
    "total = device_cost + resource_rate*sum(cpu_s) + labor_rate*triage_hours*fp"
    " + fp_incident_cost*fp + fn_incident_cost*fn"
    " - sum_tp tp_saving_base*max(0, 1 - t_det/detection_horizon_s)"
)
OUTCOMES = ("tp", "fp", "tn", "fn")


class UnknownNodeError(RangeForgeError):
    pass


# -- clock skew ----------------------------------------------------------------


@dataclass(frozen=True)
class SkewModel:
    offsets: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for node, off in self.offsets.items():
            if not math.isfinite(off):
                raise ValidationError(f"offset for {node!r} is not finite")

    @classmethod
    def zero(cls, nodes: Iterable[str]) -> SkewModel:
        return cls({n: 0.0 for n in nodes})

    def offset_us(self, node: str) -> int:
        if node not in self.offsets:
            raise UnknownNodeError(f"no clock offset for node {node!r}")
        return to_us(self.offsets[node])


def journal_nodes(journal: RunJournal) -> list[str]:
    return sorted({ev.node for ev in journal.events() if ev.node is not None})


def _shift(journal: RunJournal, skew: SkewModel, sign: int) -> list[JournalEvent]:
    out = []
    for ev in journal.events():
        if ev.node is None:
            out.append(ev)
            continue
        t = to_us(ev.sim_time) + sign * skew.offset_us(ev.node)
        out.append(JournalEvent(ev.seq, to_s(t), ev.kind, ev.payload, ev.node))
    return out


def apply_skew(journal: RunJournal, skew: SkewModel) -> RunJournal:
    """Simulate drifting guest clocks: each node's timestamps read ``offset`` seconds fast.

    The result keeps the original event order, so its timestamps need not be
    monotone.
    """
    summary = (journal.trailer or {}).get("summary")
    return RunJournal.from_events(journal.header, _shift(journal, skew, +1), strict_time=False, summary=summary)


def correct_skew(journal: RunJournal, skew: SkewModel) -> RunJournal:
    """Subtract each node's clock offset and restore time order."""
    shifted = _shift(journal, skew, -1)
    shifted.sort(key=lambda ev: (to_us(ev.sim_time), ev.seq))
    renumbered = [
        ev if ev.seq == i else JournalEvent(i, ev.sim_time, ev.kind, ev.payload, ev.node)
        for i, ev in enumerate(shifted, start=1)
    ]
    summary = (journal.trailer or {}).get("summary")
    return RunJournal.from_events(journal.header, renumbered, summary=summary)


# -- tallies -------------------------------------------------------------------


@dataclass
class TrialOutcome:
    sample_id: str
    status: str  # "Done" or "Incomplete"
    determination: dict | None = None
    cpu_s: float = 0.0


def final_outcomes(journal: RunJournal, phase: str = "main") -> dict[str, TrialOutcome]:
    """Per sample, the outcome of its last attempt in ``phase``."""
    det_by_trial: dict[str, dict] = {}
    cpu_by_trial: dict[str, float] = {}
    outcomes: dict[str, TrialOutcome] = {}
    for ev in journal.events():
        p = ev.payload
        if p.get("phase") != phase:
            continue
        if ev.kind == "determination":
            det_by_trial[p["trial"]] = p
        elif ev.kind == "transition":
            if p["to"] == "Reverting":
                cpu_by_trial[p["trial"]] = p.get("cpu_s", 0.0)
            elif p["to"] == "Done":
                outcomes[p["sample"]] = TrialOutcome(
                    p["sample"], "Done", det_by_trial.get(p["trial"]), cpu_by_trial.get(p["trial"], 0.0)
                )
            elif p["to"] == "Incomplete":
                outcomes[p["sample"]] = TrialOutcome(p["sample"], "Incomplete")
    return outcomes


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    tp_static: int = 0
    tp_dynamic: int = 0
    zero_day_tp: int = 0
    zero_day_fn: int = 0
    per_type: dict[str, dict[str, int]] = field(default_factory=dict)
    incomplete: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    # (sample_id, t_det_s, filetype, zero_day) per TP, and total CPU of completed trials
    tp_detections: list[tuple[str, float, str, bool]] = field(default_factory=list)
    cpu_s_total: float = 0.0

    @property
    def completed(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def rates(self) -> dict[str, float | None]:
        def ratio(a: int, b: int) -> float | None:
            return a / b if b else None

        return {
            "tpr": ratio(self.tp, self.tp + self.fn),
            "fpr": ratio(self.fp, self.fp + self.tn),
            "tnr": ratio(self.tn, self.fp + self.tn),
            "fnr": ratio(self.fn, self.tp + self.fn),
            "precision": ratio(self.tp, self.tp + self.fp),
            "accuracy": ratio(self.tp + self.tn, self.completed),
            "zero_day_tpr": ratio(self.zero_day_tp, self.zero_day_tp + self.zero_day_fn),
        }

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k != "tp_detections"}


def classify(sample: SampleRecord, flagged: bool) -> str:
    if flagged:
        return "tp" if sample.malicious else "fp"
    return "fn" if sample.malicious else "tn"


def tally(journal: RunJournal, sample_set: SampleSet | Iterable[SampleRecord], phase: str = "main") -> ConfusionCounts:
    """Confusion counts over the samples' final attempts; Incomplete samples are set aside."""
    outcomes = final_outcomes(journal, phase)
    counts = ConfusionCounts()
    per_type: dict[str, dict[str, int]] = defaultdict(lambda: dict.fromkeys(OUTCOMES, 0))
    for sample in sample_set:
        out = outcomes.get(sample.sample_id)
        if out is None:
            counts.missing.append(sample.sample_id)
            continue
        if out.status == "Incomplete":
            counts.incomplete.append(sample.sample_id)
            continue
        det = out.determination
        kind = classify(sample, det is not None)
        setattr(counts, kind, getattr(counts, kind) + 1)
        per_type[sample.filetype][kind] += 1
        counts.cpu_s_total += out.cpu_s
        if kind == "tp":
            if det["stage"] == "static":
                counts.tp_static += 1
            else:
                counts.tp_dynamic += 1
            counts.tp_detections.append((sample.sample_id, det["t_det_s"], sample.filetype, sample.zero_day))
        if sample.zero_day:
            if kind == "tp":
                counts.zero_day_tp += 1
            elif kind == "fn":
                counts.zero_day_fn += 1
    counts.per_type = {k: per_type[k] for k in sorted(per_type)}
    return counts


# -- cost ----------------------------------------------------------------------


@dataclass(frozen=True)
class CostParams:
    """Cost coefficients in one currency unit; the defaults are illustrative."""

    device_cost: float = 25_000.0
    resource_rate: float = 0.002
    labor_rate: float = 75.0
    triage_hours: float = 0.5
    fp_incident_cost: float = 500.0
    fn_incident_cost: float = 10_000.0
    tp_saving_base: float = 10_000.0
    detection_horizon_s: float = 300.0

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                raise ValidationError(f"cost.{f.name} must be a nonnegative number")

    def scaled(self, k: float) -> CostParams:
        """Every currency coefficient times ``k``; hours and horizons unchanged."""
        return CostParams(
            device_cost=self.device_cost * k,
            resource_rate=self.resource_rate * k,
            labor_rate=self.labor_rate * k,
            triage_hours=self.triage_hours,
            fp_incident_cost=self.fp_incident_cost * k,
            fn_incident_cost=self.fn_incident_cost * k,
            tp_saving_base=self.tp_saving_base * k,
            detection_horizon_s=self.detection_horizon_s,
        )


def saving_factor(t_det_s: float, horizon_s: float) -> float:
    if horizon_s <= 0:
        return 0.0
    return max(0.0, 1.0 - t_det_s / horizon_s)


@dataclass
class ScoreReport:
    tool: str
    total: float
    terms: dict[str, float]
    counts: dict
    rates: dict[str, float | None]
    per_type: dict[str, dict[str, float]]
    zero_day: dict[str, float]
    incomplete: list[str]
    formula: str = FORMULA

    def to_dict(self) -> dict:
        return asdict(self)


def cost_score(
    counts: ConfusionCounts,
    journal: RunJournal | None = None,
    params: CostParams | None = None,
    tool: str = "",
) -> ScoreReport:
    """Price a tally under ``params``.

    TP latencies and CPU totals come from ``counts``; when a journal is given
    its header names the tool.
    """
    params = params or CostParams()
    if journal is not None and not tool:
        tool = str(journal.header.get("detector_name", journal.header.get("run", "")))

    savings_by_type: dict[str, float] = defaultdict(float)
    zero_day_savings = 0.0
    savings = 0.0
    for _sid, t_det, ftype, zero_day in counts.tp_detections:
        s = params.tp_saving_base * saving_factor(t_det, params.detection_horizon_s)
        savings += s
        savings_by_type[ftype] += s
        if zero_day:
            zero_day_savings += s

    terms = {
        "device": params.device_cost,
        "resources": params.resource_rate * counts.cpu_s_total,
        "labor": params.labor_rate * params.triage_hours * counts.fp,
        "fp_incidents": params.fp_incident_cost * counts.fp,
        "fn_incidents": params.fn_incident_cost * counts.fn,
        "tp_savings": -savings,
    }
    total = math.fsum(terms.values())

    per_type: dict[str, dict[str, float]] = {}
    for ftype, c in counts.per_type.items():
        fp_cost = (params.labor_rate * params.triage_hours + params.fp_incident_cost) * c["fp"]
        fn_cost = params.fn_incident_cost * c["fn"]
        per_type[ftype] = {
            **{k: float(v) for k, v in c.items()},
            "fp_cost": fp_cost,
            "fn_cost": fn_cost,
            "tp_savings": savings_by_type.get(ftype, 0.0),
            "net": fp_cost + fn_cost - savings_by_type.get(ftype, 0.0),
        }
    zero_day = {
        "tp": float(counts.zero_day_tp),
        "fn": float(counts.zero_day_fn),
        "fn_cost": params.fn_incident_cost * counts.zero_day_fn,
        "tp_savings": zero_day_savings,
    }
    return ScoreReport(
        tool=tool,
        total=total,
        terms=terms,
        counts={k: getattr(counts, k) for k in (*OUTCOMES, "tp_static", "tp_dynamic")},
        rates=counts.rates(),
        per_type=per_type,
        zero_day=zero_day,
        incomplete=list(counts.incomplete),
    )


def rank_tools(reports: Mapping[str, ScoreReport]) -> list[str]:
    """Tool names from best (lowest total) to worst."""
    return sorted(reports, key=lambda name: (reports[name].total, name))


def format_table(report: ScoreReport) -> str:
    rows = [f"tool: {report.tool}", f"formula: {report.formula}", ""]
    rows.append(f"{'term':<14}{'value':>16}")
    for name, value in report.terms.items():
        rows.append(f"{name:<14}{value:>16.2f}")
    rows.append(f"{'TOTAL':<14}{report.total:>16.2f}")
    rows.append("")
    c = report.counts
    rows.append(f"tp={c['tp']} fp={c['fp']} tn={c['tn']} fn={c['fn']} "
                f"(static tp={c['tp_static']}, dynamic tp={c['tp_dynamic']})")
    for name, value in report.rates.items():
        rows.append(f"{name:<14}{'n/a' if value is None else f'{value:.4f}':>16}")
    if report.incomplete:
        rows.append(f"incomplete samples: {len(report.incomplete)}")
    return "\n".join(rows)
