"""Synthetic detectors-under-test and the gateway egress policy.

A detector is a parametric verdict model: a signature database that always
fires on known malware, per-filetype hit probabilities for the static and
dynamic stages, false-positive rates for benign files, latency and resource
draws, a crash model keyed on sample-id patterns, and a rate at which the
guest tries to reach the outside world.

Every draw takes an explicit ``random.Random`` so the scheduler can key it
on (run seed, trial id, stage) and replay it exactly.
"""

from __future__ import annotations

import fnmatch
import json
import random
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

from rangeforge.corpus import SampleRecord
from rangeforge.errors import ValidationError
from rangeforge.lifecycle import DYNAMIC, STATIC, Determination, ResourceDraw, StageTimings
from rangeforge.rng import substream

STATIC_ACTIONS = ("quarantined", "flagged")
DYNAMIC_ACTIONS = ("blocked", "warned", "quarantined")
FALLBACK_TYPE = "other"


def _check_probs(name: str, probs: Mapping[str, float]) -> None:
    for key, p in probs.items():
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"{name}[{key!r}] = {p} is not a probability")


@dataclass(frozen=True)
class DetectorModel:
    name: str
    signature_db: frozenset[str] = frozenset()
    static_hit_prob: dict[str, float] = field(default_factory=dict)
    dynamic_hit_prob: dict[str, float] = field(default_factory=dict)
    false_positive_prob: dict[str, float] = field(default_factory=dict)
    dynamic_fp_factor: float = 1.0
    # (low, high) seconds; a None high bound means "up to the stage timeout"
    static_latency_s: tuple[float, float | None] = (1.0, None)
    dynamic_latency_s: tuple[float, float | None] = (1.0, None)
    cpu_s_range: tuple[float, float] = (0.5, 30.0)
    peak_mem_mb_range: tuple[float, float] = (64.0, 1024.0)
    egress_rate: float = 0.0
    crash_prob: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "signature_db", frozenset(self.signature_db))
        _check_probs("static_hit_prob", self.static_hit_prob)
        _check_probs("dynamic_hit_prob", self.dynamic_hit_prob)
        _check_probs("false_positive_prob", self.false_positive_prob)
        _check_probs("crash_prob", self.crash_prob)
        if not 0.0 <= self.egress_rate <= 1.0:
            raise ValidationError(f"egress_rate {self.egress_rate} is not a probability")
        if self.dynamic_fp_factor < 0:
            raise ValidationError("dynamic_fp_factor must be nonnegative")
        for lo_hi in (self.static_latency_s, self.dynamic_latency_s):
            if lo_hi[0] < 0 or (lo_hi[1] is not None and lo_hi[1] < lo_hi[0]):
                raise ValidationError(f"bad latency range {lo_hi}")
        for lo, hi in (self.cpu_s_range, self.peak_mem_mb_range):
            if lo < 0 or hi < lo:
                raise ValidationError(f"bad resource range ({lo}, {hi})")

    def prob(self, table: Mapping[str, float], filetype: str) -> float:
        if filetype in table:
            return table[filetype]
        return table.get(FALLBACK_TYPE, 0.0)

    def crash_probability(self, sample_id: str) -> float:
        hits = [p for pat, p in self.crash_prob.items() if fnmatch.fnmatchcase(sample_id, pat)]
        return max(hits, default=0.0)

    def signature_match(self, sample: SampleRecord) -> bool:
        # a never-before-seen sample cannot be in any signature database
        return sample.malicious and not sample.zero_day and sample.content_digest in self.signature_db

    def validate_against(self, timings: StageTimings) -> None:
        for (lo, hi), limit, stage in (
            (self.static_latency_s, timings.static_timeout_s, STATIC),
            (self.dynamic_latency_s, timings.dynamic_timeout_s, DYNAMIC),
        ):
            if hi is not None and hi > limit:
                raise ValidationError(
                    f"{self.name}: {stage} latency support up to {hi}s exceeds the {limit}s stage budget"
                )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "signature_db": sorted(self.signature_db),
            "static_hit_prob": dict(sorted(self.static_hit_prob.items())),
            "dynamic_hit_prob": dict(sorted(self.dynamic_hit_prob.items())),
            "false_positive_prob": dict(sorted(self.false_positive_prob.items())),
            "dynamic_fp_factor": self.dynamic_fp_factor,
            "static_latency_s": list(self.static_latency_s),
            "dynamic_latency_s": list(self.dynamic_latency_s),
            "cpu_s_range": list(self.cpu_s_range),
            "peak_mem_mb_range": list(self.peak_mem_mb_range),
            "egress_rate": self.egress_rate,
            "crash_prob": dict(sorted(self.crash_prob.items())),
        }

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: Path | None = None) -> DetectorModel:
        data = dict(data)
        sig_file = data.pop("signature_db_file", None)
        digests = set(data.pop("signature_db", []) or [])
        if sig_file:
            path = Path(sig_file)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            digests |= load_signature_db(path)
        for key in ("static_latency_s", "dynamic_latency_s", "cpu_s_range", "peak_mem_mb_range"):
            if key in data:
                data[key] = tuple(data[key])
        try:
            return cls(signature_db=frozenset(digests), **data)
        except TypeError as exc:
            raise ValidationError(f"bad detector model: {exc}") from exc


def load_signature_db(path: str | Path) -> set[str]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ValidationError(f"cannot read signature db {path}: {exc}") from exc
    return {ln.strip() for ln in lines if ln.strip() and not ln.startswith("#")}


def load_detector(path: str | Path) -> DetectorModel:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot load detector model {p}: {exc}") from exc
    return DetectorModel.from_dict(data, base_dir=p.parent)


# -- draws -------------------------------------------------------------------


def _latency(bounds: tuple[float, float | None], budget: float, rng: random.Random) -> float:
    hi = budget if bounds[1] is None else min(bounds[1], budget)
    lo = min(bounds[0], hi)
    return rng.uniform(lo, hi)


def draw_resources(model: DetectorModel, rng: random.Random) -> ResourceDraw:
    return ResourceDraw(
        cpu_s=rng.uniform(*model.cpu_s_range),
        peak_mem_mb=rng.uniform(*model.peak_mem_mb_range),
    )


def evaluate_static(
    model: DetectorModel,
    sample: SampleRecord,
    rng: random.Random,
    timings: StageTimings | None = None,
) -> Determination | None:
    """Static-stage verdict for a file at rest, or None when the detector stays silent."""
    timings = timings or StageTimings()
    # fixed draw order keeps the stream aligned whichever branch is taken
    u = rng.random()
    latency = _latency(model.static_latency_s, timings.static_timeout_s, rng)
    resources = draw_resources(model, rng)
    action = rng.choice(STATIC_ACTIONS)
    if model.signature_match(sample):
        return Determination(STATIC, latency, resources, action, path="signature")
    if sample.malicious:
        hit = u < model.prob(model.static_hit_prob, sample.filetype)
    else:
        hit = u < model.prob(model.false_positive_prob, sample.filetype)
    if not hit:
        return None
    return Determination(STATIC, latency, resources, action, path="model")


def evaluate_dynamic(
    model: DetectorModel,
    sample: SampleRecord,
    rng: random.Random,
    timings: StageTimings | None = None,
) -> Determination | None:
    """Verdict while the sample executes; only reached when the static stage stayed silent."""
    timings = timings or StageTimings()
    u = rng.random()
    offset = _latency(model.dynamic_latency_s, timings.dynamic_timeout_s, rng)
    resources = draw_resources(model, rng)
    action = rng.choice(DYNAMIC_ACTIONS)
    if sample.malicious:
        p = model.prob(model.dynamic_hit_prob, sample.filetype)
    else:
        p = min(1.0, model.prob(model.false_positive_prob, sample.filetype) * model.dynamic_fp_factor)
    if u >= p:
        return None
    return Determination(DYNAMIC, timings.static_timeout_s + offset, resources, action, path="model")


def draw_crash(
    model: DetectorModel,
    sample: SampleRecord,
    rng: random.Random,
    timings: StageTimings | None = None,
) -> float | None:
    """Seconds into the dynamic stage at which executing the sample crashes the guest."""
    timings = timings or StageTimings()
    u = rng.random()
    offset = rng.uniform(0.0, timings.dynamic_timeout_s)
    return offset if u < model.crash_probability(sample.sample_id) else None


def draw_egress(model: DetectorModel, rng: random.Random, window_s: float) -> float | None:
    """Seconds after presentation at which the guest tries to reach the Internet."""
    u = rng.random()
    offset = rng.uniform(0.0, max(0.0, window_s))
    return offset if u < model.egress_rate else None


def stage_rng(seed: int, trial_id: str, stage: str) -> random.Random:
    return substream(seed, trial_id, stage)


# -- egress ------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class EgressAttempt:
    trial_id: str
    sim_time: float
    node: str | None = None


@dataclass(frozen=True, slots=True)
class BlockedRecord:
    trial_id: str
    sim_time: float
    node: str | None = None
    delivered: bool = False


@dataclass
class EgressPolicy:
    mode: str = "block_all"
    log: list[BlockedRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.mode != "block_all":
            raise ValidationError(f"unsupported egress mode {self.mode!r}")


def filter_egress(policy: EgressPolicy, attempt: EgressAttempt) -> BlockedRecord:
    """Drop an outbound attempt at the gateway and log it."""
    record = BlockedRecord(attempt.trial_id, attempt.sim_time, attempt.node, delivered=False)
    policy.log.append(record)
    return record


# -- presets -----------------------------------------------------------------


def _flat(p: float) -> dict[str, float]:
    return {FALLBACK_TYPE: p}


PRESET_PARAMS: dict[str, dict] = {
    "signature-heavy": {
        "signature_coverage": 0.85,
        "static_hit_prob": _flat(0.10),
        "dynamic_hit_prob": _flat(0.20),
        "false_positive_prob": _flat(0.002),
        "egress_rate": 0.05,
        "crash_prob": {"m-iso-*": 0.02},
    },
    "ml-generalizer": {
        "signature_coverage": 0.40,
        "static_hit_prob": {**_flat(0.75), "script": 0.55, "iso": 0.60},
        "dynamic_hit_prob": _flat(0.50),
        "false_positive_prob": _flat(0.02),
        "egress_rate": 0.0,
        "crash_prob": {"m-iso-*": 0.02},
    },
    "noisy": {
        "signature_coverage": 0.30,
        "static_hit_prob": _flat(0.60),
        "dynamic_hit_prob": _flat(0.60),
        "false_positive_prob": _flat(0.15),
        "dynamic_fp_factor": 0.5,
        "egress_rate": 0.30,
        "crash_prob": {"*-script-*": 0.01},
    },
    "crash-all": {
        "signature_coverage": 0.0,
        "static_hit_prob": _flat(0.0),
        "dynamic_hit_prob": _flat(0.0),
        "false_positive_prob": _flat(0.0),
        "crash_prob": {"*": 1.0},
    },
}
PRESETS = tuple(PRESET_PARAMS)


def preset(name: str, known_malware: Iterable[SampleRecord] = (), seed: int = 0) -> DetectorModel:
    """Build a shipped detector preset.

    The preset's signature database covers a seeded fraction of the digests
    in ``known_malware``; zero-day records are never eligible.
    """
    if name not in PRESET_PARAMS:
        raise ValidationError(f"unknown detector preset {name!r}; choose from {', '.join(PRESETS)}")
    params = dict(PRESET_PARAMS[name])
    coverage = params.pop("signature_coverage")
    rng = substream(seed, "signatures", name)
    digests = sorted(
        {s.content_digest for s in known_malware if s.malicious and not s.zero_day and s.content_digest}
    )
    db = frozenset(d for d in digests if rng.random() < coverage)
    return DetectorModel(name=name, signature_db=db, **params)
