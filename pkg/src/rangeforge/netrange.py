"""Network-detection evaluation at flow-segment granularity.

A timeline is a time-ordered list of labeled traffic segments: replayed
background traffic held at a target average rate, emulated hosts whose
segments are drawn from the same size and timing distributions, and attack
segments placed by a kill-chain schedule after an attack-free training span.

Devices only ever see the device-facing serialization (times, endpoints,
byte counts). Ground truth is kept in the timeline object and written to a
separate schedule file. Each device reports on its own alert channel and is
scored independently.
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from rangeforge.errors import RangeForgeError, ValidationError
from rangeforge.journal import canonical
from rangeforge.rng import derive_seed
from rangeforge.simtime import to_s, to_us

STEP_TAGS = ("reconnaissance", "exploitation", "lateral_movement", "command_and_control", "exfiltration")
COVERTNESS = ("overt", "moderate", "covert")
ACTIVITIES = ("login", "logout", "mail", "web", "server")

BACKGROUND, EMULATED, ATTACK = 0, 1, 2
GROUND_TRUTH_KINDS = ("background", "emulated_benign", "attack")
DEVICE_FIELDS = ("t_start", "t_end", "src", "dst", "bytes")

# segments per attack step, by covertness
_STEP_SEGMENTS = {"overt": 40, "moderate": 12, "covert": 3}
_STEP_LOG_SIZE = {
    "reconnaissance": 7.0,
    "exploitation": 10.0,
    "lateral_movement": 11.0,
    "command_and_control": 8.0,
    "exfiltration": 14.0,
}


class ScheduleOverflowError(ValidationError):
    pass


class UnknownDeviceError(RangeForgeError):
    pass


def _rng(seed: int, *keys: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))


def _ip(value: int) -> str:
    return str(ipaddress.IPv4Address(int(value)))


# -- schedule ------------------------------------------------------------------


@dataclass(frozen=True)
class AttackStep:
    tag: str
    t0: float
    t1: float

    def __post_init__(self) -> None:
        if self.tag not in STEP_TAGS:
            raise ValidationError(f"unknown attack step {self.tag!r}")
        if self.t1 < self.t0:
            raise ValidationError(f"step window [{self.t0}, {self.t1}] is reversed")


@dataclass(frozen=True)
class AttackEvent:
    attack_id: str
    steps: tuple[AttackStep, ...]
    covertness: str = "moderate"
    naive: bool = False

    def __post_init__(self) -> None:
        if self.covertness not in COVERTNESS:
            raise ValidationError(f"unknown covertness {self.covertness!r}")
        object.__setattr__(self, "steps", tuple(self.steps))
        for a, b in zip(self.steps, self.steps[1:]):
            if b.t0 < a.t0:
                raise ValidationError(f"{self.attack_id}: step windows out of order")

    @property
    def start(self) -> float:
        return min(s.t0 for s in self.steps)

    @property
    def end(self) -> float:
        return max(s.t1 for s in self.steps)

    def to_dict(self) -> dict:
        return {
            "attack_id": self.attack_id,
            "covertness": self.covertness,
            "naive": self.naive,
            "steps": [asdict(s) for s in self.steps],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> AttackEvent:
        return cls(
            attack_id=str(data["attack_id"]),
            steps=tuple(AttackStep(s["tag"], float(s["t0"]), float(s["t1"])) for s in data["steps"]),
            covertness=data.get("covertness", "moderate"),
            naive=bool(data.get("naive", False)),
        )


def write_schedule(schedule: Sequence[AttackEvent], path: str | Path) -> Path:
    dest = Path(path)
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(json.dumps([a.to_dict() for a in schedule], indent=2) + "\n", encoding="utf-8")
    return dest


def load_schedule(path: str | Path) -> list[AttackEvent]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [AttackEvent.from_dict(row) for row in data]


def random_schedule(
    n_attacks: int,
    duration_s: float,
    training_end_s: float,
    seed: int,
    step_s: tuple[float, float] = (30.0, 240.0),
) -> list[AttackEvent]:
    """Kill-chain campaigns placed uniformly after the training span."""
    rng = _rng(seed, "schedule")
    out = []
    for i in range(n_attacks):
        n_steps = int(rng.integers(1, len(STEP_TAGS) + 1))
        first = int(rng.integers(0, len(STEP_TAGS) - n_steps + 1))
        tags = STEP_TAGS[first:first + n_steps]
        lengths = rng.uniform(*step_s, size=n_steps)
        gaps = rng.uniform(0.0, step_s[0], size=n_steps)
        span = float(lengths.sum() + gaps.sum())
        room = duration_s - training_end_s - span
        if room <= 0:
            raise ScheduleOverflowError("timeline too short for the requested attack steps")
        t = training_end_s + float(rng.uniform(0.0, room))
        steps = []
        for tag, length, gap in zip(tags, lengths, gaps):
            t0 = round(t + float(gap), 3)
            t1 = round(t0 + float(length), 3)
            steps.append(AttackStep(tag, t0, t1))
            t = t1
        out.append(
            AttackEvent(
                attack_id=f"atk-{i:03d}",
                steps=tuple(steps),
                covertness=COVERTNESS[int(rng.integers(0, len(COVERTNESS)))],
                naive=bool(rng.random() < 0.3),
            )
        )
    return out


# -- timeline ------------------------------------------------------------------


@dataclass(frozen=True)
class TimelineConfig:
    duration_s: float = 1800.0
    background_rate_gbps: float = 1.25
    background_hosts: int = 2000
    emulated_hosts: int = 400
    external_hosts: int = 500
    segments_per_s: float = 50.0
    size_sigma: float = 1.0
    mean_segment_s: float = 0.5
    training_fraction: float = 0.2
    training_end_s: float | None = None
    address_base: str = "10.0.0.0"
    external_base: str = "198.51.100.0"

    def __post_init__(self) -> None:
        if self.duration_s <= 0 or self.background_rate_gbps <= 0 or self.segments_per_s <= 0:
            raise ValidationError("duration, rate and segment density must be positive")
        if self.background_hosts < 1 or self.emulated_hosts < 0:
            raise ValidationError("need at least one background host")
        if self.training_end >= self.duration_s:
            raise ValidationError("training period must end before the timeline does")

    @property
    def training_end(self) -> float:
        if self.training_end_s is not None:
            return self.training_end_s
        return self.training_fraction * self.duration_s


@dataclass(frozen=True)
class GroundTruth:
    kind: str
    attack_id: str | None = None
    step: str | None = None
    activity: str | None = None


@dataclass(frozen=True)
class TrafficSegment:
    t_start: float
    t_end: float
    src: str
    dst: str
    bytes: int
    ground_truth: GroundTruth

    def device_view(self) -> dict:
        return {"t_start": self.t_start, "t_end": self.t_end, "src": self.src, "dst": self.dst, "bytes": self.bytes}


@dataclass(frozen=True, eq=False)
class TrafficTimeline:
    """Columnar segment store; rows are sorted by start time."""

    config: TimelineConfig
    seed: int
    t_start: np.ndarray  # microseconds
    t_end: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    nbytes: np.ndarray
    label: np.ndarray
    attack_idx: np.ndarray
    step_idx: np.ndarray
    activity: np.ndarray
    schedule: tuple[AttackEvent, ...]
    background_addrs: np.ndarray
    emulated_addrs: np.ndarray
    surges: tuple[tuple[float, float, float], ...] = ()

    def __len__(self) -> int:
        return int(self.t_start.size)

    @property
    def duration_s(self) -> float:
        return self.config.duration_s

    @property
    def training_end_s(self) -> float:
        return self.config.training_end

    @property
    def background_rate_gbps(self) -> float:
        return self.config.background_rate_gbps

    @property
    def address_space(self) -> np.ndarray:
        return np.sort(np.concatenate([self.background_addrs, self.emulated_addrs]))

    def segment(self, i: int) -> TrafficSegment:
        kind = GROUND_TRUTH_KINDS[int(self.label[i])]
        gt = GroundTruth(kind)
        if kind == "attack":
            atk = self.schedule[int(self.attack_idx[i])]
            gt = GroundTruth(kind, atk.attack_id, atk.steps[int(self.step_idx[i])].tag)
        elif kind == "emulated_benign":
            gt = GroundTruth(kind, activity=ACTIVITIES[int(self.activity[i])])
        return TrafficSegment(
            to_s(int(self.t_start[i])),
            to_s(int(self.t_end[i])),
            _ip(self.src[i]),
            _ip(self.dst[i]),
            int(self.nbytes[i]),
            gt,
        )

    def segments(self) -> Iterable[TrafficSegment]:
        for i in range(len(self)):
            yield self.segment(i)

    def mask(self, kind: str) -> np.ndarray:
        return self.label == GROUND_TRUTH_KINDS.index(kind)

    def window_bytes(self, t0: float, t1: float, kinds: Iterable[str] | None = None) -> int:
        """Bytes of segments starting in [t0, t1)."""
        sel = (self.t_start >= to_us(t0)) & (self.t_start < to_us(t1))
        if kinds is not None:
            sel &= np.isin(self.label, [GROUND_TRUTH_KINDS.index(k) for k in kinds])
        return int(self.nbytes[sel].sum())

    def rate_gbps(self, t0: float, t1: float, kinds: Iterable[str] | None = None) -> float:
        return self.window_bytes(t0, t1, kinds) * 8 / (t1 - t0) / 1e9

    def sliding_rates(self, window_s: float = 60.0, step_s: float = 1.0) -> np.ndarray:
        """Mean Gbps over every window [t, t + window_s) that fits in the timeline."""
        edges = np.arange(0.0, self.duration_s - window_s + 1e-9, step_s)
        order = np.argsort(self.t_start, kind="stable")
        starts = self.t_start[order]
        cum = np.concatenate([[0], np.cumsum(self.nbytes[order])])
        lo = np.searchsorted(starts, np.round(edges * 1e6).astype(np.int64), side="left")
        hi = np.searchsorted(starts, np.round((edges + window_s) * 1e6).astype(np.int64), side="left")
        return (cum[hi] - cum[lo]) * 8 / window_s / 1e9

    # -- device-facing serialization -------------------------------------------

    def device_lines(self) -> list[str]:
        src = [_ip(a) for a in self.src]
        dst = [_ip(a) for a in self.dst]
        return [
            canonical(
                {
                    "t_start": to_s(int(ts)),
                    "t_end": to_s(int(te)),
                    "src": s,
                    "dst": d,
                    "bytes": int(b),
                }
            )
            for ts, te, s, d, b in zip(self.t_start, self.t_end, src, dst, self.nbytes)
        ]

    def device_bytes(self) -> bytes:
        return ("\n".join(self.device_lines()) + "\n").encode() if len(self) else b""

    def ground_truth_records(self) -> list[dict]:
        return [asdict(self.segment(i).ground_truth) for i in range(len(self))]


def _spread_positions(total: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` distinct positions in ``range(total)``, one per equal-width block."""
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    edges = np.floor(np.arange(count + 1) * total / count).astype(np.int64)
    widths = edges[1:] - edges[:-1]
    return edges[:-1] + (rng.random(count) * widths).astype(np.int64)


def _sorted_columns(cols: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    order = np.lexsort((cols["dst"], cols["src"], cols["t_end"], cols["t_start"]))
    return {k: v[order] for k, v in cols.items()}


def build_timeline(
    config: TimelineConfig | None = None,
    schedule: Sequence[AttackEvent] = (),
    seed: int = 0,
) -> TrafficTimeline:
    """Generate background, emulated-host and attack segments.

    Non-attack traffic is rate-controlled per second so the stream averages
    the configured rate; every host, emulated or not, draws segment sizes
    and durations from the same distributions.
    """
    config = config or TimelineConfig()
    schedule = tuple(schedule)
    for atk in schedule:
        if atk.start < 0 or atk.end > config.duration_s:
            raise ScheduleOverflowError(f"{atk.attack_id} falls outside [0, {config.duration_s}]")
        if atk.start < config.training_end:
            raise ScheduleOverflowError(f"{atk.attack_id} starts inside the training period")

    base = int(ipaddress.IPv4Address(config.address_base))
    ext_base = int(ipaddress.IPv4Address(config.external_base))
    n_hosts = config.background_hosts + config.emulated_hosts
    pool = base + 1 + np.arange(n_hosts, dtype=np.int64)
    rng_addr = _rng(seed, "addresses")
    emu_pos = _spread_positions(n_hosts, config.emulated_hosts, rng_addr)
    is_emu = np.zeros(n_hosts, dtype=bool)
    is_emu[emu_pos] = True
    externals = ext_base + 1 + np.arange(config.external_hosts, dtype=np.int64)
    peers = np.concatenate([pool, externals])

    # non-attack traffic, one rate-controlled second at a time
    rng = _rng(seed, "traffic")
    n_seconds = int(math.ceil(config.duration_s))
    counts = np.maximum(1, rng.poisson(config.segments_per_s, size=n_seconds))
    total = int(counts.sum())
    second = np.repeat(np.arange(n_seconds), counts)
    t_start = second + rng.random(total)
    t_start = np.minimum(t_start, config.duration_s - 1e-6)
    length = np.maximum(1e-3, rng.exponential(config.mean_segment_s, size=total))
    raw = rng.lognormal(0.0, config.size_sigma, size=total)
    bytes_per_s = config.background_rate_gbps * 1e9 / 8
    per_second_raw = np.bincount(second, weights=raw, minlength=n_seconds)
    # the last second may be partial
    budget = np.full(n_seconds, bytes_per_s)
    budget[-1] = bytes_per_s * (config.duration_s - (n_seconds - 1))
    nbytes = np.maximum(1, np.rint(raw * (budget / per_second_raw)[second])).astype(np.int64)
    src_host = rng.integers(0, n_hosts, size=total)
    dst = peers[rng.integers(0, peers.size, size=total)]
    label = np.where(is_emu[src_host], EMULATED, BACKGROUND).astype(np.int8)
    activity = np.where(label == EMULATED, rng.integers(0, len(ACTIVITIES), size=total), -1).astype(np.int8)

    cols = {
        "t_start": np.round(t_start * 1e6).astype(np.int64),
        "t_end": np.round(np.minimum(t_start + length, config.duration_s) * 1e6).astype(np.int64),
        "src": pool[src_host],
        "dst": dst,
        "nbytes": nbytes,
        "label": label,
        "attack_idx": np.full(total, -1, dtype=np.int32),
        "step_idx": np.full(total, -1, dtype=np.int16),
        "activity": activity,
    }
    # intra-range conversations still cross the tap: nothing is dropped
    cols["t_end"] = np.maximum(cols["t_end"], cols["t_start"] + 1)

    emulated_addrs = pool[is_emu]
    attack_cols = _attack_columns(schedule, emulated_addrs if emulated_addrs.size else pool, ext_base, seed)
    if attack_cols is not None:
        cols = {k: np.concatenate([cols[k], attack_cols[k]]) for k in cols}
    cols = _sorted_columns(cols)
    return TrafficTimeline(
        config=config,
        seed=seed,
        schedule=schedule,
        background_addrs=pool[~is_emu],
        emulated_addrs=emulated_addrs,
        **cols,
    )


def _attack_columns(schedule, targets: np.ndarray, ext_base: int, seed: int) -> dict[str, np.ndarray] | None:
    parts = []
    for a_idx, atk in enumerate(schedule):
        rng = _rng(seed, "attack", atk.attack_id)
        attacker = ext_base + 200 + int(rng.integers(0, 50))
        victim = int(targets[int(rng.integers(0, targets.size))])
        for s_idx, step in enumerate(atk.steps):
            n = _STEP_SEGMENTS[atk.covertness]
            start = rng.uniform(step.t0, max(step.t0, step.t1 - 1e-3), size=n)
            length = np.minimum(np.maximum(1e-3, rng.exponential(2.0, size=n)), step.t1 - start + 1e-3)
            size = np.maximum(1, rng.lognormal(_STEP_LOG_SIZE[step.tag], 0.5, size=n)).astype(np.int64)
            if step.tag == "lateral_movement":
                src = np.full(n, victim)
                dst = targets[rng.integers(0, targets.size, size=n)]
            elif step.tag == "exfiltration":
                src, dst = np.full(n, victim), np.full(n, attacker)
            else:
                src, dst = np.full(n, attacker), np.full(n, victim)
            ts = np.round(start * 1e6).astype(np.int64)
            te = np.maximum(ts + 1, np.round((start + length) * 1e6).astype(np.int64))
            parts.append(
                {
                    "t_start": ts,
                    "t_end": te,
                    "src": src.astype(np.int64),
                    "dst": dst.astype(np.int64),
                    "nbytes": size,
                    "label": np.full(n, ATTACK, dtype=np.int8),
                    "attack_idx": np.full(n, a_idx, dtype=np.int32),
                    "step_idx": np.full(n, s_idx, dtype=np.int16),
                    "activity": np.full(n, -1, dtype=np.int8),
                }
            )
    if not parts:
        return None
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def surge(timeline: TrafficTimeline, factor: float, window: tuple[float, float]) -> TrafficTimeline:
    """Scale non-attack traffic density by ``factor`` inside ``window``.

    Extra copies of in-window segments keep their size and duration, land in
    the same second, and take fresh endpoints from the same host class.
    Attack segments and out-of-window traffic are untouched.
    """
    if factor <= 0:
        raise ValidationError("surge factor must be positive")
    t0, t1 = window
    if not 0 <= t0 < t1 <= timeline.duration_s:
        raise ValidationError(f"surge window {window} outside the timeline")
    if factor == 1:
        return timeline
    rng = _rng(timeline.seed, "surge", len(timeline.surges), t0, t1, factor)
    lo_us, hi_us = to_us(t0), to_us(t1)
    in_win = (timeline.t_start >= lo_us) & (timeline.t_start < hi_us) & (timeline.label != ATTACK)
    idx = np.flatnonzero(in_win)

    whole = int(math.floor(factor))
    frac = factor - whole
    keep = np.ones(len(timeline), dtype=bool)
    if factor < 1:
        keep[idx] = rng.random(idx.size) < factor
        extra = np.zeros(0, dtype=np.int64)
    else:
        reps = np.full(idx.size, whole - 1) + (rng.random(idx.size) < frac)
        extra = np.repeat(idx, reps)

    cols = {
        "t_start": timeline.t_start,
        "t_end": timeline.t_end,
        "src": timeline.src,
        "dst": timeline.dst,
        "nbytes": timeline.nbytes,
        "label": timeline.label,
        "attack_idx": timeline.attack_idx,
        "step_idx": timeline.step_idx,
        "activity": timeline.activity,
    }
    cols = {k: v[keep] for k, v in cols.items()}
    if extra.size:
        sec_lo = np.maximum((timeline.t_start[extra] // 1_000_000) * 1_000_000, lo_us)
        sec_hi = np.minimum(sec_lo + 1_000_000, hi_us)
        new_start = sec_lo + (rng.random(extra.size) * (sec_hi - sec_lo)).astype(np.int64)
        dur = timeline.t_end[extra] - timeline.t_start[extra]
        labels = timeline.label[extra]
        bg, emu = timeline.background_addrs, timeline.emulated_addrs
        src = bg[rng.integers(0, bg.size, size=extra.size)]
        if emu.size:
            emu_src = emu[rng.integers(0, emu.size, size=extra.size)]
            src = np.where(labels == EMULATED, emu_src, src)
        dst_pool = np.concatenate([bg, emu, np.unique(timeline.dst)])
        copies = {
            "t_start": new_start,
            "t_end": new_start + dur,
            "src": src,
            "dst": dst_pool[rng.integers(0, dst_pool.size, size=extra.size)],
            "nbytes": timeline.nbytes[extra],
            "label": labels,
            "attack_idx": timeline.attack_idx[extra],
            "step_idx": timeline.step_idx[extra],
            "activity": timeline.activity[extra],
        }
        cols = {k: np.concatenate([cols[k], copies[k]]) for k in cols}
    cols = _sorted_columns(cols)
    return replace(timeline, surges=timeline.surges + ((factor, t0, t1),), **cols)


# -- fan-out -------------------------------------------------------------------


@dataclass(frozen=True)
class StreamHandle:
    """A read-only view of the device-facing stream delivered to one device."""

    device_id: str
    data: memoryview
    digest: str
    path: Path | None = None

    def lines(self) -> list[str]:
        return bytes(self.data).decode().splitlines()


def fanout(
    timeline: TrafficTimeline,
    device_ids: Sequence[str],
    out_dir: str | Path | None = None,
) -> dict[str, StreamHandle]:
    """Deliver the identical device-facing stream to every device and digest each copy."""
    if not device_ids:
        raise ValidationError("fan-out needs at least one device")
    if len(set(device_ids)) != len(device_ids):
        raise ValidationError("device ids must be unique")
    payload = timeline.device_bytes()
    handles = {}
    for dev in device_ids:
        view = memoryview(payload)
        path = None
        if out_dir is not None:
            path = Path(out_dir) / dev / "stream.jsonl"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(view)
        handles[dev] = StreamHandle(dev, view, hashlib.sha256(view).hexdigest(), path)
    return handles


# -- alerts and scoring --------------------------------------------------------


@dataclass(frozen=True)
class DeviceAlert:
    device_id: str
    t_alert: float
    claimed_type: str
    claimed_addresses: frozenset[str] = frozenset()

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "t_alert": self.t_alert,
            "claimed_type": self.claimed_type,
            "claimed_addresses": sorted(self.claimed_addresses),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> DeviceAlert:
        return cls(
            str(data["device_id"]),
            float(data["t_alert"]),
            str(data["claimed_type"]),
            frozenset(data.get("claimed_addresses", ())),
        )


class AlertChannel:
    """One device's private reporting channel, a JSON-lines file."""

    def __init__(self, device_id: str, path: str | Path) -> None:
        self.device_id = device_id
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.touch()

    def post(self, alert: DeviceAlert) -> None:
        if alert.device_id != self.device_id:
            raise UnknownDeviceError(f"alert from {alert.device_id!r} posted to {self.device_id!r}'s channel")
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(canonical(alert.to_dict()) + "\n")

    def read(self) -> list[DeviceAlert]:
        alerts = []
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                alerts.append(DeviceAlert.from_dict(json.loads(line)))
        return alerts


@dataclass
class NetScore:
    device_id: str
    tp: int = 0
    fp: int = 0
    fn: int = 0
    redundant: int = 0
    by_covertness: dict[str, dict[str, int]] = field(default_factory=dict)
    by_naive: dict[str, dict[str, int]] = field(default_factory=dict)
    campaigns: dict[str, dict[str, int]] = field(default_factory=dict)
    matches: list[tuple[int, str, int]] = field(default_factory=list)

    @property
    def campaigns_detected(self) -> int:
        return sum(1 for c in self.campaigns.values() if c["detected"] > 0)

    @property
    def campaigns_fully_detected(self) -> int:
        return sum(1 for c in self.campaigns.values() if c["detected"] == c["steps"])

    def to_dict(self) -> dict:
        out = asdict(self)
        out["campaigns_detected"] = self.campaigns_detected
        out["campaigns_fully_detected"] = self.campaigns_fully_detected
        return out


def _flat_steps(schedule: Sequence[AttackEvent], slack_s: float) -> list[tuple]:
    steps = []
    for atk in schedule:
        for i, step in enumerate(atk.steps):
            steps.append((step.t0 - slack_s, step.t1 + slack_s, step.tag, atk.attack_id, i, atk))
    return steps


def score_device(device_id: str, alerts: Sequence[DeviceAlert], schedule: Sequence[AttackEvent], slack_s: float = 60.0) -> NetScore:
    steps = _flat_steps(schedule, slack_s)
    matched = [False] * len(steps)
    score = NetScore(device_id)
    order = sorted(range(len(alerts)), key=lambda i: (alerts[i].t_alert, i))
    for ai in order:
        alert = alerts[ai]
        cands = [
            k for k, (lo, hi, tag, *_rest) in enumerate(steps)
            if tag == alert.claimed_type and lo <= alert.t_alert <= hi
        ]
        if not cands:
            score.fp += 1
            continue
        open_ = [k for k in cands if not matched[k]]
        if not open_:
            score.fp += 1
            score.redundant += 1
            continue
        # the step whose window closes first, so later alerts keep the most options
        k = min(open_, key=lambda k: (steps[k][1], steps[k][0], steps[k][3], steps[k][4]))
        matched[k] = True
        score.matches.append((ai, steps[k][3], steps[k][4]))

    score.tp = sum(matched)
    score.fn = len(steps) - score.tp
    for level in COVERTNESS:
        score.by_covertness[level] = {"tp": 0, "fn": 0}
    score.by_naive = {"naive": {"tp": 0, "fn": 0}, "known": {"tp": 0, "fn": 0}}
    for k, (_lo, _hi, _tag, attack_id, _i, atk) in enumerate(steps):
        outcome = "tp" if matched[k] else "fn"
        score.by_covertness[atk.covertness][outcome] += 1
        score.by_naive["naive" if atk.naive else "known"][outcome] += 1
        camp = score.campaigns.setdefault(attack_id, {"steps": 0, "detected": 0})
        camp["steps"] += 1
        camp["detected"] += int(matched[k])
    return score


def score_detections(
    alerts: Mapping[str, Sequence[DeviceAlert]],
    schedule: Sequence[AttackEvent],
    slack_s: float = 60.0,
    devices: Iterable[str] | None = None,
) -> dict[str, NetScore]:
    """Score each device's channel on its own.

    An alert is a true positive for a step when its claimed type matches and
    it falls inside the step window widened by ``slack_s``; each alert
    credits at most one step and each step is credited once. Every alert
    left unmatched is a false positive; ``redundant`` counts the subset of
    those that landed on an already-credited step.
    """
    known = set(devices) if devices is not None else None
    scores = {}
    for dev in sorted(alerts):
        if known is not None and dev not in known:
            raise UnknownDeviceError(f"unknown device {dev!r}")
        for a in alerts[dev]:
            if a.device_id != dev:
                raise UnknownDeviceError(f"alert from {a.device_id!r} found on {dev!r}'s channel")
        scores[dev] = score_device(dev, list(alerts[dev]), schedule, slack_s)
    for dev in sorted(known or ()):
        scores.setdefault(dev, score_device(dev, [], schedule, slack_s))
    return scores


# -- synthetic devices ---------------------------------------------------------


@dataclass(frozen=True)
class NetDeviceModel:
    """A stand-in network detector that reads ground truth to fake its alerts."""

    device_id: str
    detect_prob: dict[str, float] = field(default_factory=lambda: {"overt": 0.9, "moderate": 0.6, "covert": 0.25})
    naive_penalty: float = 0.5
    delay_s: tuple[float, float] = (0.0, 45.0)
    false_alerts_per_hour: float = 2.0
    surge_penalty: float = 0.0


def simulate_device_alerts(model: NetDeviceModel, timeline: TrafficTimeline, seed: int) -> list[DeviceAlert]:
    rng = _rng(seed, "device", model.device_id)
    alerts = []
    surged = timeline.surges
    for atk in timeline.schedule:
        p = model.detect_prob.get(atk.covertness, 0.0) * (model.naive_penalty if atk.naive else 1.0)
        for step in atk.steps:
            q = p
            if any(t0 <= step.t0 < t1 for _f, t0, t1 in surged):
                q *= 1.0 - model.surge_penalty
            u, delay = rng.random(), rng.uniform(*model.delay_s)
            if u < q:
                alerts.append(DeviceAlert(model.device_id, round(step.t0 + delay, 6), step.tag))
    n_false = rng.poisson(model.false_alerts_per_hour * timeline.duration_s / 3600.0)
    for _ in range(int(n_false)):
        t = float(rng.uniform(0.0, timeline.duration_s))
        alerts.append(DeviceAlert(model.device_id, round(t, 6), STEP_TAGS[int(rng.integers(0, len(STEP_TAGS)))]))
    alerts.sort(key=lambda a: (a.t_alert, a.claimed_type))
    return alerts


# -- challenge driver ----------------------------------------------------------


@dataclass(frozen=True)
class NetChallenge:
    name: str
    seed: int
    timeline: TimelineConfig
    attacks: int
    schedule_file: str | None
    surge: dict | None
    devices: tuple[NetDeviceModel, ...]
    slack_s: float = 60.0

    @classmethod
    def from_dict(cls, data: Mapping) -> NetChallenge:
        allowed = {"name", "seed", "timeline", "attacks", "schedule_file", "surge", "devices", "slack_s"}
        unknown = set(data) - allowed
        if unknown:
            raise ValidationError(f"net config: unknown keys {sorted(unknown)}")
        try:
            devices = tuple(
                NetDeviceModel(**{k: tuple(v) if k == "delay_s" else v for k, v in d.items()})
                for d in data.get("devices", [])
            )
            timeline = TimelineConfig(**data.get("timeline", {}))
        except TypeError as exc:
            raise ValidationError(f"net config: {exc}") from exc
        if not devices:
            raise ValidationError("net config needs at least one device")
        return cls(
            name=str(data.get("name", "net")),
            seed=int(data.get("seed", 0)),
            timeline=timeline,
            attacks=int(data.get("attacks", 0)),
            schedule_file=data.get("schedule_file"),
            surge=data.get("surge"),
            devices=devices,
            slack_s=float(data.get("slack_s", 60.0)),
        )


def run_net_challenge(challenge: NetChallenge, out_dir: str | Path, base_dir: str | Path = ".") -> dict:
    """Build, fan out, collect per-device alerts and score; returns the report."""
    out = Path(out_dir)
    cfg = challenge.timeline
    if challenge.schedule_file:
        schedule = load_schedule(Path(base_dir) / challenge.schedule_file)
    else:
        schedule = random_schedule(challenge.attacks, cfg.duration_s, cfg.training_end, challenge.seed)
    timeline = build_timeline(cfg, schedule, challenge.seed)
    if challenge.surge:
        timeline = surge(timeline, float(challenge.surge["factor"]), tuple(challenge.surge["window"]))
    ids = [d.device_id for d in challenge.devices]
    handles = fanout(timeline, ids, out / "streams")
    # ground truth lives apart from every device stream
    write_schedule(schedule, out / "ground_truth" / "schedule.json")
    alerts = {}
    for model in challenge.devices:
        channel = AlertChannel(model.device_id, out / "alerts" / f"{model.device_id}.jsonl")
        for alert in simulate_device_alerts(model, timeline, challenge.seed):
            channel.post(alert)
        alerts[model.device_id] = channel.read()
    scores = score_detections(alerts, schedule, challenge.slack_s, devices=ids)
    return {
        "name": challenge.name,
        "seed": challenge.seed,
        "segments": len(timeline),
        "stream_digests": {d: h.digest for d, h in handles.items()},
        "surges": [list(s) for s in timeline.surges],
        "scores": {d: s.to_dict() for d, s in scores.items()},
    }
