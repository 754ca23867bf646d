"""Run configuration: one JSON document that pins a whole simulated evaluation.

Input references (manifest, sample set, topology, detector files) are paths
relative to the config's directory. Resolution turns the document into
concrete samples, logical nodes and a detector model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from rangeforge import cluster, corpus, detector
from rangeforge.errors import ConfigError, ValidationError
from rangeforge.journal import canonical
from rangeforge.lifecycle import StageTimings
from rangeforge.scoring import CostParams

PHASES = ("deploy", "qa_pre", "main", "qa_post", "teardown")
BUILTIN_DIR = Path(__file__).parent / "configs"


@dataclass(frozen=True)
class Limits:
    max_api_connections: int = 2000
    max_concurrent_tasks: int = 600
    max_concurrent_vms: int = 2000
    max_attempts: int = 3

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"limits.{f.name} must be an integer >= 1, got {value!r}")


@dataclass(frozen=True)
class QaParams:
    subset_size: int = 1500
    max_incomplete_fraction: float = 0.01
    max_trial_s: float = 300.0
    halt_on_no_go: bool = True


def _build(cls, data: Any, section: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValidationError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    seed: int = 0
    limits: Limits = field(default_factory=Limits)
    timings: StageTimings = field(default_factory=StageTimings)
    cluster_timing: cluster.TimingParams = field(default_factory=cluster.TimingParams)
    deploy_mode: str = cluster.FAST_CLONE
    topology: dict = field(default_factory=lambda: {"profile": "corr"})
    corpus: dict = field(default_factory=dict)
    detector: dict = field(default_factory=lambda: {"preset": "ml-generalizer"})
    phases: tuple[str, ...] = PHASES
    qa: QaParams = field(default_factory=QaParams)
    fixed_lifecycle: bool = False
    cost: CostParams = field(default_factory=CostParams)
    skew: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        if self.deploy_mode not in cluster.DEPLOY_MODES:
            raise ConfigError(f"deploy_mode must be one of {cluster.DEPLOY_MODES}")
        bad = [p for p in self.phases if p not in PHASES]
        if bad:
            raise ConfigError(f"unknown phases {bad}")
        order = [PHASES.index(p) for p in self.phases]
        if order != sorted(order) or len(set(order)) != len(order):
            raise ConfigError(f"phases must be a subsequence of {PHASES}")
        object.__setattr__(self, "phases", tuple(self.phases))

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kwargs = dict(data)
        kwargs["limits"] = _build(Limits, data.get("limits"), "limits")
        kwargs["timings"] = _build(StageTimings, data.get("timings"), "timings")
        kwargs["cluster_timing"] = _build(cluster.TimingParams, data.get("cluster_timing"), "cluster_timing")
        kwargs["qa"] = _build(QaParams, data.get("qa"), "qa")
        kwargs["cost"] = _build(CostParams, data.get("cost"), "cost")
        if "phases" in data:
            kwargs["phases"] = tuple(data["phases"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        out["phases"] = list(self.phases)
        return json.loads(canonical(out))

    def digest(self) -> str:
        return hashlib.sha256(canonical(self.to_dict()).encode()).hexdigest()

    def with_seed(self, seed: int) -> RunConfig:
        data = self.to_dict()
        data["seed"] = seed
        return RunConfig.from_dict(data)


def load_config(path: str | Path) -> tuple[RunConfig, Path]:
    """Load a config file, or a built-in one by bare name (``toy``, ``endpoint``)."""
    p = Path(path)
    if not p.exists() and (BUILTIN_DIR / f"{path}.json").exists():
        p = BUILTIN_DIR / f"{path}.json"
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: line {exc.lineno}: {exc.msg}") from exc
    return RunConfig.from_dict(data), p.parent


# -- resolution ----------------------------------------------------------------


@dataclass(frozen=True)
class ResolvedRun:
    config: RunConfig
    sample_set: corpus.SampleSet
    nodes: tuple[cluster.LogicalNode, ...]
    model: detector.DetectorModel
    inputs: dict[str, str]


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def input_paths(config: RunConfig) -> list[str]:
    """Every file the config references, relative as written."""
    refs = []
    for key in ("manifest", "sample_set"):
        if config.corpus.get(key):
            refs.append(config.corpus[key])
    if config.topology.get("file"):
        refs.append(config.topology["file"])
    if config.detector.get("file"):
        refs.append(config.detector["file"])
    return refs


def _path(base_dir: Path, ref: str, inputs: dict[str, str]) -> Path:
    p = Path(ref)
    if not p.is_absolute():
        p = base_dir / p
    if not p.exists():
        raise ConfigError(f"referenced file not found: {ref}")
    inputs[ref] = file_digest(p)
    return p


def _resolve_corpus(cfg: dict, seed: int, base_dir: Path, inputs: dict[str, str]):
    allowed = {"manifest", "synthetic", "sample_set", "n_total", "benign_fraction", "target", "zero_days", "seed"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"corpus: unknown keys {sorted(unknown)}")
    cseed = int(cfg.get("seed", seed))
    if cfg.get("sample_set"):
        sset = corpus.load_sample_set(_path(base_dir, cfg["sample_set"], inputs))
        return sset, sset.samples
    if cfg.get("manifest"):
        manifest = corpus.load_manifest(_path(base_dir, cfg["manifest"], inputs))
    else:
        syn = dict(cfg.get("synthetic") or {})
        n_total = int(cfg.get("n_total", 0))
        per_label = int(syn.get("per_label", max(n_total, 1)))
        manifest = corpus.synthesize_manifest(per_label, syn.get("weights"), int(syn.get("seed", cseed)))
    target = cfg.get("target")
    sset = corpus.stratified_sample(
        manifest,
        int(cfg.get("n_total", len(manifest))),
        float(cfg.get("benign_fraction", 0.5)),
        corpus.TypeDistribution.normalized(target) if target else None,
        cseed,
    )
    n_zero = int(cfg.get("zero_days", 0))
    if n_zero:
        weights = corpus.measure_distribution(sset.samples, corpus.MALICIOUS).weights
        sset = corpus.inject_zero_days(sset, corpus.make_zero_days(n_zero, weights, cseed))
    return sset, manifest.records


def _resolve_topology(cfg: dict, base_dir: Path, inputs: dict[str, str]) -> list[cluster.PhysicalNodeSpec]:
    if cfg.get("file"):
        return cluster.load_topology(_path(base_dir, cfg["file"], inputs))
    if "nodes" in cfg:
        return cluster.specs_from_json(cfg["nodes"])
    profile = cfg.get("profile", "corr")
    if profile not in cluster.PROFILES:
        raise ConfigError(f"unknown topology profile {profile!r}")
    capacity = int(cfg.get("vm_capacity_per_controller", cluster.DEFAULT_VMS_PER_CONTROLLER))
    return cluster.PROFILES[profile](capacity)


def _resolve_detector(cfg: dict, known, seed: int, base_dir: Path, inputs: dict[str, str]) -> detector.DetectorModel:
    if cfg.get("file"):
        return detector.load_detector(_path(base_dir, cfg["file"], inputs))
    if "model" in cfg:
        return detector.DetectorModel.from_dict(cfg["model"], base_dir=base_dir)
    if "preset" in cfg:
        return detector.preset(cfg["preset"], known, seed)
    raise ConfigError("detector needs one of: preset, file, model")


def resolve(config: RunConfig, base_dir: str | Path | None = None) -> ResolvedRun:
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    inputs: dict[str, str] = {}
    try:
        sset, known = _resolve_corpus(config.corpus, config.seed, base, inputs)
        specs = _resolve_topology(config.topology, base, inputs)
        nodes = cluster.derive_logical_nodes(specs)
        model = _resolve_detector(config.detector, known, config.seed, base, inputs)
        model.validate_against(config.timings)
    except ConfigError:
        raise
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    return ResolvedRun(config, sset, tuple(nodes), model, inputs)
