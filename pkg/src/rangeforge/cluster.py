"""Cluster topology: physical servers split into per-controller logical nodes.

A server with two drive controllers hosts two independent VM pools, so the
scheduler sees it as two logical nodes.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from rangeforge.errors import ValidationError

FULL_REDEPLOY = "full_redeploy"
FAST_CLONE = "fast_clone"
DEPLOY_MODES = (FULL_REDEPLOY, FAST_CLONE)

DEFAULT_VMS_PER_CONTROLLER = 50
# ~2,000 simultaneous VMs over 24 logical nodes
FULL_SCALE_VMS_PER_CONTROLLER = 84


@dataclass(frozen=True, slots=True)
class PhysicalNodeSpec:
    node_id: str
    drive_controllers: int = 1
    vm_capacity_per_controller: int = DEFAULT_VMS_PER_CONTROLLER
    boot_storage: str = "ssd"

    def __post_init__(self) -> None:
        if self.drive_controllers < 1:
            raise ValidationError(f"{self.node_id}: drive_controllers must be >= 1")
        if self.vm_capacity_per_controller < 0:
            raise ValidationError(f"{self.node_id}: vm capacity must be nonnegative")


@dataclass(frozen=True, slots=True)
class LogicalNode:
    logical_id: str
    parent: str
    vm_capacity: int
    busy_slots: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.busy_slots <= self.vm_capacity:
            raise ValidationError(
                f"{self.logical_id}: busy_slots {self.busy_slots} outside [0, {self.vm_capacity}]"
            )

    @property
    def free_slots(self) -> int:
        return self.vm_capacity - self.busy_slots


@dataclass(frozen=True)
class TimingParams:
    """Template distribution costs, in simulated seconds.

    Defaults are calibrated so the full-scale topology (24 logical nodes at
    84 VMs each) takes about 8 h to fully redeploy and about 58 min with
    fast clones. ``delete_s`` is the per-VM delete task used at teardown.
    """

    full_seed_copy_s: float = 600.0
    full_clone_s: float = 171.0
    fast_seed_copy_s: float = 110.0
    fast_clone_s: float = 10.0
    delete_s: float = 30.0

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value < 0:
                raise ValidationError(f"timing {name} must be nonnegative")

    def seed_copy_s(self, mode: str) -> float:
        return self.full_seed_copy_s if mode == FULL_REDEPLOY else self.fast_seed_copy_s

    def clone_s(self, mode: str) -> float:
        return self.full_clone_s if mode == FULL_REDEPLOY else self.fast_clone_s


@dataclass(frozen=True)
class CopyStep:
    logical_id: str
    seed_copy_s: float
    clones: int
    fanout_s: float


@dataclass(frozen=True)
class DeploymentPlan:
    mode: str
    steps: tuple[CopyStep, ...]
    seed_copy_total_s: float
    fanout_max_s: float

    @property
    def estimated_duration(self) -> float:
        return self.seed_copy_total_s + self.fanout_max_s

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "logical_nodes": len(self.steps),
            "seed_copy_total_s": self.seed_copy_total_s,
            "fanout_max_s": self.fanout_max_s,
            "estimated_duration_s": self.estimated_duration,
        }


def derive_logical_nodes(specs: Sequence[PhysicalNodeSpec]) -> list[LogicalNode]:
    if not specs:
        raise ValidationError("topology has no physical nodes")
    nodes = []
    for spec in specs:
        for c in range(spec.drive_controllers):
            lid = spec.node_id if spec.drive_controllers == 1 else f"{spec.node_id}/c{c}"
            nodes.append(LogicalNode(lid, spec.node_id, spec.vm_capacity_per_controller))
    ids = [n.logical_id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ValidationError("logical node ids are not unique")
    return nodes


def total_capacity(nodes: Iterable[LogicalNode]) -> int:
    return sum(n.vm_capacity for n in nodes)


def plan_template_distribution(
    topology: Sequence[LogicalNode],
    mode: str = FAST_CLONE,
    timing: TimingParams | None = None,
    clones_per_node: int | None = None,
) -> DeploymentPlan:
    """Seed the template to each logical node in turn, then clone within nodes in parallel.

    Seed copies share the central store so they run one after another; the
    per-node fan-outs run concurrently and the slowest one ends the plan.
    ``clones_per_node`` defaults to each node's VM capacity.
    """
    if not topology:
        raise ValidationError("cannot plan a deployment over an empty topology")
    if mode not in DEPLOY_MODES:
        raise ValidationError(f"unknown deployment mode {mode!r}")
    timing = timing or TimingParams()
    steps = []
    for node in topology:
        clones = node.vm_capacity if clones_per_node is None else min(clones_per_node, node.vm_capacity)
        steps.append(
            CopyStep(node.logical_id, timing.seed_copy_s(mode), clones, clones * timing.clone_s(mode))
        )
    seed_total = sum(s.seed_copy_s for s in steps)
    fanout_max = max(s.fanout_s for s in steps)
    return DeploymentPlan(mode, tuple(steps), seed_total, fanout_max)


def teardown_duration(vm_count: int, max_concurrent_tasks: int, timing: TimingParams | None = None) -> float:
    """Deleting every VM, one task each, in waves bounded by the task limit."""
    timing = timing or TimingParams()
    if vm_count <= 0:
        return 0.0
    return math.ceil(vm_count / max(1, max_concurrent_tasks)) * timing.delete_s


def acquire_slot(node: LogicalNode) -> LogicalNode | None:
    """Take one VM slot, or return None when the node is full."""
    if node.busy_slots >= node.vm_capacity:
        return None
    return replace(node, busy_slots=node.busy_slots + 1)


def release_slot(node: LogicalNode) -> LogicalNode:
    if node.busy_slots == 0:
        raise ValidationError(f"{node.logical_id}: release without a held slot")
    return replace(node, busy_slots=node.busy_slots - 1)


# -- profiles and topology files ---------------------------------------------


def corr_profile(vm_capacity_per_controller: int = DEFAULT_VMS_PER_CONTROLLER) -> list[PhysicalNodeSpec]:
    """Eight single-controller and eight dual-controller servers."""
    specs = [PhysicalNodeSpec(f"r740-{i:02d}", 1, vm_capacity_per_controller) for i in range(8)]
    specs += [PhysicalNodeSpec(f"r840-{i:02d}", 2, vm_capacity_per_controller) for i in range(8)]
    return specs


PROFILES = {"corr": corr_profile}


def specs_from_json(data: list[dict]) -> list[PhysicalNodeSpec]:
    if not isinstance(data, list):
        raise ValidationError("topology must be a JSON list of node specs")
    try:
        return [PhysicalNodeSpec(**row) for row in data]
    except TypeError as exc:
        raise ValidationError(f"bad node spec: {exc}") from exc


def load_topology(path: str | Path) -> list[PhysicalNodeSpec]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot load topology {path}: {exc}") from exc
    return specs_from_json(data)


def write_topology(specs: Iterable[PhysicalNodeSpec], path: str | Path) -> Path:
    dest = Path(path)
    dest.write_text(json.dumps([asdict(s) for s in specs], indent=2) + "\n", encoding="utf-8")
    return dest
