"""Evaluation corpus construction.

Manifests are flat tables of labeled samples. Evaluation sets are drawn from
them by stratified selection so that each label keeps a target filetype mix,
then zero-day samples are swapped in for ordinary malware of the same type.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

from rangeforge.errors import ValidationError
from rangeforge.rng import substream

BENIGN = "benign"
MALICIOUS = "malicious"
LABELS = (BENIGN, MALICIOUS)

DEFAULT_FILETYPES = (
    "executable",
    "library",
    "document",
    "pdf",
    "archive",
    "iso",
    "java",
    "script",
    "other",
)

MANIFEST_COLUMNS = ("sample_id", "filetype", "label", "zero_day", "size_bytes", "content_digest")


class ManifestError(ValidationError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DuplicateIdError(ManifestError):
    def __init__(self, sample_id: str, line: int | None = None) -> None:
        self.sample_id = sample_id
        super().__init__(f"duplicate sample_id {sample_id!r}", line)


class EmptySelectionError(ValidationError):
    pass


class InsufficientStratumError(ValidationError):
    def __init__(self, label: str, filetype: str, needed: int, available: int) -> None:
        self.label = label
        self.filetype = filetype
        self.needed = needed
        self.available = available
        super().__init__(
            f"stratum ({label}, {filetype}) needs {needed} samples but only {available} are available"
        )


class IdCollisionError(ValidationError):
    pass


class LabelViolationError(ValidationError):
    pass


@dataclass(frozen=True, slots=True)
class SampleRecord:
    sample_id: str
    filetype: str
    label: str
    zero_day: bool = False
    size_bytes: int = 0
    content_digest: str = ""

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ValidationError(f"{self.sample_id}: label must be one of {LABELS}, got {self.label!r}")
        if self.zero_day and self.label != MALICIOUS:
            raise LabelViolationError(f"{self.sample_id}: zero-day samples must be malicious")
        if self.size_bytes < 0:
            raise ValidationError(f"{self.sample_id}: size_bytes must be nonnegative")
        if not self.sample_id:
            raise ValidationError("sample_id must be nonempty")

    @property
    def malicious(self) -> bool:
        return self.label == MALICIOUS

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "filetype": self.filetype,
            "label": self.label,
            "zero_day": self.zero_day,
            "size_bytes": self.size_bytes,
            "content_digest": self.content_digest,
        }

    @classmethod
    def from_dict(cls, row: Mapping) -> SampleRecord:
        missing = [c for c in MANIFEST_COLUMNS if c not in row]
        if missing:
            raise ValidationError(f"missing fields: {', '.join(missing)}")
        return cls(
            sample_id=str(row["sample_id"]),
            filetype=str(row["filetype"]),
            label=str(row["label"]),
            zero_day=_parse_bool(row["zero_day"]),
            size_bytes=int(row["size_bytes"]),
            content_digest=str(row["content_digest"]),
        )


def _parse_bool(value: object) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("true", "1", "yes"):
        return True
    if text in ("false", "0", "no", ""):
        return False
    raise ValidationError(f"not a boolean: {value!r}")


@dataclass(frozen=True)
class TypeDistribution:
    weights: dict[str, float]

    def __post_init__(self) -> None:
        if not self.weights:
            raise ValidationError("type distribution is empty")
        for tag, w in self.weights.items():
            if not 0.0 <= w <= 1.0:
                raise ValidationError(f"weight for {tag!r} outside [0, 1]: {w}")
        total = math.fsum(self.weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"type weights sum to {total}, expected 1")

    @classmethod
    def normalized(cls, weights: Mapping[str, float]) -> TypeDistribution:
        total = math.fsum(weights.values())
        if total <= 0:
            raise ValidationError("type weights must have a positive sum")
        return cls({k: v / total for k, v in sorted(weights.items())})

    def to_dict(self) -> dict[str, float]:
        return dict(sorted(self.weights.items()))


@dataclass(frozen=True)
class CorpusManifest:
    records: tuple[SampleRecord, ...]
    _index: dict[str, SampleRecord] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        index: dict[str, SampleRecord] = {}
        for rec in self.records:
            if rec.sample_id in index:
                raise DuplicateIdError(rec.sample_id)
            index[rec.sample_id] = rec
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._index

    def get(self, sample_id: str) -> SampleRecord:
        return self._index[sample_id]


@dataclass(frozen=True)
class SampleSet:
    samples: tuple[SampleRecord, ...]
    seed: int
    target_distribution: TypeDistribution | None
    benign_fraction: float

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def by_id(self) -> dict[str, SampleRecord]:
        return {s.sample_id: s for s in self.samples}

    def strata(self) -> Counter:
        return Counter((s.label, s.filetype) for s in self.samples)

    @property
    def benign_count(self) -> int:
        return sum(1 for s in self.samples if s.label == BENIGN)

    @property
    def malicious_count(self) -> int:
        return len(self.samples) - self.benign_count

    @property
    def zero_day_count(self) -> int:
        return sum(1 for s in self.samples if s.zero_day)

    def header(self) -> dict:
        return {
            "type": "sample_set",
            "seed": self.seed,
            "benign_fraction": self.benign_fraction,
            "n_total": len(self.samples),
            "target_distribution": (
                self.target_distribution.to_dict() if self.target_distribution else None
            ),
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines.extend(json.dumps(s.to_dict(), sort_keys=True) for s in self.samples)
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()


# -- manifest I/O -----------------------------------------------------------


def _is_jsonl(path: Path, head: str) -> bool:
    if path.suffix.lower() in (".jsonl", ".ndjson", ".json"):
        return True
    if path.suffix.lower() == ".csv":
        return False
    return head.lstrip().startswith("{")


def load_manifest(source: str | Path) -> CorpusManifest:
    """Read a CSV or JSON-lines manifest, rejecting malformed rows and duplicate ids."""
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc

    records: list[SampleRecord] = []
    seen: set[str] = set()

    def add(rec: SampleRecord, line: int) -> None:
        if rec.sample_id in seen:
            raise DuplicateIdError(rec.sample_id, line)
        seen.add(rec.sample_id)
        records.append(rec)

    if _is_jsonl(path, text[:64]):
        for lineno, raw in enumerate(text.splitlines(), start=1):
            if not raw.strip():
                continue
            try:
                row = json.loads(raw)
                if not isinstance(row, dict):
                    raise ValidationError("row is not a JSON object")
                rec = SampleRecord.from_dict(row)
            except (json.JSONDecodeError, ValidationError, ValueError, TypeError) as exc:
                raise ManifestError(str(exc), lineno) from exc
            add(rec, lineno)
    else:
        reader = csv.DictReader(text.splitlines())
        if reader.fieldnames is None:
            return CorpusManifest(())
        missing = [c for c in MANIFEST_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ManifestError(f"header lacks columns: {', '.join(missing)}", 1)
        for row in reader:
            lineno = reader.line_num
            try:
                rec = SampleRecord.from_dict(row)
            except (ValidationError, ValueError, TypeError) as exc:
                raise ManifestError(str(exc), lineno) from exc
            add(rec, lineno)
    return CorpusManifest(tuple(records))


def write_manifest(manifest: Iterable[SampleRecord], dest: str | Path) -> Path:
    path = Path(dest)
    records = list(manifest)
    if path.suffix.lower() == ".csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for rec in records:
                row = rec.to_dict()
                row["zero_day"] = "true" if rec.zero_day else "false"
                writer.writerow(row)
    else:
        path.write_text(
            "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records),
            encoding="utf-8",
        )
    return path


def write_sample_set(sample_set: SampleSet, dest: str | Path) -> Path:
    path = Path(dest)
    path.write_text(sample_set.to_jsonl(), encoding="utf-8")
    return path


def load_sample_set(source: str | Path) -> SampleSet:
    path = Path(source)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ManifestError(f"{path}: empty sample set file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ManifestError(str(exc), 1) from exc
    if header.get("type") != "sample_set":
        raise ManifestError("first line is not a sample_set header", 1)
    samples = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            samples.append(SampleRecord.from_dict(json.loads(raw)))
        except (json.JSONDecodeError, ValidationError, ValueError) as exc:
            raise ManifestError(str(exc), lineno) from exc
    target = header.get("target_distribution")
    result = SampleSet(
        samples=tuple(samples),
        seed=int(header["seed"]),
        target_distribution=TypeDistribution(target) if target else None,
        benign_fraction=float(header["benign_fraction"]),
    )
    CorpusManifest(result.samples)  # duplicate-id check
    return result


# -- selection ---------------------------------------------------------------


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def largest_remainder(total: int, weights: Mapping[str, float]) -> dict[str, int]:
    """Split ``total`` across keys in proportion to ``weights``.

    Floors every share, then hands the leftover units to the largest
    fractional parts; ties go to the lexicographically smaller key.
    """
    if total < 0:
        raise ValidationError("total must be nonnegative")
    weight_sum = math.fsum(weights.values())
    if total == 0 or weight_sum <= 0:
        return {k: 0 for k in weights}
    shares = {k: total * w / weight_sum for k, w in weights.items()}
    counts = {k: math.floor(v) for k, v in shares.items()}
    leftover = total - sum(counts.values())
    order = sorted(shares, key=lambda k: (-(shares[k] - counts[k]), k))
    for k in order[:leftover]:
        counts[k] += 1
    return counts


def measure_distribution(manifest: Iterable[SampleRecord], label: str | None = None) -> TypeDistribution:
    """Filetype fractions over the records carrying ``label`` (all records if None)."""
    counts = Counter(r.filetype for r in manifest if label is None or r.label == label)
    total = sum(counts.values())
    if total == 0:
        raise EmptySelectionError(f"no records match label filter {label!r}")
    return TypeDistribution({k: counts[k] / total for k in sorted(counts)})


def _group_by_stratum(records: Iterable[SampleRecord]) -> dict[tuple[str, str], list[SampleRecord]]:
    groups: dict[tuple[str, str], list[SampleRecord]] = defaultdict(list)
    for rec in records:
        groups[(rec.label, rec.filetype)].append(rec)
    for members in groups.values():
        members.sort(key=lambda r: r.sample_id)
    return groups


def _draw_strata(
    groups: Mapping[tuple[str, str], list[SampleRecord]],
    quotas: Mapping[tuple[str, str], int],
    seed: int,
) -> list[SampleRecord]:
    chosen: list[SampleRecord] = []
    for key in sorted(quotas):
        need = quotas[key]
        if need == 0:
            continue
        pool = groups.get(key, [])
        if len(pool) < need:
            raise InsufficientStratumError(key[0], key[1], need, len(pool))
        rng = substream(seed, "stratum", *key)
        chosen.extend(rng.sample(pool, need))
    substream(seed, "order").shuffle(chosen)
    return chosen


def stratified_sample(
    manifest: Iterable[SampleRecord],
    n_total: int,
    benign_fraction: float,
    target: TypeDistribution | None = None,
    seed: int = 0,
) -> SampleSet:
    """Select ``n_total`` samples with a fixed benign share and per-label filetype mix.

    When ``target`` is None each label keeps the filetype mix measured from
    the manifest for that label.
    """
    if n_total < 0:
        raise ValidationError("n_total must be nonnegative")
    if not 0.0 <= benign_fraction <= 1.0:
        raise ValidationError("benign_fraction must lie in [0, 1]")
    records = list(manifest)
    n_benign = round_half_up(n_total * benign_fraction)
    per_label = {BENIGN: n_benign, MALICIOUS: n_total - n_benign}

    quotas: dict[tuple[str, str], int] = {}
    for label, n_label in per_label.items():
        if n_label == 0:
            continue
        if target is not None:
            weights = target.weights
        else:
            weights = measure_distribution(records, label).weights
        for ftype, count in largest_remainder(n_label, weights).items():
            quotas[(label, ftype)] = count

    # zero-day records never enter through ordinary selection
    groups = _group_by_stratum(r for r in records if not r.zero_day)
    chosen = _draw_strata(groups, quotas, seed)
    return SampleSet(tuple(chosen), seed, target, benign_fraction)


def proportional_subset(sample_set: SampleSet, size: int, seed: int | None = None) -> SampleSet:
    """A representative subset whose (label, filetype) strata mirror the full set."""
    if not 0 <= size <= len(sample_set):
        raise ValidationError(f"subset size {size} outside [0, {len(sample_set)}]")
    seed = sample_set.seed if seed is None else seed
    counts = sample_set.strata()
    keyed = {f"{label}\x1f{ftype}": c for (label, ftype), c in counts.items()}
    quotas = {
        tuple(k.split("\x1f")): v for k, v in largest_remainder(size, keyed).items()
    }
    groups = _group_by_stratum(sample_set.samples)
    chosen = _draw_strata(groups, quotas, seed)
    return SampleSet(tuple(chosen), seed, sample_set.target_distribution, sample_set.benign_fraction)


def inject_zero_days(sample_set: SampleSet, zero_days: Iterable[SampleRecord]) -> SampleSet:
    """Swap zero-day samples in for ordinary malware, keeping size and label balance.

    Each zero-day replaces a uniformly chosen non-zero-day malicious sample of
    the same filetype, falling back to any filetype when none is left.
    """
    incoming = list(zero_days)
    if not incoming:
        return sample_set
    present = {s.sample_id for s in sample_set.samples}
    fresh: set[str] = set()
    for zd in incoming:
        if not zd.zero_day or zd.label != MALICIOUS:
            raise LabelViolationError(f"{zd.sample_id}: injected records must be malicious zero-days")
        if zd.sample_id in present or zd.sample_id in fresh:
            raise IdCollisionError(f"zero-day id {zd.sample_id!r} collides with an existing sample")
        fresh.add(zd.sample_id)

    slots_by_type: dict[str, list[int]] = defaultdict(list)
    for pos, s in enumerate(sample_set.samples):
        if s.label == MALICIOUS and not s.zero_day:
            slots_by_type[s.filetype].append(pos)
    available = sum(len(v) for v in slots_by_type.values())
    if available < len(incoming):
        raise InsufficientStratumError(MALICIOUS, "*", len(incoming), available)

    rng = substream(sample_set.seed, "zero-day")
    samples = list(sample_set.samples)
    for zd in incoming:
        pool = slots_by_type.get(zd.filetype)
        if not pool:
            ftype = next(t for t in sorted(slots_by_type) if slots_by_type[t])
            pool = slots_by_type[ftype]
        i = rng.randrange(len(pool))
        pos = pool[i]
        pool[i] = pool[-1]
        pool.pop()
        samples[pos] = zd
    return SampleSet(tuple(samples), sample_set.seed, sample_set.target_distribution, sample_set.benign_fraction)


# -- synthetic populations ---------------------------------------------------

DEFAULT_TYPE_WEIGHTS = {
    "executable": 0.22,
    "library": 0.08,
    "document": 0.20,
    "pdf": 0.15,
    "archive": 0.12,
    "iso": 0.03,
    "java": 0.05,
    "script": 0.10,
    "other": 0.05,
}


def _digest(seed: int, sample_id: str) -> str:
    return hashlib.sha256(f"{seed}:{sample_id}".encode()).hexdigest()[:32]


def synthesize_manifest(
    per_label: int,
    weights: Mapping[str, float] | None = None,
    seed: int = 0,
) -> CorpusManifest:
    """A labeled population of ``per_label`` records per label with the given type mix.

    Sample ids look like ``m-pdf-0000042`` so detector crash patterns can key on them.
    """
    weights = dict(weights or DEFAULT_TYPE_WEIGHTS)
    records = []
    for label in LABELS:
        counts = largest_remainder(per_label, weights)
        for ftype in sorted(counts):
            rng = substream(seed, "size", label, ftype)
            for i in range(counts[ftype]):
                sid = f"{label[0]}-{ftype}-{i:07d}"
                records.append(
                    SampleRecord(
                        sample_id=sid,
                        filetype=ftype,
                        label=label,
                        zero_day=False,
                        size_bytes=int(rng.lognormvariate(12.0, 1.5)) + 1,
                        content_digest=_digest(seed, sid),
                    )
                )
    return CorpusManifest(tuple(records))


def make_zero_days(
    count: int,
    weights: Mapping[str, float] | None = None,
    seed: int = 0,
) -> list[SampleRecord]:
    weights = dict(weights or DEFAULT_TYPE_WEIGHTS)
    out = []
    for ftype, n in sorted(largest_remainder(count, weights).items()):
        rng = substream(seed, "zero-day-size", ftype)
        for i in range(n):
            sid = f"z-{ftype}-{i:06d}"
            out.append(
                SampleRecord(
                    sample_id=sid,
                    filetype=ftype,
                    label=MALICIOUS,
                    zero_day=True,
                    size_bytes=int(rng.lognormvariate(12.0, 1.5)) + 1,
                    content_digest=_digest(seed, sid),
                )
            )
    return out
