"""Append-only run journal.

On disk a journal is JSON lines: one header object, one object per event,
and a trailer holding the digest of the header and every event line. Lines
are canonical JSON (sorted keys, no whitespace) so identical runs produce
identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from rangeforge import __version__
from rangeforge.errors import RangeForgeError, ValidationError

FORMAT = "rangeforge-journal/1"
DEFAULT_HASH = "sha256"

KINDS = frozenset(
    {"phase", "transition", "admit", "crash", "determination", "egress_blocked", "qa", "audit", "run"}
)


class JournalError(RangeForgeError):
    pass


class SequenceGapError(JournalError):
    pass


class ClosedJournalError(JournalError):
    pass


class DigestMismatchError(JournalError):
    pass


def canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True, slots=True)
class JournalEvent:
    seq: int
    sim_time: float
    kind: str
    payload: dict = field(default_factory=dict)
    node: str | None = None

    def to_line(self) -> str:
        return canonical(
            {"seq": self.seq, "t": self.sim_time, "kind": self.kind, "node": self.node, "payload": self.payload}
        )

    @classmethod
    def from_line(cls, line: str) -> JournalEvent:
        obj = json.loads(line)
        return cls(obj["seq"], obj["t"], obj["kind"], obj["payload"], obj["node"])


class RunJournal:
    """An open or closed journal held as canonical lines.

    ``listeners`` receive every appended event; that is the in-process
    progress feed.
    """

    def __init__(
        self,
        header: dict | None = None,
        *,
        hash_name: str = DEFAULT_HASH,
        strict_time: bool = True,
        listeners: Iterable[Callable[[JournalEvent], None]] = (),
    ) -> None:
        base = {"type": "header", "format": FORMAT, "version": __version__, "digest_algorithm": hash_name}
        self.header: dict = {**base, **(header or {})}
        self.hash_name = self.header["digest_algorithm"]
        self.header_line = canonical(self.header)
        self._hasher = hashlib.new(self.hash_name)
        self._hasher.update(self.header_line.encode() + b"\n")
        self.lines: list[str] = []
        self.last_seq = 0
        self.last_time = float("-inf")
        self.strict_time = strict_time
        self.trailer: dict | None = None
        self.listeners = list(listeners)

    # -- writing -------------------------------------------------------------

    @property
    def closed(self) -> bool:
        return self.trailer is not None

    def append(self, event: JournalEvent) -> JournalEvent:
        if self.closed:
            raise ClosedJournalError("journal is closed")
        if event.seq != self.last_seq + 1:
            raise SequenceGapError(f"expected seq {self.last_seq + 1}, got {event.seq}")
        if event.kind not in KINDS:
            raise ValidationError(f"unknown event kind {event.kind!r}")
        if self.strict_time and event.sim_time < self.last_time:
            raise ValidationError(f"sim_time went backwards: {event.sim_time} < {self.last_time}")
        line = event.to_line()
        self.lines.append(line)
        self._hasher.update(line.encode() + b"\n")
        self.last_seq = event.seq
        self.last_time = max(self.last_time, event.sim_time)
        for listener in self.listeners:
            listener(event)
        return event

    def emit(self, kind: str, sim_time: float, payload: dict | None = None, node: str | None = None) -> JournalEvent:
        return self.append(JournalEvent(self.last_seq + 1, sim_time, kind, payload or {}, node))

    @property
    def digest(self) -> str:
        return self._hasher.hexdigest()

    def close(self, summary: dict | None = None) -> str:
        if self.closed:
            raise ClosedJournalError("journal is already closed")
        self.trailer = {"type": "trailer", "digest": self.digest, "events": len(self.lines), "summary": summary or {}}
        return self.trailer["digest"]

    # -- reading -------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.lines)

    def events(self) -> Iterator[JournalEvent]:
        for line in self.lines:
            yield JournalEvent.from_line(line)

    def to_text(self) -> str:
        parts = [self.header_line, *self.lines]
        if self.trailer is not None:
            parts.append(canonical(self.trailer))
        return "\n".join(parts) + "\n"

    def write(self, path: str | Path) -> Path:
        dest = Path(path)
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_text(self.to_text(), encoding="utf-8")
        return dest

    @classmethod
    def from_text(cls, text: str) -> RunJournal:
        raw = text.splitlines()
        if not raw:
            raise JournalError("empty journal")
        header = json.loads(raw[0])
        if header.get("type") != "header":
            raise JournalError("first line is not a journal header")
        trailer = None
        body = raw[1:]
        if body and json.loads(body[-1]).get("type") == "trailer":
            trailer = json.loads(body[-1])
            body = body[:-1]
        journal = cls.__new__(cls)
        journal.header = header
        journal.hash_name = header.get("digest_algorithm", DEFAULT_HASH)
        journal.header_line = raw[0]
        journal._hasher = hashlib.new(journal.hash_name)
        journal._hasher.update(raw[0].encode() + b"\n")
        journal.lines = []
        journal.last_seq = 0
        journal.last_time = float("-inf")
        journal.strict_time = False
        journal.listeners = []
        journal.trailer = None
        for line in body:
            journal.lines.append(line)
            journal._hasher.update(line.encode() + b"\n")
        journal.last_seq = len(body)
        journal.trailer = trailer
        return journal

    @classmethod
    def read(cls, path: str | Path) -> RunJournal:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def from_events(
        cls, header: dict, events: Iterable[JournalEvent], *, strict_time: bool = True, summary: dict | None = None
    ) -> RunJournal:
        """Rebuild a closed journal from events, e.g. after a timestamp correction."""
        journal = cls(header, strict_time=strict_time)
        for ev in events:
            journal.append(ev)
        journal.close(summary)
        return journal

    def verify(self) -> str:
        """Recompute the digest from the stored lines and compare with the trailer."""
        if self.trailer is None:
            raise DigestMismatchError("journal has no trailer")
        hasher = hashlib.new(self.hash_name)
        hasher.update(self.header_line.encode() + b"\n")
        for line in self.lines:
            hasher.update(line.encode() + b"\n")
        actual = hasher.hexdigest()
        if actual != self.trailer.get("digest") or self.trailer.get("events") != len(self.lines):
            raise DigestMismatchError(f"journal digest {actual} does not match trailer {self.trailer.get('digest')}")
        if self.header.get("version") != __version__:
            warnings.warn(
                f"journal written by version {self.header.get('version')}, replaying with {__version__}",
                stacklevel=2,
            )
        return actual


def append(journal: RunJournal, event: JournalEvent) -> RunJournal:
    journal.append(event)
    return journal


def replay(journal: RunJournal, *, base_dir: str | Path | None = None, rerun: bool = False):
    """Verify a closed journal and rebuild its final state and reports.

    With ``rerun=True`` the run is executed again from the header's config and
    the fresh digest is returned alongside.
    """
    from rangeforge.scheduler import replay_journal

    return replay_journal(journal, base_dir=base_dir, rerun=rerun)
