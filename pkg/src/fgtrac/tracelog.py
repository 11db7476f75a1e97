"""Append-only trace event store with canonical serialization and batch sealing.

Five event kinds cover a sample's lifecycle: UserMapping at ingestion,
TrainingRole at split time, ModalityAttention and SampleContribution during
training, and TrainingAction for everything the run itself does (batches,
epochs, checkpoints, predictions). A run writes one store; the ``kind`` field
preserves the five-log taxonomy under a single sequence order.

Every event is serialized to exactly one line of canonical JSON (sorted keys,
no insignificant whitespace, shortest round-trip floats), so the byte content
of a line range doubles as the leaf sequence of a commitment tree. Sealing a
range freezes it for commitment; sealed ranges may not overlap.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence, Union

from .errors import (
    InvalidEvent,
    RangeOutOfBounds,
    RangeOverlap,
    SequenceGap,
    StorageFailure,
)
from .identity import PseudonymousId, hash_id

KINDS = ("UserMapping", "TrainingRole", "ModalityAttention", "SampleContribution", "TrainingAction")
ROLES = ("train", "validation", "test")

# Modality weights must sum to 1 within this tolerance.
WEIGHT_SUM_TOL = 1e-9

DetailValue = Union[int, float, str]


def canonical_dumps(value: Any) -> str:
    """Canonical JSON text: sorted keys at every level, no whitespace, no NaN/Inf."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise InvalidEvent(message)


def _finite_real(value: Any, what: str) -> float:
    _require(isinstance(value, (int, float)) and not isinstance(value, bool), f"{what} must be a real number")
    out = float(value)
    _require(math.isfinite(out), f"{what} must be finite")
    return out


# ---------------------------------------------------------------------------
# Payloads
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UserMappingPayload:
    """Raw identifier and its pseudonym. The raw id lives only in this record."""

    raw_id: str
    pseudonym: PseudonymousId

    KIND = "UserMapping"

    def validate(self) -> None:
        _require(isinstance(self.raw_id, str), "raw_id must be a string")
        _require(self.pseudonym == hash_id(self.raw_id), "pseudonym must be the digest of raw_id")

    def to_json_value(self) -> dict:
        return {"raw_id": self.raw_id, "pseudonym": self.pseudonym.hex}

    @classmethod
    def from_json_value(cls, value: Mapping) -> UserMappingPayload:
        return cls(raw_id=value["raw_id"], pseudonym=PseudonymousId.from_hex(value["pseudonym"]))


@dataclass(frozen=True)
class TrainingRolePayload:
    role: str

    KIND = "TrainingRole"

    def validate(self) -> None:
        _require(self.role in ROLES, f"role must be one of {ROLES}")

    def to_json_value(self) -> dict:
        return {"role": self.role}

    @classmethod
    def from_json_value(cls, value: Mapping) -> TrainingRolePayload:
        return cls(role=value["role"])


@dataclass(frozen=True)
class ModalityAttentionPayload:
    """Per-sample (or per-batch, via batch_id) modality attention weights."""

    weights: tuple[tuple[str, float], ...]
    epoch: int
    batch_id: str | None = None

    KIND = "ModalityAttention"

    def validate(self) -> None:
        _require(len(self.weights) > 0, "weights must be non-empty")
        for name, w in self.weights:
            _require(isinstance(name, str) and name != "", "modality name must be a non-empty string")
            wf = _finite_real(w, "modality weight")
            _require(0.0 <= wf <= 1.0, "modality weight must lie in [0, 1]")
        total = math.fsum(w for _, w in self.weights)
        _require(abs(total - 1.0) <= WEIGHT_SUM_TOL, "modality weights must sum to 1")
        _require(isinstance(self.epoch, int) and not isinstance(self.epoch, bool), "epoch must be an integer")

    def to_json_value(self) -> dict:
        return {
            "weights": [[name, float(w)] for name, w in self.weights],
            "epoch": self.epoch,
            "batch_id": self.batch_id,
        }

    @classmethod
    def from_json_value(cls, value: Mapping) -> ModalityAttentionPayload:
        return cls(
            weights=tuple((name, float(w)) for name, w in value["weights"]),
            epoch=value["epoch"],
            batch_id=value.get("batch_id"),
        )


@dataclass(frozen=True)
class SampleContributionPayload:
    """Signed influence of a candidate training sample on a target sample."""

    target: PseudonymousId
    candidate: PseudonymousId
    checkpoint_set_id: str
    score: float

    KIND = "SampleContribution"

    def validate(self) -> None:
        _require(isinstance(self.checkpoint_set_id, str) and self.checkpoint_set_id != "",
                 "checkpoint_set_id must be a non-empty string")
        _finite_real(self.score, "score")

    def to_json_value(self) -> dict:
        return {
            "target": self.target.hex,
            "candidate": self.candidate.hex,
            "checkpoint_set_id": self.checkpoint_set_id,
            "score": float(self.score),
        }

    @classmethod
    def from_json_value(cls, value: Mapping) -> SampleContributionPayload:
        return cls(
            target=PseudonymousId.from_hex(value["target"]),
            candidate=PseudonymousId.from_hex(value["candidate"]),
            checkpoint_set_id=value["checkpoint_set_id"],
            score=float(value["score"]),
        )


@dataclass(frozen=True)
class TrainingActionPayload:
    """Run-level action record: timestamps live on the event, specifics here.

    ``detail`` carries small action-specific values (batch index, predicted
    label, validation loss) that do not warrant their own event kind.
    """

    action: str
    model_version: str
    epoch: int | None = None
    cost_ms: int | None = None
    detail: Mapping[str, DetailValue] | None = None

    KIND = "TrainingAction"

    def validate(self) -> None:
        _require(isinstance(self.action, str) and self.action != "", "action must be a non-empty string")
        _require(isinstance(self.model_version, str), "model_version must be a string")
        if self.epoch is not None:
            _require(isinstance(self.epoch, int) and not isinstance(self.epoch, bool), "epoch must be an integer")
        if self.cost_ms is not None:
            _require(isinstance(self.cost_ms, int) and not isinstance(self.cost_ms, bool),
                     "cost_ms must be an integer")
        if self.detail is not None:
            for key, val in self.detail.items():
                _require(isinstance(key, str), "detail keys must be strings")
                if not isinstance(val, str):
                    _finite_real(val, f"detail[{key!r}]")

    def to_json_value(self) -> dict:
        detail = None if self.detail is None else dict(self.detail)
        return {
            "action": self.action,
            "model_version": self.model_version,
            "epoch": self.epoch,
            "cost_ms": self.cost_ms,
            "detail": detail,
        }

    @classmethod
    def from_json_value(cls, value: Mapping) -> TrainingActionPayload:
        return cls(
            action=value["action"],
            model_version=value["model_version"],
            epoch=value.get("epoch"),
            cost_ms=value.get("cost_ms"),
            detail=value.get("detail"),
        )


Payload = Union[
    UserMappingPayload,
    TrainingRolePayload,
    ModalityAttentionPayload,
    SampleContributionPayload,
    TrainingActionPayload,
]

_PAYLOAD_TYPES = {
    cls.KIND: cls
    for cls in (
        UserMappingPayload,
        TrainingRolePayload,
        ModalityAttentionPayload,
        SampleContributionPayload,
        TrainingActionPayload,
    )
}


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceEvent:
    """One tagged, timestamped lifecycle record."""

    seq: int
    timestamp_ms: int
    run_id: str
    kind: str
    subject: PseudonymousId | None
    payload: Payload

    def validate(self) -> None:
        _require(isinstance(self.seq, int) and self.seq >= 0, "seq must be a non-negative integer")
        _require(isinstance(self.timestamp_ms, int), "timestamp_ms must be an integer")
        _require(isinstance(self.run_id, str) and self.run_id != "", "run_id must be a non-empty string")
        _require(self.kind in KINDS, f"kind must be one of {KINDS}")
        _require(self.payload.KIND == self.kind, "payload type must match kind")
        if self.subject is None:
            # Only run-global actions and batch-level attention records may omit the subject.
            if self.kind == "ModalityAttention":
                _require(self.payload.batch_id is not None,
                         "ModalityAttention without subject requires a batch_id")
            else:
                _require(self.kind == "TrainingAction", f"{self.kind} events require a subject")
        self.payload.validate()


def event_to_json_value(event: TraceEvent) -> dict:
    """JSON value form of a validated event."""
    event.validate()
    return {
        "seq": event.seq,
        "timestamp_ms": event.timestamp_ms,
        "run_id": event.run_id,
        "kind": event.kind,
        "subject": None if event.subject is None else event.subject.hex,
        "payload": event.payload.to_json_value(),
    }


def event_from_json_value(value: Mapping) -> TraceEvent:
    try:
        kind = value["kind"]
        payload_cls = _PAYLOAD_TYPES[kind]
        subject_hex = value["subject"]
        event = TraceEvent(
            seq=value["seq"],
            timestamp_ms=value["timestamp_ms"],
            run_id=value["run_id"],
            kind=kind,
            subject=None if subject_hex is None else PseudonymousId.from_hex(subject_hex),
            payload=payload_cls.from_json_value(value["payload"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidEvent(f"unparseable event: {exc}") from exc
    event.validate()
    return event


def canonical_serialize(event: TraceEvent) -> bytes:
    """Canonical single-line JSON bytes for an event, excluding the newline.

    Injective over valid events: the field set is fixed per kind, keys are
    sorted at every level, and floats render in shortest round-trip form.
    """
    try:
        return canonical_dumps(event_to_json_value(event)).encode("utf-8")
    except ValueError as exc:
        raise InvalidEvent(str(exc)) from exc


def parse_event(line: bytes | str) -> TraceEvent:
    """Parse one stored line back into a validated event."""
    try:
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        value = json.loads(line)
    except (UnicodeDecodeError, ValueError) as exc:
        raise InvalidEvent(f"unparseable event line: {exc}") from exc
    if not isinstance(value, Mapping):
        raise InvalidEvent("event line is not a JSON object")
    return event_from_json_value(value)


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SealRange:
    """A sealed, committed-or-committable contiguous event range."""

    batch_id: str
    from_seq: int
    to_seq: int

    def covers(self, seq: int) -> bool:
        return self.from_seq <= seq <= self.to_seq


class TraceStore:
    """Single-writer append-only event store for one run.

    One writer (the training run) appends; readers may query between appends.
    With ``fixed_clock`` the event timestamp equals its seq and all recorded
    costs are zeroed, which makes trace files byte-reproducible across runs.
    """

    def __init__(
        self,
        run_id: str,
        directory: Path | None = None,
        fixed_clock: bool = False,
        _readonly: bool = False,
    ) -> None:
        self.run_id = run_id
        self.directory = None if directory is None else Path(directory)
        self.fixed_clock = fixed_clock
        self.readonly = _readonly
        self._events: list[TraceEvent | None] = []
        self._raw: list[bytes] = []
        self._by_subject: dict[str, list[int]] = {}
        self._seals: list[SealRange] = []
        self._parse_errors: list[int] = []
        self._last_ts = -1
        self._fh = None
        if self.directory is not None and not _readonly:
            self.directory.mkdir(parents=True, exist_ok=True)
            if self.trace_path.exists():
                raise StorageFailure(f"trace file already exists: {self.trace_path}")
            try:
                self._fh = open(self.trace_path, "ab")
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc

    # -- paths ----------------------------------------------------------------

    @property
    def trace_path(self) -> Path:
        if self.directory is None:
            raise StorageFailure("store has no backing directory")
        return self.directory / f"{self.run_id}.trace.ndjson"

    @property
    def seals_path(self) -> Path:
        if self.directory is None:
            raise StorageFailure("store has no backing directory")
        return self.directory / f"{self.run_id}.seals.json"

    @classmethod
    def open(cls, directory: Path | str, run_id: str) -> TraceStore:
        """Load an existing run's store read-only.

        Loading is lenient: lines that no longer parse are kept as raw bytes
        and reported via ``parse_error_seqs`` so verification can name them
        instead of crashing on tampered files.
        """
        store = cls(run_id, Path(directory), _readonly=True)
        data = store.trace_path.read_bytes()
        lines = data.split(b"\n")
        if lines and lines[-1] == b"":
            lines.pop()
        for i, raw in enumerate(lines):
            store._raw.append(raw)
            try:
                event = parse_event(raw)
            except InvalidEvent:
                store._events.append(None)
                store._parse_errors.append(i)
                continue
            store._events.append(event)
            store._index_event(event, i)
        if store.seals_path.exists():
            reg = json.loads(store.seals_path.read_text(encoding="utf-8"))
            store._seals = [
                SealRange(batch_id=s["batch_id"], from_seq=s["from_seq"], to_seq=s["to_seq"])
                for s in reg["seals"]
            ]
        return store

    # -- appending --------------------------------------------------------------

    @property
    def next_seq(self) -> int:
        return len(self._events)

    @property
    def events(self) -> Sequence[TraceEvent | None]:
        return self._events

    @property
    def raw_lines(self) -> Sequence[bytes]:
        return self._raw

    @property
    def parse_error_seqs(self) -> Sequence[int]:
        return self._parse_errors

    @property
    def seals(self) -> Sequence[SealRange]:
        return self._seals

    def now_ms(self) -> int:
        if self.fixed_clock:
            return self.next_seq
        return max(int(time.time() * 1000), self._last_ts)

    def append(self, event: TraceEvent) -> int:
        """Durably append one event; returns its seq."""
        if self.readonly:
            raise StorageFailure("store is read-only")
        if event.seq != self.next_seq:
            raise SequenceGap(f"expected seq {self.next_seq}, got {event.seq}")
        line = canonical_serialize(event)
        if self._fh is not None:
            try:
                self._fh.write(line + b"\n")
                self._fh.flush()
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
        self._events.append(event)
        self._raw.append(line)
        self._index_event(event, event.seq)
        self._last_ts = event.timestamp_ms
        return event.seq

    def _index_event(self, event: TraceEvent, seq: int) -> None:
        subjects: list[str] = []
        if event.subject is not None:
            subjects.append(event.subject.hex)
        if isinstance(event.payload, SampleContributionPayload):
            # Contribution records surface in either party's audit.
            for sid in (event.payload.target.hex, event.payload.candidate.hex):
                if sid not in subjects:
                    subjects.append(sid)
        for sid in subjects:
            self._by_subject.setdefault(sid, []).append(seq)

    def _record(self, kind: str, subject: PseudonymousId | None, payload: Payload) -> int:
        event = TraceEvent(
            seq=self.next_seq,
            timestamp_ms=self.now_ms(),
            run_id=self.run_id,
            kind=kind,
            subject=subject,
            payload=payload,
        )
        return self.append(event)

    def record_user_mapping(self, raw_id: str) -> int:
        pseudonym = hash_id(raw_id)
        return self._record("UserMapping", pseudonym, UserMappingPayload(raw_id=raw_id, pseudonym=pseudonym))

    def record_training_role(self, subject: PseudonymousId, role: str) -> int:
        return self._record("TrainingRole", subject, TrainingRolePayload(role=role))

    def record_modality_attention(
        self,
        subject: PseudonymousId | None,
        weights: Sequence[tuple[str, float]],
        epoch: int,
        batch_id: str | None = None,
    ) -> int:
        payload = ModalityAttentionPayload(
            weights=tuple((name, float(w)) for name, w in weights),
            epoch=epoch,
            batch_id=batch_id,
        )
        return self._record("ModalityAttention", subject, payload)

    def record_contribution(
        self,
        target: PseudonymousId,
        candidate: PseudonymousId,
        checkpoint_set_id: str,
        score: float,
    ) -> int:
        payload = SampleContributionPayload(
            target=target,
            candidate=candidate,
            checkpoint_set_id=checkpoint_set_id,
            score=float(score),
        )
        return self._record("SampleContribution", target, payload)

    def record_training_action(
        self,
        action: str,
        epoch: int | None = None,
        model_version: str = "",
        cost_ms: int | None = None,
        subject: PseudonymousId | None = None,
        detail: Mapping[str, DetailValue] | None = None,
    ) -> int:
        if self.fixed_clock and cost_ms is not None:
            cost_ms = 0
        payload = TrainingActionPayload(
            action=action,
            model_version=model_version,
            epoch=epoch,
            cost_ms=cost_ms,
            detail=detail,
        )
        return self._record("TrainingAction", subject, payload)

    # -- querying ---------------------------------------------------------------

    def query_by_subject(self, subject: PseudonymousId) -> list[TraceEvent]:
        """All events referencing the subject (owner, target, or candidate), seq order."""
        seqs = self._by_subject.get(subject.hex, [])
        return [self._events[s] for s in seqs if self._events[s] is not None]

    def iter_events(self) -> Iterator[TraceEvent]:
        for event in self._events:
            if event is not None:
                yield event

    # -- sealing ----------------------------------------------------------------

    def batch_id_for(self, from_seq: int, to_seq: int) -> str:
        return f"{self.run_id}:{from_seq}-{to_seq}"

    def seal_batch(self, from_seq: int, to_seq: int) -> list[bytes]:
        """Freeze a contiguous range for commitment; returns its leaf byte strings."""
        if not (0 <= from_seq <= to_seq < self.next_seq):
            raise RangeOutOfBounds(f"range [{from_seq}, {to_seq}] outside appended seqs")
        for seal in self._seals:
            if from_seq <= seal.to_seq and seal.from_seq <= to_seq:
                raise RangeOverlap(f"range [{from_seq}, {to_seq}] overlaps sealed {seal.batch_id}")
        seal = SealRange(batch_id=self.batch_id_for(from_seq, to_seq), from_seq=from_seq, to_seq=to_seq)
        self._seals.append(seal)
        self._persist_seals()
        return self.leaves_for(seal)

    def leaves_for(self, seal: SealRange) -> list[bytes]:
        if seal.to_seq >= len(self._raw):
            raise RangeOutOfBounds(f"sealed range {seal.batch_id} extends past the stored events")
        return self._raw[seal.from_seq : seal.to_seq + 1]

    def seal_covering(self, seq: int) -> SealRange | None:
        for seal in self._seals:
            if seal.covers(seq):
                return seal
        return None

    def _persist_seals(self) -> None:
        if self.directory is None or self.readonly:
            return
        registry = {
            "run_id": self.run_id,
            "seals": [
                {"batch_id": s.batch_id, "from_seq": s.from_seq, "to_seq": s.to_seq}
                for s in self._seals
            ],
        }
        try:
            self.seals_path.write_text(canonical_dumps(registry) + "\n", encoding="utf-8")
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> TraceStore:
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
