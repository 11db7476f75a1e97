"""Audit queries: authorized retrieval with proof-backed verification.

Release is all-or-nothing. A report is produced only when the ledger chain
verifies, every committed batch's recomputed root matches its on-chain
commitment, the stored file is structurally intact (every line parses, seqs
align, every event is covered by exactly one sealed range), and every event of
the subject carries a verifying membership proof. Any failure refuses release
without disclosing event contents. Verifying all batches, not just the ones
the subject's visible events fall in, is what makes the released event set
complete: a corrupted line cannot silently drop out of a subject's history.

Reports embed the membership proofs, so a third party holding only the ledger
file can re-verify them offline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

from . import merkle
from .errors import MissingRoleEvent, UnknownBatch
from .identity import AccessToken, PseudonymousId, check_token
from .influence import ContributionSummary, InfluenceRecord, summarize
from .ledger import Ledger
from .tracelog import (
    ModalityAttentionPayload,
    SampleContributionPayload,
    SealRange,
    TraceEvent,
    TraceStore,
    TrainingActionPayload,
    TrainingRolePayload,
    canonical_dumps,
    event_from_json_value,
    event_to_json_value,
)


@dataclass(frozen=True)
class ParticipationTimeline:
    role: str
    timestamps: tuple[int, ...]
    first_used_epoch: int | None
    last_used_epoch: int | None

    def to_json_value(self) -> dict:
        return {
            "role": self.role,
            "timestamps": list(self.timestamps),
            "first_used_epoch": self.first_used_epoch,
            "last_used_epoch": self.last_used_epoch,
        }

    @classmethod
    def from_json_value(cls, value: Mapping) -> ParticipationTimeline:
        return cls(
            role=value["role"],
            timestamps=tuple(value["timestamps"]),
            first_used_epoch=value["first_used_epoch"],
            last_used_epoch=value["last_used_epoch"],
        )


@dataclass(frozen=True)
class ModalityUsage:
    weights: tuple[tuple[str, float], ...]
    epoch: int
    observations: int

    def to_json_value(self) -> dict:
        return {
            "weights": [[name, float(w)] for name, w in self.weights],
            "epoch": self.epoch,
            "observations": self.observations,
        }

    @classmethod
    def from_json_value(cls, value: Mapping) -> ModalityUsage:
        return cls(
            weights=tuple((name, float(w)) for name, w in value["weights"]),
            epoch=value["epoch"],
            observations=value["observations"],
        )


@dataclass(frozen=True)
class EventProof:
    seq: int
    batch_id: str
    proof: merkle.MerkleProof

    def to_json_value(self) -> dict:
        return {"seq": self.seq, "batch_id": self.batch_id, "proof": self.proof.to_json_value()}

    @classmethod
    def from_json_value(cls, value: Mapping) -> EventProof:
        return cls(
            seq=value["seq"],
            batch_id=value["batch_id"],
            proof=merkle.MerkleProof.from_json_value(value["proof"]),
        )


@dataclass(frozen=True)
class AuditReport:
    subject: PseudonymousId
    verified: bool
    events: tuple[TraceEvent, ...]
    proofs: tuple[EventProof, ...]
    participation: ParticipationTimeline
    modality_usage: ModalityUsage | None
    contribution: ContributionSummary | None

    def to_json_value(self) -> dict:
        contribution = None
        if self.contribution is not None:
            contribution = {
                "subject": self.contribution.subject.hex,
                "positive_count": self.contribution.positive_count,
                "negative_count": self.contribution.negative_count,
                "net_score": self.contribution.net_score,
                "top_positive": [[peer.hex, score] for peer, score in self.contribution.top_positive],
            }
        return {
            "subject": self.subject.hex,
            "verified": self.verified,
            "events": [event_to_json_value(ev) for ev in self.events],
            "proofs": [p.to_json_value() for p in self.proofs],
            "participation": self.participation.to_json_value(),
            "modality_usage": None if self.modality_usage is None else self.modality_usage.to_json_value(),
            "contribution": contribution,
        }

    @classmethod
    def from_json_value(cls, value: Mapping) -> AuditReport:
        contribution = None
        if value["contribution"] is not None:
            cv = value["contribution"]
            contribution = ContributionSummary(
                subject=PseudonymousId.from_hex(cv["subject"]),
                positive_count=cv["positive_count"],
                negative_count=cv["negative_count"],
                net_score=float(cv["net_score"]),
                top_positive=tuple(
                    (PseudonymousId.from_hex(peer), float(score)) for peer, score in cv["top_positive"]
                ),
            )
        modality = value["modality_usage"]
        return cls(
            subject=PseudonymousId.from_hex(value["subject"]),
            verified=value["verified"],
            events=tuple(event_from_json_value(ev) for ev in value["events"]),
            proofs=tuple(EventProof.from_json_value(p) for p in value["proofs"]),
            participation=ParticipationTimeline.from_json_value(value["participation"]),
            modality_usage=None if modality is None else ModalityUsage.from_json_value(modality),
            contribution=contribution,
        )


@dataclass(frozen=True)
class TamperingDetected:
    """Verification failed; no event content is disclosed."""

    batch_id: str | None
    seq: int | None
    reason: str


@dataclass(frozen=True)
class AuthorizationDenied:
    pass


@dataclass(frozen=True)
class UnknownSubject:
    pass


AuditOutcome = Union[AuditReport, TamperingDetected, AuthorizationDenied, UnknownSubject]


def _verify_integrity(
    store: TraceStore, ledger: Ledger
) -> tuple[TamperingDetected | None, dict[str, tuple[SealRange, merkle.MerkleTree]]]:
    """Whole-store verification; on success returns the per-batch trees for proof building."""
    broken = ledger.verify_chain()
    if broken is not None:
        block = ledger.blocks[broken] if broken < len(ledger.blocks) else None
        batch_id = None if block is None else block.batch_id
        return TamperingDetected(batch_id, None, f"ledger chain broken at block {broken}"), {}

    n = len(store.raw_lines)
    seals = sorted(store.seals, key=lambda s: s.from_seq)
    covered = 0
    for seal in seals:
        if seal.from_seq != covered:
            return TamperingDetected(seal.batch_id, covered, "sealed ranges leave a gap or overlap"), {}
        if seal.to_seq >= n:
            return TamperingDetected(seal.batch_id, None, "sealed range extends past the stored events"), {}
        covered = seal.to_seq + 1
    if covered != n:
        return TamperingDetected(None, covered, "events beyond the last sealed range"), {}

    if store.parse_error_seqs:
        seq = store.parse_error_seqs[0]
        seal = store.seal_covering(seq)
        return TamperingDetected(None if seal is None else seal.batch_id, seq, "unparseable event line"), {}
    for i, event in enumerate(store.events):
        if event.seq != i or event.run_id != store.run_id:
            seal = store.seal_covering(i)
            batch_id = None if seal is None else seal.batch_id
            return TamperingDetected(batch_id, i, "event sequence does not match file order"), {}

    trees: dict[str, tuple[SealRange, merkle.MerkleTree]] = {}
    for seal in seals:
        try:
            committed = ledger.latest_root_for(seal.batch_id)
        except UnknownBatch:
            return TamperingDetected(seal.batch_id, None, "sealed batch has no on-chain commitment"), {}
        tree = merkle.build(store.leaves_for(seal))
        if tree.root != committed:
            return TamperingDetected(seal.batch_id, None, "recomputed root differs from commitment"), {}
        trees[seal.batch_id] = (seal, tree)
    return None, trees


def audit(
    subject: PseudonymousId,
    token: AccessToken,
    store: TraceStore,
    ledger: Ledger,
    secret: bytes,
) -> AuditOutcome:
    """Three-step audit: authorize, retrieve, verify; release only on full success."""
    if not check_token(secret, subject, token):
        return AuthorizationDenied()

    issue, trees = _verify_integrity(store, ledger)
    if issue is not None:
        return issue

    events = store.query_by_subject(subject)
    if not any(ev.kind == "UserMapping" for ev in events):
        return UnknownSubject()

    proofs: list[EventProof] = []
    for event in events:
        seal = store.seal_covering(event.seq)
        _, tree = trees[seal.batch_id]
        proof = merkle.prove(tree, event.seq - seal.from_seq)
        root = ledger.latest_root_for(seal.batch_id)
        if not merkle.verify(store.raw_lines[event.seq], proof, root):
            return TamperingDetected(seal.batch_id, event.seq, "membership proof failed")
        proofs.append(EventProof(seq=event.seq, batch_id=seal.batch_id, proof=proof))

    contribution: ContributionSummary | None = None
    records = [
        InfluenceRecord(
            target=ev.payload.target,
            candidate=ev.payload.candidate,
            checkpoint_set_id=ev.payload.checkpoint_set_id,
            score=ev.payload.score,
        )
        for ev in events
        if isinstance(ev.payload, SampleContributionPayload)
    ]
    if records:
        contribution = summarize(records, subject)

    return AuditReport(
        subject=subject,
        verified=True,
        events=tuple(events),
        proofs=tuple(proofs),
        participation=build_participation(events),
        modality_usage=_modality_usage(events),
        contribution=contribution,
    )


def build_participation(events: Sequence[TraceEvent]) -> ParticipationTimeline:
    """Role, ordered event timestamps, and the epoch span of training actions."""
    role = None
    epochs: list[int] = []
    for event in events:
        if isinstance(event.payload, TrainingRolePayload) and role is None:
            role = event.payload.role
        if isinstance(event.payload, TrainingActionPayload) and event.payload.epoch is not None:
            epochs.append(event.payload.epoch)
    if role is None:
        raise MissingRoleEvent("subject has no TrainingRole event")
    return ParticipationTimeline(
        role=role,
        timestamps=tuple(ev.timestamp_ms for ev in events),
        first_used_epoch=min(epochs) if epochs else None,
        last_used_epoch=max(epochs) if epochs else None,
    )


def _modality_usage(events: Sequence[TraceEvent]) -> ModalityUsage | None:
    attention = [ev.payload for ev in events if isinstance(ev.payload, ModalityAttentionPayload)]
    if not attention:
        return None
    latest = max(attention, key=lambda p: p.epoch)
    return ModalityUsage(weights=latest.weights, epoch=latest.epoch, observations=len(attention))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_TOP_POSITIVE_SHOWN = 5


def render_report(report: AuditReport, format: str = "text") -> bytes:
    """Render a verified report as display text or canonical JSON."""
    if format == "json":
        return canonical_dumps(report.to_json_value()).encode("utf-8")
    if format != "text":
        raise ValueError(f"unknown report format {format!r}")

    lines = [
        "FG-Trac audit report",
        f"subject: {report.subject.hex}",
        f"verified: yes ({len(report.events)} events, {len(set(p.batch_id for p in report.proofs))} batches)",
        "",
        "Participation Timeline",
        f"  role: {report.participation.role}",
    ]
    ts = report.participation.timestamps
    if ts:
        lines.append(f"  events: {len(ts)} (timestamps {ts[0]} .. {ts[-1]})")
    if report.participation.last_used_epoch is not None:
        lines.append(
            f"  used in epochs {report.participation.first_used_epoch}"
            f" .. {report.participation.last_used_epoch}"
        )
    for event in report.events:
        lines.append(f"    seq {event.seq}  {event.kind}  ts {event.timestamp_ms}")

    lines += ["", "Modality Usage"]
    if report.modality_usage is None:
        lines.append("  none recorded")
    else:
        for name, weight in report.modality_usage.weights:
            lines.append(f"  {name}: {weight}")
        lines.append(f"  (epoch {report.modality_usage.epoch}, {report.modality_usage.observations} records)")

    lines += ["", "Contribution Summary"]
    if report.contribution is None:
        lines.append("  none recorded")
    else:
        c = report.contribution
        lines.append(f"  positive influence on {c.positive_count} peers, negative on {c.negative_count}")
        lines.append(f"  net influence score: {c.net_score}")
        for peer, score in c.top_positive[:_TOP_POSITIVE_SHOWN]:
            lines.append(f"    +{score}  {peer.hex}")

    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_report(data: bytes | str) -> AuditReport:
    """Inverse of the JSON rendering."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return AuditReport.from_json_value(json.loads(data))
