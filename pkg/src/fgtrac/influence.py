"""Checkpoint-grounded contribution scores from gradient alignment.

The influence of a candidate training sample on a target sample is the sum,
over a set of frozen checkpoints, of the inner product of their loss gradients
at those checkpoint parameters. Positive scores mean the candidate's updates
pushed the model toward the target's prediction; negative scores mean it
competed. Gradients are taken with respect to the prediction-layer parameters,
which for this model is the entire parameter vector.

Summation order is pinned: each inner product is the correctly rounded sum of
the coordinate products (order independent), and per-checkpoint contributions
accumulate left to right in checkpoint order. Consequently influence over a
checkpoint list equals the left-fold sum of single-checkpoint influences,
exactly, with no floating-point slack.

Scores are logged through the trace store so each (target, candidate) pair
becomes an auditable record bound to the checkpoint set that produced it.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyCheckpointSet
from .identity import PseudonymousId, hash_id
from .tracelog import TraceStore
from .trainer import Checkpoint, ModelParams, Sample


@dataclass(frozen=True)
class InfluenceRecord:
    target: PseudonymousId
    candidate: PseudonymousId
    checkpoint_set_id: str
    score: float


@dataclass(frozen=True)
class ContributionSummary:
    subject: PseudonymousId
    positive_count: int
    negative_count: int
    net_score: float
    top_positive: tuple[tuple[PseudonymousId, float], ...]


def grad_loss(params: ModelParams, sample: Sample) -> np.ndarray:
    """Exact gradient of the cross-entropy loss in one flat vector.

    Layout: W row-major (K*d entries) followed by b (K entries). The analytic
    form is dL/dW = (p - y) x^T and dL/db = (p - y) with p = softmax(Wx + b).
    """
    x = sample.features
    if x.shape != (params.W.shape[1],):
        raise DimensionMismatch(f"features {x.shape} vs model d={params.W.shape[1]}")
    z = params.W @ x + params.b
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    p[sample.label] -= 1.0
    return np.concatenate([np.outer(p, x).ravel(), p])


def _inner(a: np.ndarray, b: np.ndarray) -> float:
    # Correctly rounded dot product; symmetric under argument swap by construction.
    return math.fsum((a * b).tolist())


def checkpoint_set_id(checkpoints: Sequence[Checkpoint]) -> str:
    return "+".join(ck.checkpoint_id for ck in checkpoints)


class GradientCache:
    """Per-(checkpoint, subject) gradient memo.

    Assumes subject ids identify samples uniquely within a run, which the
    dataset factory guarantees.
    """

    def __init__(self) -> None:
        self._grads: dict[tuple[str, str], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._grads)

    def get(self, checkpoint: Checkpoint, sample: Sample) -> np.ndarray:
        key = (checkpoint.checkpoint_id, hash_id(sample.subject_raw_id).hex)
        grad = self._grads.get(key)
        if grad is None:
            grad = grad_loss(checkpoint.params, sample)
            self._grads[key] = grad
        return grad

    def entries(self) -> Iterable[tuple[str, str, np.ndarray]]:
        for (ck_id, subject_hex), grad in sorted(self._grads.items()):
            yield ck_id, subject_hex, grad


def influence_cp(target: Sample, candidate: Sample, checkpoints: Sequence[Checkpoint]) -> float:
    """Signed influence of candidate on target across the given checkpoints."""
    if not checkpoints:
        raise EmptyCheckpointSet("influence requires at least one checkpoint")
    score = 0.0
    for ck in checkpoints:
        score = score + _inner(grad_loss(ck.params, target), grad_loss(ck.params, candidate))
    return score


def influence_profile(
    target: Sample,
    train_samples: Sequence[Sample],
    checkpoints: Sequence[Checkpoint],
    store: TraceStore | None = None,
    cache: GradientCache | None = None,
) -> list[InfluenceRecord]:
    """Influence of every training sample on one target, logged in candidate-hex order.

    Gradients are computed once per (checkpoint, sample) through the cache and
    reused across pairs; passing a shared cache amortizes them across targets.
    """
    if not checkpoints:
        raise EmptyCheckpointSet("influence requires at least one checkpoint")
    if not train_samples:
        raise ValueError("train_samples must be non-empty")
    if cache is None:
        cache = GradientCache()
    set_id = checkpoint_set_id(checkpoints)
    target_id = hash_id(target.subject_raw_id)
    target_grads = [cache.get(ck, target) for ck in checkpoints]
    records: list[InfluenceRecord] = []
    for candidate in train_samples:
        score = 0.0
        for ck, tg in zip(checkpoints, target_grads):
            score = score + _inner(tg, cache.get(ck, candidate))
        records.append(
            InfluenceRecord(
                target=target_id,
                candidate=hash_id(candidate.subject_raw_id),
                checkpoint_set_id=set_id,
                score=score,
            )
        )
    records.sort(key=lambda r: r.candidate.hex)
    if store is not None:
        for record in records:
            store.record_contribution(record.target, record.candidate, record.checkpoint_set_id, record.score)
    return records


def summarize(records: Sequence[InfluenceRecord], subject: PseudonymousId) -> ContributionSummary:
    """Aggregate the signed scores of all records involving a subject.

    The peer of a record is its other endpoint (the subject itself for
    self-influence records). Zero scores count toward neither sign.
    """
    positive = 0
    negative = 0
    peers_positive: list[tuple[PseudonymousId, float]] = []
    for record in records:
        if record.target != subject and record.candidate != subject:
            raise ValueError("record does not involve the summarized subject")
        peer = record.candidate if record.target == subject else record.target
        if record.score > 0:
            positive += 1
            peers_positive.append((peer, record.score))
        elif record.score < 0:
            negative += 1
    peers_positive.sort(key=lambda item: (-item[1], item[0].hex))
    return ContributionSummary(
        subject=subject,
        positive_count=positive,
        negative_count=negative,
        net_score=math.fsum(r.score for r in records),
        top_positive=tuple(peers_positive),
    )


# ---------------------------------------------------------------------------
# Gradient spill file
# ---------------------------------------------------------------------------
# Entry layout: u32 LE checkpoint-id byte length, checkpoint id UTF-8, subject
# digest (32 bytes), u32 LE vector length, then float64 LE values.

def write_gradient_spill(path: Path | str, entries: Iterable[tuple[str, str, np.ndarray]]) -> int:
    """Write (checkpoint_id, subject_hex, vector) entries; returns the entry count."""
    count = 0
    with open(path, "wb") as fh:
        for ck_id, subject_hex, vector in entries:
            ck_bytes = ck_id.encode("utf-8")
            values = np.asarray(vector, dtype="<f8")
            fh.write(struct.pack("<I", len(ck_bytes)))
            fh.write(ck_bytes)
            fh.write(bytes.fromhex(subject_hex))
            fh.write(struct.pack("<I", values.size))
            fh.write(values.tobytes())
            count += 1
    return count


def read_gradient_spill(path: Path | str) -> list[tuple[str, str, np.ndarray]]:
    out: list[tuple[str, str, np.ndarray]] = []
    data = Path(path).read_bytes()
    pos = 0
    while pos < len(data):
        (ck_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        ck_id = data[pos : pos + ck_len].decode("utf-8")
        pos += ck_len
        subject_hex = data[pos : pos + 32].hex()
        pos += 32
        (vec_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        vector = np.frombuffer(data, dtype="<f8", count=vec_len, offset=pos).copy()
        pos += vec_len * 8
        out.append((ck_id, subject_hex, vector))
    return out
