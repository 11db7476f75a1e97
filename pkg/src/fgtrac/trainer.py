"""Deterministic desk-scale training pipeline with trace hooks.

The model is a multinomial logistic classifier (one linear layer under
softmax cross-entropy) trained by mini-batch SGD on synthetic Gaussian-blob
data. The prediction layer is the whole model, so gradients taken "at the
final layer" are exact rather than an approximation.

Epoch bookkeeping: ``val_losses[e]`` and ``checkpoints[e]`` describe the
parameter state *entering* epoch e, i.e. after e completed passes over the
training split. Index 0 is therefore the zero-initialized baseline, whose
validation loss is ln K. ``final_params`` is the state after all passes.

Hooks only observe: emission never reads the random stream or feeds back into
the arithmetic, so a run with ``store=None`` is bit-identical to a logged one.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptySplit, InvalidConfig, InvalidRatios
from .identity import PseudonymousId, hash_id
from .tracelog import TraceStore


@dataclass(frozen=True, eq=False)
class Sample:
    subject_raw_id: str
    features: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple[Sample, ...]
    d: int
    K: int


@dataclass(eq=False)
class ModelParams:
    """Weight matrix (K x d) and bias vector (K), both float64."""

    W: np.ndarray
    b: np.ndarray

    def copy(self) -> ModelParams:
        return ModelParams(W=self.W.copy(), b=self.b.copy())

    @classmethod
    def zeros(cls, k: int, d: int) -> ModelParams:
        return cls(W=np.zeros((k, d)), b=np.zeros(k))


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Deep snapshot of the model at one epoch; unaffected by later training."""

    checkpoint_id: str
    epoch: int
    params: ModelParams


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]

    def role_of(self, index: int) -> str:
        return self._role_index()[index]

    def _role_index(self) -> dict[int, str]:
        cached = getattr(self, "_cached_roles", None)
        if cached is None:
            cached = {}
            for role, idxs in (("train", self.train), ("validation", self.validation), ("test", self.test)):
                for i in idxs:
                    cached[i] = role
            object.__setattr__(self, "_cached_roles", cached)
        return cached


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr: float
    seed: int
    num_checkpoints: int = 3
    model_version: str = "mlr"
    modality_weights: tuple[tuple[str, float], ...] | None = None

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.num_checkpoints < 1:
            raise InvalidConfig("epochs, batch_size and num_checkpoints must be >= 1")
        if not (self.lr > 0):
            raise InvalidConfig("learning rate must be positive")


@dataclass(eq=False)
class TrainRunResult:
    final_params: ModelParams
    checkpoints: list[Checkpoint]
    val_losses: list[float]
    selected: frozenset[int]

    def selected_checkpoints(self) -> list[Checkpoint]:
        return [self.checkpoints[e] for e in sorted(self.selected)]


# ---------------------------------------------------------------------------
# Dataset synthesis and splitting
# ---------------------------------------------------------------------------

def _class_means(k: int, d: int, separation: float) -> np.ndarray:
    """K mutually equidistant means (regular simplex edge = separation), needs d >= K-1."""
    centred = np.eye(k) - 1.0 / k
    # Orthonormal basis of the (k-1)-dimensional span; distances are preserved.
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    coords = centred @ vt[: k - 1].T
    means = np.zeros((k, d))
    means[:, : k - 1] = coords * (separation / np.sqrt(2.0))
    return means


def make_dataset(seed: int, n_per_class: int, k: int, d: int, class_separation: float) -> Dataset:
    """Isotropic unit-variance Gaussian blobs, one per class, pairwise equidistant means.

    Samples are laid out class-block by class-block; subject ids are
    "subj-<global index>". Deterministic for a fixed seed.
    """
    if k < 2 or d < 2 or n_per_class < 2:
        raise InvalidConfig("need k >= 2, d >= 2, n_per_class >= 2")
    if d < k - 1:
        raise InvalidConfig(f"d={d} cannot hold {k} equidistant class means (need d >= k-1)")
    if not (class_separation > 0):
        raise InvalidConfig("class_separation must be positive")
    rng = np.random.default_rng(seed)
    means = _class_means(k, d, class_separation)
    samples: list[Sample] = []
    for c in range(k):
        x = means[c] + rng.standard_normal((n_per_class, d))
        for row in x:
            samples.append(Sample(subject_raw_id=f"subj-{len(samples)}", features=row, label=c))
    return Dataset(samples=tuple(samples), d=d, K=k)


def split(
    dataset: Dataset,
    ratios: tuple[float, float, float],
    seed: int,
    store: TraceStore | None = None,
) -> SplitAssignment:
    """Shuffled train/validation/test split; logs one mapping and one role per sample."""
    if any(r < 0 for r in ratios):
        raise InvalidRatios("ratios must be non-negative")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidRatios(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(dataset.samples)
    n_train = int(math.floor(ratios[0] * n))
    n_val = int(math.floor(ratios[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) == 0:
        raise EmptySplit(f"split sizes {n_train}/{n_val}/{n_test} include an empty split")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = SplitAssignment(
        train=tuple(int(i) for i in perm[:n_train]),
        validation=tuple(int(i) for i in perm[n_train : n_train + n_val]),
        test=tuple(int(i) for i in perm[n_train + n_val :]),
    )
    if store is not None:
        for sample in dataset.samples:
            store.record_user_mapping(sample.subject_raw_id)
        for i, sample in enumerate(dataset.samples):
            store.record_training_role(hash_id(sample.subject_raw_id), assignment.role_of(i))
    return assignment


# ---------------------------------------------------------------------------
# Model arithmetic
# ---------------------------------------------------------------------------

def _check_dims(params: ModelParams, features: np.ndarray) -> None:
    if features.shape != (params.W.shape[1],):
        raise DimensionMismatch(f"features {features.shape} vs model d={params.W.shape[1]}")


def forward_loss(params: ModelParams, sample: Sample) -> float:
    """Cross-entropy of softmax(Wx + b) against the sample's label."""
    _check_dims(params, sample.features)
    z = params.W @ sample.features + params.b
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()) - z[sample.label])


def validation_loss(params: ModelParams, samples: Sequence[Sample]) -> float:
    """Mean cross-entropy over a sample list (zero model: exactly ln K)."""
    if not samples:
        raise EmptySplit("validation loss over zero samples")
    x = np.stack([s.features for s in samples])
    y = np.array([s.label for s in samples])
    z = x @ params.W.T + params.b
    m = z.max(axis=1)
    losses = m + np.log(np.exp(z - m[:, None]).sum(axis=1)) - z[np.arange(len(y)), y]
    return float(losses.mean())


def predict(
    params: ModelParams,
    sample: Sample,
    store: TraceStore | None = None,
    model_version: str = "mlr",
) -> int:
    """Argmax label, ties resolved toward the lower class index; logs a prediction action."""
    _check_dims(params, sample.features)
    z = params.W @ sample.features + params.b
    label = int(np.argmax(z))
    if store is not None:
        store.record_training_action(
            "prediction",
            model_version=model_version,
            subject=hash_id(sample.subject_raw_id),
            detail={"label": label},
        )
    return label


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def select_checkpoints(val_losses: Sequence[float], k: int, num_classes: int) -> frozenset[int]:
    """Pick up to k epochs whose validation loss dropped the most.

    An epoch e >= 1 qualifies when its loss is below the random-guess baseline
    ln(num_classes) and improved on the previous epoch. Largest drops win,
    ties break toward the earlier epoch; fewer than k may qualify.
    """
    baseline = math.log(num_classes)
    ranked: list[tuple[float, int]] = []
    for e in range(1, len(val_losses)):
        drop = val_losses[e - 1] - val_losses[e]
        if val_losses[e] < baseline and drop > 0:
            ranked.append((-drop, e))
    ranked.sort()
    return frozenset(e for _, e in ranked[:k])


def _cost_ms(started: float) -> int:
    return int((time.perf_counter() - started) * 1000)


def train(
    dataset: Dataset,
    assignment: SplitAssignment,
    config: TrainConfig,
    store: TraceStore | None = None,
    epoch_hook: Callable[[int], None] | None = None,
) -> TrainRunResult:
    """Mini-batch SGD with per-epoch checkpoint snapshots and trace hooks.

    Shuffling is drawn from a dedicated generator seeded by ``config.seed``,
    so two runs with equal seeds produce bit-identical parameters whether or
    not a store is attached. ``epoch_hook`` runs after each epoch's events are
    emitted (the pipeline uses it to seal and commit the epoch's range).
    """
    config.validate()
    if not assignment.train:
        raise EmptySplit("training split is empty")
    if not assignment.validation:
        raise EmptySplit("validation split is empty")

    train_samples = [dataset.samples[i] for i in assignment.train]
    val_samples = [dataset.samples[i] for i in assignment.validation]
    x_train = np.stack([s.features for s in train_samples])
    y_train = np.array([s.label for s in train_samples])
    onehot = np.eye(dataset.K)[y_train]

    if store is not None:
        _emit_preprocess_events(dataset, config, store)

    rng = np.random.default_rng(config.seed)
    params = ModelParams.zeros(dataset.K, dataset.d)
    val_losses: list[float] = []
    checkpoints: list[Checkpoint] = []
    n = len(train_samples)

    for epoch in range(config.epochs):
        val_losses.append(validation_loss(params, val_samples))
        checkpoints.append(Checkpoint(checkpoint_id=f"ep{epoch}", epoch=epoch, params=params.copy()))
        epoch_started = time.perf_counter()
        version = f"{config.model_version}@e{epoch}"
        perm = rng.permutation(n)
        for bi, start in enumerate(range(0, n, config.batch_size)):
            batch_started = time.perf_counter()
            idx = perm[start : start + config.batch_size]
            if store is not None:
                store.record_training_action(
                    "preprocess_batch", epoch=epoch, model_version=version, detail={"batch": bi}
                )
            xb, yb = x_train[idx], onehot[idx]
            z = xb @ params.W.T + params.b
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            delta = p - yb
            params.W -= config.lr * (delta.T @ xb) / len(idx)
            params.b -= config.lr * delta.mean(axis=0)
            if store is not None:
                store.record_training_action(
                    "train_batch",
                    epoch=epoch,
                    model_version=version,
                    cost_ms=_cost_ms(batch_started),
                    detail={"batch": bi},
                )
        if store is not None:
            store.record_training_action(
                "epoch_end",
                epoch=epoch,
                model_version=version,
                cost_ms=_cost_ms(epoch_started),
                detail={"val_loss": val_losses[epoch]},
            )
        if epoch_hook is not None:
            epoch_hook(epoch)

    selected = select_checkpoints(val_losses, config.num_checkpoints, dataset.K)
    if store is not None:
        for epoch in sorted(selected):
            store.record_training_action(
                "checkpoint_saved", epoch=epoch, model_version=f"{config.model_version}@e{epoch}"
            )

    return TrainRunResult(
        final_params=params,
        checkpoints=checkpoints,
        val_losses=val_losses,
        selected=selected,
    )


def _emit_preprocess_events(dataset: Dataset, config: TrainConfig, store: TraceStore) -> None:
    # One T1->T2 action per ingested sample, regardless of role; modality
    # attention rides along when the pipeline supplies weights.
    for i, sample in enumerate(dataset.samples):
        subject = hash_id(sample.subject_raw_id)
        if config.modality_weights is not None:
            store.record_modality_attention(subject, config.modality_weights, epoch=0)
        store.record_training_action(
            "preprocess_sample",
            epoch=0,
            model_version=f"{config.model_version}@e0",
            subject=subject,
            detail={"batch": i // config.batch_size},
        )
