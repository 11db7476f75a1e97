"""End-to-end demo run: synthesize, split, train, seal, commit, predict.

A run writes a self-contained directory: the trace file, the seal registry,
the ledger, the selected checkpoint snapshots, a config copy, and an index.
Commitment cadence is one block per epoch plus a final block covering the
tail (checkpoint selection, influence records, predictions). With a fixed
seed and fixed clock the whole directory is byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from . import merkle
from .errors import InvalidConfig, StorageFailure
from .identity import hash_id
from .influence import GradientCache, influence_profile
from .ledger import Ledger
from .tracelog import TraceStore, canonical_dumps
from .trainer import (
    ModelParams,
    TrainConfig,
    TrainRunResult,
    make_dataset,
    predict,
    split,
    train,
)

CONFIG_SCHEMA = 1

DEFAULT_MODALITY_WEIGHTS = (("imaging", 0.53), ("phenotype", 0.47))


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.1
    num_checkpoints: int = 3
    fixed_clock: bool = False
    hooks: bool = True
    run_id: str | None = None
    n_per_class: int = 40
    classes: int = 3
    dim: int = 2
    separation: float = 10.0
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    query_targets: int = 3
    modality_weights: tuple[tuple[str, float], ...] | None = DEFAULT_MODALITY_WEIGHTS

    def resolved_run_id(self) -> str:
        return self.run_id if self.run_id is not None else f"run-seed{self.seed}"

    def to_json_value(self) -> dict:
        return {
            "schema": CONFIG_SCHEMA,
            "run_id": self.run_id,
            "seed": self.seed,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "num_checkpoints": self.num_checkpoints,
            "fixed_clock": self.fixed_clock,
            "hooks": self.hooks,
            "dataset": {
                "n_per_class": self.n_per_class,
                "classes": self.classes,
                "dim": self.dim,
                "separation": self.separation,
            },
            "split": list(self.split_ratios),
            "query_targets": self.query_targets,
            "modality_weights": None
            if self.modality_weights is None
            else [[name, w] for name, w in self.modality_weights],
        }

    @classmethod
    def from_json_value(cls, value: dict) -> RunConfig:
        if value.get("schema") != CONFIG_SCHEMA:
            raise InvalidConfig(f"unsupported config schema {value.get('schema')!r}")
        ds = value.get("dataset", {})
        weights = value.get("modality_weights")
        ratios = value.get("split", [0.6, 0.2, 0.2])
        if len(ratios) != 3:
            raise InvalidConfig("split must list three ratios")
        base = cls()
        return cls(
            seed=value.get("seed", base.seed),
            epochs=value.get("epochs", base.epochs),
            batch_size=value.get("batch_size", base.batch_size),
            lr=value.get("lr", base.lr),
            num_checkpoints=value.get("num_checkpoints", base.num_checkpoints),
            fixed_clock=value.get("fixed_clock", base.fixed_clock),
            hooks=value.get("hooks", base.hooks),
            run_id=value.get("run_id"),
            n_per_class=ds.get("n_per_class", base.n_per_class),
            classes=ds.get("classes", base.classes),
            dim=ds.get("dim", base.dim),
            separation=ds.get("separation", base.separation),
            split_ratios=tuple(float(r) for r in ratios),
            query_targets=value.get("query_targets", base.query_targets),
            modality_weights=None if weights is None else tuple((n, float(w)) for n, w in weights),
        )

    @classmethod
    def load(cls, path: Path | str) -> RunConfig:
        return cls.from_json_value(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(eq=False)
class RunArtifacts:
    run_id: str
    run_dir: Path
    config_path: Path
    index_path: Path
    trace_path: Path | None
    seals_path: Path | None
    ledger_path: Path | None
    checkpoints_path: Path | None
    subjects: tuple[tuple[str, str], ...]  # (raw_id, pseudonym hex)
    test_accuracy: float
    final_params: ModelParams
    result: TrainRunResult


def params_fingerprint(params: ModelParams) -> str:
    value = {"W": params.W.tolist(), "b": params.b.tolist()}
    return hashlib.sha256(canonical_dumps(value).encode("utf-8")).hexdigest()


def demo_run(config: RunConfig, out_root: Path | str) -> RunArtifacts:
    """Execute the full instrumented pipeline into a fresh run directory."""
    run_id = config.resolved_run_id()
    run_dir = Path(out_root) / run_id
    if run_dir.exists():
        raise StorageFailure(f"run directory already exists: {run_dir}")
    run_dir.mkdir(parents=True)
    config_path = run_dir / "config.json"
    config_path.write_text(canonical_dumps(config.to_json_value()) + "\n", encoding="utf-8")
    try:
        return _run(config, run_id, run_dir, config_path)
    except BaseException as exc:
        (run_dir / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise


def _run(config: RunConfig, run_id: str, run_dir: Path, config_path: Path) -> RunArtifacts:
    dataset = make_dataset(
        seed=config.seed,
        n_per_class=config.n_per_class,
        k=config.classes,
        d=config.dim,
        class_separation=config.separation,
    )

    store: TraceStore | None = None
    ledger: Ledger | None = None
    if config.hooks:
        store = TraceStore(run_id, run_dir, fixed_clock=config.fixed_clock)
        ledger = Ledger.create(run_dir / f"{run_id}.ledger.ndjson", fixed_clock=config.fixed_clock)

    assignment = split(dataset, config.split_ratios, config.seed + 1, store)
    if store is not None:
        store.record_training_action(
            "split_assigned",
            model_version=run_id,
            detail={
                "train": len(assignment.train),
                "validation": len(assignment.validation),
                "test": len(assignment.test),
            },
        )

    sealed_through = -1

    def commit_pending(_epoch: int | None = None) -> None:
        nonlocal sealed_through
        if store is None or ledger is None:
            return
        to_seq = store.next_seq - 1
        if to_seq <= sealed_through:
            return
        from_seq = sealed_through + 1
        leaves = store.seal_batch(from_seq, to_seq)
        ledger.commit(merkle.build(leaves).root, store.batch_id_for(from_seq, to_seq))
        sealed_through = to_seq

    train_config = TrainConfig(
        epochs=config.epochs,
        batch_size=config.batch_size,
        lr=config.lr,
        seed=config.seed + 2,
        num_checkpoints=config.num_checkpoints,
        model_version=run_id,
        modality_weights=config.modality_weights,
    )
    result = train(
        dataset,
        assignment,
        train_config,
        store,
        epoch_hook=commit_pending if store is not None else None,
    )

    checkpoints = result.selected_checkpoints()
    targets = [dataset.samples[i] for i in assignment.test[: config.query_targets]]
    if checkpoints and targets:
        cache = GradientCache()
        train_samples = [dataset.samples[i] for i in assignment.train]
        for target in targets:
            influence_profile(target, train_samples, checkpoints, store, cache)

    test_indices = set(assignment.test)
    correct = 0
    for i, sample in enumerate(dataset.samples):
        label = predict(result.final_params, sample, store, model_version=f"{run_id}@final")
        if i in test_indices and label == sample.label:
            correct += 1
    test_accuracy = correct / len(assignment.test)

    commit_pending()
    if store is not None:
        store.close()

    checkpoints_path = None
    if store is not None:
        checkpoints_path = run_dir / f"{run_id}.checkpoints.json"
        checkpoints_path.write_text(
            canonical_dumps(
                {
                    "run_id": run_id,
                    "selected": sorted(result.selected),
                    "val_losses": result.val_losses,
                    "checkpoints": [
                        {
                            "checkpoint_id": ck.checkpoint_id,
                            "epoch": ck.epoch,
                            "W": ck.params.W.tolist(),
                            "b": ck.params.b.tolist(),
                        }
                        for ck in checkpoints
                    ],
                }
            )
            + "\n",
            encoding="utf-8",
        )

    subjects = tuple((s.subject_raw_id, hash_id(s.subject_raw_id).hex) for s in dataset.samples)
    index_path = run_dir / "index.json"
    index_path.write_text(
        canonical_dumps(
            {
                "schema": CONFIG_SCHEMA,
                "run_id": run_id,
                "hooks": config.hooks,
                "fixed_clock": config.fixed_clock,
                "samples": len(dataset.samples),
                "classes": dataset.K,
                "dim": dataset.d,
                "subjects": [{"raw_id": raw, "pseudonym": hexid} for raw, hexid in subjects],
                "selected_checkpoints": sorted(result.selected),
                "test_accuracy": test_accuracy,
                "final_params_sha256": params_fingerprint(result.final_params),
                "batches_committed": 0 if ledger is None else len(ledger) - 1,
                "files": {
                    "trace": None if store is None else store.trace_path.name,
                    "seals": None if store is None else store.seals_path.name,
                    "ledger": None if ledger is None else ledger.path.name,
                    "checkpoints": None if checkpoints_path is None else checkpoints_path.name,
                },
            }
        )
        + "\n",
        encoding="utf-8",
    )

    return RunArtifacts(
        run_id=run_id,
        run_dir=run_dir,
        config_path=config_path,
        index_path=index_path,
        trace_path=None if store is None else store.trace_path,
        seals_path=None if store is None else store.seals_path,
        ledger_path=None if ledger is None else ledger.path,
        checkpoints_path=checkpoints_path,
        subjects=subjects,
        test_accuracy=test_accuracy,
        final_params=result.final_params,
        result=result,
    )


def find_run_id(run_dir: Path | str) -> str:
    """Recover the run id from a run directory (index file, else trace file name)."""
    run_dir = Path(run_dir)
    index_path = run_dir / "index.json"
    if index_path.exists():
        return json.loads(index_path.read_text(encoding="utf-8"))["run_id"]
    traces = sorted(run_dir.glob("*.trace.ndjson"))
    if not traces:
        raise StorageFailure(f"no run artifacts found in {run_dir}")
    return traces[0].name[: -len(".trace.ndjson")]


def open_run(run_dir: Path | str) -> tuple[TraceStore, Ledger]:
    """Open a completed run's store and ledger read-only."""
    run_dir = Path(run_dir)
    run_id = find_run_id(run_dir)
    store = TraceStore.open(run_dir, run_id)
    ledger = Ledger.load(run_dir / f"{run_id}.ledger.ndjson")
    return store, ledger
