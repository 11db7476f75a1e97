"""fgtrac: verifiable sample-level traceability for ML training pipelines.

Training runs log per-sample lifecycle events to an append-only store, seal
them in batches under Merkle roots committed to a hash-chained ledger, and
answer audit queries with membership proofs that anyone can re-verify.
"""

from .audit import (
    AuditOutcome,
    AuditReport,
    AuthorizationDenied,
    TamperingDetected,
    UnknownSubject,
    audit,
    render_report,
)
from .identity import AccessToken, PseudonymousId, check_token, hash_id, issue_token
from .influence import (
    ContributionSummary,
    GradientCache,
    InfluenceRecord,
    grad_loss,
    influence_cp,
    influence_profile,
    summarize,
)
from .ledger import Block, Ledger, genesis
from .pipeline import RunArtifacts, RunConfig, demo_run, open_run
from .tracelog import TraceEvent, TraceStore, canonical_serialize, parse_event
from .trainer import (
    Checkpoint,
    Dataset,
    ModelParams,
    Sample,
    TrainConfig,
    TrainRunResult,
    forward_loss,
    make_dataset,
    predict,
    select_checkpoints,
    split,
    train,
    validation_loss,
)

__version__ = "0.1.0"

__all__ = [
    "AccessToken",
    "AuditOutcome",
    "AuditReport",
    "AuthorizationDenied",
    "Block",
    "Checkpoint",
    "ContributionSummary",
    "Dataset",
    "GradientCache",
    "InfluenceRecord",
    "Ledger",
    "ModelParams",
    "PseudonymousId",
    "RunArtifacts",
    "RunConfig",
    "Sample",
    "TamperingDetected",
    "TraceEvent",
    "TraceStore",
    "TrainConfig",
    "TrainRunResult",
    "UnknownSubject",
    "audit",
    "canonical_serialize",
    "check_token",
    "demo_run",
    "forward_loss",
    "genesis",
    "grad_loss",
    "hash_id",
    "influence_cp",
    "influence_profile",
    "issue_token",
    "make_dataset",
    "open_run",
    "parse_event",
    "predict",
    "render_report",
    "select_checkpoints",
    "split",
    "summarize",
    "train",
    "validation_loss",
    "__version__",
]
