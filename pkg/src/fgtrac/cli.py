"""Command-line entry point.

Subcommands, one per capability: demo-run, audit, verify-ledger, tamper,
export-report. The token secret comes from the FGTRAC_SECRET environment
variable; a documented demo default applies when it is unset.

Audit exit codes: 0 report released, 2 tampering detected, 3 authorization
denied, 4 unknown subject. Everything else uses 0 for success and 1 for
usage or I/O errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .audit import AuditReport, AuthorizationDenied, TamperingDetected, UnknownSubject, audit, render_report
from .errors import FGTracError
from .identity import AccessToken, PseudonymousId, issue_token
from .ledger import Ledger
from .pipeline import RunConfig, demo_run, open_run
from .tamper import MODES, tamper_run

DEFAULT_SECRET = "fgtrac-demo-secret"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_TAMPERED = 2
EXIT_DENIED = 3
EXIT_UNKNOWN_SUBJECT = 4


def _secret() -> bytes:
    return os.environ.get("FGTRAC_SECRET", DEFAULT_SECRET).encode("utf-8")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fgtrac", description="Verifiable sample-level training traceability")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("demo-run", help="run the instrumented demo pipeline")
    p_run.add_argument("--config", type=Path, default=None, help="JSON run config (defaults apply if omitted)")
    p_run.add_argument("--out", type=Path, default=Path("runs"), help="directory to create the run under")

    p_audit = sub.add_parser("audit", help="verify and print a subject's trace")
    p_audit.add_argument("--run", type=Path, required=True, help="run directory")
    p_audit.add_argument("--subject", required=True, help="64-hex pseudonymous id")
    p_audit.add_argument("--token", required=True, help="64-hex access token")
    p_audit.add_argument("--format", choices=("text", "json"), default="text")

    p_verify = sub.add_parser("verify-ledger", help="check the hash chain of a ledger")
    p_verify.add_argument("path", type=Path, help="ledger file or run directory")

    p_tamper = sub.add_parser("tamper", help="mutate a copy of run artifacts (negative testing)")
    p_tamper.add_argument("run", type=Path, help="run directory")
    p_tamper.add_argument("--event", type=int, default=None, help="event seq to mutate")
    p_tamper.add_argument("--block", type=int, default=None, help="ledger block index to mutate")
    p_tamper.add_argument("--mode", choices=MODES, default="flip-bit")
    p_tamper.add_argument("--out", type=Path, required=True, help="directory for the mutated copy")

    p_export = sub.add_parser("export-report", help="audit and write the report to a file")
    p_export.add_argument("--run", type=Path, required=True)
    p_export.add_argument("--subject", required=True)
    p_export.add_argument("--token", required=True)
    p_export.add_argument("--format", choices=("text", "json"), default="json")
    p_export.add_argument("--out", type=Path, required=True)

    return parser


def _cmd_demo_run(args: argparse.Namespace) -> int:
    config = RunConfig() if args.config is None else RunConfig.load(args.config)
    artifacts = demo_run(config, args.out)
    secret = _secret()
    print(f"run_id: {artifacts.run_id}")
    print(f"run_dir: {artifacts.run_dir}")
    print(f"test_accuracy: {artifacts.test_accuracy:.4f}")
    print("subjects (raw_id pseudonym token):")
    for raw_id, pseudonym in artifacts.subjects:
        token = issue_token(secret, PseudonymousId.from_hex(pseudonym))
        print(f"  {raw_id} {pseudonym} {token.hex}")
    return EXIT_OK


def _parse_subject(text: str) -> PseudonymousId:
    try:
        return PseudonymousId.from_hex(text)
    except ValueError as exc:
        raise FGTracError(f"subject must be 64 hex characters: {exc}") from exc


def _run_audit(args: argparse.Namespace) -> tuple[int, AuditReport | None, str]:
    subject = _parse_subject(args.subject)
    try:
        token = AccessToken(token=bytes.fromhex(args.token), subject=subject)
    except ValueError:
        # A malformed token cannot match any issued token.
        token = AccessToken(token=b"", subject=subject)
    store, ledger = open_run(args.run)
    outcome = audit(subject, token, store, ledger, _secret())
    if isinstance(outcome, AuditReport):
        return EXIT_OK, outcome, ""
    if isinstance(outcome, TamperingDetected):
        where = outcome.batch_id if outcome.batch_id is not None else "<unlocated>"
        seq = "" if outcome.seq is None else f", event seq {outcome.seq}"
        return EXIT_TAMPERED, None, f"TamperingDetected: {outcome.reason} (batch {where}{seq})"
    if isinstance(outcome, AuthorizationDenied):
        return EXIT_DENIED, None, "AuthorizationDenied"
    if isinstance(outcome, UnknownSubject):
        return EXIT_UNKNOWN_SUBJECT, None, "UnknownSubject"
    raise AssertionError(f"unhandled outcome {outcome!r}")


def _cmd_audit(args: argparse.Namespace) -> int:
    code, report, message = _run_audit(args)
    if report is not None:
        sys.stdout.buffer.write(render_report(report, args.format))
    else:
        print(message, file=sys.stderr)
    return code


def _cmd_export_report(args: argparse.Namespace) -> int:
    code, report, message = _run_audit(args)
    if report is not None:
        args.out.write_bytes(render_report(report, args.format))
        print(f"wrote {args.out}")
    else:
        print(message, file=sys.stderr)
    return code


def _cmd_verify_ledger(args: argparse.Namespace) -> int:
    path = args.path
    if path.is_dir():
        candidates = sorted(path.glob("*.ledger.ndjson"))
        if not candidates:
            raise FGTracError(f"no ledger file in {path}")
        path = candidates[0]
    ledger = Ledger.load(path)
    broken = ledger.verify_chain()
    if broken is None:
        print(f"ledger OK ({len(ledger)} blocks)")
        return EXIT_OK
    print(f"ledger broken at block {broken}")
    return EXIT_ERROR


def _cmd_tamper(args: argparse.Namespace) -> int:
    report = tamper_run(
        args.run,
        args.out,
        event_seq=args.event,
        block_index=args.block,
        mode=args.mode,
    )
    print(f"{report.file}: {report.description}")
    print(f"mutated copy at {report.out_dir}")
    return EXIT_OK


_COMMANDS = {
    "demo-run": _cmd_demo_run,
    "audit": _cmd_audit,
    "verify-ledger": _cmd_verify_ledger,
    "tamper": _cmd_tamper,
    "export-report": _cmd_export_report,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (FGTracError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
