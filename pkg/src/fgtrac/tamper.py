"""Mutation driver for negative tests: corrupt a copy of run artifacts.

Mutations never touch the original run directory; they operate on a copy so a
tampered run can be audited side by side with the intact one.
"""

from __future__ import annotations

import shutil
from dataclasses import dataclass
from pathlib import Path

from .errors import StorageFailure, TargetNotFound
from .pipeline import find_run_id

MODES = ("flip-bit", "delete-line", "reorder")


@dataclass(frozen=True)
class TamperReport:
    out_dir: Path
    file: str
    line: int
    mode: str
    description: str


def flip_bit(data: bytes, byte_index: int, bit_index: int) -> bytes:
    """Return ``data`` with one bit flipped."""
    mutated = bytearray(data)
    mutated[byte_index] ^= 1 << bit_index
    return bytes(mutated)


def _read_lines(path: Path) -> list[bytes]:
    lines = path.read_bytes().split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    return lines


def _write_lines(path: Path, lines: list[bytes]) -> None:
    path.write_bytes(b"\n".join(lines) + b"\n" if lines else b"")


def trace_file(run_dir: Path | str) -> Path:
    run_dir = Path(run_dir)
    return run_dir / f"{find_run_id(run_dir)}.trace.ndjson"


def ledger_file(run_dir: Path | str) -> Path:
    run_dir = Path(run_dir)
    return run_dir / f"{find_run_id(run_dir)}.ledger.ndjson"


def mutate_line(path: Path, line_no: int, mode: str) -> str:
    """Apply one mutation to a line of an NDJSON file; returns a description."""
    lines = _read_lines(path)
    if not (0 <= line_no < len(lines)):
        raise TargetNotFound(f"{path.name} has no line {line_no}")
    if mode == "flip-bit":
        target = lines[line_no]
        byte_index = len(target) // 2
        lines[line_no] = flip_bit(target, byte_index, 0)
        description = f"flipped bit 0 of byte {byte_index} in line {line_no}"
    elif mode == "delete-line":
        del lines[line_no]
        description = f"deleted line {line_no}"
    elif mode == "reorder":
        if line_no + 1 >= len(lines):
            raise TargetNotFound(f"{path.name} has no line {line_no + 1} to swap with")
        lines[line_no], lines[line_no + 1] = lines[line_no + 1], lines[line_no]
        description = f"swapped lines {line_no} and {line_no + 1}"
    else:
        raise ValueError(f"unknown tamper mode {mode!r} (expected one of {MODES})")
    _write_lines(path, lines)
    return description


def tamper_run(
    run_dir: Path | str,
    out_dir: Path | str,
    *,
    event_seq: int | None = None,
    block_index: int | None = None,
    mode: str = "flip-bit",
) -> TamperReport:
    """Copy a run directory and mutate one event line or one ledger block in the copy."""
    if (event_seq is None) == (block_index is None):
        raise ValueError("specify exactly one of event_seq or block_index")
    run_dir = Path(run_dir)
    out_dir = Path(out_dir)
    if out_dir.exists():
        raise StorageFailure(f"output directory already exists: {out_dir}")
    run_id = find_run_id(run_dir)
    shutil.copytree(run_dir, out_dir)

    if event_seq is not None:
        target = out_dir / f"{run_id}.trace.ndjson"
        line_no = event_seq
    else:
        target = out_dir / f"{run_id}.ledger.ndjson"
        line_no = block_index
    if not target.exists():
        raise TargetNotFound(f"{target.name} not found in {run_dir}")
    description = mutate_line(target, line_no, mode)
    return TamperReport(out_dir=out_dir, file=target.name, line=line_no, mode=mode, description=description)
