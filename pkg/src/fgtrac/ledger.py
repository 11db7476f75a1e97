"""Hash-chained commitment ledger backed by a newline-delimited JSON file.

Each block stores one Merkle root under a batch id, the previous block's hash,
and its own hash over the canonical serialization of everything else. The
chain is append-only by construction: the API exposes no mutation, and any
on-disk rewrite breaks either a recomputed block hash or a linkage, which
``verify_chain`` reports as the smallest violating index. A block's byte size
is independent of how many leaves its root commits.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import StorageFailure, UnknownBatch
from .tracelog import canonical_dumps

ZERO_DIGEST = bytes(32)
GENESIS_BATCH_ID = "genesis"


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    merkle_root: bytes
    batch_id: str
    timestamp_ms: int
    block_hash: bytes

    def to_json_value(self) -> dict:
        return {
            "index": self.index,
            "prev_hash": self.prev_hash.hex(),
            "merkle_root": self.merkle_root.hex(),
            "batch_id": self.batch_id,
            "timestamp_ms": self.timestamp_ms,
            "block_hash": self.block_hash.hex(),
        }

    def serialize(self) -> bytes:
        return canonical_dumps(self.to_json_value()).encode("utf-8")


def _hash_block(index: int, prev_hash: bytes, merkle_root: bytes, batch_id: str, timestamp_ms: int) -> bytes:
    # block_hash is excluded from its own preimage.
    preimage = canonical_dumps(
        {
            "index": index,
            "prev_hash": prev_hash.hex(),
            "merkle_root": merkle_root.hex(),
            "batch_id": batch_id,
            "timestamp_ms": timestamp_ms,
        }
    ).encode("utf-8")
    return hashlib.sha256(preimage).digest()


def make_block(index: int, prev_hash: bytes, merkle_root: bytes, batch_id: str, timestamp_ms: int) -> Block:
    return Block(
        index=index,
        prev_hash=prev_hash,
        merkle_root=merkle_root,
        batch_id=batch_id,
        timestamp_ms=timestamp_ms,
        block_hash=_hash_block(index, prev_hash, merkle_root, batch_id, timestamp_ms),
    )


def genesis(timestamp_ms: int = 0) -> Block:
    """Chain bootstrap block: all-zero prev hash and root, batch id "genesis"."""
    return make_block(0, ZERO_DIGEST, ZERO_DIGEST, GENESIS_BATCH_ID, timestamp_ms)


def _parse_block(line: bytes) -> Block:
    value = json.loads(line)
    return Block(
        index=value["index"],
        prev_hash=bytes.fromhex(value["prev_hash"]),
        merkle_root=bytes.fromhex(value["merkle_root"]),
        batch_id=value["batch_id"],
        timestamp_ms=value["timestamp_ms"],
        block_hash=bytes.fromhex(value["block_hash"]),
    )


class Ledger:
    """Local chain of commitments, persisted one canonical-JSON block per line."""

    def __init__(self, path: Path | None = None, fixed_clock: bool = False) -> None:
        self.path = None if path is None else Path(path)
        self.fixed_clock = fixed_clock
        self._blocks: list[Block | None] = []

    @classmethod
    def create(cls, path: Path | str | None = None, fixed_clock: bool = False) -> Ledger:
        ledger = cls(None if path is None else Path(path), fixed_clock=fixed_clock)
        ts = 0 if fixed_clock else int(time.time() * 1000)
        ledger._append(genesis(ts))
        return ledger

    @classmethod
    def load(cls, path: Path | str) -> Ledger:
        """Read a persisted chain; unparseable lines load as None and fail verification."""
        ledger = cls(Path(path))
        data = ledger.path.read_bytes()
        lines = data.split(b"\n")
        if lines and lines[-1] == b"":
            lines.pop()
        for line in lines:
            try:
                ledger._blocks.append(_parse_block(line))
            except (KeyError, TypeError, ValueError):
                ledger._blocks.append(None)
        return ledger

    @property
    def blocks(self) -> Sequence[Block | None]:
        return self._blocks

    def __len__(self) -> int:
        return len(self._blocks)

    def _append(self, block: Block) -> None:
        if self.path is not None:
            try:
                with open(self.path, "ab") as fh:
                    fh.write(block.serialize() + b"\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
        self._blocks.append(block)

    def now_ms(self) -> int:
        if self.fixed_clock:
            return len(self._blocks)
        return int(time.time() * 1000)

    def commit(self, root: bytes, batch_id: str) -> Block:
        """Append a block committing ``root`` under ``batch_id``; persisted before return."""
        if not self._blocks:
            raise StorageFailure("ledger has no genesis block")
        last = self._blocks[-1]
        if last is None:
            raise StorageFailure("ledger tail is unreadable")
        block = make_block(last.index + 1, last.block_hash, root, batch_id, self.now_ms())
        self._append(block)
        return block

    def verify_chain(self) -> int | None:
        """Recompute every block hash and linkage; None if intact, else the first bad index."""
        for i, block in enumerate(self._blocks):
            if block is None:
                return i
            if block.index != i:
                return i
            expected_prev = ZERO_DIGEST if i == 0 else self._blocks[i - 1].block_hash
            if block.prev_hash != expected_prev:
                return i
            recomputed = _hash_block(
                block.index, block.prev_hash, block.merkle_root, block.batch_id, block.timestamp_ms
            )
            if recomputed != block.block_hash:
                return i
        return None

    def latest_root_for(self, batch_id: str) -> bytes:
        """Committed root for a batch id (latest block wins if re-used)."""
        for block in reversed(self._blocks):
            if block is not None and block.batch_id == batch_id:
                return block.merkle_root
        raise UnknownBatch(f"no committed block for batch {batch_id!r}")
