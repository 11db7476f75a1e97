"""Binary hash tree over byte-string leaves, with membership proofs.

Leaf and interior hashes are domain-separated (0x00 / 0x01 prefixes) so a leaf
can never be re-interpreted as a packed pair of child digests. A level with an
odd node count promotes its trailing digest unchanged to the next level;
nothing is duplicated, so two distinct leaf sequences cannot share a root by
padding. Proof steps carry the sibling digest together with the side it sits
on, which keeps verification independent of any tree-shape knowledge.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import EmptyLeafSet, IndexOutOfRange

DIGEST_LEN = 32
_LEAF_PREFIX = b"\x00"
_NODE_PREFIX = b"\x01"

SIDE_LEFT = "L"
SIDE_RIGHT = "R"


def leaf_hash(data: bytes) -> bytes:
    """Digest of a leaf: SHA-256 over 0x00 || data."""
    return hashlib.sha256(_LEAF_PREFIX + data).digest()


def node_hash(left: bytes, right: bytes) -> bytes:
    """Digest of an interior node: SHA-256 over 0x01 || left || right."""
    return hashlib.sha256(_NODE_PREFIX + left + right).digest()


@dataclass(frozen=True)
class ProofStep:
    sibling: bytes
    side: str  # SIDE_LEFT if the sibling is the left child, SIDE_RIGHT otherwise


@dataclass(frozen=True)
class MerkleProof:
    """Bottom-up sibling path for one leaf. Promotion levels contribute no step."""

    leaf_index: int
    path: tuple[ProofStep, ...]

    def to_json_value(self) -> dict:
        return {
            "leaf_index": self.leaf_index,
            "path": [{"sibling": step.sibling.hex(), "side": step.side} for step in self.path],
        }

    @classmethod
    def from_json_value(cls, value: Mapping) -> MerkleProof:
        return cls(
            leaf_index=value["leaf_index"],
            path=tuple(
                ProofStep(sibling=bytes.fromhex(step["sibling"]), side=step["side"])
                for step in value["path"]
            ),
        )


class MerkleTree:
    """Immutable tree; level 0 holds the leaf hashes, the last level the root."""

    def __init__(self, levels: list[list[bytes]]) -> None:
        self._levels = levels

    @property
    def levels(self) -> Sequence[Sequence[bytes]]:
        return self._levels

    @property
    def leaf_count(self) -> int:
        return len(self._levels[0])

    @property
    def root(self) -> bytes:
        return self._levels[-1][0]


def build(leaves: Sequence[bytes]) -> MerkleTree:
    """Build the tree for an ordered leaf sequence."""
    if len(leaves) == 0:
        raise EmptyLeafSet("cannot build a tree over zero leaves")
    level = [leaf_hash(leaf) for leaf in leaves]
    levels = [level]
    while len(level) > 1:
        nxt = [node_hash(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2 == 1:
            nxt.append(level[-1])
        level = nxt
        levels.append(level)
    return MerkleTree(levels)


def prove(tree: MerkleTree, leaf_index: int) -> MerkleProof:
    """Membership proof for the leaf at ``leaf_index``."""
    if not (0 <= leaf_index < tree.leaf_count):
        raise IndexOutOfRange(f"leaf index {leaf_index} outside [0, {tree.leaf_count})")
    path: list[ProofStep] = []
    index = leaf_index
    for level in tree.levels[:-1]:
        sibling_index = index ^ 1
        if sibling_index < len(level):
            side = SIDE_LEFT if sibling_index < index else SIDE_RIGHT
            path.append(ProofStep(sibling=level[sibling_index], side=side))
        # else: unpaired node, promoted unchanged — no step at this level
        index //= 2
    return MerkleProof(leaf_index=leaf_index, path=tuple(path))


def verify(leaf_data: bytes, proof: MerkleProof, root: bytes) -> bool:
    """Recompute the root from one leaf and its proof; never raises."""
    current = leaf_hash(leaf_data)
    for step in proof.path:
        if step.side == SIDE_LEFT:
            current = node_hash(step.sibling, current)
        elif step.side == SIDE_RIGHT:
            current = node_hash(current, step.sibling)
        else:
            return False
    return current == root
