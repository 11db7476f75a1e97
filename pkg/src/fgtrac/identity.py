"""Pseudonymous identity derivation and audit access tokens.

Raw subject identifiers enter the system exactly once, at ingestion, and are
replaced everywhere downstream by their SHA-256 digest. Audit access is gated
by a keyed digest of the pseudonym, so no token database is needed: anyone
holding the deployment secret can re-derive and check a token.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from .errors import EmptySecret

# Separator between secret and subject in the token preimage, so that
# (secret, subject) pairs cannot collide by boundary shifting.
_TOKEN_SEP = b"\x1f"


@dataclass(frozen=True)
class PseudonymousId:
    """32-byte digest standing in for a raw subject identifier."""

    digest: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.digest, bytes) or len(self.digest) != 32:
            raise ValueError("pseudonymous id must be exactly 32 bytes")

    @property
    def hex(self) -> str:
        """Lowercase 64-character hex rendering, as used in all files and CLI output."""
        return self.digest.hex()

    @classmethod
    def from_hex(cls, text: str) -> PseudonymousId:
        return cls(bytes.fromhex(text))

    def __str__(self) -> str:
        return self.hex


@dataclass(frozen=True)
class AccessToken:
    """Deterministic per-subject audit credential."""

    token: bytes
    subject: PseudonymousId

    @property
    def hex(self) -> str:
        return self.token.hex()


def hash_id(user_id: str) -> PseudonymousId:
    """Map a raw identifier to its pseudonym.

    SHA-256 over the exact UTF-8 bytes, no normalization: normalizing would
    silently alias distinct identities. The empty string is a valid input.
    """
    return PseudonymousId(hashlib.sha256(user_id.encode("utf-8")).digest())


def issue_token(secret: bytes, subject: PseudonymousId) -> AccessToken:
    """Derive the audit token for a subject under a deployment secret."""
    if not secret:
        raise EmptySecret("token secret must be non-empty")
    digest = hashlib.sha256(secret + _TOKEN_SEP + subject.digest).digest()
    return AccessToken(token=digest, subject=subject)


def check_token(secret: bytes, subject: PseudonymousId, presented: AccessToken) -> bool:
    """Constant-time check of a presented token against the derivable one."""
    if not secret:
        return False
    expected = issue_token(secret, subject)
    return hmac.compare_digest(expected.token, presented.token)
