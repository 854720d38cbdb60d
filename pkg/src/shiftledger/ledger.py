"""Append-only hash chain for sealed-report digests.

Each entry hashes a canonical encoding of its own fields plus the previous
entry's hash, so any later mutation of a stored entry is detectable by
recomputation.  The chain is a local tamper-evidence structure; the export
format lets third parties re-verify it independently.

Canonical entry encoding (the bytes that are hashed): the fields
``seq`` (decimal string), ``prev_hash``, ``payload_digest``, ``sealed_at``
(ISO-8601 UTC, ``YYYY-MM-DDTHH:MM:SSZ``) and ``signer_pseudonym``, each
UTF-8 encoded and prefixed with its 8-byte big-endian length, concatenated
in that order.  Hashes are SHA-256, hex encoded.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable

GENESIS_HASH = "0" * 64

_LINE_FIELDS = 6


class LedgerError(ValueError):
    pass


class TimestampRegression(LedgerError):
    """Appended entry is older than the chain head."""


class MalformedChainFile(LedgerError):
    """Chain export text cannot be parsed back into entries."""


def iso_seconds(value: datetime) -> str:
    value = value.astimezone(timezone.utc)
    if value.microsecond:
        raise LedgerError(f"sub-second timestamp not allowed: {value!r}")
    return value.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_iso_seconds(raw: str) -> datetime:
    return datetime.strptime(raw, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)


def digest_report(report_bytes: bytes) -> str:
    """SHA-256 hex digest of canonical report bytes."""
    return hashlib.sha256(report_bytes).hexdigest()


def _canonical_entry_bytes(
    seq: int, prev_hash: str, payload_digest: str, sealed_at: str, signer: str
) -> bytes:
    out = bytearray()
    for part in (str(seq), prev_hash, payload_digest, sealed_at, signer):
        raw = part.encode("utf-8")
        out += len(raw).to_bytes(8, "big")
        out += raw
    return bytes(out)


def compute_entry_hash(
    seq: int, prev_hash: str, payload_digest: str, sealed_at: str, signer: str
) -> str:
    return hashlib.sha256(
        _canonical_entry_bytes(seq, prev_hash, payload_digest, sealed_at, signer)
    ).hexdigest()


@dataclass(frozen=True)
class LedgerEntry:
    seq: int
    prev_hash: str
    payload_digest: str
    sealed_at: str
    signer_pseudonym: str
    entry_hash: str

    @property
    def sealed_at_time(self) -> datetime:
        return parse_iso_seconds(self.sealed_at)


class Chain:
    """In-memory hash chain; appends are strictly serialized by the caller."""

    def __init__(self, entries: Iterable[LedgerEntry] = ()) -> None:
        self.entries: list[LedgerEntry] = list(entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def head(self) -> LedgerEntry | None:
        return self.entries[-1] if self.entries else None

    def append(
        self, payload_digest: str, sealed_at: datetime | str, signer_pseudonym: str
    ) -> LedgerEntry:
        """Link a new entry onto the head; rejects timestamps moving backward."""
        at = sealed_at if isinstance(sealed_at, str) else iso_seconds(sealed_at)
        for fragment in (payload_digest, at, signer_pseudonym):
            if "," in fragment or "\n" in fragment or "\r" in fragment:
                raise LedgerError(f"field {fragment!r} contains reserved characters")
        head = self.head
        if head is not None and at < head.sealed_at:
            raise TimestampRegression(f"{at} is before head {head.sealed_at}")
        seq = len(self.entries)
        prev_hash = head.entry_hash if head is not None else GENESIS_HASH
        entry = LedgerEntry(
            seq=seq,
            prev_hash=prev_hash,
            payload_digest=payload_digest,
            sealed_at=at,
            signer_pseudonym=signer_pseudonym,
            entry_hash=compute_entry_hash(seq, prev_hash, payload_digest, at, signer_pseudonym),
        )
        self.entries.append(entry)
        return entry


def verify_chain(chain: Chain | Iterable[LedgerEntry]) -> int | None:
    """Recompute every link and hash; return the first broken index, else None."""
    entries = chain.entries if isinstance(chain, Chain) else list(chain)
    expected_prev = GENESIS_HASH
    previous_at: str | None = None
    for index, entry in enumerate(entries):
        recomputed = compute_entry_hash(
            entry.seq,
            entry.prev_hash,
            entry.payload_digest,
            entry.sealed_at,
            entry.signer_pseudonym,
        )
        if (
            entry.seq != index
            or entry.prev_hash != expected_prev
            or entry.entry_hash != recomputed
            or (previous_at is not None and entry.sealed_at < previous_at)
        ):
            return index
        expected_prev = entry.entry_hash
        previous_at = entry.sealed_at
    return None


def format_entry(entry: LedgerEntry) -> str:
    return ",".join(
        [
            str(entry.seq),
            entry.prev_hash,
            entry.payload_digest,
            entry.sealed_at,
            entry.signer_pseudonym,
            entry.entry_hash,
        ]
    )


def parse_entry(line: str) -> LedgerEntry:
    fields = line.split(",")
    if len(fields) != _LINE_FIELDS:
        raise MalformedChainFile(f"expected {_LINE_FIELDS} fields, got {len(fields)}")
    try:
        seq = int(fields[0])
    except ValueError:
        raise MalformedChainFile(f"bad sequence number {fields[0]!r}")
    return LedgerEntry(
        seq=seq,
        prev_hash=fields[1],
        payload_digest=fields[2],
        sealed_at=fields[3],
        signer_pseudonym=fields[4],
        entry_hash=fields[5],
    )


def export_chain(chain: Chain) -> str:
    """Newline-delimited export; round-trips bit-exactly through parse."""
    return "".join(format_entry(entry) + "\n" for entry in chain.entries)


def import_chain(text: str) -> Chain:
    entries = [parse_entry(line) for line in text.splitlines() if line]
    return Chain(entries)
