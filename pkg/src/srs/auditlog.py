"""Append-only, hash-chained audit log.

One event per line on disk; each line is the canonical JSON of
``{"hash", "kind", "payload", "prev", "seq", "tick"}``. The chain rule is

    this_hash = SHA-256( prev_hash_bytes || canonical({kind, payload, tick}) || ascii(seq) )

with a 32-zero-byte genesis ``prev``. ``kind`` and ``tick`` sit inside the
hashed envelope so a flip of any stored byte of any event is detectable.

Verification walks the file and reports the first sequence number at which
any check fails (parse, seq continuity, chain linkage, or hash recompute);
a clean walk is ``Valid``. Every 1000 events an optional side file
(``<path>.heads``) receives a chain-head checkpoint as a cheap second
verification channel.
"""

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

from .canonical import canonical_json, sanitize
from .errors import StorageFailure, TamperedLog

GENESIS = b"\x00" * 32
CHECKPOINT_EVERY = 1000

EVENT_KINDS = frozenset({
    "SignalSample",
    "Breach",
    "ProposalCreated",
    "GovernanceDecision",
    "InterventionApplied",
    "ConstraintRevision",
    "RollbackApplied",
    "Error",
    "InsufficientData",
    "HarmReport",
})


@dataclass(frozen=True)
class AuditEvent:
    seq: int
    tick: int
    kind: str
    payload: dict
    prev_hash: bytes
    this_hash: bytes

    def line(self) -> str:
        return canonical_json({
            "hash": self.this_hash.hex(),
            "kind": self.kind,
            "payload": self.payload,
            "prev": self.prev_hash.hex(),
            "seq": self.seq,
            "tick": self.tick,
        })


@dataclass(frozen=True)
class VerifyResult:
    valid: bool
    tampered_at: Optional[int] = None  # first bad seq (file line index)

    def __bool__(self):
        return self.valid


def _chain_hash(prev_hash: bytes, kind: str, tick: int, payload: dict, seq: int) -> bytes:
    body = canonical_json({"kind": kind, "payload": payload, "tick": tick})
    return hashlib.sha256(prev_hash + body.encode("utf-8") + str(seq).encode("ascii")).digest()


class AuditLog:
    """Single-writer append handle over one log file."""

    def __init__(self, path, sync: bool = False):
        self.path = Path(path)
        self._sync = sync
        self._fh = open(self.path, "a", encoding="utf-8")
        self._heads_fh = None
        self._seq = 0
        self._head = GENESIS
        if self.path.stat().st_size:
            # resume an existing chain (replay for head + count)
            last = None
            for last in iter_events(self.path):
                pass
            if last is not None:
                self._seq = last.seq + 1
                self._head = last.this_hash

    # -- writing ---------------------------------------------------------

    def append(self, kind: str, tick: int, payload: dict) -> AuditEvent:
        if self._fh is None:
            raise StorageFailure("append on closed audit log")
        if kind not in EVENT_KINDS:
            raise StorageFailure(f"unknown event kind {kind!r}")
        payload = sanitize(payload)
        this = _chain_hash(self._head, kind, int(tick), payload, self._seq)
        event = AuditEvent(self._seq, int(tick), kind, payload, self._head, this)
        try:
            self._fh.write(event.line() + "\n")
            self._fh.flush()
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc
        if self._sync:
            os.fsync(self._fh.fileno())
        self._seq += 1
        self._head = this
        if self._seq % CHECKPOINT_EVERY == 0:
            self._checkpoint()
        return event

    def _checkpoint(self):
        if self._heads_fh is None:
            self._heads_fh = open(str(self.path) + ".heads", "a", encoding="utf-8")
        self._heads_fh.write(f"{self._seq - 1} {self._head.hex()}\n")
        self._heads_fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._fh.close()
            self._fh = None
        if self._heads_fh is not None:
            self._heads_fh.close()
            self._heads_fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- reading ---------------------------------------------------------

    @property
    def head(self) -> bytes:
        return self._head

    @property
    def next_seq(self) -> int:
        return self._seq


def _parse_line(line: str, index: int):
    """Parse one stored line back into an AuditEvent, or None if mangled."""
    import json

    try:
        rec = json.loads(line)
        seq = rec["seq"]
        tick = rec["tick"]
        kind = rec["kind"]
        payload = rec["payload"]
        prev = bytes.fromhex(rec["prev"])
        this = bytes.fromhex(rec["hash"])
    except (ValueError, KeyError, TypeError):
        return None
    if not isinstance(seq, int) or not isinstance(tick, int) or not isinstance(kind, str):
        return None
    if len(prev) != 32 or len(this) != 32 or not isinstance(payload, dict):
        return None
    return AuditEvent(seq, tick, kind, payload, prev, this)


def iter_events(path) -> Iterator[AuditEvent]:
    """Yield stored events without verification (raises on mangled lines)."""
    with open(path, encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            event = _parse_line(line.rstrip("\n"), index)
            if event is None:
                raise StorageFailure(f"unparseable audit line {index}")
            yield event


def verify(path, heads_path=None) -> VerifyResult:
    """Recompute the full chain; report the first mismatching seq if any."""
    checkpoints = {}
    heads_path = heads_path or (str(path) + ".heads")
    if os.path.exists(heads_path):
        with open(heads_path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.split()
                if len(parts) == 2:
                    try:
                        checkpoints[int(parts[0])] = parts[1]
                    except ValueError:
                        pass
    prev = GENESIS
    index = -1
    # errors="replace": a flip that breaks UTF-8 must read as a mangled line
    # (detected below), not crash verification
    with open(path, encoding="utf-8", errors="replace") as fh:
        for index, line in enumerate(fh):
            event = _parse_line(line.rstrip("\n"), index)
            if event is None or event.seq != index or event.prev_hash != prev:
                return VerifyResult(False, index)
            if _chain_hash(prev, event.kind, event.tick, event.payload, event.seq) != event.this_hash:
                return VerifyResult(False, index)
            if index in checkpoints and checkpoints[index] != event.this_hash.hex():
                return VerifyResult(False, index)
            prev = event.this_hash
    return VerifyResult(True)


def replay(path, kinds=None, tick_range=None) -> list:
    """Ordered events matching the filter; requires a clean chain."""
    result = verify(path)
    if not result:
        raise TamperedLog(result.tampered_at)
    if isinstance(kinds, str):
        kinds = {kinds}
    out = []
    for event in iter_events(path):
        if kinds is not None and event.kind not in kinds:
            continue
        if tick_range is not None and not (tick_range[0] <= event.tick <= tick_range[1]):
            continue
        out.append(event)
    return out


def chain_head(path) -> bytes:
    """Hash of the last event (GENESIS for an empty log); no verification."""
    head = GENESIS
    for event in iter_events(path):
        head = event.this_hash
    return head
