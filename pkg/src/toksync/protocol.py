"""Keyframe-delta streaming protocol: budget accounting, update selection, sender, receiver.

The sender is feedback-free.  It keeps an optimistic reference grid (what the
receiver would hold if every message were delivered) and either resets it with
a keyframe or patches it with a budget-limited list of (position, token)
updates ranked by embedding-space change magnitude.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .codebook import Codebook
from .grid import TokenGrid, hamming_drift

DEFAULT_HEADER_BYTES = 20
DEFAULT_UPDATE_BYTES = 4
DEFAULT_TOKEN_BITS = 13
DEFAULT_MAX_GAP = 30


@dataclass(frozen=True)
class BudgetModel:
    """Byte accounting for one message per timestep.

    A delta message spends ``header_bytes`` plus ``update_bytes`` per update,
    so its capacity is M = floor((B - header) / per-update).  A keyframe
    carries the whole grid at ``token_bits`` per token (rounded up to bytes)
    plus the same header; keyframes are exempt from the per-message budget.
    """

    payload_budget_bytes: int
    header_bytes: int = DEFAULT_HEADER_BYTES
    update_bytes: int = DEFAULT_UPDATE_BYTES
    token_bits: int = DEFAULT_TOKEN_BITS

    def __post_init__(self) -> None:
        if self.header_bytes < 0 or self.update_bytes < 1 or self.token_bits < 1:
            raise ValueError("header_bytes >= 0, update_bytes >= 1, token_bits >= 1 required")
        if self.payload_budget_bytes <= self.header_bytes:
            raise ValueError(
                f"payload budget {self.payload_budget_bytes} B does not exceed "
                f"header cost {self.header_bytes} B"
            )

    def keyframe_grid_bytes(self, n_positions: int) -> int:
        return math.ceil(n_positions * self.token_bits / 8)


def budget_capacity(bm: BudgetModel) -> int:
    """Updates per delta message: floor((B - header) / per-update). May be 0."""
    return (bm.payload_budget_bytes - bm.header_bytes) // bm.update_bytes


@dataclass(frozen=True)
class KeyframeMessage:
    t: int
    grid: TokenGrid


@dataclass(frozen=True)
class DeltaMessage:
    t: int
    updates: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        positions = [u for u, _ in self.updates]
        if len(set(positions)) != len(positions):
            raise ValueError("delta updates must have distinct positions")


Message = KeyframeMessage | DeltaMessage


@dataclass(frozen=True)
class PeriodicPolicy:
    """Keyframe whenever the gap since the last one reaches ``interval``."""

    interval: int

    def __post_init__(self) -> None:
        if self.interval < 1:
            raise ValueError(f"interval must be >= 1, got {self.interval}")


@dataclass(frozen=True)
class AdaptivePolicy:
    """Keyframe when reference drift exceeds ``tau_h`` or the gap hits ``max_gap``."""

    tau_h: float
    max_gap: int = DEFAULT_MAX_GAP

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau_h <= 1.0:
            raise ValueError(f"tau_h must be in [0, 1], got {self.tau_h}")
        if self.max_gap < 1:
            raise ValueError(f"max_gap must be >= 1, got {self.max_gap}")


KeyframePolicy = PeriodicPolicy | AdaptivePolicy


@dataclass(frozen=True)
class SenderState:
    """reference is the optimistic receiver estimate; None before the first step."""

    reference: TokenGrid | None
    last_kf: int
    t: int

    @classmethod
    def initial(cls) -> "SenderState":
        return cls(reference=None, last_kf=-1, t=-1)


@dataclass(frozen=True)
class ReceiverState:
    recon: TokenGrid | None
    t: int

    @classmethod
    def initial(cls) -> "ReceiverState":
        return cls(recon=None, t=-1)


def select_deltas(
    current: TokenGrid, reference: TokenGrid, cb: Codebook, max_updates: int
) -> list[tuple[int, int]]:
    """Pick up to ``max_updates`` changed positions, largest embedding change first.

    Candidates are positions where ``current`` and ``reference`` disagree,
    scored by cosine change magnitude between the two tokens' embeddings.
    Equal scores fall back to ascending position index so the ordering is
    total and reproducible.
    """
    if not current.same_shape(reference):
        raise ValueError("grid shapes differ")
    if max_updates < 0:
        raise ValueError(f"max_updates must be >= 0, got {max_updates}")
    positions = np.flatnonzero(current.tokens != reference.tokens)
    if positions.size == 0 or max_updates == 0:
        return []
    scores = cb.change_magnitudes(current.tokens[positions], reference.tokens[positions])
    # lexsort: last key is primary. -scores ascending == scores descending.
    order = np.lexsort((positions, -scores))[:max_updates]
    return [(int(positions[i]), int(current.tokens[positions[i]])) for i in order]


def _wants_keyframe(
    policy: KeyframePolicy, gap: int, current: TokenGrid, reference: TokenGrid
) -> bool:
    if isinstance(policy, PeriodicPolicy):
        return gap >= policy.interval
    if gap >= policy.max_gap:
        return True
    return hamming_drift(current, reference) > policy.tau_h


def sender_step(
    st: SenderState,
    z_t: TokenGrid,
    policy: KeyframePolicy,
    bm: BudgetModel,
    cb: Codebook,
) -> tuple[Message, SenderState]:
    """Process the grid for timestep st.t + 1; returns the message and new state.

    The first call always emits a keyframe.  After a delta the reference is
    patched with the transmitted updates only (optimistic: assumes delivery,
    never hears about drops).
    """
    t = st.t + 1
    if st.reference is None or _wants_keyframe(policy, t - st.last_kf, z_t, st.reference):
        msg: Message = KeyframeMessage(t=t, grid=z_t)
        return msg, SenderState(reference=z_t, last_kf=t, t=t)
    updates = select_deltas(z_t, st.reference, cb, budget_capacity(bm))
    msg = DeltaMessage(t=t, updates=tuple(updates))
    return msg, SenderState(reference=st.reference.with_updates(updates), last_kf=st.last_kf, t=t)


def message_bytes(msg: Message, bm: BudgetModel) -> int:
    """Modeled transmission cost; this, not the wire encoding, defines bitrates."""
    if isinstance(msg, KeyframeMessage):
        return bm.header_bytes + bm.keyframe_grid_bytes(msg.grid.n_positions)
    return bm.header_bytes + bm.update_bytes * len(msg.updates)


def receiver_apply(rx: ReceiverState, msg: Message | None) -> ReceiverState:
    """Advance the receiver one step; ``msg=None`` means the message was dropped."""
    t = rx.t + 1
    if msg is None:
        return ReceiverState(recon=rx.recon, t=t)
    if msg.t != t:
        raise ValueError(f"message for timestep {msg.t}, receiver expected {t}")
    if isinstance(msg, KeyframeMessage):
        return ReceiverState(recon=msg.grid, t=t)
    if rx.recon is None:
        raise ValueError("delta received before any keyframe")
    return ReceiverState(recon=rx.recon.with_updates(msg.updates), t=t)


_WIRE_HEAD = struct.Struct("<BI")
_TYPE_KEYFRAME = 0
_TYPE_DELTA = 1


def encode_message(msg: Message) -> bytes:
    """Wire form for interop tests; bandwidth metrics use message_bytes instead."""
    if isinstance(msg, KeyframeMessage):
        if msg.grid.tokens.size and int(msg.grid.tokens.max()) >= 1 << 16:
            raise ValueError("wire format stores 16-bit tokens")
        head = _WIRE_HEAD.pack(_TYPE_KEYFRAME, msg.t)
        return head + msg.grid.tokens.astype("<u2").tobytes()
    if len(msg.updates) >= 1 << 16:
        raise ValueError("wire format stores a 16-bit update count")
    head = _WIRE_HEAD.pack(_TYPE_DELTA, msg.t)
    body = b"".join(struct.pack("<HH", pos, tok) for pos, tok in msg.updates)
    return head + struct.pack("<H", len(msg.updates)) + body


def decode_message(data: bytes, height: int, width: int) -> Message:
    """Inverse of encode_message; grid dimensions come from stream context."""
    if len(data) < _WIRE_HEAD.size:
        raise ValueError(f"message truncated: {len(data)} bytes, header needs {_WIRE_HEAD.size}")
    kind, t = _WIRE_HEAD.unpack_from(data, 0)
    body = data[_WIRE_HEAD.size :]
    if kind == _TYPE_KEYFRAME:
        n_pos = height * width
        if len(body) != 2 * n_pos:
            raise ValueError(f"keyframe body is {len(body)} bytes, expected {2 * n_pos}")
        tokens = np.frombuffer(body, dtype="<u2").astype(np.int64)
        return KeyframeMessage(t=t, grid=TokenGrid(height, width, tokens))
    if kind == _TYPE_DELTA:
        if len(body) < 2:
            raise ValueError("delta body missing update count")
        (count,) = struct.unpack_from("<H", body, 0)
        if len(body) != 2 + 4 * count:
            raise ValueError(f"delta body is {len(body)} bytes, expected {2 + 4 * count}")
        pairs = struct.iter_unpack("<HH", body[2:])
        return DeltaMessage(t=t, updates=tuple((pos, tok) for pos, tok in pairs))
    raise ValueError(f"unknown message type byte {kind}")
