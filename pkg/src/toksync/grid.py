"""Token grids, clips, and the fidelity metrics computed over them.

A token grid is one timestep of world-model state: a flat, row-major array
of discrete token IDs over an H x W spatial layout.  All types here are
immutable after construction and all operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .codebook import Codebook

DEFAULT_HEIGHT = 18
DEFAULT_WIDTH = 32


@dataclass(frozen=True)
class TokenGrid:
    """One timestep of token state: ``height * width`` token IDs, row-major."""

    height: int
    width: int
    tokens: np.ndarray

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError(f"grid dimensions must be positive, got {self.height}x{self.width}")
        tokens = np.ascontiguousarray(self.tokens, dtype=np.int64)
        if tokens.ndim != 1 or tokens.size != self.height * self.width:
            raise ValueError(
                f"token array has {tokens.size} entries, expected "
                f"{self.height}x{self.width}={self.height * self.width}"
            )
        if tokens.size and tokens.min() < 0:
            raise ValueError("token IDs must be non-negative")
        tokens.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)

    @property
    def n_positions(self) -> int:
        return self.height * self.width

    def same_shape(self, other: TokenGrid) -> bool:
        return self.height == other.height and self.width == other.width

    def with_updates(self, updates: Iterable[tuple[int, int]]) -> TokenGrid:
        """Copy of this grid with (position, token) updates applied."""
        tokens = self.tokens.copy()
        for pos, tok in updates:
            if not 0 <= pos < tokens.size:
                raise IndexError(f"update position {pos} out of range [0, {tokens.size})")
            tokens[pos] = tok
        return TokenGrid(self.height, self.width, tokens)


@dataclass(frozen=True)
class Clip:
    """A time-ordered sequence of token grids sampled at a fixed rate."""

    grids: tuple[TokenGrid, ...]
    rate_hz: float = 10.0

    def __post_init__(self) -> None:
        if not self.grids:
            raise ValueError("clip must contain at least one grid")
        if self.rate_hz <= 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        first = self.grids[0]
        for g in self.grids[1:]:
            if not g.same_shape(first):
                raise ValueError("all grids in a clip must share the same dimensions")
        object.__setattr__(self, "grids", tuple(self.grids))

    @classmethod
    def from_matrix(cls, tokens: np.ndarray, height: int, width: int, rate_hz: float = 10.0) -> Clip:
        """Build a clip from a (T, height*width) token matrix without copying rows."""
        tokens = np.ascontiguousarray(tokens, dtype=np.int64)
        if tokens.ndim != 2 or tokens.shape[1] != height * width:
            raise ValueError(f"expected (T, {height * width}) matrix, got {tokens.shape}")
        grids = tuple(TokenGrid(height, width, row) for row in tokens)
        return cls(grids=grids, rate_hz=rate_hz)

    @cached_property
    def token_matrix(self) -> np.ndarray:
        """(T, n_positions) view of the clip, read-only."""
        mat = np.stack([g.tokens for g in self.grids])
        mat.setflags(write=False)
        return mat

    @property
    def n_steps(self) -> int:
        return len(self.grids)

    @property
    def height(self) -> int:
        return self.grids[0].height

    @property
    def width(self) -> int:
        return self.grids[0].width

    @property
    def n_positions(self) -> int:
        return self.grids[0].n_positions

    def duration_s(self) -> float:
        return self.n_steps / self.rate_hz


@dataclass(frozen=True)
class DynamicMask:
    """Per-position flags marking where a grid changed relative to the previous one."""

    flags: np.ndarray

    def __post_init__(self) -> None:
        flags = np.ascontiguousarray(self.flags, dtype=bool)
        flags.setflags(write=False)
        object.__setattr__(self, "flags", flags)

    @property
    def n_dynamic(self) -> int:
        return int(np.count_nonzero(self.flags))


def _check_same_shape(a: TokenGrid, b: TokenGrid) -> None:
    if not a.same_shape(b):
        raise ValueError(
            f"grid dimensions differ: {a.height}x{a.width} vs {b.height}x{b.width}"
        )


def hamming_drift(current: TokenGrid, reference: TokenGrid) -> float:
    """Fraction of positions where the two grids disagree."""
    _check_same_shape(current, reference)
    return int(np.count_nonzero(current.tokens != reference.tokens)) / current.n_positions


def dynamic_mask(curr: TokenGrid, prev: TokenGrid) -> DynamicMask:
    """Mask of positions whose token changed from ``prev`` to ``curr``."""
    _check_same_shape(curr, prev)
    return DynamicMask(flags=curr.tokens != prev.tokens)


def _check_aligned(truth: Clip, recon: Clip) -> None:
    if truth.n_steps != recon.n_steps:
        raise ValueError(f"clip lengths differ: {truth.n_steps} vs {recon.n_steps}")
    _check_same_shape(truth.grids[0], recon.grids[0])


def mismatch_rate(truth: Clip, recon: Clip) -> float:
    """Mean disagreement over all (timestep, position) pairs."""
    _check_aligned(truth, recon)
    diff = int(np.count_nonzero(truth.token_matrix != recon.token_matrix))
    return diff / (truth.n_steps * truth.n_positions)


def dyn_distortion_sums(truth: Clip, recon: Clip, codebook: "Codebook") -> tuple[float, int]:
    """Sum of embedding cosine distances over dynamic positions, and their count.

    A position counts as dynamic at step t >= 1 when the ground-truth token
    changed from step t-1.  Exposing the raw (sum, count) lets callers choose
    per-clip or pooled aggregation.
    """
    _check_aligned(truth, recon)
    gt = truth.token_matrix
    rc = recon.token_matrix
    mask = gt[1:] != gt[:-1]
    if not mask.any():
        return 0.0, 0
    a = gt[1:][mask]
    b = rc[1:][mask]
    dist = codebook.change_magnitudes(a, b)
    return float(dist.sum()), int(a.size)


def dyn_embedding_distortion(truth: Clip, recon: Clip, codebook: "Codebook") -> float | None:
    """Mean embedding cosine distance restricted to dynamic positions.

    Returns ``None`` when the clip has no dynamic positions at all, so that
    fully static clips are reported as absent rather than as zero distortion.
    """
    total, count = dyn_distortion_sums(truth, recon, codebook)
    if count == 0:
        return None
    return total / count


def clips_same_layout(clips: Sequence[Clip]) -> bool:
    """True when every clip shares the dimensions of the first."""
    if not clips:
        return False
    first = clips[0]
    return all(
        c.height == first.height and c.width == first.width for c in clips
    )
