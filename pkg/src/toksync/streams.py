"""Synthetic token-stream generation, threshold calibration, and clip/codebook file I/O.

File formats
------------

Clip file (``.tks``), all integers little-endian:

    offset  size  field
    0       4     magic, ASCII "TKSM"
    4       1     format version (currently 1)
    5       4     T   (u32, number of timesteps)
    9       4     H   (u32, grid height)
    13      4     W   (u32, grid width)
    17      4     K   (u32, vocabulary size; every token ID < K)
    21      2*T*H*W   token IDs as u16, row-major per frame, frames in time order

Codebook file (``.tkcb``), all values little-endian:

    offset  size  field
    0       4     K   (u32, number of rows)
    4       4     C   (u32, embedding dimension)
    8       4*K*C     embeddings as IEEE-754 f32, row-major

Token IDs are stored as 16 bits per token for file simplicity (so K <= 65536);
the 13-bit fixed-length figure used in bandwidth accounting lives in the
protocol's byte model, not in storage.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .codebook import Codebook
from .grid import Clip, hamming_drift

CLIP_MAGIC = b"TKSM"
CLIP_VERSION = 1
_CLIP_HEADER = struct.Struct("<4sBIIII")
_CB_HEADER = struct.Struct("<II")

MAX_FILE_TOKEN = 65536


class StreamFormatError(ValueError):
    """Malformed clip or codebook file."""


@dataclass(frozen=True)
class DynamicsConfig:
    """Knobs for the synthetic per-step token dynamics.

    Each step is either a normal step (positions change independently with
    probability ``base_change_rate``) or, with probability ``burst_prob``, a
    burst step where the change probability jumps to ``burst_change_rate``.
    A changed position redraws its token within the current token's cluster
    with probability ``within_cluster_prob``, otherwise uniformly over the
    vocabulary.  Bursts model abrupt scene changes; without them adaptive and
    periodic keyframe schedules behave nearly identically.
    """

    base_change_rate: float = 0.05
    burst_prob: float = 0.008
    burst_change_rate: float = 0.8
    within_cluster_prob: float = 0.7
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("base_change_rate", "burst_prob", "burst_change_rate", "within_cluster_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.burst_change_rate < self.base_change_rate:
            raise ValueError(
                f"burst_change_rate ({self.burst_change_rate}) must be >= "
                f"base_change_rate ({self.base_change_rate})"
            )


def gen_clip(
    cfg: DynamicsConfig,
    cb: Codebook,
    n_steps: int,
    height: int = 18,
    width: int = 32,
    rate_hz: float = 10.0,
) -> Clip:
    """Generate a synthetic clip; a pure function of (cfg, cb, shape)."""
    if n_steps < 2:
        raise ValueError(f"need at least 2 timesteps, got {n_steps}")
    if height < 1 or width < 1:
        raise ValueError(f"invalid grid dimensions {height}x{width}")
    if cfg.within_cluster_prob > 0 and cb.n_clusters is None:
        raise ValueError(
            "within_cluster_prob > 0 requires a codebook with cluster structure"
        )
    n_pos = height * width
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    frames = np.empty((n_steps, n_pos), dtype=np.int64)
    frames[0] = rng.integers(0, cb.k, size=n_pos)
    for t in range(1, n_steps):
        burst = rng.random() < cfg.burst_prob
        rate = cfg.burst_change_rate if burst else cfg.base_change_rate
        change = rng.random(n_pos) < rate
        frames[t] = frames[t - 1]
        n_changed = int(np.count_nonzero(change))
        if n_changed == 0:
            continue
        current = frames[t - 1][change]
        within = rng.random(n_changed) < cfg.within_cluster_prob
        fresh = rng.integers(0, cb.k, size=n_changed)
        if within.any():
            cid = cb.cluster_of(current[within])
            member = rng.integers(0, cb.cluster_size(cid))
            fresh[within] = cid + member * cb.n_clusters
        frames[t][change] = fresh
    return Clip.from_matrix(frames, height, width, rate_hz)


def change_rate_distribution(clips: Sequence[Clip]) -> np.ndarray:
    """Per-step fractions of changed positions, one sample per (clip, t >= 1)."""
    if not clips:
        raise ValueError("need at least one clip")
    samples: list[float] = []
    for clip in clips:
        if clip.n_steps < 2:
            raise ValueError("every clip needs at least 2 timesteps")
        for t in range(1, clip.n_steps):
            samples.append(hamming_drift(clip.grids[t], clip.grids[t - 1]))
    return np.asarray(samples, dtype=np.float64)


def percentile_threshold(dist: np.ndarray | Sequence[float], q: float) -> float:
    """Nearest-rank percentile: smallest sample with cumulative fraction >= q/100."""
    samples = np.sort(np.asarray(dist, dtype=np.float64))
    if samples.size == 0:
        raise ValueError("empty distribution")
    if not 0.0 < q < 100.0:
        raise ValueError(f"percentile must be in (0, 100), got {q}")
    rank = math.ceil(q / 100.0 * samples.size)
    return float(samples[max(rank, 1) - 1])


def _read_exact(data: bytes, offset: int, size: int, what: str) -> bytes:
    if len(data) < offset + size:
        raise StreamFormatError(
            f"truncated file: {what} needs bytes [{offset}, {offset + size}), "
            f"file has {len(data)} bytes"
        )
    return data[offset : offset + size]


def write_clip(clip: Clip, path: str | Path, k: int) -> None:
    """Write a clip in the .tks layout; round-trips bit-exactly."""
    mat = clip.token_matrix
    if mat.size and mat.max() >= k:
        raise ValueError(f"clip contains token ID {int(mat.max())} >= k={k}")
    if k > MAX_FILE_TOKEN:
        raise ValueError(f"file format stores 16-bit tokens; k={k} exceeds {MAX_FILE_TOKEN}")
    header = _CLIP_HEADER.pack(
        CLIP_MAGIC, CLIP_VERSION, clip.n_steps, clip.height, clip.width, k
    )
    body = mat.astype("<u2").tobytes()
    Path(path).write_bytes(header + body)


def read_clip(path: str | Path, rate_hz: float = 10.0, expected_k: int | None = None) -> Clip:
    """Read a .tks clip file, validating magic, version, and length."""
    data = Path(path).read_bytes()
    raw = _read_exact(data, 0, _CLIP_HEADER.size, "header")
    magic, version, n_steps, height, width, k = _CLIP_HEADER.unpack(raw)
    if magic != CLIP_MAGIC:
        raise StreamFormatError(f"bad magic {magic!r} at offset 0, expected {CLIP_MAGIC!r}")
    if version != CLIP_VERSION:
        raise StreamFormatError(f"unsupported version {version}, expected {CLIP_VERSION}")
    if expected_k is not None and k != expected_k:
        raise StreamFormatError(f"clip written for k={k}, expected k={expected_k}")
    n_tokens = n_steps * height * width
    body = _read_exact(data, _CLIP_HEADER.size, 2 * n_tokens, f"{n_tokens} tokens")
    if len(data) != _CLIP_HEADER.size + 2 * n_tokens:
        raise StreamFormatError(
            f"trailing garbage: expected {_CLIP_HEADER.size + 2 * n_tokens} bytes, "
            f"file has {len(data)}"
        )
    tokens = np.frombuffer(body, dtype="<u2").astype(np.int64).reshape(n_steps, height * width)
    if tokens.size and tokens.max() >= k:
        raise StreamFormatError(f"token ID {int(tokens.max())} out of range for k={k}")
    return Clip.from_matrix(tokens, height, width, rate_hz)


def write_codebook(cb: Codebook, path: str | Path) -> None:
    """Write a codebook in the .tkcb layout (f32 rows)."""
    header = _CB_HEADER.pack(cb.k, cb.dim)
    body = cb.embeddings.astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_codebook(path: str | Path) -> Codebook:
    """Read a .tkcb codebook file; cluster metadata is not stored on disk."""
    data = Path(path).read_bytes()
    raw = _read_exact(data, 0, _CB_HEADER.size, "header")
    k, dim = _CB_HEADER.unpack(raw)
    n_floats = k * dim
    body = _read_exact(data, _CB_HEADER.size, 4 * n_floats, f"{k}x{dim} embeddings")
    if len(data) != _CB_HEADER.size + 4 * n_floats:
        raise StreamFormatError(
            f"trailing garbage: expected {_CB_HEADER.size + 4 * n_floats} bytes, "
            f"file has {len(data)}"
        )
    emb = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(k, dim)
    return Codebook(embeddings=emb, n_clusters=None)
