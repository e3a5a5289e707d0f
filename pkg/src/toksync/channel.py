"""Lossy link model: i.i.d. delta drops, reliable keyframes, seeded replay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .protocol import KeyframeMessage, Message


@dataclass(frozen=True)
class ChannelConfig:
    drop_prob: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError(f"drop_prob must be in [0, 1], got {self.drop_prob}")


class Channel:
    """One simulated link.  Every message consumes exactly one uniform draw,
    keyframes included, so the draw at a given step index is the same no
    matter how the sender mixed keyframes and deltas; delivery patterns stay
    paired across policies and budgets sharing a seed.  A delta is delivered
    iff its draw >= drop_prob, which also couples loss monotonically across
    drop rates under a shared seed.
    """

    def __init__(self, cfg: ChannelConfig):
        self.cfg = cfg
        self._rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))

    def transmit(self, msg: Message) -> bool:
        draw = self._rng.random()
        if isinstance(msg, KeyframeMessage):
            return True
        return bool(draw >= self.cfg.drop_prob)
