"""End-to-end simulation, sweep grid execution, aggregation, and CSV output.

A sweep runs every (policy, budget, drop probability) point over every clip,
collects per-clip statistics, and reduces them to one row per point.  Per-clip
channel seeds derive from (master seed, clip index) only, so every point sees
the same loss pattern for a given clip and results do not depend on worker
count or execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import Channel, ChannelConfig
from .codebook import Codebook
from .grid import Clip, TokenGrid
from .predictor import CountModel, PredictorConfig, SampleSpec, clip_nll_sums
from .protocol import (
    AdaptivePolicy,
    BudgetModel,
    KeyframePolicy,
    PeriodicPolicy,
    ReceiverState,
    SenderState,
    message_bytes,
    receiver_apply,
    sender_step,
)
from .seeds import derive_rng, derive_seed


@dataclass(frozen=True)
class RunConfig:
    policy: KeyframePolicy
    budget: BudgetModel
    channel: ChannelConfig
    rate_hz: float = 10.0

    def __post_init__(self) -> None:
        if self.rate_hz <= 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")


@dataclass(frozen=True)
class StepRecord:
    t: int
    is_keyframe: bool
    bytes: int
    delivered: bool
    recon: TokenGrid


@dataclass(frozen=True)
class ClipTrace:
    steps: tuple[StepRecord, ...]
    bytes_total: int
    keyframe_count: int

    def recon_clip(self, rate_hz: float = 10.0) -> Clip:
        return Clip(grids=tuple(s.recon for s in self.steps), rate_hz=rate_hz)


def run_clip(clip: Clip, cfg: RunConfig, cb: Codebook) -> ClipTrace:
    """Drive sender -> channel -> receiver over the whole clip."""
    channel = Channel(cfg.channel)
    sender = SenderState.initial()
    receiver = ReceiverState.initial()
    steps: list[StepRecord] = []
    bytes_total = 0
    keyframes = 0
    for t in range(clip.n_steps):
        msg, sender = sender_step(sender, clip.grids[t], cfg.policy, cfg.budget, cb)
        delivered = channel.transmit(msg)
        receiver = receiver_apply(receiver, msg if delivered else None)
        cost = message_bytes(msg, cfg.budget)
        bytes_total += cost
        is_kf = sender.last_kf == t
        keyframes += is_kf
        assert receiver.recon is not None  # t=0 keyframe is always delivered
        steps.append(
            StepRecord(t=t, is_keyframe=is_kf, bytes=cost, delivered=delivered, recon=receiver.recon)
        )
    return ClipTrace(steps=tuple(steps), bytes_total=bytes_total, keyframe_count=keyframes)


def bitrate_mbps(trace: ClipTrace, rate_hz: float) -> float:
    """Megabits per second from total bytes over the clip duration."""
    n_steps = len(trace.steps)
    if n_steps == 0:
        raise ValueError("empty trace has no duration")
    return trace.bytes_total * 8.0 / (n_steps / rate_hz) / 1e6


def policy_label(policy: KeyframePolicy) -> str:
    if isinstance(policy, PeriodicPolicy):
        return f"periodic_n{policy.interval}"
    return f"adaptive_tau{policy.tau_h:.6g}"


def policy_tau(policy: KeyframePolicy) -> float | None:
    return policy.tau_h if isinstance(policy, AdaptivePolicy) else None


def policy_interval(policy: KeyframePolicy) -> int | None:
    return policy.interval if isinstance(policy, PeriodicPolicy) else None


@dataclass(frozen=True)
class SweepSpec:
    """One grid point of a sweep."""

    policy: KeyframePolicy
    budget_bytes: int
    drop_prob: float


@dataclass(frozen=True)
class ClipStats:
    """Per-clip statistics for one grid point; arrays are clip-index aligned."""

    spec: SweepSpec
    bytes_total: np.ndarray
    keyframes: np.ndarray
    mismatch_count: np.ndarray
    positions_total: np.ndarray
    ddyn_sum: np.ndarray
    ddyn_count: np.ndarray
    n_steps: np.ndarray
    nll_all_sum: np.ndarray | None = None
    n_all: np.ndarray | None = None
    nll_dyn_sum: np.ndarray | None = None
    n_dyn: np.ndarray | None = None

    @property
    def n_clips(self) -> int:
        return int(self.bytes_total.size)

    def per_clip_bitrate(self, rate_hz: float) -> np.ndarray:
        return self.bytes_total * 8.0 / (self.n_steps / rate_hz) / 1e6

    def per_clip_ddyn(self) -> np.ndarray:
        """Per-clip mean dynamic distortion; NaN where a clip had no dynamic positions."""
        out = np.full(self.n_clips, np.nan)
        defined = self.ddyn_count > 0
        out[defined] = self.ddyn_sum[defined] / self.ddyn_count[defined]
        return out


@dataclass(frozen=True)
class SweepRow:
    policy_id: str
    tau_h: float | None
    interval: int | None
    budget_bytes: int
    drop_prob: float
    bitrate_mbps: float
    d_dyn: float | None
    mismatch_rate: float
    keyframes_per_clip: float
    ppl_all: float | None
    ppl_dyn: float | None
    n_clips: int
    n_undefined_ddyn: int


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    stats: tuple[ClipStats, ...]


# Worker context for process pools; set once per worker via the initializer.
_CTX: dict | None = None


def _init_worker(ctx: dict) -> None:
    global _CTX
    _CTX = ctx


def _clip_stats_for_clip(
    clip: Clip,
    clip_index: int,
    specs: Sequence[SweepSpec],
    cb: Codebook,
    master_seed: int,
    rate_hz: float,
    model: CountModel | None,
    pred_cfg: PredictorConfig | None,
    sample: SampleSpec | None,
) -> list[tuple]:
    """Metrics for one clip at every grid point; the unit of parallel work."""
    channel_seed = derive_seed(master_seed, "channel", clip_index)
    gt = clip.token_matrix
    dyn_mask = gt[1:] != gt[:-1]
    out = []
    for spec in specs:
        cfg = RunConfig(
            policy=spec.policy,
            budget=BudgetModel(payload_budget_bytes=spec.budget_bytes),
            channel=ChannelConfig(drop_prob=spec.drop_prob, seed=channel_seed),
            rate_hz=rate_hz,
        )
        trace = run_clip(clip, cfg, cb)
        rc = np.stack([s.recon.tokens for s in trace.steps])
        mismatch = int(np.count_nonzero(gt != rc))
        if dyn_mask.any():
            dist = cb.change_magnitudes(gt[1:][dyn_mask], rc[1:][dyn_mask])
            ddyn_sum, ddyn_count = float(dist.sum()), int(dist.size)
        else:
            ddyn_sum, ddyn_count = 0.0, 0
        nll = (0.0, 0, 0.0, 0)
        if model is not None and pred_cfg is not None and sample is not None:
            nll = clip_nll_sums(model, pred_cfg, gt, rc, sample, clip_index)
        out.append(
            (
                trace.bytes_total,
                trace.keyframe_count,
                mismatch,
                gt.size,
                ddyn_sum,
                ddyn_count,
                clip.n_steps,
            )
            + nll
        )
    return out


def _worker_entry(clip_index: int) -> list[tuple]:
    assert _CTX is not None
    return _clip_stats_for_clip(
        _CTX["clips"][clip_index],
        clip_index,
        _CTX["specs"],
        _CTX["cb"],
        _CTX["master_seed"],
        _CTX["rate_hz"],
        _CTX["model"],
        _CTX["pred_cfg"],
        _CTX["sample"],
    )


def evaluate_specs(
    clips: Sequence[Clip],
    specs: Sequence[SweepSpec],
    cb: Codebook,
    *,
    master_seed: int = 0,
    rate_hz: float = 10.0,
    workers: int = 1,
    model: CountModel | None = None,
    pred_cfg: PredictorConfig | None = None,
    sample: SampleSpec | None = None,
) -> list[ClipStats]:
    """Run every grid point on every clip; results independent of worker count."""
    if not clips:
        raise ValueError("need at least one clip")
    if not specs:
        raise ValueError("need at least one grid point")
    ctx = {
        "clips": list(clips),
        "specs": list(specs),
        "cb": cb,
        "master_seed": master_seed,
        "rate_hz": rate_hz,
        "model": model,
        "pred_cfg": pred_cfg,
        "sample": sample,
    }
    if workers <= 1:
        _init_worker(ctx)
        per_clip = [_worker_entry(i) for i in range(len(clips))]
    else:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(ctx,)
        ) as pool:
            chunk = max(1, len(clips) // (workers * 4))
            per_clip = list(pool.map(_worker_entry, range(len(clips)), chunksize=chunk))
    results: list[ClipStats] = []
    for s_idx, spec in enumerate(specs):
        cols = list(zip(*(per_clip[c][s_idx] for c in range(len(clips)))))
        results.append(
            ClipStats(
                spec=spec,
                bytes_total=np.array(cols[0], dtype=np.int64),
                keyframes=np.array(cols[1], dtype=np.int64),
                mismatch_count=np.array(cols[2], dtype=np.int64),
                positions_total=np.array(cols[3], dtype=np.int64),
                ddyn_sum=np.array(cols[4], dtype=np.float64),
                ddyn_count=np.array(cols[5], dtype=np.int64),
                n_steps=np.array(cols[6], dtype=np.int64),
                nll_all_sum=np.array(cols[7], dtype=np.float64),
                n_all=np.array(cols[8], dtype=np.int64),
                nll_dyn_sum=np.array(cols[9], dtype=np.float64),
                n_dyn=np.array(cols[10], dtype=np.int64),
            )
        )
    return results


def _pooled_ppl(nll_sum: np.ndarray | None, n: np.ndarray | None) -> float | None:
    if nll_sum is None or n is None:
        return None
    total_n = int(n.sum())
    if total_n == 0:
        return None
    return float(math.exp(float(nll_sum.sum()) / total_n))


def aggregate_stats(stats: ClipStats, rate_hz: float, mode: str = "per_clip") -> SweepRow:
    """Reduce one grid point's per-clip statistics to a results row.

    per_clip: mean of per-clip metrics (clips weighted equally).
    pooled: ratios of summed numerators and denominators (samples weighted equally).
    Perplexity is always pooled over sampled (clip, t, u) triples so it matches
    the definition used by the standalone evaluation.
    """
    if mode not in ("per_clip", "pooled"):
        raise ValueError(f"unknown aggregation mode {mode!r}")
    n_undef = int(np.count_nonzero(stats.ddyn_count == 0))
    defined = stats.ddyn_count > 0
    if mode == "per_clip":
        rate = float(stats.per_clip_bitrate(rate_hz).mean())
        mism = float((stats.mismatch_count / stats.positions_total).mean())
        if defined.any():
            d_dyn = float((stats.ddyn_sum[defined] / stats.ddyn_count[defined]).mean())
        else:
            d_dyn = None
    else:
        duration = float(stats.n_steps.sum()) / rate_hz
        rate = float(stats.bytes_total.sum()) * 8.0 / duration / 1e6
        mism = float(stats.mismatch_count.sum() / stats.positions_total.sum())
        total_count = int(stats.ddyn_count.sum())
        d_dyn = float(stats.ddyn_sum.sum() / total_count) if total_count else None
    return SweepRow(
        policy_id=policy_label(stats.spec.policy),
        tau_h=policy_tau(stats.spec.policy),
        interval=policy_interval(stats.spec.policy),
        budget_bytes=stats.spec.budget_bytes,
        drop_prob=stats.spec.drop_prob,
        bitrate_mbps=rate,
        d_dyn=d_dyn,
        mismatch_rate=mism,
        keyframes_per_clip=float(stats.keyframes.mean()),
        ppl_all=_pooled_ppl(stats.nll_all_sum, stats.n_all),
        ppl_dyn=_pooled_ppl(stats.nll_dyn_sum, stats.n_dyn),
        n_clips=stats.n_clips,
        n_undefined_ddyn=n_undef,
    )


def sweep(
    clips: Sequence[Clip],
    policies: Sequence[KeyframePolicy],
    budgets: Sequence[int],
    drop_probs: Sequence[float],
    cb: Codebook,
    *,
    master_seed: int = 0,
    rate_hz: float = 10.0,
    workers: int = 1,
    aggregate: str = "per_clip",
    model: CountModel | None = None,
    pred_cfg: PredictorConfig | None = None,
    sample: SampleSpec | None = None,
) -> SweepResult:
    """Full cross product of policies x budgets x drop probabilities."""
    if not policies or not budgets or not drop_probs:
        raise ValueError("policies, budgets, and drop_probs must all be non-empty")
    specs = [
        SweepSpec(policy=pol, budget_bytes=b, drop_prob=p)
        for pol in policies
        for b in budgets
        for p in drop_probs
    ]
    stats = evaluate_specs(
        clips,
        specs,
        cb,
        master_seed=master_seed,
        rate_hz=rate_hz,
        workers=workers,
        model=model,
        pred_cfg=pred_cfg,
        sample=sample,
    )
    rows = tuple(aggregate_stats(s, rate_hz, aggregate) for s in stats)
    return SweepResult(rows=rows, stats=tuple(stats))


@dataclass(frozen=True)
class MatchedPair:
    adaptive: SweepRow
    periodic: SweepRow
    bitrate_gap: float


def rate_match(
    periodic_rows: Sequence[SweepRow], adaptive_rows: Sequence[SweepRow]
) -> list[MatchedPair]:
    """Pair each adaptive row with the periodic row of nearest bitrate.

    Ties go to the lower periodic bitrate so the pairing is deterministic.
    """
    if not periodic_rows or not adaptive_rows:
        raise ValueError("both row sets must be non-empty")
    pairs = []
    for arow in adaptive_rows:
        best = min(
            periodic_rows,
            key=lambda prow: (abs(prow.bitrate_mbps - arow.bitrate_mbps), prow.bitrate_mbps),
        )
        pairs.append(
            MatchedPair(
                adaptive=arow,
                periodic=best,
                bitrate_gap=abs(best.bitrate_mbps - arow.bitrate_mbps),
            )
        )
    return pairs


@dataclass(frozen=True)
class SeedWin:
    seed_index: int
    adaptive_mean: float
    periodic_mean: float
    diff: float
    adaptive_win: bool


def subset_win_rates(
    adaptive_per_clip: np.ndarray,
    periodic_per_clip: np.ndarray,
    n_seeds: int,
    subset_size: int,
    seed: int,
) -> list[SeedWin]:
    """Paired comparison over seeded random clip subsets.

    Inputs are per-clip metric arrays aligned by clip index (NaN marks clips
    where the metric is undefined; those are skipped inside each subset mean).
    ``diff`` is periodic minus adaptive, so positive favors adaptive.
    """
    a = np.asarray(adaptive_per_clip, dtype=np.float64)
    p = np.asarray(periodic_per_clip, dtype=np.float64)
    if a.shape != p.shape or a.ndim != 1:
        raise ValueError("per-clip arrays must be 1-D and clip-aligned")
    if not 1 <= subset_size <= a.size:
        raise ValueError(f"subset_size must be in [1, {a.size}], got {subset_size}")
    wins: list[SeedWin] = []
    for s in range(n_seeds):
        rng = derive_rng(seed, "winrate", s)
        idx = rng.choice(a.size, size=subset_size, replace=False)
        a_mean = float(np.nanmean(a[idx]))
        p_mean = float(np.nanmean(p[idx]))
        wins.append(
            SeedWin(
                seed_index=s,
                adaptive_mean=a_mean,
                periodic_mean=p_mean,
                diff=p_mean - a_mean,
                adaptive_win=bool(a_mean < p_mean),
            )
        )
    return wins


SWEEP_COLUMNS = (
    "policy_id",
    "tau_h",
    "interval",
    "budget_bytes",
    "drop_prob",
    "bitrate_mbps",
    "d_dyn",
    "mismatch_rate",
    "keyframes_per_clip",
    "ppl_all",
    "ppl_dyn",
    "n_clips",
    "n_undefined_ddyn",
)

WINRATE_COLUMNS = (
    "seed_index",
    "adaptive_policy",
    "periodic_policy",
    "adaptive_bitrate_mbps",
    "periodic_bitrate_mbps",
    "adaptive_ddyn",
    "periodic_ddyn",
    "diff",
    "adaptive_win",
)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str | Path, provenance: str, columns: Sequence[str], rows) -> None:
    # hand-rolled writer: repr() floats round-trip and byte-identical runs matter
    lines = [f"# {provenance}", ",".join(columns)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_sweep_csv(path: str | Path, rows: Sequence[SweepRow], provenance: str) -> None:
    """One file per figure surface; fixed column order, '' for undefined cells."""
    write_csv(
        path,
        provenance,
        SWEEP_COLUMNS,
        ([getattr(r, c) for c in SWEEP_COLUMNS] for r in rows),
    )


def write_winrate_csv(
    path: str | Path,
    wins: Sequence[SeedWin],
    pair: MatchedPair,
    provenance: str,
) -> None:
    """Per-seed paired rows plus a trailing summary row (seed_index=all)."""
    a_id, p_id = pair.adaptive.policy_id, pair.periodic.policy_id
    a_rate, p_rate = pair.adaptive.bitrate_mbps, pair.periodic.bitrate_mbps
    rows = [
        (w.seed_index, a_id, p_id, a_rate, p_rate, w.adaptive_mean, w.periodic_mean, w.diff, w.adaptive_win)
        for w in wins
    ]
    n_win = sum(w.adaptive_win for w in wins)
    diffs = np.array([w.diff for w in wins])
    rows.append(
        (
            "all",
            a_id,
            p_id,
            a_rate,
            p_rate,
            float(np.mean([w.adaptive_mean for w in wins])),
            float(np.mean([w.periodic_mean for w in wins])),
            f"{float(diffs.mean())!r}+-{float(diffs.std())!r}",
            f"{n_win}/{len(wins)}",
        )
    )
    write_csv(path, provenance, WINRATE_COLUMNS, rows)
