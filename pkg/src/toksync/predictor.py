"""Count-based next-token probe: per-position interpolated backoff with add-k smoothing.

For each grid position u and context order j (the j most recent tokens at u),
the model keeps a count table.  The predictive distribution mixes all orders
plus a uniform floor:

    p(x | u, history) = sum_j lambda_j * (count_j(x) + k) / (total_j + k*K) + lambda_unif / K

Tables are stored as sorted integer arrays.  A context group is the packed
code u*K^j + ctx where ctx is the base-K packing of the context tokens (most
recent token in the least significant digit); a (group, target) pair packs as
group_index*K + target.  Lookups are binary searches, so training and
evaluation stay vectorized with no per-context Python objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import Clip, clips_same_layout
from .seeds import derive_rng

DEFAULT_CONTEXT_LEN = 4
DEFAULT_SMOOTHING_K = 0.1
_CODE_BITS = 62


def default_interpolation_weights(context_len: int) -> tuple[float, ...]:
    """Weights ordered (order L, ..., order 1, order 0, uniform floor).

    The uniform floor gets 0.1 and order 0 gets 0.05; the remaining 0.85 is
    split over orders 1..L proportionally to 2^(j-1), favoring long contexts.
    """
    if context_len < 1:
        raise ValueError(f"context_len must be >= 1, got {context_len}")
    geo = [2.0 ** (j - 1) for j in range(1, context_len + 1)]
    total = sum(geo)
    by_order = [0.85 * g / total for g in geo]  # index j-1 -> order j
    return tuple(reversed(by_order)) + (0.05, 0.1)


@dataclass(frozen=True)
class PredictorConfig:
    """context_len L, add-k constant, mixing weights (orders L..0, then uniform floor)."""

    context_len: int = DEFAULT_CONTEXT_LEN
    smoothing_k: float = DEFAULT_SMOOTHING_K
    interpolation_weights: tuple[float, ...] = field(default=())
    seed: int = 0

    def __post_init__(self) -> None:
        if self.context_len < 1:
            raise ValueError(f"context_len must be >= 1, got {self.context_len}")
        if self.smoothing_k <= 0:
            raise ValueError(f"smoothing_k must be > 0, got {self.smoothing_k}")
        weights = self.interpolation_weights
        if weights == ():
            weights = default_interpolation_weights(self.context_len)
            object.__setattr__(self, "interpolation_weights", weights)
        if len(weights) != self.context_len + 2:
            raise ValueError(
                f"need {self.context_len + 2} interpolation_weights "
                f"(orders {self.context_len}..0 plus uniform floor), got {len(weights)}"
            )
        if any(w < 0 for w in weights):
            raise ValueError("interpolation_weights must be non-negative")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError(f"interpolation_weights sum to {sum(weights)}, expected 1")
        if weights[-1] <= 0:
            raise ValueError("uniform-floor weight must be positive")

    def weight_for_order(self, order: int) -> float:
        if not 0 <= order <= self.context_len:
            raise ValueError(f"order must be in [0, {self.context_len}], got {order}")
        return self.interpolation_weights[self.context_len - order]

    @property
    def uniform_weight(self) -> float:
        return self.interpolation_weights[-1]


@dataclass(frozen=True)
class OrderTable:
    """Sorted count arrays for one context order."""

    group_keys: np.ndarray
    group_totals: np.ndarray
    pair_codes: np.ndarray
    pair_counts: np.ndarray


@dataclass(frozen=True)
class CountModel:
    k: int
    context_len: int
    n_positions: int
    tables: tuple[OrderTable, ...]

    def count(self, u: int, context: Sequence[int], target: int) -> int:
        """Raw observation count for (position, context tuple) -> target."""
        order = len(context)
        if order > self.context_len:
            raise ValueError(f"context longer than model order {self.context_len}")
        table = self.tables[order]
        ctx = _pack_context(np.asarray(context, dtype=np.int64).reshape(1, -1), self.k)[0]
        g = u * self.k**order + ctx
        gi = int(np.searchsorted(table.group_keys, g))
        if gi >= table.group_keys.size or table.group_keys[gi] != g:
            return 0
        pc = gi * self.k + target
        pi = int(np.searchsorted(table.pair_codes, pc))
        if pi >= table.pair_codes.size or table.pair_codes[pi] != pc:
            return 0
        return int(table.pair_counts[pi])


def _pack_context(window: np.ndarray, k: int) -> np.ndarray:
    """Base-k code of each row; the last column is the least significant digit."""
    order = window.shape[-1]
    code = np.zeros(window.shape[:-1], dtype=np.int64)
    for d in range(order):
        code += window[..., order - 1 - d] * k**d
    return code


def _merge_counts(
    keys_a: np.ndarray | None,
    counts_a: np.ndarray | None,
    keys_b: np.ndarray,
    counts_b: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    if keys_a is None:
        return keys_b, counts_b
    keys = np.union1d(keys_a, keys_b)
    counts = np.zeros(keys.size, dtype=np.int64)
    counts[np.searchsorted(keys, keys_a)] += counts_a
    counts[np.searchsorted(keys, keys_b)] += counts_b
    return keys, counts


def _order_codes(mat: np.ndarray, order: int, context_len: int, k: int) -> np.ndarray:
    """Packed context codes for targets at t in [context_len, T), shape (T-L, N)."""
    n_steps = mat.shape[0]
    codes = np.zeros((n_steps - context_len, mat.shape[1]), dtype=np.int64)
    for d in range(order):
        codes += mat[context_len - 1 - d : n_steps - 1 - d] * k**d
    return codes


def train(clips_gt: Sequence[Clip], cfg: PredictorConfig, k: int) -> CountModel:
    """Count every (position, context, next-token) event at orders 0..L.

    Training contexts start at t = L for every order so all orders see the
    same target set.  Deterministic: clip order is the only ordering input and
    the count reduction is order-insensitive.
    """
    if not clips_gt:
        raise ValueError("need at least one training clip")
    if not clips_same_layout(clips_gt):
        raise ValueError("training clips must share grid dimensions")
    if k < 2:
        raise ValueError(f"vocabulary size must be >= 2, got {k}")
    ell = cfg.context_len
    for i, clip in enumerate(clips_gt):
        if clip.n_steps <= ell:
            raise ValueError(
                f"clip {i} has {clip.n_steps} steps; need more than context_len={ell}"
            )
    n_pos = clips_gt[0].n_positions
    if n_pos * k**ell >= 1 << _CODE_BITS:
        raise ValueError(
            f"packed context codes overflow: n_positions={n_pos}, k={k}, L={ell}"
        )
    u_col = np.arange(n_pos, dtype=np.int64)[None, :]
    tables: list[OrderTable] = []
    for order in range(ell + 1):
        base = k**order
        gkeys: np.ndarray | None = None
        gcounts: np.ndarray | None = None
        for clip in clips_gt:
            codes = _order_codes(clip.token_matrix, order, ell, k) + u_col * base
            uniq, cnt = np.unique(codes.ravel(), return_counts=True)
            gkeys, gcounts = _merge_counts(gkeys, gcounts, uniq, cnt)
        assert gkeys is not None and gcounts is not None
        if gkeys.size * k >= 1 << 63:
            raise ValueError(f"pair codes overflow: {gkeys.size} groups with k={k}")
        pkeys: np.ndarray | None = None
        pcounts: np.ndarray | None = None
        for clip in clips_gt:
            mat = clip.token_matrix
            codes = _order_codes(mat, order, ell, k) + u_col * base
            gi = np.searchsorted(gkeys, codes.ravel())
            pairs = gi * k + mat[ell:].ravel()
            uniq, cnt = np.unique(pairs, return_counts=True)
            pkeys, pcounts = _merge_counts(pkeys, pcounts, uniq, cnt)
        assert pkeys is not None and pcounts is not None
        tables.append(
            OrderTable(
                group_keys=gkeys,
                group_totals=gcounts,
                pair_codes=pkeys,
                pair_counts=pcounts,
            )
        )
    return CountModel(k=k, context_len=ell, n_positions=n_pos, tables=tuple(tables))


def _batch_order_probs(
    table: OrderTable, k: int, smoothing_k: float, groups: np.ndarray, targets: np.ndarray
) -> np.ndarray:
    """(count + k_s) / (total + k_s*K) per sample for one order; unseen groups give 1/K."""
    if table.group_keys.size == 0 or table.pair_codes.size == 0:
        return np.full(groups.shape, 1.0 / k, dtype=np.float64)
    gi = np.searchsorted(table.group_keys, groups)
    gi_c = np.minimum(gi, table.group_keys.size - 1)
    found = (gi < table.group_keys.size) & (table.group_keys[gi_c] == groups)
    totals = np.where(found, table.group_totals[gi_c], 0)
    pair = np.where(found, gi_c, 0) * k + targets
    pi = np.searchsorted(table.pair_codes, pair)
    pi_c = np.minimum(pi, table.pair_codes.size - 1)
    pfound = found & (pi < table.pair_codes.size) & (table.pair_codes[pi_c] == pair)
    counts = np.where(pfound, table.pair_counts[pi_c], 0)
    return (counts + smoothing_k) / (totals + smoothing_k * k)


def _check_tokens(tokens: np.ndarray, k: int, what: str) -> None:
    if tokens.size and (tokens.min() < 0 or tokens.max() >= k):
        raise ValueError(f"{what} contains token IDs outside [0, {k})")


def predict(
    model: CountModel, cfg: PredictorConfig, u: int, history: Sequence[int]
) -> np.ndarray:
    """Full next-token distribution at position u given the L most recent tokens."""
    if not 0 <= u < model.n_positions:
        raise ValueError(f"position {u} out of range [0, {model.n_positions})")
    hist = np.asarray(history, dtype=np.int64)
    if hist.size != cfg.context_len:
        raise ValueError(f"history length {hist.size}, expected {cfg.context_len}")
    _check_tokens(hist, model.k, "history")
    k = model.k
    p = np.full(k, cfg.uniform_weight / k, dtype=np.float64)
    for order in range(cfg.context_len + 1):
        w = cfg.weight_for_order(order)
        if w == 0.0:
            continue
        table = model.tables[order]
        ctx = int(_pack_context(hist[None, cfg.context_len - order :], k)[0]) if order else 0
        g = u * k**order + ctx
        gi = int(np.searchsorted(table.group_keys, g))
        counts = np.zeros(k, dtype=np.int64)
        total = 0
        if gi < table.group_keys.size and table.group_keys[gi] == g:
            total = int(table.group_totals[gi])
            lo = int(np.searchsorted(table.pair_codes, gi * k))
            hi = int(np.searchsorted(table.pair_codes, (gi + 1) * k))
            counts[table.pair_codes[lo:hi] - gi * k] = table.pair_counts[lo:hi]
        # quotient first, then weight: bit-identical to the batched path
        p += w * ((counts + cfg.smoothing_k) / (total + cfg.smoothing_k * k))
    return p


def predict_targets(
    model: CountModel,
    cfg: PredictorConfig,
    u: np.ndarray,
    histories: np.ndarray,
    targets: np.ndarray,
) -> np.ndarray:
    """Probability of each target token; vectorized over samples.

    ``histories`` is (n, L) with the most recent token in the last column.
    Rows with the same (u, history) as a scalar predict() call get the same
    probability.
    """
    u = np.asarray(u, dtype=np.int64)
    histories = np.asarray(histories, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    if histories.ndim != 2 or histories.shape[1] != cfg.context_len:
        raise ValueError(f"histories must be (n, {cfg.context_len})")
    if u.shape != (histories.shape[0],) or targets.shape != u.shape:
        raise ValueError("u, histories, targets must be sample-aligned")
    if u.size and (u.min() < 0 or u.max() >= model.n_positions):
        raise ValueError(f"position out of range [0, {model.n_positions})")
    _check_tokens(histories, model.k, "histories")
    _check_tokens(targets, model.k, "targets")
    k = model.k
    p = np.full(u.shape, cfg.uniform_weight / k, dtype=np.float64)
    for order in range(cfg.context_len + 1):
        w = cfg.weight_for_order(order)
        if w == 0.0:
            continue
        ctx = _pack_context(histories[:, cfg.context_len - order :], k) if order else 0
        groups = u * k**order + ctx
        p += w * _batch_order_probs(model.tables[order], k, cfg.smoothing_k, groups, targets)
    return p


@dataclass(frozen=True)
class SampleSpec:
    """Which (t, u) cells to score per clip; a pure function of (seed, clip index)."""

    n_timesteps: int = 32
    n_positions: int = 64
    seed: int = 0
    full: bool = False

    def __post_init__(self) -> None:
        if self.n_timesteps < 1 or self.n_positions < 1:
            raise ValueError("n_timesteps and n_positions must be >= 1")


def sample_indices(
    spec: SampleSpec, clip_index: int, n_steps: int, n_positions: int, context_len: int
) -> tuple[np.ndarray, np.ndarray]:
    """Sampled timesteps (>= context_len) and positions, sorted ascending."""
    if n_steps <= context_len:
        raise ValueError(f"clip of {n_steps} steps too short for context_len={context_len}")
    ts = np.arange(context_len, n_steps, dtype=np.int64)
    us = np.arange(n_positions, dtype=np.int64)
    if spec.full:
        return ts, us
    rng = derive_rng(spec.seed, "sample", clip_index)
    if ts.size > spec.n_timesteps:
        ts = np.sort(rng.choice(ts, size=spec.n_timesteps, replace=False))
    if us.size > spec.n_positions:
        us = np.sort(rng.choice(us, size=spec.n_positions, replace=False))
    return ts, us


def clip_nll_sums(
    model: CountModel,
    cfg: PredictorConfig,
    gt_matrix: np.ndarray,
    recon_matrix: np.ndarray,
    sample: SampleSpec,
    clip_index: int,
) -> tuple[float, int, float, int]:
    """Negative log-likelihood sums over one clip's sampled cells.

    Targets come from the ground truth; conditioning histories come from the
    reconstruction.  Returns (nll_all, n_all, nll_dynamic, n_dynamic) where a
    sampled cell is dynamic when its ground-truth token changed at t.
    """
    if gt_matrix.shape != recon_matrix.shape:
        raise ValueError("ground-truth and reconstruction shapes differ")
    ell = cfg.context_len
    ts, us = sample_indices(sample, clip_index, gt_matrix.shape[0], gt_matrix.shape[1], ell)
    targets = gt_matrix[ts][:, us].ravel()
    dyn = (gt_matrix[ts][:, us] != gt_matrix[ts - 1][:, us]).ravel()
    # history windows from the reconstruction: (len(ts), |us|, L)
    windows = np.stack([recon_matrix[t - ell : t][:, us].T for t in ts])
    histories = windows.reshape(-1, ell)
    u_arr = np.tile(us, ts.size)
    p = predict_targets(model, cfg, u_arr, histories, targets)
    nll = -np.log(p)
    return float(nll.sum()), int(nll.size), float(nll[dyn].sum()), int(np.count_nonzero(dyn))


def eval_perplexity(
    model: CountModel,
    cfg: PredictorConfig,
    clips_gt: Sequence[Clip],
    clips_recon: Sequence[Clip],
    position_filter: str,
    sample: SampleSpec,
) -> float | None:
    """exp(mean NLL) pooled over all sampled cells passing the filter.

    Returns None when no sampled cell passes (e.g. dynamic filter on static
    clips), so callers can skip-and-count rather than divide by zero.
    """
    if position_filter not in ("all", "dynamic"):
        raise ValueError(f"position_filter must be 'all' or 'dynamic', got {position_filter!r}")
    if len(clips_gt) != len(clips_recon):
        raise ValueError("ground-truth and reconstruction clip counts differ")
    total = 0.0
    n = 0
    for i, (gclip, rclip) in enumerate(zip(clips_gt, clips_recon)):
        nll_all, n_all, nll_dyn, n_dyn = clip_nll_sums(
            model, cfg, gclip.token_matrix, rclip.token_matrix, sample, i
        )
        if position_filter == "all":
            total += nll_all
            n += n_all
        else:
            total += nll_dyn
            n += n_dyn
    if n == 0:
        return None
    return float(math.exp(total / n))


def save_model(model: CountModel, path: str | Path) -> None:
    """Persist counts as an .npz archive."""
    arrays = {
        "k": np.array(model.k, dtype=np.int64),
        "context_len": np.array(model.context_len, dtype=np.int64),
        "n_positions": np.array(model.n_positions, dtype=np.int64),
    }
    for order, table in enumerate(model.tables):
        arrays[f"group_keys_{order}"] = table.group_keys
        arrays[f"group_totals_{order}"] = table.group_totals
        arrays[f"pair_codes_{order}"] = table.pair_codes
        arrays[f"pair_counts_{order}"] = table.pair_counts
    np.savez(path, **arrays)


def load_model(path: str | Path) -> CountModel:
    with np.load(path) as data:
        try:
            k = int(data["k"])
            ell = int(data["context_len"])
            n_pos = int(data["n_positions"])
            tables = tuple(
                OrderTable(
                    group_keys=data[f"group_keys_{order}"],
                    group_totals=data[f"group_totals_{order}"],
                    pair_codes=data[f"pair_codes_{order}"],
                    pair_counts=data[f"pair_counts_{order}"],
                )
                for order in range(ell + 1)
            )
        except KeyError as exc:
            raise ValueError(f"model file {path} is missing array {exc}") from exc
    return CountModel(k=k, context_len=ell, n_positions=n_pos, tables=tables)
