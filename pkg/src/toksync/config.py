"""Experiment configuration: YAML document, strict field checking, stable hashing.

Unknown fields are rejected by dotted path so typos fail loudly before any
compute.  A config hashes to a short digest that output files embed for
provenance.  The scale selector only sets defaults for clip counts; explicit
values in the document always win.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

DESK_N_CLIPS = 100
FULL_N_CLIPS = 2000
DESK_WINRATE_SUBSET = 50
FULL_WINRATE_SUBSET = 500
DESK_TRAIN_CLIPS = 50
FULL_TRAIN_CLIPS = 200


class ConfigError(ValueError):
    """Invalid or unknown configuration field."""


@dataclass(frozen=True)
class DatasetSection:
    n_clips: int | None = None
    n_steps: int = 200
    height: int = 18
    width: int = 32
    rate_hz: float = 10.0


@dataclass(frozen=True)
class CodebookSection:
    k: int = 8192
    dim: int = 384
    n_clusters: int = 64
    spread: float = 0.15


@dataclass(frozen=True)
class DynamicsSection:
    base_change_rate: float = 0.05
    burst_prob: float = 0.008
    burst_change_rate: float = 0.8
    within_cluster_prob: float = 0.7


@dataclass(frozen=True)
class PoliciesSection:
    intervals: tuple[int, ...] = (9, 10, 12, 17, 21)
    tau_percentiles: tuple[float, ...] = (99.0, 99.5, 99.9)
    max_gap: int = 30


@dataclass(frozen=True)
class WinrateSection:
    n_seeds: int = 10
    subset_size: int | None = None


@dataclass(frozen=True)
class UtilitySection:
    context_len: int = 4
    smoothing_k: float = 0.1
    train_clips: int | None = None
    sample_timesteps: int = 32
    sample_positions: int = 64


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    scale: str = "desk"
    out_dir: str = "out"
    aggregate: str = "per_clip"
    workers: int = 1
    budgets: tuple[int, ...] = (100, 200, 400, 800)
    drop_probs: tuple[float, ...] = (0.01, 0.05, 0.1)
    loss_budget: int = 200
    dataset: DatasetSection = field(default_factory=DatasetSection)
    codebook: CodebookSection = field(default_factory=CodebookSection)
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    policies: PoliciesSection = field(default_factory=PoliciesSection)
    winrate: WinrateSection = field(default_factory=WinrateSection)
    utility: UtilitySection = field(default_factory=UtilitySection)

    @property
    def n_clips(self) -> int:
        if self.dataset.n_clips is not None:
            return self.dataset.n_clips
        return FULL_N_CLIPS if self.scale == "full" else DESK_N_CLIPS

    @property
    def winrate_subset_size(self) -> int:
        if self.winrate.subset_size is not None:
            return self.winrate.subset_size
        return FULL_WINRATE_SUBSET if self.scale == "full" else DESK_WINRATE_SUBSET

    @property
    def train_clips(self) -> int:
        if self.utility.train_clips is not None:
            return self.utility.train_clips
        return FULL_TRAIN_CLIPS if self.scale == "full" else DESK_TRAIN_CLIPS


_SECTIONS = {
    "dataset": DatasetSection,
    "codebook": CodebookSection,
    "dynamics": DynamicsSection,
    "policies": PoliciesSection,
    "winrate": WinrateSection,
    "utility": UtilitySection,
}


def _build(dc_type, data: dict, path: str):
    known = {f.name: f for f in dataclasses.fields(dc_type)}
    kwargs = {}
    for key, value in data.items():
        dotted = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"unknown config field: {dotted}")
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config field {dotted} must be a mapping")
            kwargs[key] = _build(_SECTIONS[key], value, dotted)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return dc_type(**kwargs)


def _require(cond: bool, field_path: str, why: str) -> None:
    if not cond:
        raise ConfigError(f"invalid config field {field_path}: {why}")


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def validate(cfg: ExperimentConfig) -> None:
    """Range and type checks; raises ConfigError naming the offending field."""
    _require(_is_int(cfg.seed), "seed", "must be an integer")
    _require(cfg.scale in ("desk", "full"), "scale", "must be 'desk' or 'full'")
    _require(cfg.aggregate in ("per_clip", "pooled"), "aggregate", "must be 'per_clip' or 'pooled'")
    _require(_is_int(cfg.workers) and cfg.workers >= 1, "workers", "must be an integer >= 1")
    _require(isinstance(cfg.out_dir, str) and bool(cfg.out_dir), "out_dir", "must be a non-empty string")
    _require(
        len(cfg.budgets) > 0 and all(_is_int(b) and b > 20 for b in cfg.budgets),
        "budgets",
        "must be a non-empty list of integers > 20 (the fixed header cost)",
    )
    _require(
        all(_is_num(p) and 0.0 <= p <= 1.0 for p in cfg.drop_probs),
        "drop_probs",
        "entries must be numbers in [0, 1]",
    )
    _require(_is_int(cfg.loss_budget) and cfg.loss_budget > 20, "loss_budget", "must be an integer > 20")
    ds = cfg.dataset
    _require(ds.n_clips is None or (_is_int(ds.n_clips) and ds.n_clips >= 1), "dataset.n_clips", "must be >= 1")
    _require(_is_int(ds.n_steps) and ds.n_steps >= 2, "dataset.n_steps", "must be an integer >= 2")
    _require(_is_int(ds.height) and ds.height >= 1, "dataset.height", "must be an integer >= 1")
    _require(_is_int(ds.width) and ds.width >= 1, "dataset.width", "must be an integer >= 1")
    _require(_is_num(ds.rate_hz) and ds.rate_hz > 0, "dataset.rate_hz", "must be a positive number")
    cb = cfg.codebook
    _require(_is_int(cb.k) and 2 <= cb.k <= 65536, "codebook.k", "must be an integer in [2, 65536]")
    _require(_is_int(cb.dim) and cb.dim >= 2, "codebook.dim", "must be an integer >= 2")
    _require(
        _is_int(cb.n_clusters) and 1 <= cb.n_clusters <= cb.k,
        "codebook.n_clusters",
        "must be an integer in [1, codebook.k]",
    )
    _require(_is_num(cb.spread) and cb.spread >= 0, "codebook.spread", "must be a non-negative number")
    dy = cfg.dynamics
    for name in ("base_change_rate", "burst_prob", "burst_change_rate", "within_cluster_prob"):
        v = getattr(dy, name)
        _require(_is_num(v) and 0.0 <= v <= 1.0, f"dynamics.{name}", "must be a number in [0, 1]")
    _require(
        dy.burst_change_rate >= dy.base_change_rate,
        "dynamics.burst_change_rate",
        "must be >= dynamics.base_change_rate",
    )
    po = cfg.policies
    _require(
        len(po.intervals) > 0 and all(_is_int(n) and n >= 1 for n in po.intervals),
        "policies.intervals",
        "must be a non-empty list of integers >= 1",
    )
    _require(
        len(po.tau_percentiles) > 0 and all(_is_num(q) and 0.0 < q < 100.0 for q in po.tau_percentiles),
        "policies.tau_percentiles",
        "entries must be numbers in (0, 100)",
    )
    _require(_is_int(po.max_gap) and po.max_gap >= 1, "policies.max_gap", "must be an integer >= 1")
    wr = cfg.winrate
    _require(_is_int(wr.n_seeds) and wr.n_seeds >= 1, "winrate.n_seeds", "must be an integer >= 1")
    _require(
        wr.subset_size is None or (_is_int(wr.subset_size) and wr.subset_size >= 1),
        "winrate.subset_size",
        "must be >= 1",
    )
    ut = cfg.utility
    _require(_is_int(ut.context_len) and ut.context_len >= 1, "utility.context_len", "must be an integer >= 1")
    _require(_is_num(ut.smoothing_k) and ut.smoothing_k > 0, "utility.smoothing_k", "must be a positive number")
    _require(
        ut.train_clips is None or (_is_int(ut.train_clips) and ut.train_clips >= 1),
        "utility.train_clips",
        "must be >= 1",
    )
    _require(
        _is_int(ut.sample_timesteps) and ut.sample_timesteps >= 1,
        "utility.sample_timesteps",
        "must be an integer >= 1",
    )
    _require(
        _is_int(ut.sample_positions) and ut.sample_positions >= 1,
        "utility.sample_positions",
        "must be an integer >= 1",
    )
    _require(
        ds.n_steps > ut.context_len,
        "dataset.n_steps",
        f"must exceed utility.context_len={ut.context_len} so the probe can train",
    )


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Parse a YAML config file; None yields defaults. Validates before returning."""
    if path is None:
        cfg = ExperimentConfig()
    else:
        text = Path(path).read_text(encoding="utf-8")
        data = yaml.safe_load(text)
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
        try:
            cfg = _build(ExperimentConfig, data, "")
        except TypeError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
    validate(cfg)
    return cfg


def apply_overrides(
    cfg: ExperimentConfig,
    seed: int | None = None,
    out_dir: str | None = None,
    workers: int | None = None,
    full_scale: bool = False,
) -> ExperimentConfig:
    """Command-line flags win over document values."""
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if out_dir is not None:
        updates["out_dir"] = out_dir
    if workers is not None:
        updates["workers"] = workers
    if full_scale:
        updates["scale"] = "full"
    if not updates:
        return cfg
    cfg = dataclasses.replace(cfg, **updates)
    validate(cfg)
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    """Short stable digest of the fully resolved config."""
    payload = dataclasses.asdict(cfg)
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def provenance_line(cfg: ExperimentConfig) -> str:
    return f"toksync config_hash={config_hash(cfg)} master_seed={cfg.seed}"
