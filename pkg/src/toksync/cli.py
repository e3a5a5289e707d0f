"""Command-line driver: generate | simulate | sweep | utility.

Exit codes: 0 success, 1 config error, 2 I/O error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import report
from .codebook import Codebook, gen_clustered_codebook
from .config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    load_config,
    provenance_line,
)
from .evaluator import (
    ClipStats,
    SweepSpec,
    aggregate_stats,
    evaluate_specs,
    policy_interval,
    policy_label,
    policy_tau,
    rate_match,
    subset_win_rates,
    write_csv,
    write_sweep_csv,
    write_winrate_csv,
)
from .grid import Clip
from .predictor import (
    CountModel,
    PredictorConfig,
    SampleSpec,
    load_model,
    save_model,
    train,
)
from .protocol import AdaptivePolicy, KeyframePolicy, PeriodicPolicy
from .seeds import derive_seed
from .streams import (
    DynamicsConfig,
    StreamFormatError,
    change_rate_distribution,
    gen_clip,
    percentile_threshold,
    read_clip,
    read_codebook,
    write_clip,
    write_codebook,
)

_THRESHOLD_QS = (99.0, 99.5, 99.9)


def _build_codebook(cfg: ExperimentConfig) -> Codebook:
    cbc = cfg.codebook
    return gen_clustered_codebook(
        k=cbc.k,
        dim=cbc.dim,
        n_clusters=cbc.n_clusters,
        spread=cbc.spread,
        seed=derive_seed(cfg.seed, "codebook"),
    )


def _dyn_cfg(cfg: ExperimentConfig, namespace: str, index: int) -> DynamicsConfig:
    dy = cfg.dynamics
    return DynamicsConfig(
        base_change_rate=dy.base_change_rate,
        burst_prob=dy.burst_prob,
        burst_change_rate=dy.burst_change_rate,
        within_cluster_prob=dy.within_cluster_prob,
        seed=derive_seed(cfg.seed, namespace, index),
    )


def _gen_clips(cfg: ExperimentConfig, cb: Codebook, count: int, namespace: str) -> list[Clip]:
    ds = cfg.dataset
    return [
        gen_clip(_dyn_cfg(cfg, namespace, i), cb, ds.n_steps, ds.height, ds.width, ds.rate_hz)
        for i in range(count)
    ]


def _clips_dir(out: Path) -> Path:
    return out / "clips"


def _codebook_path(out: Path) -> Path:
    return out / "codebook.tkcb"


def _load_inputs(cfg: ExperimentConfig, out: Path) -> tuple[list[Clip], Codebook]:
    """Read the generated dataset; the codebook regains its cluster metadata
    from the config since the file format does not store it."""
    cb_path = _codebook_path(out)
    if not cb_path.exists():
        raise FileNotFoundError(f"missing codebook {cb_path}; run 'toksync generate' first")
    loaded = read_codebook(cb_path)
    cb = Codebook(embeddings=loaded.embeddings, n_clusters=cfg.codebook.n_clusters)
    clip_paths = sorted(_clips_dir(out).glob("clip_*.tks"))
    if not clip_paths:
        raise FileNotFoundError(
            f"no clip files under {_clips_dir(out)}; run 'toksync generate' first"
        )
    clips = [
        read_clip(p, rate_hz=cfg.dataset.rate_hz, expected_k=cfg.codebook.k) for p in clip_paths
    ]
    return clips, cb


def _adaptive_taus(cfg: ExperimentConfig, clips: Sequence[Clip]) -> list[float]:
    dist = change_rate_distribution(clips)
    return [percentile_threshold(dist, q) for q in cfg.policies.tau_percentiles]


def _policies(cfg: ExperimentConfig, taus: Sequence[float]) -> list[KeyframePolicy]:
    pols: list[KeyframePolicy] = [PeriodicPolicy(n) for n in cfg.policies.intervals]
    pols += [AdaptivePolicy(tau_h=tau, max_gap=cfg.policies.max_gap) for tau in taus]
    return pols


def _sweep_specs(cfg: ExperimentConfig, policies: Sequence[KeyframePolicy]) -> list[SweepSpec]:
    """Lossless points across all budgets plus a loss grid at one budget."""
    specs: list[SweepSpec] = []
    seen: set = set()

    def add(policy: KeyframePolicy, budget: int, p: float) -> None:
        key = (policy, budget, p)
        if key not in seen:
            seen.add(key)
            specs.append(SweepSpec(policy=policy, budget_bytes=budget, drop_prob=p))

    for pol in policies:
        for budget in cfg.budgets:
            add(pol, budget, 0.0)
    for pol in policies:
        for p in (0.0, *cfg.drop_probs):
            add(pol, cfg.loss_budget, p)
    return specs


def _predictor_cfg(cfg: ExperimentConfig) -> PredictorConfig:
    return PredictorConfig(
        context_len=cfg.utility.context_len,
        smoothing_k=cfg.utility.smoothing_k,
        seed=derive_seed(cfg.seed, "predictor"),
    )


def _sample_spec(cfg: ExperimentConfig) -> SampleSpec:
    return SampleSpec(
        n_timesteps=cfg.utility.sample_timesteps,
        n_positions=cfg.utility.sample_positions,
        seed=derive_seed(cfg.seed, "ppl-sample"),
    )


def _load_or_train_model(cfg: ExperimentConfig, out: Path, cb: Codebook) -> CountModel:
    """Reuse a persisted probe when it matches the config; otherwise train and save.

    Training clips come from their own seed namespace so they are disjoint
    from the evaluation dataset.
    """
    path = out / "models" / "probe.npz"
    pcfg = _predictor_cfg(cfg)
    if path.exists():
        model = load_model(path)
        if model.k == cb.k and model.context_len == pcfg.context_len:
            return model
    train_set = _gen_clips(cfg, cb, cfg.train_clips, "train")
    model = train(train_set, pcfg, cb.k)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path)
    return model


def cmd_generate(cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _clips_dir(out).mkdir(parents=True, exist_ok=True)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    cb = _build_codebook(cfg)
    write_codebook(cb, _codebook_path(out))
    clips = _gen_clips(cfg, cb, cfg.n_clips, "clip")
    for i, clip in enumerate(clips):
        write_clip(clip, _clips_dir(out) / f"clip_{i:05d}.tks", cfg.codebook.k)
    dist = change_rate_distribution(clips)
    thresholds = {f"p{q:g}": percentile_threshold(dist, q) for q in _THRESHOLD_QS}
    rows = [
        ("n_clips", len(clips)),
        ("n_steps", cfg.dataset.n_steps),
        ("grid", f"{cfg.dataset.height}x{cfg.dataset.width}"),
        ("k", cfg.codebook.k),
        ("mean_change_rate", float(dist.mean())),
        ("max_change_rate", float(dist.max())),
    ] + [(name, value) for name, value in sorted(thresholds.items())]
    write_csv(out / "generate_stats.csv", provenance_line(cfg), ("stat", "value"), rows)
    report.plot_change_rate_hist(dist, thresholds, out / "figures" / "change_rate_hist.png")
    print(f"wrote {len(clips)} clips, codebook, and stats under {out}")


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> None:
    clips, cb = _load_inputs(cfg, out)
    taus = _adaptive_taus(cfg, clips)
    specs = _sweep_specs(cfg, _policies(cfg, taus))
    stats = evaluate_specs(
        clips, specs, cb, master_seed=cfg.seed, rate_hz=cfg.dataset.rate_hz, workers=cfg.workers
    )
    columns = (
        "policy_id",
        "tau_h",
        "interval",
        "budget_bytes",
        "drop_prob",
        "clip_index",
        "bitrate_mbps",
        "d_dyn",
        "mismatch_rate",
        "keyframes",
    )

    def rows():
        for st in stats:
            rates = st.per_clip_bitrate(cfg.dataset.rate_hz)
            ddyn = st.per_clip_ddyn()
            for c in range(st.n_clips):
                yield (
                    policy_label(st.spec.policy),
                    policy_tau(st.spec.policy),
                    policy_interval(st.spec.policy),
                    st.spec.budget_bytes,
                    st.spec.drop_prob,
                    c,
                    float(rates[c]),
                    None if np.isnan(ddyn[c]) else float(ddyn[c]),
                    float(st.mismatch_count[c] / st.positions_total[c]),
                    int(st.keyframes[c]),
                )

    write_csv(out / "simulate.csv", provenance_line(cfg), columns, rows())
    print(f"wrote per-clip metrics for {len(specs)} configurations to {out / 'simulate.csv'}")


def _find_stats(
    stats: Sequence[ClipStats], policy: KeyframePolicy, budget: int, p: float
) -> ClipStats:
    for st in stats:
        if st.spec.policy == policy and st.spec.budget_bytes == budget and st.spec.drop_prob == p:
            return st
    raise KeyError(f"no stats for {policy} B={budget} p={p}")


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> None:
    clips, cb = _load_inputs(cfg, out)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    taus = _adaptive_taus(cfg, clips)
    policies = _policies(cfg, taus)
    specs = _sweep_specs(cfg, policies)
    model = _load_or_train_model(cfg, out, cb)
    stats = evaluate_specs(
        clips,
        specs,
        cb,
        master_seed=cfg.seed,
        rate_hz=cfg.dataset.rate_hz,
        workers=cfg.workers,
        model=model,
        pred_cfg=_predictor_cfg(cfg),
        sample=_sample_spec(cfg),
    )
    rows = [aggregate_stats(st, cfg.dataset.rate_hz, cfg.aggregate) for st in stats]
    by_spec = dict(zip(specs, rows))
    prov = provenance_line(cfg)

    rd_rows = [by_spec[s] for s in specs if s.drop_prob == 0.0]
    loss_rows = [by_spec[s] for s in specs if s.budget_bytes == cfg.loss_budget]
    kf_rows = [r for r in rd_rows if r.tau_h is not None]
    write_sweep_csv(out / "rd_curve.csv", rd_rows, prov)
    write_sweep_csv(out / "loss_robustness.csv", loss_rows, prov)
    write_sweep_csv(out / "keyframes_vs_tau.csv", kf_rows, prov)
    write_sweep_csv(out / "utility_vs_bitrate.csv", rows, prov)

    # win rate: first percentile-derived adaptive policy vs its nearest-rate
    # periodic baseline, both at the loss-study budget on the lossless link
    adaptive_policy = AdaptivePolicy(tau_h=taus[0], max_gap=cfg.policies.max_gap)
    periodic_rd = [
        by_spec[s]
        for s in specs
        if s.drop_prob == 0.0
        and s.budget_bytes == cfg.loss_budget
        and isinstance(s.policy, PeriodicPolicy)
    ]
    adaptive_row = by_spec[SweepSpec(adaptive_policy, cfg.loss_budget, 0.0)]
    pair = rate_match(periodic_rd, [adaptive_row])[0]
    assert pair.periodic.interval is not None
    periodic_policy = PeriodicPolicy(pair.periodic.interval)
    a_stats = _find_stats(stats, adaptive_policy, cfg.loss_budget, 0.0)
    p_stats = _find_stats(stats, periodic_policy, cfg.loss_budget, 0.0)
    subset = min(cfg.winrate_subset_size, len(clips))
    wins = subset_win_rates(
        a_stats.per_clip_ddyn(),
        p_stats.per_clip_ddyn(),
        n_seeds=cfg.winrate.n_seeds,
        subset_size=subset,
        seed=cfg.seed,
    )
    write_winrate_csv(out / "winrate.csv", wins, pair, prov)

    report.plot_rd_curve(rd_rows, out / "figures" / "rd_curve.png")
    report.plot_loss_robustness(loss_rows, out / "figures" / "loss_robustness.png")
    report.plot_keyframes_vs_tau(kf_rows, out / "figures" / "keyframes_vs_tau.png")
    report.plot_utility_vs_bitrate(rows, out / "figures" / "utility_vs_bitrate.png")
    n_win = sum(w.adaptive_win for w in wins)
    print(
        f"wrote rd_curve, loss_robustness, keyframes_vs_tau, utility_vs_bitrate, winrate "
        f"({n_win}/{len(wins)} adaptive wins) under {out}"
    )


def cmd_utility(cfg: ExperimentConfig, out: Path) -> None:
    clips, cb = _load_inputs(cfg, out)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    taus = _adaptive_taus(cfg, clips)
    # periodic n=1 is the perfect-sync reference: every step is a keyframe
    policies: list[KeyframePolicy] = [PeriodicPolicy(1)] + _policies(cfg, taus)
    specs = _sweep_specs(cfg, policies)
    model = _load_or_train_model(cfg, out, cb)
    stats = evaluate_specs(
        clips,
        specs,
        cb,
        master_seed=cfg.seed,
        rate_hz=cfg.dataset.rate_hz,
        workers=cfg.workers,
        model=model,
        pred_cfg=_predictor_cfg(cfg),
        sample=_sample_spec(cfg),
    )
    rows = [aggregate_stats(st, cfg.dataset.rate_hz, cfg.aggregate) for st in stats]
    write_sweep_csv(out / "utility.csv", rows, provenance_line(cfg))
    report.plot_utility_vs_bitrate(rows, out / "figures" / "utility.png")
    print(f"wrote perplexity table for {len(specs)} configurations to {out / 'utility.csv'}")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D102 - argparse hook
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="toksync", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML experiment config")
    common.add_argument("--out", type=str, default=None, help="output directory (overrides config)")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    common.add_argument("--workers", type=int, default=None, help="parallel clip workers")
    common.add_argument(
        "--full-scale", action="store_true", help="use the full-scale clip counts"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="synthesize clips + codebook").set_defaults(
        func=cmd_generate
    )
    sub.add_parser("simulate", parents=[common], help="per-clip streaming metrics").set_defaults(
        func=cmd_simulate
    )
    sub.add_parser("sweep", parents=[common], help="figure CSVs + win-rate table").set_defaults(
        func=cmd_sweep
    )
    sub.add_parser("utility", parents=[common], help="probe perplexity vs bitrate").set_defaults(
        func=cmd_utility
    )
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config)
        cfg = apply_overrides(
            cfg,
            seed=args.seed,
            out_dir=args.out,
            workers=args.workers,
            full_scale=args.full_scale,
        )
        args.func(cfg, Path(cfg.out_dir))
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, StreamFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - catch-all contract
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
