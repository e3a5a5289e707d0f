"""toksync: keyframe-delta streaming of discrete token grids over lossy links.

A sender keeps an optimistic reference of the receiver's token grid and sends
either full keyframes or budget-limited delta updates ranked by embedding
change.  This package simulates that loop over synthetic token streams and
measures bitrate, reconstruction fidelity, keyframe behavior, and downstream
next-token predictability.
"""

from .channel import Channel, ChannelConfig
from .codebook import Codebook, cosine_change, gen_clustered_codebook, normalize_rows
from .config import ConfigError, ExperimentConfig, config_hash, load_config
from .evaluator import (
    ClipStats,
    ClipTrace,
    MatchedPair,
    RunConfig,
    SeedWin,
    StepRecord,
    SweepResult,
    SweepRow,
    SweepSpec,
    aggregate_stats,
    bitrate_mbps,
    evaluate_specs,
    rate_match,
    run_clip,
    subset_win_rates,
    sweep,
    write_sweep_csv,
    write_winrate_csv,
)
from .grid import (
    Clip,
    DynamicMask,
    TokenGrid,
    dyn_embedding_distortion,
    dynamic_mask,
    hamming_drift,
    mismatch_rate,
)
from .predictor import (
    CountModel,
    PredictorConfig,
    SampleSpec,
    default_interpolation_weights,
    eval_perplexity,
    load_model,
    predict,
    predict_targets,
    sample_indices,
    save_model,
    train,
)
from .protocol import (
    AdaptivePolicy,
    BudgetModel,
    DeltaMessage,
    KeyframeMessage,
    PeriodicPolicy,
    ReceiverState,
    SenderState,
    budget_capacity,
    decode_message,
    encode_message,
    message_bytes,
    receiver_apply,
    select_deltas,
    sender_step,
)
from .seeds import derive_rng, derive_seed
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

__version__ = "0.1.0"
