"""Open-set speaker identification toolkit.

Three classifier architectures over a shared MFCC front-end: per-speaker
diagonal GMMs with background-model score normalization, a bank of per-speaker
2-class networks trained against background samples, and a single multi-class
network over all enrolled speakers, plus the open-set metrics (closed-set
recognition rate and the equal error rate with mislabeling folded into the
enrolled-side errors) used to compare them.
"""

__version__ = "0.1.0"

from .dataset import (
    AudioClip,
    CorpusManifest,
    ManifestEntry,
    SpeakerPartition,
    load_wav,
    write_wav,
    split_speakers,
    split_utterances,
)
from .features import (
    FeatureConfig,
    FeatureSet,
    extract_features,
    load_features,
    save_features,
)
from .gmm import DiagGmm, EmConfig, em_fit, load_gmm, mean_log_likelihood, save_gmm
from .mlp import (
    MlpNetwork,
    OptimizerState,
    TrainConfig,
    initialize_network,
    load_mlp,
    save_mlp,
    train,
)
from .openset import (
    EvalCounter,
    OpenSetDecision,
    SpeakerBank,
    gmm_closed_set,
    gmm_verify,
    mean_log_posterior,
    multiclass_open_set,
    subnn_open_set,
    train_subnn_bank,
)
from .metrics import (
    IMPOSTOR,
    ErrorRates,
    ReportRow,
    TrialScore,
    compute_eer,
    csrr,
    det_sweep,
    rates_at_threshold,
)

__all__ = [
    "AudioClip", "CorpusManifest", "ManifestEntry", "SpeakerPartition",
    "load_wav", "write_wav", "split_speakers", "split_utterances",
    "FeatureConfig", "FeatureSet", "extract_features", "load_features",
    "save_features",
    "DiagGmm", "EmConfig", "em_fit", "load_gmm", "mean_log_likelihood",
    "save_gmm",
    "MlpNetwork", "OptimizerState", "TrainConfig", "initialize_network",
    "load_mlp", "save_mlp", "train",
    "EvalCounter", "OpenSetDecision", "SpeakerBank", "gmm_closed_set",
    "gmm_verify", "mean_log_posterior", "multiclass_open_set",
    "subnn_open_set", "train_subnn_bank",
    "IMPOSTOR", "ErrorRates", "ReportRow", "TrialScore", "compute_eer",
    "csrr", "det_sweep", "rates_at_threshold",
]
