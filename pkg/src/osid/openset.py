"""The three open-set identification architectures.

Each system realizes the same two-step contract over an utterance's feature
set: a closed-set identification step that picks the best-matching enrolled
model, and a verification step that thresholds that model's score to accept
the identity or reject the utterance as coming from an unknown speaker.

  * Likelihood-ratio system: per-speaker diagonal GMMs scored against a large
    background GMM; the operating score is the mean log-likelihood gap.
  * Per-speaker 2-class networks: one small network per speaker, trained
    against negatives sampled from the background GMM; the score is the
    utterance-averaged posterior of the best network.
  * Multi-class network: a single wide network over all enrolled speakers;
    the score is its largest utterance-averaged class posterior.
"""

import csv
import os
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import gmm as gmm_mod
from . import mlp as mlp_mod
from .errors import BankConfigError, EnrollmentError

TARGET_CLASS = 1  # output index of the speaker class in a 2-class network

BANK_MANIFEST = "manifest.csv"
UBM_FILE = "ubm.gmm"
MULTICLASS_FILE = "multiclass.mlp"
SPEAKERS_FILE = "speakers.csv"


@dataclass
class EvalCounter:
    """Counts per-trial model evaluations, for complexity auditing."""

    model_evaluations: int = 0

    def bump(self, n=1):
        self.model_evaluations += n


@dataclass(frozen=True)
class SpeakerBank:
    """Ordered enrolled speaker models with stable ids.

    models holds DiagGmm instances for the likelihood-ratio system or
    MlpNetwork instances for the 2-class system.  The background model is
    required for GMM scoring and for sampling 2-class negatives.
    """

    speaker_ids: tuple
    models: tuple
    ubm: object = None

    def __post_init__(self):
        ids = tuple(self.speaker_ids)
        models = tuple(self.models)
        if not ids or len(ids) != len(models):
            raise ValueError("need one model per speaker id, at least one speaker")
        if len(set(ids)) != len(ids):
            raise ValueError("speaker ids must be unique")
        object.__setattr__(self, "speaker_ids", ids)
        object.__setattr__(self, "models", models)

    def __len__(self):
        return len(self.speaker_ids)

    def prefix(self, count):
        """Bank restricted to the first count speakers (nested enrollment)."""
        if not 1 <= count <= len(self):
            raise ValueError(f"prefix size {count} out of range")
        return SpeakerBank(speaker_ids=self.speaker_ids[:count],
                           models=self.models[:count], ubm=self.ubm)


@dataclass(frozen=True)
class OpenSetDecision:
    best_index: int
    score: float
    accepted: bool
    threshold: float


def gmm_closed_set(bank, X, counter=None):
    """Pick the enrolled GMM with the highest mean log-likelihood.

    Returns (best index, that model's score).  Ties break toward the lowest
    enrolled index.
    """
    if len(bank) < 1:
        raise ValueError("bank must contain at least one speaker")
    scores = np.array([gmm_mod.mean_log_likelihood(m, X) for m in bank.models])
    if counter is not None:
        counter.bump(len(bank))
    best = int(np.argmax(scores))
    return best, float(scores[best])


def gmm_verify(bank, X, best_index, best_score, theta, counter=None):
    """Accept or reject via the background-normalized likelihood gap."""
    if bank.ubm is None:
        raise BankConfigError("GMM verification requires a background model")
    delta = best_score - gmm_mod.mean_log_likelihood(bank.ubm, X)
    if counter is not None:
        counter.bump()
    return OpenSetDecision(best_index=best_index, score=float(delta),
                           accepted=bool(delta >= theta), threshold=float(theta))


def mean_log_posterior(net, X, class_index):
    """Utterance score: average log posterior of one class over all frames."""
    vectors = np.asarray(getattr(X, "vectors", X), dtype=np.float64)
    if vectors.shape[0] < 1:
        raise ValueError("feature set must contain at least one frame")
    posteriors, _ = mlp_mod.forward_batch(net, vectors)
    return float(np.mean(np.log(np.maximum(posteriors[:, class_index],
                                           mlp_mod.LOSS_FLOOR))))


def train_subnn_bank(speaker_ids, speaker_features, ubm, cfg=None,
                     neg_ratio=1.0, seed=0, hidden_dims=mlp_mod.SUBNN_HIDDEN,
                     optimizer_kwargs=None, threads=1):
    """Train one 2-class network per enrolled speaker.

    The positive class is the speaker's own frames; the negative class is
    synthesized by sampling the background GMM, neg_ratio negatives per
    positive frame, drawn once per speaker with a derived seed (seed + k) so
    banks are exactly reproducible.  Bank order follows the input order.
    """
    speaker_ids = list(speaker_ids)
    feature_list = list(speaker_features)
    if len(speaker_ids) != len(feature_list):
        raise ValueError("need one feature set per speaker id")
    matrices = []
    for spk, feats in zip(speaker_ids, feature_list):
        vectors = np.asarray(getattr(feats, "vectors", feats), dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] < 1:
            raise EnrollmentError(f"speaker {spk!r} has no training frames")
        matrices.append(vectors)
    optimizer_kwargs = optimizer_kwargs or {}

    def fit_one(k):
        positives = matrices[k]
        spk_seed = seed + k
        n_neg = max(int(round(neg_ratio * positives.shape[0])), 1)
        negatives = gmm_mod.sample(ubm, n_neg, seed=spk_seed)
        X = np.vstack([positives, negatives])
        labels = np.concatenate([
            np.full(positives.shape[0], TARGET_CLASS, dtype=np.intp),
            np.zeros(n_neg, dtype=np.intp),
        ])
        dims = (positives.shape[1], *hidden_dims, 2)
        net = mlp_mod.initialize_network(dims, seed=spk_seed)
        opt = mlp_mod.OptimizerState.for_network(net, **optimizer_kwargs)
        if cfg is None:
            train_cfg = mlp_mod.subnn_train_config(seed=spk_seed)
        else:
            train_cfg = mlp_mod.TrainConfig(epochs=cfg.epochs,
                                            batch_size=cfg.batch_size,
                                            seed=spk_seed, shuffle=cfg.shuffle)
        net, _ = mlp_mod.train(net, X, labels, train_cfg, opt)
        return net

    indices = range(len(speaker_ids))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            models = list(pool.map(fit_one, indices))
    else:
        models = [fit_one(k) for k in indices]
    return SpeakerBank(speaker_ids=tuple(speaker_ids), models=tuple(models), ubm=ubm)


def subnn_open_set(bank, X, theta, counter=None):
    """Score all 2-class networks, threshold the best utterance posterior.

    The per-network score is exp of the utterance-averaged log posterior of
    the speaker class, so it lives in [0, 1].
    """
    if len(bank) < 1:
        raise ValueError("bank must contain at least one speaker")
    scores = np.array([
        np.exp(mean_log_posterior(net, X, TARGET_CLASS)) for net in bank.models])
    if counter is not None:
        counter.bump(len(bank))
    best = int(np.argmax(scores))
    score = float(scores[best])
    return OpenSetDecision(best_index=best, score=score,
                           accepted=bool(score >= theta), threshold=float(theta))


def multiclass_open_set(net, speaker_ids, X, theta, counter=None):
    """Single forward pass per frame; threshold the best class score.

    Per-class utterance scores are exp of the frame-averaged log posteriors,
    mirroring the 2-class aggregation, so one network evaluation covers all
    enrolled speakers.
    """
    speaker_ids = tuple(speaker_ids)
    if net.output_dim != len(speaker_ids):
        raise BankConfigError(
            f"network has {net.output_dim} outputs for {len(speaker_ids)} speakers")
    vectors = np.asarray(getattr(X, "vectors", X), dtype=np.float64)
    if vectors.shape[0] < 1:
        raise ValueError("feature set must contain at least one frame")
    posteriors, _ = mlp_mod.forward_batch(net, vectors)
    if counter is not None:
        counter.bump()
    log_scores = np.mean(np.log(np.maximum(posteriors, mlp_mod.LOSS_FLOOR)), axis=0)
    scores = np.exp(log_scores)
    best = int(np.argmax(scores))
    score = float(scores[best])
    return OpenSetDecision(best_index=best, score=score,
                           accepted=bool(score >= theta), threshold=float(theta))


def save_bank(directory, bank, kind):
    """Persist a bank directory: model files plus an ordered manifest.

    kind is "gmm" or "mlp" and selects the model file format; a GMM bank
    also stores its background model alongside the speakers.
    """
    os.makedirs(directory, exist_ok=True)
    suffix = ".gmm" if kind == "gmm" else ".mlp"
    rows = []
    for spk, model in zip(bank.speaker_ids, bank.models):
        filename = f"{spk}{suffix}"
        if kind == "gmm":
            gmm_mod.save_gmm(os.path.join(directory, filename), model)
        else:
            mlp_mod.save_mlp(os.path.join(directory, filename), model)
        rows.append((spk, filename))
    with open(os.path.join(directory, BANK_MANIFEST), "w", newline="",
              encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["speaker_id", "model_file"])
        writer.writerows(rows)
    if kind == "gmm":
        if bank.ubm is None:
            raise BankConfigError("a GMM bank must include its background model")
        gmm_mod.save_gmm(os.path.join(directory, UBM_FILE), bank.ubm)


def load_bank(directory, kind):
    manifest = os.path.join(directory, BANK_MANIFEST)
    ids, models = [], []
    with open(manifest, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            ids.append(row["speaker_id"])
            path = os.path.join(directory, row["model_file"])
            models.append(gmm_mod.load_gmm(path) if kind == "gmm"
                          else mlp_mod.load_mlp(path))
    ubm = None
    ubm_path = os.path.join(directory, UBM_FILE)
    if kind == "gmm":
        ubm = gmm_mod.load_gmm(ubm_path)
    return SpeakerBank(speaker_ids=tuple(ids), models=tuple(models), ubm=ubm)


def save_multiclass(directory, net, speaker_ids):
    os.makedirs(directory, exist_ok=True)
    mlp_mod.save_mlp(os.path.join(directory, MULTICLASS_FILE), net)
    with open(os.path.join(directory, SPEAKERS_FILE), "w", newline="",
              encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["speaker_id"])
        writer.writerows([spk] for spk in speaker_ids)


def load_multiclass(directory):
    net = mlp_mod.load_mlp(os.path.join(directory, MULTICLASS_FILE))
    with open(os.path.join(directory, SPEAKERS_FILE), newline="",
              encoding="utf-8") as f:
        ids = tuple(row["speaker_id"] for row in csv.DictReader(f))
    return net, ids
