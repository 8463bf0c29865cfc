"""Command-line pipeline: extract, train-ubm, train, evaluate, report.

Each command is independently runnable so long pipelines can resume, and
every run writes a metadata file (config snapshot, seed, tool version,
wall-clock) sufficient to reproduce it.  Runs are deterministic given the
seed: repeating a pipeline yields byte-identical model files and reports.

Configuration is a flat ``key = value`` file with ``#`` comments; every key
can be overridden by a command-line flag of the same name.
"""

import argparse
import csv
import os
import re
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from . import __version__
from . import dataset as dataset_mod
from . import features as features_mod
from . import gmm as gmm_mod
from . import metrics as metrics_mod
from . import mlp as mlp_mod
from . import openset as openset_mod
from .errors import OsidError

ARCHITECTURES = ("gmm", "subnn", "multiclass")

FEATURES_DIR = "features"
FEATURE_INDEX = "index.csv"
UBM_FILE = "ubm.gmm"


@dataclass(frozen=True)
class RunConfig:
    manifest_path: str = ""
    partition_path: str = ""
    output_dir: str = "out"
    architecture: str = "gmm"
    seed: int = 0
    threads: int = 1
    sample_rate: int = 16000
    # front-end
    pre_emphasis_mu: float = 0.98
    window_ms: float = 20.0
    overlap_fraction: float = 0.5
    num_mel_filters: int = 26
    num_ceps: int = 24
    vad_threshold_db: float = 30.0
    # mixture models
    speaker_gmm_components: int = 64
    ubm_components: int = 1024
    em_max_iterations: int = 100
    em_rel_tol: float = 1e-5
    variance_floor: float = 1e-4
    kmeans_iterations: int = 20
    # network training
    learning_rate: float = mlp_mod.DEFAULT_LEARNING_RATE
    momentum: float = mlp_mod.DEFAULT_MOMENTUM
    rms_decay: float = mlp_mod.DEFAULT_RMS_DECAY
    rms_epsilon: float = mlp_mod.DEFAULT_RMS_EPSILON
    subnn_hidden: tuple = mlp_mod.SUBNN_HIDDEN
    subnn_epochs: int = mlp_mod.SUBNN_EPOCHS
    subnn_batch_size: int = mlp_mod.SUBNN_BATCH_SIZE
    multiclass_hidden: tuple = mlp_mod.MULTICLASS_HIDDEN
    multiclass_epochs: int = mlp_mod.MULTICLASS_EPOCHS
    multiclass_batch_size: int = mlp_mod.MULTICLASS_BATCH_SIZE
    neg_ratio: float = 1.0
    # experiment design
    train_fraction: float = 0.7
    population_sizes: tuple = (100, 300, 500, 700)

    def feature_config(self):
        return features_mod.FeatureConfig(
            pre_emphasis_mu=self.pre_emphasis_mu,
            window_ms=self.window_ms,
            overlap_fraction=self.overlap_fraction,
            num_mel_filters=self.num_mel_filters,
            num_ceps=self.num_ceps,
            vad_threshold_db=self.vad_threshold_db,
        )

    def em_config(self, seed):
        return gmm_mod.EmConfig(
            max_iterations=self.em_max_iterations,
            rel_tol=self.em_rel_tol,
            variance_floor=self.variance_floor,
            kmeans_iterations=self.kmeans_iterations,
            seed=seed,
        )


def _parse_value(raw, kind):
    raw = raw.strip()
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is tuple:
        return tuple(int(part) for part in raw.split(",") if part.strip())
    return raw


def load_config(path):
    """Parse a flat key = value config file into a RunConfig."""
    kinds = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in kinds:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(raw, kinds[key])
    return replace(RunConfig(), **values)


def write_config(path, cfg):
    with open(path, "w", encoding="utf-8") as f:
        for fld in fields(RunConfig):
            value = getattr(cfg, fld.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            f.write(f"{fld.name} = {value}\n")


def _write_metadata(cfg, command, elapsed):
    path = os.path.join(cfg.output_dir, f"meta_{command}.txt")
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"tool_version = {__version__}\n")
        f.write(f"command = {command}\n")
        f.write(f"wall_clock_s = {elapsed:.3f}\n")
        for fld in fields(RunConfig):
            value = getattr(cfg, fld.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            f.write(f"{fld.name} = {value}\n")


def _safe_name(raw):
    return re.sub(r"[^A-Za-z0-9._-]", "_", raw)


def _speaker_seed(base_seed, speaker_id):
    """Stable per-speaker seed; independent of process hash randomization."""
    return base_seed + zlib.crc32(speaker_id.encode("utf-8"))


def _cache_name(speaker_id, utterance_id):
    return f"{_safe_name(speaker_id)}__{_safe_name(utterance_id)}.feat"


def _index_path(cfg):
    return os.path.join(cfg.output_dir, FEATURES_DIR, FEATURE_INDEX)


def _read_index(cfg):
    """Feature index rows keyed by (speaker_id, utterance_id)."""
    index = {}
    with open(_index_path(cfg), newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            index[(row["speaker_id"], row["utterance_id"])] = (
                row["cache_file"], row["status"])
    return index


def cmd_extract(cfg):
    """Extract features for every manifest entry into per-utterance caches.

    Failures (unreadable audio, wrong format, no speech) are recorded in the
    index and the run continues; the exit code reflects whether any occurred.
    """
    started = time.monotonic()
    manifest = dataset_mod.read_manifest(cfg.manifest_path)
    feat_cfg = cfg.feature_config()
    out_dir = os.path.join(cfg.output_dir, FEATURES_DIR)
    os.makedirs(out_dir, exist_ok=True)

    def extract_one(entry):
        cache = _cache_name(entry.speaker_id, entry.utterance_id)
        try:
            clip = dataset_mod.load_wav(entry.path, speaker_id=entry.speaker_id,
                                        utterance_id=entry.utterance_id)
            if clip.sample_rate != cfg.sample_rate:
                raise OsidError(
                    f"sample rate {clip.sample_rate} != configured {cfg.sample_rate}")
            feats = features_mod.extract_features(clip, feat_cfg)
        except (OsidError, OSError) as exc:
            status = ("no_speech" if exc.__class__.__name__ == "NoSpeechError"
                      else f"error:{exc.__class__.__name__}")
            return (entry.speaker_id, entry.utterance_id, "", status, str(exc))
        features_mod.save_features(os.path.join(out_dir, cache), feats)
        return (entry.speaker_id, entry.utterance_id, cache, "ok", "")

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            rows = list(pool.map(extract_one, manifest.entries))
    else:
        rows = [extract_one(e) for e in manifest.entries]

    failures = 0
    with open(_index_path(cfg), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["speaker_id", "utterance_id", "cache_file", "status"])
        for spk, utt, cache, status, message in rows:
            writer.writerow([spk, utt, cache, status])
            if status != "ok":
                failures += 1
                print(f"extract: {spk}/{utt}: {status} {message}", file=sys.stderr)
    _write_metadata(cfg, "extract", time.monotonic() - started)
    print(f"extract: {len(rows) - failures} ok, {failures} failed")
    return 1 if failures else 0


def _load_speaker_features(cfg, index, speaker_ids):
    """Per-speaker list of (utterance_id, FeatureSet) in manifest order."""
    manifest = dataset_mod.read_manifest(cfg.manifest_path)
    out_dir = os.path.join(cfg.output_dir, FEATURES_DIR)
    wanted = set(speaker_ids)
    per_speaker = {spk: [] for spk in speaker_ids}
    for entry in manifest.entries:
        if entry.speaker_id not in wanted:
            continue
        key = (entry.speaker_id, entry.utterance_id)
        cache, status = index.get(key, ("", "missing"))
        if status != "ok":
            continue
        feats = features_mod.load_features(os.path.join(out_dir, cache))
        per_speaker[entry.speaker_id].append((entry.utterance_id, feats))
    return per_speaker


def _split_speaker_utterances(cfg, per_speaker):
    """Apply the per-speaker train/test utterance split with derived seeds."""
    train, test = {}, {}
    for spk, utterances in per_speaker.items():
        if not utterances:
            train[spk], test[spk] = [], []
            continue
        if len(utterances) == 1:
            # A lone utterance cannot support a two-sided split; train on it.
            train[spk], test[spk] = list(utterances), []
            continue
        train[spk], test[spk] = dataset_mod.split_utterances(
            utterances, cfg.train_fraction, _speaker_seed(cfg.seed, spk))
    return train, test


def _training_matrix(utterances):
    return np.vstack([feats.vectors for _, feats in utterances])


def cmd_train_ubm(cfg):
    """Fit the background GMM on the training utterances of UBM-role speakers."""
    started = time.monotonic()
    partition = dataset_mod.read_partition(cfg.partition_path)
    index = _read_index(cfg)
    speakers = sorted(partition.ubm_speakers)
    if not speakers:
        print("train-ubm: partition has no ubm-role speakers", file=sys.stderr)
        return 1
    per_speaker = _load_speaker_features(cfg, index, speakers)
    train_split, _ = _split_speaker_utterances(cfg, per_speaker)
    pools = [_training_matrix(u) for u in train_split.values() if u]
    if not pools:
        print("train-ubm: no usable features for ubm speakers", file=sys.stderr)
        return 1
    data = np.vstack(pools)
    model = gmm_mod.em_fit(data, cfg.ubm_components, cfg.em_config(cfg.seed))
    os.makedirs(cfg.output_dir, exist_ok=True)
    gmm_mod.save_gmm(os.path.join(cfg.output_dir, UBM_FILE), model)
    _write_metadata(cfg, "train-ubm", time.monotonic() - started)
    print(f"train-ubm: {cfg.ubm_components} components on {data.shape[0]} frames")
    return 0


def _enrolled_order(cfg, partition):
    """Canonical enrolled-speaker order: seeded shuffle of the sorted ids.

    Population sweeps enroll nested prefixes of this order, so per-speaker
    models train once and are reused at every population size.
    """
    ids = sorted(partition.enrolled_speakers)
    order = np.random.default_rng(cfg.seed).permutation(len(ids))
    return [ids[i] for i in order]


def _bank_dir(cfg, arch):
    return os.path.join(cfg.output_dir, f"bank_{arch}")


def cmd_train(cfg):
    """Train the configured architecture's models for the enrolled set."""
    started = time.monotonic()
    if cfg.architecture not in ARCHITECTURES:
        print(f"train: unknown architecture {cfg.architecture!r}", file=sys.stderr)
        return 1
    partition = dataset_mod.read_partition(cfg.partition_path)
    index = _read_index(cfg)
    order = _enrolled_order(cfg, partition)
    sizes = sorted(cfg.population_sizes)
    if sizes[-1] > len(order):
        print(f"train: population size {sizes[-1]} exceeds "
              f"{len(order)} enrolled speakers", file=sys.stderr)
        return 1
    enrolled = order[:sizes[-1]]
    per_speaker = _load_speaker_features(cfg, index, enrolled)
    train_split, _ = _split_speaker_utterances(cfg, per_speaker)
    for spk in enrolled:
        if not train_split[spk]:
            print(f"train: no training features for speaker {spk!r}",
                  file=sys.stderr)
            return 1
    matrices = {spk: _training_matrix(train_split[spk]) for spk in enrolled}
    arch = cfg.architecture

    if arch == "gmm":
        ubm = gmm_mod.load_gmm(os.path.join(cfg.output_dir, UBM_FILE))

        def fit_speaker(spk):
            seed = _speaker_seed(cfg.seed, spk)
            return gmm_mod.em_fit(matrices[spk], cfg.speaker_gmm_components,
                                  cfg.em_config(seed))

        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                models = list(pool.map(fit_speaker, enrolled))
        else:
            models = [fit_speaker(spk) for spk in enrolled]
        bank = openset_mod.SpeakerBank(speaker_ids=tuple(enrolled),
                                       models=tuple(models), ubm=ubm)
        openset_mod.save_bank(_bank_dir(cfg, arch), bank, "gmm")
    elif arch == "subnn":
        ubm = gmm_mod.load_gmm(os.path.join(cfg.output_dir, UBM_FILE))
        bank = openset_mod.train_subnn_bank(
            enrolled, [matrices[spk] for spk in enrolled], ubm,
            cfg=mlp_mod.TrainConfig(epochs=cfg.subnn_epochs,
                                    batch_size=cfg.subnn_batch_size,
                                    seed=cfg.seed),
            neg_ratio=cfg.neg_ratio, seed=cfg.seed,
            hidden_dims=tuple(cfg.subnn_hidden),
            optimizer_kwargs=dict(eta=cfg.learning_rate, mu=cfg.momentum,
                                  alpha=cfg.rms_decay, epsilon=cfg.rms_epsilon),
            threads=cfg.threads)
        openset_mod.save_bank(_bank_dir(cfg, arch), bank, "mlp")
    else:
        # One network per population size; enrolling into a multi-class
        # network requires retraining over all of its speakers.
        for size in sizes:
            speakers = order[:size]
            X = np.vstack([matrices[spk] for spk in speakers])
            labels = np.concatenate([
                np.full(matrices[spk].shape[0], i, dtype=np.intp)
                for i, spk in enumerate(speakers)])
            dims = (cfg.num_ceps, *cfg.multiclass_hidden, size)
            net = mlp_mod.initialize_network(dims, seed=cfg.seed + size)
            opt = mlp_mod.OptimizerState.for_network(
                net, eta=cfg.learning_rate, mu=cfg.momentum,
                alpha=cfg.rms_decay, epsilon=cfg.rms_epsilon)
            train_cfg = mlp_mod.TrainConfig(epochs=cfg.multiclass_epochs,
                                            batch_size=cfg.multiclass_batch_size,
                                            seed=cfg.seed + size)
            net, _ = mlp_mod.train(net, X, labels, train_cfg, opt)
            openset_mod.save_multiclass(
                os.path.join(_bank_dir(cfg, arch), f"size_{size}"), net, speakers)

    _write_metadata(cfg, "train", time.monotonic() - started)
    print(f"train: {arch} bank for {len(enrolled)} speakers -> "
          f"{_bank_dir(cfg, arch)}")
    return 0


def _score_trial(arch, bank, net, speaker_ids, feats):
    """Closed-set index and operating score for one utterance."""
    if arch == "gmm":
        best, best_ll = openset_mod.gmm_closed_set(bank, feats)
        decision = openset_mod.gmm_verify(bank, feats, best, best_ll, theta=0.0)
    elif arch == "subnn":
        decision = openset_mod.subnn_open_set(bank, feats, theta=0.0)
    else:
        decision = openset_mod.multiclass_open_set(net, speaker_ids, feats,
                                                   theta=0.0)
    return decision.best_index, decision.score


def _trials_path(cfg, arch, size):
    return os.path.join(cfg.output_dir, f"trials_{arch}_{size}.csv")


def cmd_evaluate(cfg):
    """Score all test utterances per population size and write trial + report CSVs."""
    started = time.monotonic()
    arch = cfg.architecture
    if arch not in ARCHITECTURES:
        print(f"evaluate: unknown architecture {arch!r}", file=sys.stderr)
        return 1
    partition = dataset_mod.read_partition(cfg.partition_path)
    index = _read_index(cfg)
    sizes = sorted(cfg.population_sizes)

    if arch in ("gmm", "subnn"):
        bank = openset_mod.load_bank(_bank_dir(cfg, arch),
                                     "gmm" if arch == "gmm" else "mlp")
        order = list(bank.speaker_ids)
    else:
        order = list(openset_mod.load_multiclass(
            os.path.join(_bank_dir(cfg, arch), f"size_{sizes[-1]}"))[1])
    if sizes[-1] > len(order):
        print(f"evaluate: bank holds {len(order)} speakers, "
              f"population size {sizes[-1]} requested", file=sys.stderr)
        return 1
    if not set(order).issubset(partition.enrolled_speakers):
        print("evaluate: bank speakers are not all enrolled in the partition",
              file=sys.stderr)
        return 1

    enrolled = order[:sizes[-1]]
    impostors = sorted(partition.impostor_speakers)
    per_speaker = _load_speaker_features(cfg, index, enrolled + impostors)
    _, test_split = _split_speaker_utterances(cfg, per_speaker)

    for size in sizes:
        if arch in ("gmm", "subnn"):
            sub_bank = bank.prefix(size)
            net, ids = None, list(sub_bank.speaker_ids)
        else:
            sub_bank = None
            net, ids = openset_mod.load_multiclass(
                os.path.join(_bank_dir(cfg, arch), f"size_{size}"))
            ids = list(ids)
        trials = []
        for spk in ids:
            for utt_id, feats in test_split[spk]:
                best, score = _score_trial(arch, sub_bank, net, ids, feats)
                trials.append(metrics_mod.TrialScore(
                    utterance_id=utt_id, true_speaker=spk,
                    predicted_index=best, score=score))
        for spk in impostors:
            for utt_id, feats in test_split[spk]:
                best, score = _score_trial(arch, sub_bank, net, ids, feats)
                trials.append(metrics_mod.TrialScore(
                    utterance_id=utt_id, true_speaker=metrics_mod.IMPOSTOR,
                    predicted_index=best, score=score))
        metrics_mod.write_trials(_trials_path(cfg, arch, size), trials, arch)
        print(f"evaluate: {arch} size {size}: {len(trials)} trials")

    code = _rebuild_report(cfg)
    _write_metadata(cfg, "evaluate", time.monotonic() - started)
    return code


def _speaker_order_for(cfg, arch, size):
    if arch in ("gmm", "subnn"):
        bank = openset_mod.load_bank(_bank_dir(cfg, arch),
                                     "gmm" if arch == "gmm" else "mlp")
        return list(bank.speaker_ids)[:size]
    _, ids = openset_mod.load_multiclass(
        os.path.join(_bank_dir(cfg, arch), f"size_{size}"))
    return list(ids)


def _rebuild_report(cfg):
    """Recompute the summary report from every trial CSV in the output dir."""
    pattern = re.compile(r"trials_(gmm|subnn|multiclass)_(\d+)\.csv$")
    found = []
    for name in sorted(os.listdir(cfg.output_dir)):
        match = pattern.match(name)
        if match:
            found.append((match.group(1), int(match.group(2))))
    if not found:
        print("report: no trial files found", file=sys.stderr)
        return 1
    rows = []
    for arch, size in sorted(found):
        trials, tag = metrics_mod.read_trials(_trials_path(cfg, arch, size))
        ids = _speaker_order_for(cfg, tag or arch, size)
        enrolled_trials = [t for t in trials if not t.is_impostor]
        rate = metrics_mod.csrr(enrolled_trials, ids)
        eer, theta = metrics_mod.compute_eer(trials, ids)
        rows.append(metrics_mod.ReportRow(architecture=arch,
                                          population_size=size,
                                          csrr=rate, eer=eer, theta_star=theta))
    report_path = os.path.join(cfg.output_dir, "report.csv")
    metrics_mod.write_report(report_path, rows)
    for r in rows:
        print(f"report: {r.architecture} K={r.population_size} "
              f"csrr={r.csrr:.4f} eer={r.eer:.4f} theta={r.theta_star:.6g}")
    return 0


def cmd_report(cfg):
    started = time.monotonic()
    code = _rebuild_report(cfg)
    if code == 0:
        _write_metadata(cfg, "report", time.monotonic() - started)
    return code


def _add_config_flags(parser):
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--arch", dest="architecture", choices=ARCHITECTURES)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", dest="output_dir")
    parser.add_argument("--population-sizes", dest="population_sizes",
                        help="comma-separated enrolled-set sizes")
    parser.add_argument("--threads", type=int)
    for fld in fields(RunConfig):
        if fld.name in ("architecture", "seed", "output_dir",
                        "population_sizes", "threads"):
            continue
        flag = "--" + fld.name.replace("_", "-")
        kind = type(getattr(RunConfig(), fld.name))
        if kind is tuple:
            parser.add_argument(flag, dest=fld.name)
        else:
            parser.add_argument(flag, dest=fld.name, type=kind)


def _resolve_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for fld in fields(RunConfig):
        value = getattr(args, fld.name, None)
        if value is None:
            continue
        if type(getattr(RunConfig(), fld.name)) is tuple and isinstance(value, str):
            value = _parse_value(value, tuple)
        overrides[fld.name] = value
    return replace(cfg, **overrides)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="osid",
        description="Open-set speaker identification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("extract", "extract MFCC features for every manifest entry"),
            ("train-ubm", "fit the background GMM"),
            ("train", "train the configured architecture's speaker models"),
            ("evaluate", "score test utterances and write trial/report CSVs"),
            ("report", "rebuild the report CSV from existing trial files")):
        cmd = sub.add_parser(name, help=help_text)
        _add_config_flags(cmd)
    args = parser.parse_args(argv)
    cfg = _resolve_config(args)
    os.makedirs(cfg.output_dir, exist_ok=True)
    handler = {
        "extract": cmd_extract,
        "train-ubm": cmd_train_ubm,
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "report": cmd_report,
    }[args.command]
    try:
        return handler(cfg)
    except (OsidError, ValueError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"{args.command}: missing input: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
