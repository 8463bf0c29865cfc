"""Open-set performance metrics over trial score sets.

An enrolled-speaker trial can fail two ways: the utterance is rejected
outright (false rejection) or accepted under the wrong identity
(mislabeling).  The open-set equal error rate is therefore the operating
point where the false-acceptance rate over impostor trials equals the sum of
the false-rejection and mislabeling rates over enrolled trials.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateScoreError

# true_speaker marker for trials whose speaker is outside the enrolled set
IMPOSTOR = "<impostor>"


@dataclass(frozen=True)
class TrialScore:
    utterance_id: str
    true_speaker: str
    predicted_index: int
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError("trial score must be finite")
        if self.predicted_index < 0:
            raise ValueError("predicted_index must be a valid enrolled index")

    @property
    def is_impostor(self):
        return self.true_speaker == IMPOSTOR


@dataclass(frozen=True)
class ErrorRates:
    far: float
    frr: float
    mlr: float
    threshold: float


def csrr(trials, speaker_ids):
    """Closed-set recognition rate over enrolled trials.

    The fraction of trials whose best-matching model is the true speaker,
    independent of scores and thresholds.  Impostor trials are a usage error
    here: the rate is defined only over the enrolled set.
    """
    trials = list(trials)
    if not trials:
        raise ValueError("need at least one trial")
    speaker_ids = list(speaker_ids)
    correct = 0
    for t in trials:
        if t.is_impostor:
            raise ValueError("closed-set rate is defined over enrolled trials only")
        correct += speaker_ids[t.predicted_index] == t.true_speaker
    return correct / len(trials)


def rates_at_threshold(trials, speaker_ids, theta):
    """Error rates with acceptance defined as score >= theta.

    Over impostor trials: false acceptance.  Over enrolled trials, mutually
    exclusively: false rejection (score below theta, regardless of the
    predicted identity) or mislabeling (accepted but attributed to the wrong
    enrolled speaker).
    """
    speaker_ids = list(speaker_ids)
    n_imp = n_enr = false_accept = false_reject = mislabel = 0
    for t in trials:
        if t.is_impostor:
            n_imp += 1
            false_accept += t.score >= theta
        else:
            n_enr += 1
            if t.score < theta:
                false_reject += 1
            elif speaker_ids[t.predicted_index] != t.true_speaker:
                mislabel += 1
    if n_imp == 0 or n_enr == 0:
        raise ValueError("need at least one enrolled and one impostor trial")
    return ErrorRates(far=false_accept / n_imp, frr=false_reject / n_enr,
                      mlr=mislabel / n_enr, threshold=float(theta))


def _operating_points(trials, speaker_ids):
    """FAR/FRR/MLR at every distinct score plus a reject-all sentinel.

    Sorted-count lookups make the full sweep O(n log n); the per-threshold
    loop in rates_at_threshold stays as the definitional reference.
    """
    ids = list(speaker_ids)
    imp_scores, enr_scores, wrong_scores = [], [], []
    for t in trials:
        if t.is_impostor:
            imp_scores.append(t.score)
        else:
            enr_scores.append(t.score)
            if ids[t.predicted_index] != t.true_speaker:
                wrong_scores.append(t.score)
    imp = np.sort(imp_scores)
    enr = np.sort(enr_scores)
    wrong = np.sort(wrong_scores)
    thresholds = np.unique(np.concatenate([imp, enr]))
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)
    far = (imp.size - np.searchsorted(imp, thresholds, side="left")) / imp.size
    frr = np.searchsorted(enr, thresholds, side="left") / enr.size
    mlr = (wrong.size - np.searchsorted(wrong, thresholds, side="left")) / enr.size
    return thresholds, far, frr, mlr


def compute_eer(trials, speaker_ids):
    """Equal error rate where FAR crosses FRR + MLR, with the threshold.

    The threshold sweep visits every distinct trial score (the lowest one is
    the accept-all corner) plus a reject-all sentinel above the maximum.  The
    crossing is located between the first adjacent pair of operating points
    where the sign of FAR - (FRR + MLR) changes, and both sides are linearly
    interpolated to the exact balance point, making the value grid-free.

    Perfectly separated trial sets (every impostor below every enrolled
    score, all identities correct) report an EER of 0 at the midpoint of the
    score gap.
    """
    trials = list(trials)
    enrolled = [t for t in trials if not t.is_impostor]
    impostor = [t for t in trials if t.is_impostor]
    if not enrolled or not impostor:
        raise ValueError("need at least one enrolled and one impostor trial")
    ids = list(speaker_ids)

    all_correct = all(ids[t.predicted_index] == t.true_speaker for t in enrolled)
    max_imp = max(t.score for t in impostor)
    min_enr = min(t.score for t in enrolled)
    if all_correct and max_imp < min_enr:
        return 0.0, (max_imp + min_enr) / 2.0

    thresholds, far, frr, mlr = _operating_points(trials, ids)
    diffs = far - (frr + mlr)
    crossings = np.flatnonzero((diffs[:-1] >= 0.0) & (diffs[1:] <= 0.0))
    if crossings.size == 0:
        raise DegenerateScoreError(
            "false-acceptance never crosses false-rejection + mislabeling")
    i = int(crossings[0])
    span = diffs[i] - diffs[i + 1]
    t = diffs[i] / span if span > 0.0 else 0.0
    eer = far[i] + t * (far[i + 1] - far[i])
    theta = thresholds[i] + t * (thresholds[i + 1] - thresholds[i])
    return float(eer), float(theta)


def det_sweep(trials, speaker_ids, num_points):
    """Operating curve: rates at evenly spaced thresholds over the score range.

    The lowest threshold is the accept-all corner; the highest sits at the
    maximum score, where only top-scoring trials remain accepted.
    """
    if num_points < 2:
        raise ValueError("num_points must be at least 2")
    trials = list(trials)
    scores = [t.score for t in trials]
    thresholds = np.linspace(min(scores), max(scores), num_points)
    return [rates_at_threshold(trials, speaker_ids, th) for th in thresholds]


def write_trials(path, trials, architecture):
    """Trial score CSV; scores are written with full float round-trip precision."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["utterance_id", "true_speaker", "predicted_index",
                         "score", "architecture"])
        for t in trials:
            writer.writerow([t.utterance_id, t.true_speaker, t.predicted_index,
                             repr(float(t.score)), architecture])


def read_trials(path):
    """Read a trial CSV back; returns (trials, architecture tag)."""
    trials = []
    archs = set()
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            trials.append(TrialScore(
                utterance_id=row["utterance_id"],
                true_speaker=row["true_speaker"],
                predicted_index=int(row["predicted_index"]),
                score=float(row["score"]),
            ))
            archs.add(row["architecture"])
    if len(archs) > 1:
        raise ValueError(f"{path}: trial file mixes architectures {sorted(archs)}")
    return trials, (archs.pop() if archs else "")


@dataclass(frozen=True)
class ReportRow:
    architecture: str
    population_size: int
    csrr: float
    eer: float
    theta_star: float


def write_report(path, rows):
    """Summary CSV: one row per (architecture, population size)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["architecture", "population_size", "csrr", "eer",
                         "theta_star"])
        for r in rows:
            writer.writerow([r.architecture, r.population_size,
                             repr(float(r.csrr)), repr(float(r.eer)),
                             repr(float(r.theta_star))])


def read_report(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            rows.append(ReportRow(
                architecture=row["architecture"],
                population_size=int(row["population_size"]),
                csrr=float(row["csrr"]),
                eer=float(row["eer"]),
                theta_star=float(row["theta_star"]),
            ))
    return rows
