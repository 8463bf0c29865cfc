"""Corpus handling: WAV ingest, manifest files, and speaker/utterance splits.

Audio is restricted to PCM 16-bit mono WAV.  Anything else is rejected at
ingest rather than silently converted, so the DSP front-end stays single-path.
"""

import csv
import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSplitError, UnsupportedWavError, WavFormatError

PCM_SCALE = 32768.0

PARTITION_ROLES = ("ubm", "impostor", "enrolled")


@dataclass(frozen=True)
class AudioClip:
    """One utterance: normalized samples in [-1, 1] plus identifying metadata."""

    samples: np.ndarray
    sample_rate: int
    speaker_id: str = ""
    utterance_id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if np.max(np.abs(samples)) > 1.0:
            raise ValueError("samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_seconds(self):
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class ManifestEntry:
    speaker_id: str
    utterance_id: str
    path: str
    duration_seconds: float


@dataclass(frozen=True)
class CorpusManifest:
    """Ordered list of corpus entries with unique (speaker, utterance) pairs."""

    entries: tuple = field(default_factory=tuple)

    def __post_init__(self):
        entries = tuple(self.entries)
        seen = set()
        for e in entries:
            key = (e.speaker_id, e.utterance_id)
            if key in seen:
                raise ValueError(f"duplicate manifest entry {key}")
            if e.duration_seconds <= 0:
                raise ValueError(f"non-positive duration for {key}")
            seen.add(key)
        object.__setattr__(self, "entries", entries)

    def speakers(self):
        """Speaker ids in first-appearance order."""
        out = []
        seen = set()
        for e in self.entries:
            if e.speaker_id not in seen:
                seen.add(e.speaker_id)
                out.append(e.speaker_id)
        return out

    def utterances_of(self, speaker_id):
        return [e for e in self.entries if e.speaker_id == speaker_id]


@dataclass(frozen=True)
class SpeakerPartition:
    """Disjoint speaker roles: background-model, impostor, and enrolled sets."""

    ubm_speakers: frozenset
    impostor_speakers: frozenset
    enrolled_speakers: frozenset

    def __post_init__(self):
        ubm = frozenset(self.ubm_speakers)
        imp = frozenset(self.impostor_speakers)
        enr = frozenset(self.enrolled_speakers)
        if ubm & imp or ubm & enr or imp & enr:
            raise ValueError("partition roles must be pairwise disjoint")
        if not enr:
            raise ValueError("enrolled speaker set must be non-empty")
        object.__setattr__(self, "ubm_speakers", ubm)
        object.__setattr__(self, "impostor_speakers", imp)
        object.__setattr__(self, "enrolled_speakers", enr)


def load_wav(path, speaker_id="", utterance_id=""):
    """Read a PCM 16-bit mono WAV file into an AudioClip.

    Raw 16-bit values are scaled by 1/32768.  Stereo or non-16-bit files are
    rejected outright; there is no downmixing or requantization path.
    """
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            comptype = wf.getcomptype()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: not a readable RIFF/WAVE file ({exc})") from exc
    if comptype != "NONE":
        raise UnsupportedWavError(f"{path}: compressed WAV ({comptype}) not supported")
    if channels != 1:
        raise UnsupportedWavError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise UnsupportedWavError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM_SCALE
    if samples.size == 0:
        raise WavFormatError(f"{path}: empty data chunk")
    return AudioClip(samples=samples, sample_rate=rate,
                     speaker_id=speaker_id, utterance_id=utterance_id)


def write_wav(path, clip):
    """Write an AudioClip back to PCM 16-bit mono WAV.

    Values are clipped to the representable range and rounded toward the
    nearest integer, so load_wav(write_wav(clip)) is exact for clips that
    originated from 16-bit data.
    """
    scaled = np.round(np.asarray(clip.samples, dtype=np.float64) * PCM_SCALE)
    pcm = np.clip(scaled, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())


def split_speakers(all_speakers, ubm_count, impostor_count, enrolled_count, seed):
    """Partition speaker ids into disjoint UBM/impostor/enrolled sets.

    The input is canonicalized by sorting before the seeded shuffle, so the
    result depends only on the set membership and the seed.
    """
    speakers = sorted(all_speakers)
    total = ubm_count + impostor_count + enrolled_count
    if total > len(speakers):
        raise ValueError(
            f"requested {total} speakers but only {len(speakers)} available")
    order = np.random.default_rng(seed).permutation(len(speakers))
    picked = [speakers[i] for i in order]
    return SpeakerPartition(
        ubm_speakers=frozenset(picked[:ubm_count]),
        impostor_speakers=frozenset(picked[ubm_count:ubm_count + impostor_count]),
        enrolled_speakers=frozenset(picked[ubm_count + impostor_count:total]),
    )


def split_utterances(speaker_utterances, train_fraction, seed):
    """Split one speaker's utterances into train/test lists.

    Train size is round(train_fraction * total) with half-up rounding; the
    remainder goes to test.  A split that would leave either side empty is an
    error rather than a silent degenerate set.
    """
    utterances = list(speaker_utterances)
    if not utterances:
        raise ValueError("utterance list must be non-empty")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(utterances)
    n_train = int(np.floor(train_fraction * n + 0.5))
    if n_train == 0 or n_train == n:
        raise DegenerateSplitError(
            f"{n} utterances at fraction {train_fraction} leaves an empty side")
    order = np.random.default_rng(seed).permutation(n)
    train = [utterances[i] for i in sorted(order[:n_train])]
    test = [utterances[i] for i in sorted(order[n_train:])]
    return train, test


def write_manifest(path, manifest):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["speaker_id", "utterance_id", "path", "duration_s"])
        for e in manifest.entries:
            writer.writerow([e.speaker_id, e.utterance_id, e.path,
                             repr(float(e.duration_seconds))])


def read_manifest(path):
    entries = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        expected = {"speaker_id", "utterance_id", "path", "duration_s"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise ValueError(f"{path}: manifest must have columns {sorted(expected)}")
        for row in reader:
            entries.append(ManifestEntry(
                speaker_id=row["speaker_id"],
                utterance_id=row["utterance_id"],
                path=row["path"],
                duration_seconds=float(row["duration_s"]),
            ))
    return CorpusManifest(entries=tuple(entries))


def write_partition(path, partition):
    """Write the speaker-role assignment as a two-column CSV.

    Rows are sorted by (role, speaker_id) so the file is a pure function of
    the partition.
    """
    rows = []
    for role, ids in (("ubm", partition.ubm_speakers),
                      ("impostor", partition.impostor_speakers),
                      ("enrolled", partition.enrolled_speakers)):
        rows.extend((spk, role) for spk in sorted(ids))
    rows.sort(key=lambda r: (r[1], r[0]))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["speaker_id", "role"])
        writer.writerows(rows)


def read_partition(path):
    roles = {"ubm": set(), "impostor": set(), "enrolled": set()}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"speaker_id", "role"}.issubset(reader.fieldnames):
            raise ValueError(f"{path}: partition must have columns speaker_id,role")
        for row in reader:
            role = row["role"]
            if role not in roles:
                raise ValueError(f"{path}: unknown role {role!r}")
            roles[role].add(row["speaker_id"])
    return SpeakerPartition(
        ubm_speakers=frozenset(roles["ubm"]),
        impostor_speakers=frozenset(roles["impostor"]),
        enrolled_speakers=frozenset(roles["enrolled"]),
    )
