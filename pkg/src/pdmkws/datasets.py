"""Dataset ingestion and synthesis.

Reads the Google Speech Commands v2 directory layout (class subdirectories of
WAV files plus validation_list.txt / testing_list.txt) and generates a
deterministic synthetic keyword dataset materialized in the same layout, so
every downstream path is identical for both.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .signal_io import PcmSignal, read_wav, write_wav

SAMPLE_RATE = 16000
CLIP_SECONDS = 1.0


@dataclass
class LabeledUtterance:
    """One fixed-length clip: a source id, a label and its waveform."""

    source_id: str
    label: int
    sample_rate_hz: int = SAMPLE_RATE
    path: Path | None = None
    samples: np.ndarray | None = None

    @property
    def signal(self) -> PcmSignal:
        if self.samples is None:
            pcm = read_wav(self.path)
            samples = _fix_length(pcm.samples, int(pcm.sample_rate_hz * CLIP_SECONDS))
            return PcmSignal(samples, pcm.sample_rate_hz)
        return PcmSignal(self.samples, self.sample_rate_hz)


@dataclass
class DataSplits:
    """Train/valid/test utterance lists with the shared class names."""

    train: list[LabeledUtterance]
    valid: list[LabeledUtterance]
    test: list[LabeledUtterance]
    class_names: tuple[str, ...]
    sample_rate_hz: int = SAMPLE_RATE

    def all_items(self) -> list[LabeledUtterance]:
        return self.train + self.valid + self.test


def _fix_length(samples: np.ndarray, n: int) -> np.ndarray:
    if len(samples) >= n:
        return samples[:n]
    return np.concatenate([samples, np.zeros(n - len(samples))])


def load_gsc(root) -> DataSplits:
    """Load a GSC-v2-layout directory.

    Membership in valid/test is decided by the list files; everything else is
    training. Clips are zero-padded (or truncated) to exactly one second.
    Directories starting with an underscore (e.g. _background_noise_) are
    skipped with a warning.
    """
    root = Path(root)
    if not root.is_dir():
        raise FormatError(f"{root}: not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    skipped = [d for d in class_dirs if d.name.startswith("_")]
    for d in skipped:
        warnings.warn(f"skipping non-class directory {d.name}")
    class_dirs = [d for d in class_dirs if not d.name.startswith("_")]
    if not class_dirs:
        raise FormatError(f"{root}: no class subdirectories found")
    val_list = root / "validation_list.txt"
    test_list = root / "testing_list.txt"
    if not val_list.is_file() or not test_list.is_file():
        raise FormatError(f"{root}: missing validation_list.txt or testing_list.txt")

    class_names = tuple(d.name for d in class_dirs)
    label_of = {name: i for i, name in enumerate(class_names)}
    valid_ids = set(val_list.read_text().split())
    test_ids = set(test_list.read_text().split())

    splits: dict[str, list[LabeledUtterance]] = {"train": [], "valid": [], "test": []}
    for cdir in class_dirs:
        for wav in sorted(cdir.glob("*.wav")):
            source_id = f"{cdir.name}/{wav.name}"
            utt = LabeledUtterance(source_id, label_of[cdir.name], path=wav)
            if source_id in test_ids:
                splits["test"].append(utt)
            elif source_id in valid_ids:
                splits["valid"].append(utt)
            else:
                splits["train"].append(utt)
    return DataSplits(splits["train"], splits["valid"], splits["test"], class_names)


# -- synthetic keyword dataset ---------------------------------------------------

_TONE_FREQS = (400.0, 800.0, 1600.0, 3200.0)


def _class_waveform(class_idx: int, t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Deterministic waveform family for a class, unit amplitude."""
    phase = rng.uniform(0.0, 2.0 * np.pi)
    if class_idx < len(_TONE_FREQS):
        return np.sin(2.0 * np.pi * _TONE_FREQS[class_idx] * t + phase)
    j = class_idx - len(_TONE_FREQS)
    f0 = 500.0 * 1.35 ** (j // 3)
    kind = j % 3
    if kind == 0:  # up-chirp over one octave
        return np.sin(2.0 * np.pi * f0 * (t + 0.5 * t * t) + phase)
    if kind == 1:  # down-chirp
        return np.sin(2.0 * np.pi * 2.0 * f0 * (t - 0.25 * t * t) + phase)
    mod = 0.5 * (1.0 + np.sin(2.0 * np.pi * 8.0 * t))  # amplitude-modulated tone
    return mod * np.sin(2.0 * np.pi * 3.0 * f0 * t + phase)


def synth_clip(class_idx: int, rng: np.random.Generator) -> np.ndarray:
    """One clip: family waveform, +-3 dB gain jitter, additive noise at 20 dB SNR."""
    t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
    wave = _class_waveform(class_idx, t, rng)
    gain_db = rng.uniform(-3.0, 3.0)
    wave = 0.7 * 10.0 ** (gain_db / 20.0) * wave
    noise_rms = np.sqrt(np.mean(wave**2)) / 10.0 ** (20.0 / 20.0)
    wave = wave + rng.normal(0.0, noise_rms, size=wave.shape)
    return np.clip(wave, -1.0, 1.0)


def synth_class_names(classes: int) -> tuple[str, ...]:
    names = []
    for c in range(classes):
        if c < len(_TONE_FREQS):
            names.append(f"tone{int(_TONE_FREQS[c]):04d}")
        else:
            names.append(f"wave{c:02d}")
    return tuple(names)


def synth_dataset(classes: int = 4, per_class: int = 200, seed: int = 0) -> DataSplits:
    """Deterministic synthetic dataset with an 80/10/10 split.

    The first four classes are pure tones at 400/800/1600/3200 Hz; later
    classes cycle through chirp and amplitude-modulated families.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if per_class < 10:
        raise ValueError(f"need at least 10 clips per class, got {per_class}")
    class_names = synth_class_names(classes)
    splits: dict[str, list[LabeledUtterance]] = {"train": [], "valid": [], "test": []}
    n_valid = per_class // 10
    n_test = per_class // 10
    for c in range(classes):
        for i in range(per_class):
            rng = np.random.default_rng(np.random.SeedSequence((seed, c, i)))
            samples = synth_clip(c, rng)
            utt = LabeledUtterance(
                f"{class_names[c]}/clip_{i:04d}.wav", c, samples=samples
            )
            if i < n_test:
                splits["test"].append(utt)
            elif i < n_test + n_valid:
                splits["valid"].append(utt)
            else:
                splits["train"].append(utt)
    return DataSplits(splits["train"], splits["valid"], splits["test"], class_names)


def materialize(splits: DataSplits, root) -> Path:
    """Write splits to disk in the GSC layout (WAVs + the two list files)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for utt in splits.all_items():
        dest = root / utt.source_id
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_wav(utt.signal, dest)
    (root / "validation_list.txt").write_text(
        "".join(f"{u.source_id}\n" for u in splits.valid)
    )
    (root / "testing_list.txt").write_text(
        "".join(f"{u.source_id}\n" for u in splits.test)
    )
    return root
