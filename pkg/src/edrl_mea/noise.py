"""Additive-noise corruption of clean utterances at target SNRs.

SNR is measured on whole-utterance RMS (no voice-activity weighting):
``snr_db = 20 log10(rms(clean) / rms(scaled_noise))``.  Mixed files are
written as 16-bit PCM; samples outside [-1, 1] are clipped and counted,
never rescaled, so the stored SNR is the requested one up to clipping and
quantisation.
"""
from __future__ import annotations

import csv
import math
import warnings
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    EmptyAudio,
    NumericalWarning,
    SampleRateMismatch,
    SilentSignal,
    UnsupportedChannels,
    UnsupportedEncoding,
    ValidationError,
)

PCM_SCALE = 32767.0
SNR_LEVELS = (0.0, 5.0, 10.0, 15.0, 20.0)
MANIFEST_FIELDS = ("clean_id", "noise_id", "snr_db", "output_path", "gain",
                   "noise_offset", "clipped_samples")


@dataclass(eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size == 0:
            raise EmptyAudio("waveform has no samples")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValidationError("sample rate must be positive")

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class NoiseSpec:
    noise_id: str
    snr_db: float
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise ValidationError("snr_db must be finite")


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM mono WAV file into [-1, 1] floats."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width = wf.getnchannels(), wf.getsampwidth()
            rate, frames = wf.getframerate(), wf.getnframes()
            raw = wf.readframes(frames)
    except wave.Error as exc:
        raise UnsupportedEncoding(f"{path}: {exc}") from None
    except EOFError:
        raise EmptyAudio(f"{path}: empty or truncated file") from None
    if channels != 1:
        raise UnsupportedChannels(f"{path}: {channels} channels, only mono is supported")
    if width != 2:
        raise UnsupportedEncoding(f"{path}: {8 * width}-bit samples, only 16-bit PCM")
    if frames == 0 or not raw:
        raise EmptyAudio(f"{path}: zero-length audio")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM_SCALE
    return Waveform(np.clip(data, -1.0, 1.0), rate)


def write_wav(path, waveform: Waveform) -> int:
    """Write 16-bit PCM mono; returns the number of clipped samples."""
    samples = waveform.samples
    clipped = int(np.count_nonzero(np.abs(samples) > 1.0))
    if clipped:
        warnings.warn(f"{path}: {clipped} sample(s) clipped to [-1, 1]",
                      NumericalWarning, stacklevel=2)
    pcm = np.round(np.clip(samples, -1.0, 1.0) * PCM_SCALE).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(waveform.sample_rate))
        wf.writeframes(pcm.tobytes())
    return clipped


def rms(w) -> float:
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if samples.size == 0:
        raise EmptyAudio("RMS of an empty signal")
    value = float(np.sqrt(np.mean(samples * samples)))
    if value == 0.0:
        warnings.warn("all-zero signal: SNR is undefined", NumericalWarning, stacklevel=2)
    return value


def noise_segment(noise: np.ndarray, length: int, rng: np.random.Generator):
    """``length`` samples of ``noise`` and the start offset used.

    Longer noise: a uniformly random window.  Shorter noise: cyclic tiling
    from a random offset.
    """
    n = noise.size
    if n >= length:
        offset = int(rng.integers(0, n - length + 1))
        return noise[offset:offset + length], offset
    offset = int(rng.integers(0, n))
    idx = (offset + np.arange(length)) % n
    return noise[idx], offset


def snr_gain(clean_rms: float, noise_rms: float, snr_db: float) -> float:
    return (clean_rms / noise_rms) * 10.0 ** (-snr_db / 20.0)


def mix_at_snr(clean: Waveform, noise: Waveform, spec: NoiseSpec, rng=None,
               return_details: bool = False):
    """Add ``noise`` to ``clean`` so that the result has SNR ``spec.snr_db``.

    The segment offset is drawn from ``rng`` (default: seeded by
    ``spec.seed``).  With ``return_details`` a ``(waveform, gain, offset)``
    tuple is returned.
    """
    if clean.sample_rate != noise.sample_rate:
        raise SampleRateMismatch(f"{clean.sample_rate} Hz vs {noise.sample_rate} Hz")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    segment, offset = noise_segment(noise.samples, len(clean), rng)
    clean_rms = float(np.sqrt(np.mean(clean.samples ** 2)))
    seg_rms = float(np.sqrt(np.mean(segment ** 2)))
    if clean_rms == 0.0:
        raise SilentSignal("clean signal is silent; SNR undefined")
    if seg_rms == 0.0:
        raise SilentSignal("noise segment is silent; SNR undefined")
    gain = snr_gain(clean_rms, seg_rms, spec.snr_db)
    mixed = Waveform(clean.samples + gain * segment, clean.sample_rate)
    if return_details:
        return mixed, gain, offset
    return mixed


def measure_snr(clean: Waveform, noisy: Waveform) -> float:
    """SNR of ``noisy`` relative to ``clean`` in dB; ``inf`` when identical."""
    a = clean.samples if isinstance(clean, Waveform) else np.asarray(clean, float)
    b = noisy.samples if isinstance(noisy, Waveform) else np.asarray(noisy, float)
    if a.shape != b.shape:
        raise ValidationError(f"length mismatch: {a.size} vs {b.size}")
    residual = np.sqrt(np.mean((b - a) ** 2))
    if residual == 0.0:
        return math.inf
    signal = np.sqrt(np.mean(a * a))
    if signal == 0.0:
        return -math.inf
    return float(20.0 * np.log10(signal / residual))


def _job_rng(seed: int, i: int, j: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, i, j, k])


def corrupt_testset(clean_paths, noise_paths, levels=SNR_LEVELS, seed: int = 0,
                    output_dir="corrupted", manifest_path=None) -> list:
    """Mix every clean file with every noise at every level.

    Writes ``<clean_id>__<noise_id>__<snr>dB.wav`` files under
    ``output_dir`` and a CSV manifest (default ``output_dir/manifest.csv``).
    Each job draws its noise offset from its own stream derived from
    ``(seed, clean index, noise index, level index)``.  Returns the manifest
    rows as dicts.
    """
    clean_paths = [Path(p) for p in clean_paths]
    noise_paths = [Path(p) for p in noise_paths]
    levels = [float(v) for v in levels]
    if not clean_paths or not noise_paths or not levels:
        raise ValidationError("clean files, noise files and SNR levels must be non-empty")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    noises = [(p.stem, read_wav(p)) for p in noise_paths]
    rows = []
    for i, cp in enumerate(clean_paths):
        clean = read_wav(cp)
        for j, (noise_id, noise) in enumerate(noises):
            for k, level in enumerate(levels):
                spec = NoiseSpec(noise_id, level, seed)
                mixed, gain, offset = mix_at_snr(clean, noise, spec, _job_rng(seed, i, j, k),
                                                 return_details=True)
                out = output_dir / f"{cp.stem}__{noise_id}__{level:g}dB.wav"
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", NumericalWarning)
                    clipped = write_wav(out, mixed)
                rows.append({"clean_id": cp.stem, "noise_id": noise_id, "snr_db": level,
                             "output_path": str(out), "gain": gain, "noise_offset": offset,
                             "clipped_samples": clipped})
    total_clipped = sum(r["clipped_samples"] for r in rows)
    if total_clipped:
        warnings.warn(f"{total_clipped} sample(s) clipped across {len(rows)} mixtures",
                      NumericalWarning, stacklevel=2)
    manifest_path = Path(manifest_path) if manifest_path else output_dir / "manifest.csv"
    write_corruption_manifest(manifest_path, rows)
    return rows


def write_corruption_manifest(path, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for r in rows:
            writer.writerow([r["clean_id"], r["noise_id"], f"{r['snr_db']:g}", r["output_path"],
                             repr(float(r["gain"])), r["noise_offset"], r["clipped_samples"]])


def read_corruption_manifest(path) -> list:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["snr_db"] = float(r["snr_db"])
        r["gain"] = float(r["gain"])
        r["noise_offset"] = int(r["noise_offset"])
        r["clipped_samples"] = int(r["clipped_samples"])
    return rows
