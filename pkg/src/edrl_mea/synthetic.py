"""Synthetic stand-ins for licensed corpora: Gaussian feature tables,
feature-level noise at target SNRs, and toy waveforms."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dataio import FeatureTable, write_feature_table
from .noise import SNR_LEVELS, Waveform, snr_gain, write_wav

NOISE_TYPES = ("N1", "N2", "N3", "N4", "N5")


def gaussian_table(n_per_class: int = 400, N: int = 88, separation: float = 2.0,
                   seed: int = 0, id_prefix: str = "utt", shift: float = 0.0) -> FeatureTable:
    """Two Gaussian classes with unit variance whose means differ by
    ``separation`` standard deviations in every feature.

    Rows alternate NEG/POS.  Both ``arousal`` and ``valence`` ratings are set
    from the class (POS in [3, 4.5], NEG in [1.2, 2.2]).  ``shift`` offsets
    all means, which mimics a second corpus.
    """
    rng = np.random.default_rng(seed)
    n = 2 * n_per_class
    labels = np.arange(n) % 2
    direction = np.where(labels == 1, 0.5, -0.5)[:, None]
    feats = rng.normal(size=(n, N)) + separation * direction + shift
    rating = np.where(labels == 1, rng.uniform(3.0, 4.5, n), rng.uniform(1.2, 2.2, n))
    ids = tuple(f"{id_prefix}{i:05d}" for i in range(n))
    return FeatureTable(ids, feats, valence=rating.copy(), arousal=rating.copy())


def feature_noise(shape, kind: str, rng: np.random.Generator) -> np.ndarray:
    """Unscaled noise rows of one of five synthetic types."""
    n, N = shape
    if kind == "N1":
        return rng.normal(size=shape)
    if kind == "N2":
        return rng.uniform(-1.0, 1.0, size=shape)
    if kind == "N3":
        return rng.laplace(size=shape)
    if kind == "N4":
        # AR(1) correlation along the feature axis
        e = rng.normal(size=shape)
        out = np.empty(shape)
        out[:, 0] = e[:, 0]
        for j in range(1, N):
            out[:, j] = 0.8 * out[:, j - 1] + np.sqrt(1 - 0.64) * e[:, j]
        return out
    if kind == "N5":
        # sparse impulses; a non-impulse row would be silent, so force one hit
        mask = rng.random(size=shape) < 0.1
        mask[np.arange(n), rng.integers(0, N, n)] = True
        return mask * rng.normal(scale=3.0, size=shape)
    raise ValueError(f"unknown synthetic noise type {kind!r}")


def add_feature_noise(features, kind: str, snr_db: float, seed: int) -> np.ndarray:
    """Add noise to each row so that row RMS / noise RMS equals ``snr_db``."""
    rng = np.random.default_rng(seed)
    x = np.asarray(features, dtype=np.float64)
    noise = feature_noise(x.shape, kind, rng)
    x_rms = np.sqrt(np.mean(x * x, axis=1))
    n_rms = np.sqrt(np.mean(noise * noise, axis=1))
    gains = np.array([snr_gain(a, b, snr_db) for a, b in zip(x_rms, n_rms)])
    return x + gains[:, None] * noise


def noisy_tables(table: FeatureTable, noise_types=NOISE_TYPES, levels=SNR_LEVELS,
                 seed: int = 0) -> dict:
    """``{(noise_id, snr_db): FeatureTable}`` with the clean table's ids."""
    out = {}
    for j, kind in enumerate(noise_types):
        for k, level in enumerate(levels):
            noisy = add_feature_noise(table.features, kind, level, seed * 1000 + 10 * j + k)
            out[(kind, float(level))] = table.with_features(noisy)
    return out


def write_experiment(directory, n_per_class: int = 400, N: int = 88, separation: float = 2.0,
                     seed: int = 0, dimensions=("A",), edrl=None, mbpls=None, forest=None,
                     with_noisy: bool = True, with_inter: bool = False) -> Path:
    """Write feature CSVs plus a pipeline config; returns the config path."""
    directory = Path(directory)
    data = directory / "data"
    table = gaussian_table(n_per_class, N, separation, seed)
    write_feature_table(data / "train.csv", table)
    test_sets = []
    if with_noisy:
        for (nid, level), t in noisy_tables(table, seed=seed).items():
            name = f"noisy_{nid}_{level:g}dB.csv"
            write_feature_table(data / name, t.without_labels())
            test_sets.append({"path": f"data/{name}", "corpus": "intra",
                              "environment": "NOISY", "noise_id": nid, "snr_db": level})
    if with_inter:
        other = gaussian_table(max(n_per_class // 4, 10), N, separation, seed + 101,
                               id_prefix="ext", shift=0.3)
        write_feature_table(data / "inter.csv", other)
        test_sets.append({"path": "data/inter.csv", "corpus": "inter",
                          "environment": "CLEAN"})
    config = {
        "train_table": "data/train.csv",
        "output_dir": "run",
        "seed": seed,
        "feature_dim": N,
        "dimensions": list(dimensions),
        "edrl": edrl or {},
        # late components converge slowly on this data; 500 iterations warns
        "mbpls": mbpls if mbpls is not None else {"max_nipals_iters": 2000},
        "forest": forest or {},
        "test_sets": test_sets,
    }
    path = directory / "config.json"
    path.write_text(json.dumps(config, indent=2))
    return path


def tone(freq: float = 220.0, seconds: float = 1.0, rate: int = 16000,
         amplitude: float = 0.3) -> Waveform:
    t = np.arange(int(seconds * rate)) / rate
    return Waveform(amplitude * np.sin(2 * np.pi * freq * t), rate)


def colored_noise(seconds: float, rate: int = 16000, seed: int = 0, alpha: float = 0.0,
                  amplitude: float = 0.1) -> Waveform:
    """Gaussian noise with a 1/f^alpha power spectrum, peak-normalised."""
    rng = np.random.default_rng(seed)
    n = int(seconds * rate)
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.fft.rfftfreq(n)
    f[0] = f[1]
    spec /= f ** (alpha / 2)
    x = np.fft.irfft(spec, n)
    return Waveform(amplitude * x / np.max(np.abs(x)), rate)


def write_toy_audio(directory, n_clean: int = 2, seed: int = 0):
    """A few tone utterances and five noise recordings as 16-bit WAVs."""
    directory = Path(directory)
    clean_dir, noise_dir = directory / "clean", directory / "noise"
    for i in range(n_clean):
        write_wav(clean_dir / f"utt{i:03d}.wav", tone(180.0 + 40 * i, 1.0 + 0.25 * i))
    for j, (nid, alpha) in enumerate(zip(NOISE_TYPES, (0.0, 0.5, 1.0, 1.5, 2.0))):
        write_wav(noise_dir / f"{nid}.wav", colored_noise(2.0 + j * 0.5, seed=seed + j,
                                                          alpha=alpha))
    return clean_dir, noise_dir
