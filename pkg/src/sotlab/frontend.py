"""Log-mel filterbank features and frame stacking."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    n_mels: int = 80
    frame_length: float = 0.025
    frame_shift: float = 0.010
    fmin: float = 20.0
    fmax: float | None = None  # None -> sample_rate / 2 - 100
    floor: float = 1e-10
    preemphasis: float = 0.97
    stack: int = 3
    mean_norm: bool = True

    @property
    def upper_frequency(self) -> float:
        return self.sample_rate / 2 - 100.0 if self.fmax is None else self.fmax

    @property
    def frame_samples(self) -> int:
        return int(round(self.frame_length * self.sample_rate))

    @property
    def shift_samples(self) -> int:
        return int(round(self.frame_shift * self.sample_rate))

    @property
    def n_fft(self) -> int:
        return 1 << (self.frame_samples - 1).bit_length()


@dataclass
class FeatureSequence:
    frames: np.ndarray  # (T, D)
    frame_shift: float = 0.010
    frame_length: float = 0.025

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_points(cfg: FrontendConfig) -> np.ndarray:
    """The n_mels + 2 band edges in mel; band k spans points[k]..points[k+2]."""
    lo, hi = hz_to_mel(cfg.fmin), hz_to_mel(cfg.upper_frequency)
    return np.linspace(lo, hi, cfg.n_mels + 2)


def mel_centers_hz(cfg: FrontendConfig) -> np.ndarray:
    return mel_to_hz(mel_points(cfg)[1:-1])


def mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Triangular filters, shape (n_mels, n_fft // 2 + 1), triangles in the mel domain."""
    pts = mel_points(cfg)
    bin_mel = hz_to_mel(np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft)
    left, center, right = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    up = (bin_mel[None, :] - left) / (center - left)
    down = (right - bin_mel[None, :]) / (right - center)
    return np.maximum(0.0, np.minimum(up, down))


def _frame(waveform: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    n, shift = cfg.frame_samples, cfg.shift_samples
    num = 1 + (len(waveform) - n) // shift
    idx = np.arange(n)[None, :] + shift * np.arange(num)[:, None]
    return waveform[idx]


def logmel(waveform, sample_rate: int, cfg: FrontendConfig | None = None) -> FeatureSequence:
    """Raw (unnormalized, unstacked) log-mel energies, one row per 10 ms frame."""
    cfg = cfg or FrontendConfig(sample_rate=sample_rate)
    if sample_rate != cfg.sample_rate:
        raise ValueError(f"sample rate {sample_rate} does not match frontend rate {cfg.sample_rate}")
    if sample_rate <= 2 * cfg.upper_frequency:
        raise ValueError(f"fmax {cfg.upper_frequency} Hz is above Nyquist for {sample_rate} Hz")
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1 or len(x) == 0:
        raise ValueError("waveform must be a nonempty 1-D signal")
    if len(x) < cfg.frame_samples:
        raise ValueError(f"waveform shorter than one frame ({len(x)} < {cfg.frame_samples} samples)")

    frames = _frame(x, cfg)
    # per-frame pre-emphasis keeps the transform exactly shift-covariant
    emph = np.empty_like(frames)
    emph[:, 1:] = frames[:, 1:] - cfg.preemphasis * frames[:, :-1]
    emph[:, 0] = frames[:, 0] * (1.0 - cfg.preemphasis)
    emph *= np.hanning(cfg.frame_samples)
    power = np.abs(np.fft.rfft(emph, n=cfg.n_fft, axis=1)) ** 2
    energies = power @ mel_filterbank(cfg).T
    feats = np.log(np.maximum(energies, cfg.floor))
    return FeatureSequence(feats, cfg.frame_shift, cfg.frame_length)


def stack_frames(features: FeatureSequence, k: int = 3) -> FeatureSequence:
    if k < 1:
        raise ValueError("stack size must be >= 1")
    x = features.frames
    T = x.shape[0]
    groups = -(-T // k)
    pad = groups * k - T
    if pad:
        x = np.concatenate([x, np.repeat(x[-1:], pad, axis=0)], axis=0)
    out = x.reshape(groups, k * x.shape[1])
    return FeatureSequence(out, features.frame_shift * k, features.frame_length)


def mean_normalize(features: FeatureSequence) -> FeatureSequence:
    x = features.frames
    return FeatureSequence(x - x.mean(axis=0, keepdims=True), features.frame_shift, features.frame_length)


def extract(waveform, sample_rate: int, cfg: FrontendConfig | None = None) -> np.ndarray:
    """Model input: log-mel, optional mean normalization, then stacking. Returns float32 (T', D*k)."""
    cfg = cfg or FrontendConfig(sample_rate=sample_rate)
    feats = logmel(waveform, sample_rate, cfg)
    if cfg.mean_norm:
        feats = mean_normalize(feats)
    return stack_frames(feats, cfg.stack).frames.astype(np.float32)


def num_frames(num_samples: int, cfg: FrontendConfig) -> int:
    if num_samples < cfg.frame_samples:
        return 0
    return 1 + (num_samples - cfg.frame_samples) // cfg.shift_samples


_DUMP_HEADER = struct.Struct("<4sIIf")
_DUMP_MAGIC = b"LMEL"


def write_features(path, features: FeatureSequence) -> None:
    frames = np.ascontiguousarray(features.frames, dtype="<f4")
    T, D = frames.shape
    with open(path, "wb") as fh:
        fh.write(_DUMP_HEADER.pack(_DUMP_MAGIC, T, D, features.frame_shift))
        fh.write(frames.tobytes())


def read_features(path) -> FeatureSequence:
    data = Path(path).read_bytes()
    magic, T, D, shift = _DUMP_HEADER.unpack_from(data)
    if magic != _DUMP_MAGIC:
        raise ValueError(f"{path}: not a feature dump")
    body = np.frombuffer(data, dtype="<f4", offset=_DUMP_HEADER.size)
    if body.size != T * D:
        raise ValueError(f"{path}: expected {T * D} values, found {body.size}")
    return FeatureSequence(body.reshape(T, D).astype(np.float32), float(np.float32(shift)))
