"""Log mel-scale filterbank frontend for 16 kHz mono speech.

25 ms frames at 10 ms shift, Hann window, power spectrum, triangular mel
filters, natural log with a small floor.  Frame count for a signal of
``n`` samples is ``(n - frame_len) // frame_shift + 1``.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ctaser.tensor import Tensor


class AudioFormatError(ValueError):
    """Input audio violates the declared format (rate, width, channels, length)."""


@dataclass(frozen=True)
class LmfbConfig:
    sample_rate_hz: int = 16000
    frame_len: int = 400
    frame_shift: int = 160
    n_mels: int = 80
    fft_size: int = 512
    window: str = "hann"
    mel_low_hz: float = 0.0
    mel_high_hz: float = 8000.0
    log_floor: float = 1e-10
    normalize: bool = False

    def __post_init__(self):
        if self.frame_len > self.fft_size:
            raise ValueError(f"frame_len {self.frame_len} exceeds fft_size {self.fft_size}")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: LmfbConfig) -> np.ndarray:
    """Triangular filters over the rfft bins, (n_mels, fft_size//2 + 1)."""
    n_bins = cfg.fft_size // 2 + 1
    fft_freqs = np.arange(n_bins) * cfg.sample_rate_hz / cfg.fft_size
    mel_pts = np.linspace(hz_to_mel(cfg.mel_low_hz), hz_to_mel(cfg.mel_high_hz), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((cfg.n_mels, n_bins), dtype=np.float64)
    for i in range(cfg.n_mels):
        left, center, right = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (fft_freqs - left) / (center - left)
        down = (right - fft_freqs) / (right - center)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_center_frequencies(cfg: LmfbConfig) -> np.ndarray:
    """Peak frequency (Hz) of each triangular filter."""
    mel_pts = np.linspace(hz_to_mel(cfg.mel_low_hz), hz_to_mel(cfg.mel_high_hz), cfg.n_mels + 2)
    return mel_to_hz(mel_pts[1:-1])


def frame_count(n_samples: int, cfg: LmfbConfig) -> int:
    if n_samples < cfg.frame_len:
        raise AudioFormatError(
            f"input of {n_samples} samples is shorter than one frame ({cfg.frame_len})"
        )
    return (n_samples - cfg.frame_len) // cfg.frame_shift + 1


def extract_lmfb(pcm: np.ndarray, cfg: LmfbConfig = LmfbConfig()) -> Tensor:
    """Extract log mel filterbank features from mono PCM samples.

    ``pcm`` is a 1-D float array at ``cfg.sample_rate_hz``; the caller is
    responsible for declaring the rate truthfully (see :func:`load_wav`).
    """
    x = np.asarray(pcm, dtype=np.float64)
    if x.ndim != 1:
        raise AudioFormatError(f"expected mono 1-D samples, got shape {x.shape}")
    n = frame_count(x.size, cfg)
    idx = np.arange(cfg.frame_len)[None, :] + cfg.frame_shift * np.arange(n)[:, None]
    frames = x[idx]
    win = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(cfg.frame_len) / cfg.frame_len)
    spectrum = np.fft.rfft(frames * win, n=cfg.fft_size, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ mel_filterbank(cfg).T
    feats = np.log(mel + cfg.log_floor)
    if cfg.normalize:
        mu = feats.mean(axis=0, keepdims=True)
        sd = feats.std(axis=0, keepdims=True)
        feats = (feats - mu) / np.maximum(sd, 1e-8)
    return Tensor(feats.astype(np.float32))


def load_wav(path, expected_rate_hz: int = 16000) -> np.ndarray:
    """Read a 16-bit PCM mono WAV file into float samples in [-1, 1)."""
    path = Path(path)
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise AudioFormatError(f"{path}: expected mono, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
        if wf.getframerate() != expected_rate_hz:
            raise AudioFormatError(
                f"{path}: sample rate {wf.getframerate()} Hz, expected {expected_rate_hz} Hz"
            )
        raw = wf.readframes(wf.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, samples: np.ndarray, rate_hz: int = 16000) -> None:
    """Write float samples in [-1, 1] as 16-bit PCM mono (test/demo helper)."""
    pcm = np.clip(np.asarray(samples) * 32767.0, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(rate_hz)
        wf.writeframes(pcm.tobytes())
