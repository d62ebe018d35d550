"""Preprocessing and array features for the counting model.

Audio is resampled to 16 kHz and peak-normalized per segment, then two
frame-aligned tensors are computed: PHAT-whitened cross-correlations for
every microphone pair, and per-channel magnitude spectrograms.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.signal import get_window, resample_poly, firwin

from .errors import ConfigurationError, DomainError

DATASET_RATE_HZ = 16_000
SUPPORTED_SRC_RATES = (16_000, 32_000, 44_100, 48_000)

DEFAULT_FRAME_LEN = 1024
DEFAULT_HOP = 512
DEFAULT_MAX_LAG = 32

PHAT_FLOOR = 1e-12

# A positive peak lag on pair (i, j) means channel i receives the wavefront
# before channel j (channel i leads).
SIGN_CONVENTION = "positive lag: first channel of the pair leads"


@dataclass(frozen=True)
class FrameParams:
    frame_len: int = DEFAULT_FRAME_LEN
    hop: int = DEFAULT_HOP
    max_lag: int = DEFAULT_MAX_LAG
    sample_rate: int = DATASET_RATE_HZ

    def __post_init__(self):
        if self.frame_len <= 0 or (self.frame_len & (self.frame_len - 1)) != 0:
            raise DomainError("frame length must be a power of two")
        if not (0 < self.hop <= self.frame_len):
            raise DomainError("hop must be in (0, frame_len]")
        if not (0 < self.max_lag < self.frame_len // 2):
            raise DomainError("max lag must be below frame_len/2")

    def num_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            raise DomainError("audio shorter than one frame")
        return 1 + (n_samples - self.frame_len) // self.hop


@dataclass(frozen=True)
class GccPhatTensor:
    """values[pair][frame][lag], lags spanning [-max_lag, +max_lag]."""

    values: np.ndarray
    pairs: tuple[tuple[int, int], ...]
    params: FrameParams

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-self.params.max_lag, self.params.max_lag + 1)


@dataclass(frozen=True)
class SpectrogramTensor:
    """values[channel][frame][bin], magnitude STFT."""

    values: np.ndarray
    params: FrameParams


def _resample_filter(src_rate: int) -> tuple[int, int, np.ndarray]:
    up, down = DATASET_RATE_HZ, src_rate
    g = np.gcd(up, down)
    up, down = up // g, down // g
    fs_poly = src_rate * up
    # Anti-alias design: passband to 7.9 kHz, 60 dB stopband. The 44.1 kHz
    # path relaxes the transition to keep the polyphase filter short.
    trans_hz = 400.0 if src_rate != 44_100 else 800.0
    pass_hz = 7_900.0 if src_rate != 44_100 else 7_400.0
    cutoff = pass_hz + trans_hz / 2.0
    numtaps = int(np.ceil((60.0 - 8.0) / (2.285 * 2.0 * np.pi * trans_hz / fs_poly)))
    numtaps += (numtaps + 1) % 2  # odd length, linear phase
    # resample_poly scales a user-supplied window by `up` itself
    taps = firwin(numtaps, cutoff, window=("kaiser", 5.653), fs=fs_poly)
    return up, down, taps


@lru_cache(maxsize=8)
def _cached_resample_filter(src_rate: int) -> tuple[int, int, np.ndarray]:
    return _resample_filter(src_rate)


def resample_to_16k(audio: np.ndarray, src_rate: int) -> np.ndarray:
    """Polyphase band-limited resampling to the 16 kHz dataset rate."""
    if src_rate not in SUPPORTED_SRC_RATES:
        raise ConfigurationError(f"unsupported source rate {src_rate}; expected one of {SUPPORTED_SRC_RATES}")
    if src_rate == DATASET_RATE_HZ:
        return audio
    up, down, taps = _cached_resample_filter(src_rate)
    return resample_poly(audio, up, down, axis=-1, window=taps)


def peak_normalize(audio: np.ndarray) -> np.ndarray:
    """Scale all channels by one factor so the global peak is 1.0.

    All-zero input is returned unchanged; inter-channel ratios are always
    preserved exactly.
    """
    if audio.size == 0:
        raise DomainError("audio must be non-empty")
    peak = float(np.max(np.abs(audio)))
    if peak == 0.0:
        return audio.copy()
    return audio / peak


def _framed(audio: np.ndarray, params: FrameParams) -> np.ndarray:
    """(channels, frames, frame_len) view-based framing of (C, N) audio."""
    if audio.ndim == 1:
        audio = audio[None, :]
    if audio.ndim != 2:
        raise DomainError("audio must be 1-D or (channels, samples)")
    n_frames = params.num_frames(audio.shape[1])
    strides = (audio.strides[0], params.hop * audio.strides[1], audio.strides[1])
    shape = (audio.shape[0], n_frames, params.frame_len)
    return np.lib.stride_tricks.as_strided(audio, shape=shape, strides=strides, writeable=False)


def mic_pairs(num_channels: int) -> tuple[tuple[int, int], ...]:
    return tuple(combinations(range(num_channels), 2))


def gcc_phat(
    audio: np.ndarray,
    frame_len: int = DEFAULT_FRAME_LEN,
    hop: int = DEFAULT_HOP,
    max_lag: int = DEFAULT_MAX_LAG,
    sample_rate: int = DATASET_RATE_HZ,
) -> GccPhatTensor:
    """PHAT-whitened cross-correlation per channel pair and frame.

    Frames are Hann-windowed; the cross-spectrum is normalized by its
    magnitude (floored at 1e-12, so silent frames produce zero rows) and
    inverse-transformed, keeping lags in [-max_lag, +max_lag].
    """
    params = FrameParams(frame_len, hop, max_lag, sample_rate)
    frames = _framed(np.asarray(audio, dtype=float), params)
    window = get_window("hann", frame_len, fftbins=True)
    spectra = np.fft.rfft(frames * window, axis=-1)

    pairs = mic_pairs(frames.shape[0])
    n_frames = frames.shape[1]
    out = np.empty((len(pairs), n_frames, 2 * max_lag + 1), dtype=np.float64)
    for p, (i, j) in enumerate(pairs):
        cross = np.conj(spectra[i]) * spectra[j]
        cross /= np.maximum(np.abs(cross), PHAT_FLOOR)
        cc = np.fft.irfft(cross, n=frame_len, axis=-1)
        out[p] = np.concatenate([cc[:, -max_lag:], cc[:, : max_lag + 1]], axis=-1)
    return GccPhatTensor(values=out, pairs=pairs, params=params)


def stft_magnitude(
    audio: np.ndarray,
    frame_len: int = DEFAULT_FRAME_LEN,
    hop: int = DEFAULT_HOP,
    sample_rate: int = DATASET_RATE_HZ,
) -> SpectrogramTensor:
    """Hann-windowed magnitude STFT per channel, frame-aligned with gcc_phat."""
    params = FrameParams(frame_len, hop, DEFAULT_MAX_LAG, sample_rate)
    frames = _framed(np.asarray(audio, dtype=float), params)
    window = get_window("hann", frame_len, fftbins=True)
    return SpectrogramTensor(values=np.abs(np.fft.rfft(frames * window, axis=-1)), params=params)


def peak_lag_track(tensor: GccPhatTensor, pair_index: int) -> np.ndarray:
    """Sub-sample peak lag per frame (parabolic interpolation), in samples."""
    cc = tensor.values[pair_index]
    peaks = np.argmax(cc, axis=-1)
    lags = peaks.astype(float) - tensor.params.max_lag
    inner = (peaks > 0) & (peaks < cc.shape[-1] - 1)
    idx = np.arange(cc.shape[0])[inner]
    p = peaks[inner]
    y0 = cc[idx, p - 1]
    y1 = cc[idx, p]
    y2 = cc[idx, p + 1]
    denom = y0 - 2.0 * y1 + y2
    safe = np.where(np.abs(denom) > 1e-12, denom, 1.0)
    shift = np.where(np.abs(denom) > 1e-12, 0.5 * (y0 - y2) / safe, 0.0)
    lags[inner] += np.clip(shift, -1.0, 1.0)
    return lags


def save_features(path: str | Path, gcc: GccPhatTensor, spec: SpectrogramTensor) -> None:
    """Write both tensors to one self-describing binary container (.npz)."""
    if gcc.values.shape[1] != spec.values.shape[1]:
        raise DomainError("gcc and spectrogram tensors must be frame-aligned")
    meta = {
        "format": "trafficsynth-features-v1",
        "frame_len": gcc.params.frame_len,
        "hop": gcc.params.hop,
        "max_lag": gcc.params.max_lag,
        "sample_rate": gcc.params.sample_rate,
        "pairs": [list(p) for p in gcc.pairs],
        "sign_convention": SIGN_CONVENTION,
        "gcc_shape": list(gcc.values.shape),
        "spec_shape": list(spec.values.shape),
        "dtype": "float32",
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            gcc=gcc.values.astype(np.float32),
            spectrogram=spec.values.astype(np.float32),
            meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
        )


def load_features(path: str | Path) -> tuple[GccPhatTensor, SpectrogramTensor, dict]:
    """Read a feature container written by save_features."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != "trafficsynth-features-v1":
            raise ConfigurationError(f"{path}: not a trafficsynth feature container")
        params = FrameParams(meta["frame_len"], meta["hop"], meta["max_lag"], meta["sample_rate"])
        gcc = GccPhatTensor(
            values=data["gcc"].astype(np.float64),
            pairs=tuple(tuple(p) for p in meta["pairs"]),
            params=params,
        )
        spec = SpectrogramTensor(values=data["spectrogram"].astype(np.float64), params=params)
    return gcc, spec, meta


def compute_segment_features(
    audio_16k: np.ndarray,
    frame_len: int = DEFAULT_FRAME_LEN,
    hop: int = DEFAULT_HOP,
    max_lag: int = DEFAULT_MAX_LAG,
) -> tuple[GccPhatTensor, SpectrogramTensor]:
    """Peak-normalize a segment and compute both model input tensors."""
    norm = peak_normalize(audio_16k)
    gcc = gcc_phat(norm, frame_len, hop, max_lag)
    spec = stft_magnitude(norm, frame_len, hop)
    return gcc, spec
