"""Shared test oracles, independent of the package's internal code paths."""

import numpy as np


def band_power_oracle(x: np.ndarray, fs: float, f_lo: float, f_hi: float) -> float:
    """Mean-square power of x inside [f_lo, f_hi), by periodogram integration."""
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, 1.0 / fs)
    mask = (freqs >= f_lo) & (freqs < f_hi)
    return float(np.sum(np.abs(spec[mask]) ** 2) * 2.0 / x.size**2)


def fractional_delay_oracle(x: np.ndarray, delay_samples: float) -> np.ndarray:
    """Exact band-limited fractional delay via an FFT phase ramp."""
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size)
    return np.fft.irfft(spec * np.exp(-2j * np.pi * freqs * delay_samples), x.size)


def tone(freq_hz: float, duration_s: float, fs: int, amplitude: float = 1.0) -> np.ndarray:
    t = np.arange(int(round(duration_s * fs))) / fs
    return amplitude * np.sin(2.0 * np.pi * freq_hz * t)


def bandlimited_noise(n: int, fs: int, f_max: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    spec[freqs > f_max] = 0.0
    return np.fft.irfft(spec, n)
