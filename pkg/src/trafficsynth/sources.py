"""Vehicle source-signal synthesis.

A moving vehicle is modeled as two vertically stacked point sources. The
lower source (1 cm above the road) carries 80% of the rolling-noise power
and 20% of the engine-noise power; the higher source (30 cm for cars,
75 cm for commercial vehicles) carries the complementary mixture. Rolling
noise is shaped third-octave noise driven by a per-band speed law; engine
noise is a harmonic series on a speed-dependent firing frequency plus
band-limited hiss, power-matched to the rolling signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError
from .util import derive_seed

P_REF_PA = 2e-5
V_REF_KMH = 70.0
SPEED_RANGE_KMH = (10.0, 130.0)

LS_HEIGHT_M = 0.01
HS_HEIGHT_CAR_M = 0.30
HS_HEIGHT_CV_M = 0.75

LS_ROLLING_POWER_FRACTION = 0.8
HS_ENGINE_POWER_FRACTION = 0.8

# Half-width of the raised-cosine band transition, in octaves.
_BAND_TRANSITION_OCT = 0.04


class VehicleClass(str, Enum):
    CAR = "car"
    CV = "cv"

    def hs_height_m(self) -> float:
        return HS_HEIGHT_CAR_M if self is VehicleClass.CAR else HS_HEIGHT_CV_M


def band_edges(centers_hz: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower/upper third-octave band edges for the given centers."""
    ratio = 2.0 ** (1.0 / 6.0)
    centers_hz = np.asarray(centers_hz, dtype=float)
    return centers_hz / ratio, centers_hz * ratio


@dataclass(frozen=True)
class ThirdOctaveSpectrum:
    """Sound power level per standard third-octave band."""

    band_centers_hz: np.ndarray
    band_levels_db: np.ndarray

    def __post_init__(self):
        centers = np.asarray(self.band_centers_hz, dtype=float)
        levels = np.asarray(self.band_levels_db, dtype=float)
        if centers.ndim != 1 or centers.size == 0 or levels.shape != centers.shape:
            raise DomainError("band centers and levels must be matching 1-D arrays")
        if not np.all(np.diff(centers) > 0):
            raise DomainError("band centers must be strictly increasing")
        ratios = centers[1:] / centers[:-1]
        if np.any(np.abs(ratios / 2.0 ** (1.0 / 3.0) - 1.0) > 0.01):
            raise DomainError("band centers must step by 2^(1/3) within 1%")
        if not np.all(np.isfinite(levels)):
            raise DomainError("band levels must be finite")
        object.__setattr__(self, "band_centers_hz", centers)
        object.__setattr__(self, "band_levels_db", levels)

    @property
    def num_bands(self) -> int:
        return int(self.band_centers_hz.size)


@dataclass(frozen=True)
class SourceSignalPair:
    """The two stacked point-source waveforms of one vehicle."""

    ls_signal: np.ndarray
    hs_signal: np.ndarray
    sample_rate: int
    ls_height_m: float
    hs_height_m: float

    def __post_init__(self):
        if self.ls_signal.shape != self.hs_signal.shape or self.ls_signal.ndim != 1:
            raise DomainError("LS and HS signals must be 1-D and equally long")

    @property
    def duration_s(self) -> float:
        return self.ls_signal.size / self.sample_rate


@dataclass(frozen=True)
class RollingNoiseTable:
    """Per-band speed-law coefficients: L(f) = a + b*log10(v/70)."""

    band_centers_hz: np.ndarray
    a_db: dict[VehicleClass, np.ndarray]
    b_db: dict[VehicleClass, np.ndarray]

    def levels_db(self, vehicle_class: VehicleClass, speed_kmh: float) -> np.ndarray:
        """Band levels for a speed; no range check (callers enforce it)."""
        a = self.a_db[vehicle_class]
        b = self.b_db[vehicle_class]
        return a + b * np.log10(speed_kmh / V_REF_KMH)


def _parse_coefficient_rows(text: str, origin: str) -> RollingNoiseTable:
    rows: dict[VehicleClass, list[tuple[float, float, float]]] = {c: [] for c in VehicleClass}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise ConfigurationError(f"{origin}:{lineno}: expected 'class, f_center_hz, a_db, b_db'")
        try:
            vclass = VehicleClass(parts[0].lower())
            fc, a, b = (float(p) for p in parts[1:])
        except (ValueError, KeyError) as exc:
            raise ConfigurationError(f"{origin}:{lineno}: {exc}") from exc
        rows[vclass].append((fc, a, b))

    centers = None
    a_db: dict[VehicleClass, np.ndarray] = {}
    b_db: dict[VehicleClass, np.ndarray] = {}
    for vclass, entries in rows.items():
        if not entries:
            raise ConfigurationError(f"{origin}: no coefficient rows for class '{vclass.value}'")
        entries.sort(key=lambda r: r[0])
        fc = np.array([r[0] for r in entries])
        if centers is None:
            centers = fc
        elif fc.shape != centers.shape or not np.allclose(fc, centers):
            raise ConfigurationError(f"{origin}: band centers differ between classes")
        a_db[vclass] = np.array([r[1] for r in entries])
        b_db[vclass] = np.array([r[2] for r in entries])

    # Reuse the spectrum validation for the band layout.
    ThirdOctaveSpectrum(centers, np.zeros_like(centers))
    return RollingNoiseTable(centers, a_db, b_db)


def load_rolling_table(path: str | Path | None = None) -> RollingNoiseTable:
    """Load the rolling-noise coefficient table (bundled file by default)."""
    if path is None:
        text = resources.files("trafficsynth.data").joinpath("harmonoise_coefficients.txt").read_text()
        origin = "harmonoise_coefficients.txt"
    else:
        text = Path(path).read_text()
        origin = str(path)
    return _parse_coefficient_rows(text, origin)


@lru_cache(maxsize=1)
def _default_rolling_table() -> RollingNoiseTable:
    return load_rolling_table(None)


@dataclass(frozen=True)
class EngineModelParams:
    rpm_idle: dict[VehicleClass, float]
    rpm_per_kmh: dict[VehicleClass, float]
    firings_per_rev: dict[VehicleClass, float]
    n_harmonics: int = 30
    harmonic_decay_exponent: float = 1.0
    noise_power_fraction: float = 0.2
    noise_band_hz: tuple[float, float] = (20.0, 2500.0)

    def fundamental_hz(self, vehicle_class: VehicleClass, speed_kmh: float) -> float:
        rpm = self.rpm_idle[vehicle_class] + self.rpm_per_kmh[vehicle_class] * speed_kmh
        return rpm / 60.0 * self.firings_per_rev[vehicle_class]


def load_engine_params(path: str | Path | None = None) -> EngineModelParams:
    """Load engine-model constants (bundled file by default)."""
    if path is None:
        text = resources.files("trafficsynth.data").joinpath("engine_model.txt").read_text()
        origin = "engine_model.txt"
    else:
        text = Path(path).read_text()
        origin = str(path)

    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{origin}:{lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        try:
            values[key.strip()] = float(val)
        except ValueError as exc:
            raise ConfigurationError(f"{origin}:{lineno}: {exc}") from exc

    try:
        return EngineModelParams(
            rpm_idle={c: values[f"{c.value}.rpm_idle"] for c in VehicleClass},
            rpm_per_kmh={c: values[f"{c.value}.rpm_per_kmh"] for c in VehicleClass},
            firings_per_rev={c: values[f"{c.value}.firings_per_rev"] for c in VehicleClass},
            n_harmonics=int(values["n_harmonics"]),
            harmonic_decay_exponent=values["harmonic_decay_exponent"],
            noise_power_fraction=values["noise_power_fraction"],
            noise_band_hz=(values["noise_band_low_hz"], values["noise_band_high_hz"]),
        )
    except KeyError as exc:
        raise ConfigurationError(f"{origin}: missing constant {exc}") from exc


@lru_cache(maxsize=1)
def _default_engine_params() -> EngineModelParams:
    return load_engine_params(None)


def _check_speed(speed_kmh: float) -> None:
    lo, hi = SPEED_RANGE_KMH
    if not (lo <= speed_kmh <= hi):
        raise DomainError(f"speed {speed_kmh} km/h outside [{lo}, {hi}]")


def rolling_noise_spectrum(
    vehicle_class: VehicleClass,
    speed_kmh: float,
    table: RollingNoiseTable | None = None,
) -> ThirdOctaveSpectrum:
    """Third-octave rolling-noise levels for a vehicle class and speed."""
    _check_speed(speed_kmh)
    table = table or _default_rolling_table()
    return ThirdOctaveSpectrum(table.band_centers_hz, table.levels_db(vehicle_class, speed_kmh))


def _check_signal_args(duration_s: float, sample_rate: int) -> int:
    if duration_s <= 0:
        raise DomainError("duration must be positive")
    if sample_rate <= 0:
        raise DomainError("sample rate must be positive")
    return int(round(duration_s * sample_rate))


@lru_cache(maxsize=8)
def _band_synthesis_slices(
    n_samples: int, sample_rate: int, centers_key: tuple[float, ...]
) -> list[slice]:
    """Disjoint rfft bin ranges per band.

    With exact base-2 centers the upper edge of one band equals the lower
    edge of the next, so the bands partition the spectrum exactly: every
    bin belongs to one band, band powers calibrate independently, and the
    coherent subband sum introduces no cross-band bias.
    """
    centers = np.array(centers_key)
    f_lo, f_hi = band_edges(centers)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate)
    out = []
    for lo, hi in zip(f_lo, f_hi):
        i0 = max(int(np.searchsorted(freqs, lo, side="left")), 1)  # never touch DC
        i1 = int(np.searchsorted(freqs, hi, side="left"))
        out.append(slice(i0, i1))
    return out


def synthesize_shaped_noise(
    spectrum: ThirdOctaveSpectrum,
    duration_s: float,
    sample_rate: int,
    seed: int,
) -> np.ndarray:
    """Realize a third-octave spectrum as Gaussian noise.

    White noise is passed through a bank of power-complementary band
    filters (applied in the frequency domain); each subband is calibrated
    so its measured in-band mean-square power equals the target level
    (band RMS = P_REF_PA * 10^(L/20)). Deterministic under the seed.
    """
    n = _check_signal_args(duration_s, sample_rate)
    _, f_hi = band_edges(spectrum.band_centers_hz)
    if sample_rate < 2.0 * f_hi[-1]:
        raise DomainError(
            f"sample rate {sample_rate} Hz below twice the highest band edge {f_hi[-1]:.0f} Hz"
        )

    rng = np.random.default_rng(seed)
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    out_spec = np.zeros_like(spec)

    slices = _band_synthesis_slices(n, sample_rate, tuple(spectrum.band_centers_hz))
    # Mean square of x equals sum(|X_k|^2 * w_k) * 2 / n^2 with w=1/2 at DC
    # and (for even n) at Nyquist; band slices exclude both.
    ms_scale = 2.0 / (float(n) * float(n))
    for level_db, sl in zip(spectrum.band_levels_db, slices):
        sub = spec[sl]
        measured_ms = float(np.sum(np.abs(sub) ** 2)) * ms_scale
        if measured_ms <= 0.0:
            raise DomainError("band has no spectral support at this sample rate")
        target_ms = (P_REF_PA * 10.0 ** (level_db / 20.0)) ** 2
        out_spec[sl] = np.sqrt(target_ms / measured_ms) * sub
    return np.fft.irfft(out_spec, n)


def synthesize_engine_noise(
    vehicle_class: VehicleClass,
    speed_kmh: float,
    duration_s: float,
    sample_rate: int,
    seed: int,
    params: EngineModelParams | None = None,
) -> np.ndarray:
    """Engine-like signal: decaying harmonics of the firing frequency plus hiss.

    Harmonic amplitudes fall off as 1/n^decay; harmonics above 0.45*fs are
    dropped. The hiss is band-limited Gaussian noise carrying
    ``noise_power_fraction`` of the total power. Absolute scale is
    arbitrary (downstream power-matches to the rolling signal).
    """
    _check_speed(speed_kmh)
    n = _check_signal_args(duration_s, sample_rate)
    params = params or _default_engine_params()

    rng = np.random.default_rng(seed)
    f0 = params.fundamental_hz(vehicle_class, speed_kmh)
    orders = np.arange(1, params.n_harmonics + 1)
    orders = orders[orders * f0 < 0.45 * sample_rate]
    if orders.size == 0:
        raise DomainError("fundamental too high for this sample rate")
    amps = orders.astype(float) ** -params.harmonic_decay_exponent
    phases = rng.uniform(0.0, 2.0 * np.pi, size=orders.size)

    t = np.arange(n) / sample_rate
    base = np.exp(2j * np.pi * f0 * t)
    rot = np.ones(n, dtype=complex)
    harm = np.zeros(n)
    k_prev = 0
    for k, amp, ph in zip(orders, amps, phases):
        for _ in range(k - k_prev):
            rot *= base
        k_prev = int(k)
        # sin(k*w*t + ph) from the complex rotator, no per-harmonic trig pass
        harm += amp * (np.sin(ph) * rot.real + np.cos(ph) * rot.imag)
    harm_ms = float(np.mean(harm**2))

    white = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    lo, hi = params.noise_band_hz
    keep = (freqs >= lo) & (freqs <= min(hi, 0.45 * sample_rate))
    white[~keep] = 0.0
    hiss = np.fft.irfft(white, n)
    hiss_ms = float(np.mean(hiss**2))

    nf = params.noise_power_fraction
    out = harm / np.sqrt(harm_ms) * np.sqrt(1.0 - nf)
    if hiss_ms > 0.0 and nf > 0.0:
        out += hiss / np.sqrt(hiss_ms) * np.sqrt(nf)
    return out


def normalize_engine_to_rolling(engine: np.ndarray, rolling: np.ndarray) -> np.ndarray:
    """Scale the engine signal to the rolling signal's mean-square power."""
    if engine.size == 0 or rolling.size == 0:
        raise DomainError("signals must be non-empty")
    engine_ms = float(np.mean(engine.astype(float) ** 2))
    if engine_ms == 0.0:
        raise DomainError("cannot power-normalize an all-zero engine signal")
    rolling_ms = float(np.mean(rolling.astype(float) ** 2))
    return engine * np.sqrt(rolling_ms / engine_ms)


def build_vehicle_sources(
    vehicle_class: VehicleClass,
    speed_kmh: float,
    duration_s: float,
    sample_rate: int,
    seed: int,
    *,
    table: RollingNoiseTable | None = None,
    engine_params: EngineModelParams | None = None,
    mute_rolling: bool = False,
    mute_engine: bool = False,
) -> SourceSignalPair:
    """Assemble the LS/HS stacked point-source pair for one vehicle.

    LS = sqrt(0.8)*rolling + sqrt(0.2)*engine, HS = sqrt(0.2)*rolling +
    sqrt(0.8)*engine, with the engine power-matched to the rolling signal
    first. The mute flags are test hooks: they zero one constituent after
    power matching so the power splits of the other can be measured.
    """
    spectrum = rolling_noise_spectrum(vehicle_class, speed_kmh, table=table)
    rolling = synthesize_shaped_noise(spectrum, duration_s, sample_rate, derive_seed(seed, 0))
    engine = synthesize_engine_noise(
        vehicle_class, speed_kmh, duration_s, sample_rate, derive_seed(seed, 1), params=engine_params
    )
    engine = normalize_engine_to_rolling(engine, rolling)
    if mute_rolling:
        rolling = np.zeros_like(rolling)
    if mute_engine:
        engine = np.zeros_like(engine)

    a = np.sqrt(LS_ROLLING_POWER_FRACTION)
    b = np.sqrt(1.0 - LS_ROLLING_POWER_FRACTION)
    c = np.sqrt(1.0 - HS_ENGINE_POWER_FRACTION)
    d = np.sqrt(HS_ENGINE_POWER_FRACTION)
    return SourceSignalPair(
        ls_signal=a * rolling + b * engine,
        hs_signal=c * rolling + d * engine,
        sample_rate=sample_rate,
        ls_height_m=LS_HEIGHT_M,
        hs_height_m=vehicle_class.hs_height_m(),
    )
