"""Asynchronous receive-chain simulation for relative-phase measurements.

A periodic comb is upconverted, passed through a channel, downconverted with
a free-running LO (frequency offset, random phase, unknown sampling start)
and sampled.  Envelope correlation against the baseband reference recovers
the sampling start; a discrete-spectrum projection then yields per-tone
magnitudes and phases whose differences are immune to the LO phase.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np


def wrap_phase(x):
    """Wrap angles to (-pi, pi]."""
    return np.angle(np.exp(1j * np.asarray(x)))


@dataclass(frozen=True)
class CombSignal:
    """Uniformly spaced baseband tones with complex coefficients."""

    freqs_hz: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        f = np.atleast_1d(np.asarray(self.freqs_hz, dtype=float))
        c = np.atleast_1d(np.asarray(self.coefficients, dtype=complex))
        if len(f) != len(c):
            raise ValueError(f"{len(f)} tone frequencies vs {len(c)} coefficients")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite coefficients")
        if len(f) > 1:
            steps = np.diff(f)
            if np.any(steps <= 0) or np.any(np.abs(steps - steps[0]) > 1e-6 * steps[0]):
                raise ValueError("tone frequencies must be uniformly spaced and increasing")
        object.__setattr__(self, "freqs_hz", f)
        object.__setattr__(self, "coefficients", c)

    @property
    def spacing_hz(self) -> float:
        if len(self.freqs_hz) < 2:
            return abs(float(self.freqs_hz[0])) or 1.0
        return float(self.freqs_hz[1] - self.freqs_hz[0])

    @property
    def period_s(self) -> float:
        return 1.0 / self.spacing_hz

    def baseband(self, t: np.ndarray) -> np.ndarray:
        """Complex baseband waveform at the given times."""
        return np.exp(2j * np.pi * np.outer(np.asarray(t), self.freqs_hz)) @ self.coefficients


def make_comb(
    f_start_hz: float, f_stop_hz: float, n_tones: int, seed: int | None = None
) -> CombSignal:
    """Uniform comb between two frequencies; seeded complex-normal coefficients."""
    freqs = np.linspace(f_start_hz, f_stop_hz, n_tones)
    if seed is None:
        coeff = np.ones(n_tones, dtype=complex)
    else:
        rng = np.random.default_rng(seed)
        coeff = (rng.standard_normal(n_tones) + 1j * rng.standard_normal(n_tones)) / np.sqrt(2.0)
    return CombSignal(freqs, coeff)


@dataclass(frozen=True)
class ChannelModel:
    """Complex transfer values per position and tone, shape (n_positions, n_tones)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=complex))
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite channel values")
        object.__setattr__(self, "values", v)

    @property
    def n_positions(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ReceiverImpairments:
    """LO offset/phase, sampling-start offset, and relative additive noise level."""

    lo_offset_hz: float = 0.0
    lo_phase_rad: float = 0.0
    start_offset_s: float = 0.0
    noise_level: float = 0.0


@dataclass
class ChainCapture:
    """Sampled IF series plus the coherent baseband reference."""

    b_if: np.ndarray
    a_bb: np.ndarray
    sample_rate: float
    comb: CombSignal
    lo_offset_hz: float


def simulate_chain(
    comb: CombSignal,
    channel_tones: np.ndarray,
    impairments: ReceiverImpairments,
    sample_rate: float,
    n_periods: int = 8,
    noise_seed: int | None = None,
) -> ChainCapture:
    """Sample the downconverted receive signal and the baseband reference.

    The IF tones sit at f_k + lo_offset; the sampling grid must satisfy
    Nyquist for the highest IF tone and hold an integer number of samples
    per comb period (required for exact discrete-spectrum evaluation).
    """
    h = np.asarray(channel_tones, dtype=complex)
    if h.shape != comb.freqs_hz.shape:
        raise ValueError(f"channel has {h.shape} values for {len(comb.freqs_hz)} tones")
    f_if = comb.freqs_hz + impairments.lo_offset_hz
    if sample_rate <= 2.0 * f_if.max():
        raise ValueError(
            f"sample rate {sample_rate} Hz undersamples the highest IF tone {f_if.max()} Hz"
        )
    spp = sample_rate * comb.period_s
    if abs(spp - round(spp)) > 1e-9:
        raise ValueError(
            f"sample rate {sample_rate} Hz does not give integer samples per period"
        )
    n = int(round(spp)) * int(n_periods)
    t = np.arange(n) / sample_rate
    shifted = t + impairments.start_offset_s
    b_if = (
        np.exp(2j * np.pi * np.outer(shifted, f_if)) @ (comb.coefficients * h)
    ) * np.exp(1j * impairments.lo_phase_rad)
    if impairments.noise_level > 0.0:
        rng = np.random.default_rng(noise_seed)
        rms = np.sqrt(np.mean(np.abs(b_if) ** 2))
        b_if = b_if + impairments.noise_level * rms * (
            rng.standard_normal(n) + 1j * rng.standard_normal(n)
        ) / np.sqrt(2.0)
    a_bb = comb.baseband(t)
    return ChainCapture(b_if, a_bb, float(sample_rate), comb, impairments.lo_offset_hz)


@dataclass
class SyncResult:
    aligned: np.ndarray
    delay_estimate_s: float
    low_confidence: bool
    envelope_contrast: float


def synchronize(capture: ChainCapture, min_contrast: float = 0.05) -> SyncResult:
    """Estimate the sampling-start offset from the envelopes and undo it.

    Circular cross-correlation of |b_IF| against |a_BB| with parabolic
    sub-sample interpolation; a near-flat envelope (e.g. a single tone)
    yields a low-confidence flag.
    """
    e_rx = np.abs(capture.b_if)
    e_ref = np.abs(capture.a_bb)
    mean_ref = e_ref.mean()
    contrast = float((e_ref.max() - e_ref.min()) / mean_ref) if mean_ref > 0 else 0.0
    low_confidence = contrast < min_contrast
    score = np.fft.ifft(np.conj(np.fft.fft(e_rx)) * np.fft.fft(e_ref)).real
    peak = int(np.argmax(score))
    s_minus = score[(peak - 1) % len(score)]
    s_plus = score[(peak + 1) % len(score)]
    denom = s_minus - 2.0 * score[peak] + s_plus
    frac = 0.0 if denom == 0.0 else 0.5 * (s_minus - s_plus) / denom
    spp = int(round(capture.sample_rate * capture.comb.period_s))
    delay_samples = (peak + frac) % spp
    if delay_samples > spp / 2:
        delay_samples -= spp
    delay_s = delay_samples / capture.sample_rate
    freqs = np.fft.fftfreq(len(capture.b_if), d=1.0 / capture.sample_rate)
    aligned = np.fft.ifft(np.fft.fft(capture.b_if) * np.exp(-2j * np.pi * freqs * delay_s))
    return SyncResult(aligned, float(delay_s), low_confidence, contrast)


def estimate_if_offset(
    series: np.ndarray,
    comb: CombSignal,
    nominal_offset_hz: float,
    sample_rate: float,
    search_hz: float | None = None,
    n_grid: int = 81,
) -> float:
    """Refine the IF offset by maximizing comb-bin energy over an offset grid."""
    if search_hz is None:
        search_hz = comb.spacing_hz / 4.0
    b = np.asarray(series)
    t = np.arange(len(b)) / sample_rate
    deltas = np.linspace(-search_hz, search_hz, n_grid)
    energy = np.empty(n_grid)
    for idx, delta in enumerate(deltas):
        f = comb.freqs_hz + nominal_offset_hz + delta
        c = np.exp(-2j * np.pi * np.outer(f, t)) @ b / len(b)
        energy[idx] = np.sum(np.abs(c) ** 2)
    peak = int(np.argmax(energy))
    if 0 < peak < n_grid - 1:
        denom = energy[peak - 1] - 2.0 * energy[peak] + energy[peak + 1]
        frac = 0.0 if denom == 0.0 else 0.5 * (energy[peak - 1] - energy[peak + 1]) / denom
    else:
        frac = 0.0
    step = deltas[1] - deltas[0]
    return float(nominal_offset_hz + deltas[peak] + frac * step)


@dataclass
class ToneEstimates:
    """Per-tone complex amplitudes, magnitudes and phases relative to a reference tone."""

    amplitudes: np.ndarray
    magnitudes: np.ndarray
    rel_phases_rad: np.ndarray
    reference_tone: int
    leakage: float


def extract_relative_phases(
    series: np.ndarray,
    comb: CombSignal,
    if_offset_hz: float,
    sample_rate: float,
    reference_tone: int = 0,
    leak_tol: float = 1e-3,
) -> ToneEstimates:
    """Project the aligned series onto the comb bins and reference the phases.

    The analysis window must hold an integer number of comb periods; the
    common LO phase cancels in the reported phase differences.  Raises a
    warning when significant energy falls outside the comb bins.
    """
    b = np.asarray(series)
    n = len(b)
    periods = n * comb.spacing_hz / sample_rate
    if abs(periods - round(periods)) > 1e-6:
        raise ValueError("analysis window must hold an integer number of comb periods")
    t = np.arange(n) / sample_rate
    f = comb.freqs_hz + if_offset_hz
    amplitudes = np.exp(-2j * np.pi * np.outer(f, t)) @ b / n
    total_power = np.mean(np.abs(b) ** 2)
    tone_power = np.sum(np.abs(amplitudes) ** 2)
    leakage = float(max(0.0, 1.0 - tone_power / total_power)) if total_power > 0 else 0.0
    if leakage > leak_tol:
        warnings.warn(
            f"{leakage:.2e} of the signal power falls outside the comb bins",
            stacklevel=2,
        )
    rel = wrap_phase(np.angle(amplitudes) - np.angle(amplitudes[reference_tone]))
    return ToneEstimates(
        amplitudes=amplitudes,
        magnitudes=np.abs(amplitudes),
        rel_phases_rad=rel,
        reference_tone=reference_tone,
        leakage=leakage,
    )


def channel_relative_phases(estimates: ToneEstimates, comb: CombSignal) -> np.ndarray:
    """Channel phase differences with the known transmit coefficients divided out."""
    h = estimates.amplitudes / comb.coefficients
    return wrap_phase(np.angle(h) - np.angle(h[estimates.reference_tone]))


@dataclass
class ConsistencyStats:
    """Cross-position residuals after removing the reference position's bias."""

    residuals: np.ndarray
    reference_position: int
    per_position_mean: np.ndarray = field(init=False)
    per_position_std: np.ndarray = field(init=False)
    per_position_min: np.ndarray = field(init=False)
    per_position_max: np.ndarray = field(init=False)
    per_frequency_mean: np.ndarray = field(init=False)
    per_frequency_std: np.ndarray = field(init=False)

    def __post_init__(self):
        r = self.residuals
        self.per_position_mean = r.mean(axis=1)
        self.per_position_std = r.std(axis=1)
        self.per_position_min = r.min(axis=1)
        self.per_position_max = r.max(axis=1)
        self.per_frequency_mean = r.mean(axis=0)
        self.per_frequency_std = r.std(axis=0)


def multi_position_consistency(
    phase_table: np.ndarray, reference_position: int = 0
) -> ConsistencyStats:
    """Subtract the reference position's per-frequency phases and wrap the rest.

    Any per-frequency bias applied identically at all positions cancels here;
    pass phase errors (measured minus expected) to study sync imperfections.
    """
    table = np.atleast_2d(np.asarray(phase_table, dtype=float))
    if table.shape[0] < 2:
        raise ValueError("need at least two positions")
    if not 0 <= reference_position < table.shape[0]:
        raise ValueError(f"reference position {reference_position} out of range")
    residuals = wrap_phase(table - table[reference_position][None, :])
    return ConsistencyStats(residuals, reference_position)


def dump_tone_table_csv(path, freqs_hz: np.ndarray, mags: np.ndarray, phases_rad: np.ndarray) -> None:
    """Write `position,freq_hz,mag,phase_deg` rows for a (n_pos, n_tones) table."""
    mags = np.atleast_2d(mags)
    phases = np.atleast_2d(phases_rad)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["position", "freq_hz", "mag", "phase_deg"])
        for p in range(mags.shape[0]):
            for k, f in enumerate(freqs_hz):
                writer.writerow(
                    [p, repr(float(f)), repr(float(mags[p, k])), repr(float(np.degrees(phases[p, k])))]
                )
