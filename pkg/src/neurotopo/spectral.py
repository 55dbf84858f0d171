"""Band decomposition and power spectral density for multichannel EEG chunks.

The filter designer is a from-scratch Butterworth bandpass: analog prototype
poles, lowpass-to-bandpass transform, bilinear transform with pre-warped band
edges, then pairing into second-order sections. ``scipy.signal.sosfilt`` is
used only to run the recursion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as _sps

from .errors import ValidationError

BAND_NAMES = ("delta", "theta", "alpha", "beta", "gamma")


@dataclass(frozen=True)
class TimeSeries:
    samples: np.ndarray  # channels x time
    sample_rate_hz: float

    def __post_init__(self):
        x = np.asarray(self.samples)
        if x.ndim != 2:
            raise ValidationError(f"samples must be 2-D channels x time, got shape {x.shape}")
        if x.shape[0] < 1 or x.shape[1] < 2:
            raise ValidationError(f"need >= 1 channel and >= 2 samples, got shape {x.shape}")
        if not self.sample_rate_hz > 0:
            raise ValidationError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("samples contain non-finite values")
        object.__setattr__(self, "samples", x)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_times(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class FrequencyBand:
    name: str
    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if not 0 < self.lo_hz < self.hi_hz:
            raise ValidationError(f"band {self.name}: need 0 < lo_hz < hi_hz, got {self.lo_hz}, {self.hi_hz}")


# gamma is open-ended (>30 Hz); capped at 60 Hz to stay below the 62.5 Hz Nyquist
# of 125 Hz recordings
CANONICAL_BANDS = (
    FrequencyBand("delta", 1.0, 3.0),
    FrequencyBand("theta", 3.0, 8.0),
    FrequencyBand("alpha", 8.0, 13.0),
    FrequencyBand("beta", 13.0, 30.0),
    FrequencyBand("gamma", 30.0, 60.0),
)


@dataclass(frozen=True)
class BiquadCascade:
    """Second-order sections, each row (b0, b1, b2, a1, a2) with a0 = 1.

    ``gain`` multiplies the whole cascade. ``order`` is the prototype order
    passed to the designer, which equals the number of sections.
    """

    sections: np.ndarray
    gain: float
    sample_rate_hz: float
    lo_hz: float
    hi_hz: float

    @property
    def order(self) -> int:
        return self.sections.shape[0]

    def sos(self) -> np.ndarray:
        """scipy-layout (n, 6) array with the gain folded into the first section."""
        s = np.empty((self.order, 6))
        s[:, :3] = self.sections[:, :3]
        s[:, 3] = 1.0
        s[:, 4:] = self.sections[:, 3:]
        s[0, :3] *= self.gain
        return s

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots([1.0, a1, a2]) for a1, a2 in self.sections[:, 3:]])

    def frequency_response(self, freqs_hz) -> np.ndarray:
        """Complex H(e^{jw}) of a single pass at the given frequencies."""
        w = 2 * np.pi * np.asarray(freqs_hz, dtype=float) / self.sample_rate_hz
        zi = np.exp(-1j * w)
        h = np.full(w.shape, self.gain, dtype=complex)
        for b0, b1, b2, a1, a2 in self.sections:
            h *= (b0 + b1 * zi + b2 * zi**2) / (1.0 + a1 * zi + a2 * zi**2)
        return h


@dataclass(frozen=True)
class PowerSpectrum:
    freqs_hz: np.ndarray
    psd: np.ndarray  # channels x freq, power per Hz

    @property
    def resolution_hz(self) -> float:
        return float(self.freqs_hz[1] - self.freqs_hz[0])


def _check_edges(lo_hz, hi_hz, sample_rate_hz):
    nyq = sample_rate_hz / 2
    if not sample_rate_hz > 0:
        raise ValidationError(f"sample_rate_hz must be positive, got {sample_rate_hz}")
    if not lo_hz > 0:
        raise ValidationError(f"lo_hz={lo_hz} must be positive")
    if not hi_hz < nyq:
        raise ValidationError(f"hi_hz={hi_hz} must be below Nyquist ({nyq:g} Hz)")
    if not lo_hz < hi_hz:
        raise ValidationError(f"lo_hz={lo_hz} must be below hi_hz={hi_hz}")


def design_butterworth_bandpass(order: int, lo_hz: float, hi_hz: float, sample_rate_hz: float) -> BiquadCascade:
    """Design a digital Butterworth bandpass with -3 dB points at ``lo_hz`` and ``hi_hz``.

    ``order`` is the analog lowpass prototype order; the bandpass transform
    doubles it, so the result has ``order`` biquads and 2*order poles.
    """
    if int(order) != order or order < 1:
        raise ValidationError(f"order must be a positive integer, got {order}")
    order = int(order)
    _check_edges(lo_hz, hi_hz, sample_rate_hz)

    fs2 = 2.0 * sample_rate_hz
    w_lo = fs2 * np.tan(np.pi * lo_hz / sample_rate_hz)
    w_hi = fs2 * np.tan(np.pi * hi_hz / sample_rate_hz)
    w0 = np.sqrt(w_lo * w_hi)
    bw = w_hi - w_lo

    k = np.arange(1, order + 1)
    proto = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))
    half = proto * bw / 2
    root = np.sqrt(half**2 - w0**2 + 0j)
    analog = np.concatenate([half + root, half - root])
    digital = (fs2 + analog) / (fs2 - analog)

    sections = np.empty((order, 5))
    for i, (p1, p2) in enumerate(_pair_poles(digital)):
        # one zero at z = +1 (analog DC) and one at z = -1 (analog infinity)
        sections[i] = (1.0, 0.0, -1.0, -(p1 + p2).real, (p1 * p2).real)

    casc = BiquadCascade(sections, 1.0, float(sample_rate_hz), float(lo_hz), float(hi_hz))
    # the analog response is exactly 1 at w0, which the bilinear map sends here
    f_center = np.arctan(w0 / fs2) * sample_rate_hz / np.pi
    gain = 1.0 / abs(casc.frequency_response([f_center])[0])
    return BiquadCascade(sections, float(gain), float(sample_rate_hz), float(lo_hz), float(hi_hz))


def _pair_poles(poles, tol=1e-10):
    cplx = sorted((p for p in poles if p.imag > tol), key=lambda p: (abs(p), np.angle(p)))
    real = sorted((p.real for p in poles if abs(p.imag) <= tol))
    pairs = [(p, np.conj(p)) for p in cplx]
    if len(real) % 2:
        raise ValidationError("odd number of real poles; cannot form biquads")
    pairs += [(complex(real[i]), complex(real[i + 1])) for i in range(0, len(real), 2)]
    return sorted(pairs, key=lambda pr: max(abs(pr[0]), abs(pr[1])))


def padding_length(cascade: BiquadCascade) -> int:
    """Samples of odd-reflection padding per side: 3x the digital filter order."""
    return 3 * 2 * cascade.order


def filtfilt(cascade: BiquadCascade, x: TimeSeries) -> TimeSeries:
    """Zero-phase forward-backward filtering with odd-reflection edge padding.

    Each pass starts from the steady-state section initial conditions scaled
    by the edge sample, which suppresses start-up transients.
    """
    pad = padding_length(cascade)
    if x.n_times <= pad:
        raise ValidationError(f"chunk of {x.n_times} samples too short; need at least {pad + 1} for edge padding")
    if abs(x.sample_rate_hz - cascade.sample_rate_hz) > 1e-9:
        raise ValidationError(
            f"filter designed for {cascade.sample_rate_hz} Hz, signal sampled at {x.sample_rate_hz} Hz"
        )
    data = x.samples.astype(float)
    left = 2 * data[:, :1] - data[:, pad:0:-1]
    right = 2 * data[:, -1:] - data[:, -2 : -pad - 2 : -1]
    ext = np.concatenate([left, data, right], axis=1)

    sos = cascade.sos()
    zi = _sps.sosfilt_zi(sos)  # (n_sections, 2)
    zi0 = zi[:, None, :] * ext[None, :, 0, None]
    y, _ = _sps.sosfilt(sos, ext, axis=1, zi=zi0)
    zi1 = zi[:, None, :] * y[None, :, -1, None]
    y, _ = _sps.sosfilt(sos, y[:, ::-1], axis=1, zi=zi1)
    y = y[:, ::-1][:, pad:-pad]
    return TimeSeries(np.ascontiguousarray(y), x.sample_rate_hz)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even form used for spectral averaging)."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def welch_psd(x: TimeSeries, segment_len: int | None = None, overlap_fraction: float = 0.5, window: str = "hann") -> PowerSpectrum:
    """One-sided Welch PSD with per-segment mean removal.

    ``segment_len`` defaults to one second of samples. The hop is
    floor(segment_len * (1 - overlap_fraction)), so a 5 s chunk with 1 s
    segments at 50% overlap averages 9 segments.
    """
    if window != "hann":
        raise ValidationError(f"unsupported window {window!r}; only 'hann'")
    if segment_len is None:
        segment_len = int(round(x.sample_rate_hz))
    segment_len = int(segment_len)
    if segment_len < 8:
        raise ValidationError(f"segment_len={segment_len} must be >= 8")
    if segment_len > x.n_times:
        raise ValidationError(f"segment_len={segment_len} exceeds chunk length; use segment_len <= {x.n_times}")
    if not 0 <= overlap_fraction < 1:
        raise ValidationError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")

    hop = max(1, int(np.floor(segment_len * (1 - overlap_fraction))))
    n_seg = (x.n_times - segment_len) // hop + 1
    w = hann(segment_len)
    idx = np.arange(segment_len)[None, :] + hop * np.arange(n_seg)[:, None]
    segs = x.samples[:, idx]  # channels x n_seg x L
    segs = segs - segs.mean(axis=-1, keepdims=True)
    spec = np.fft.rfft(segs * w, axis=-1)
    p = (spec.real**2 + spec.imag**2).mean(axis=1) / (x.sample_rate_hz * np.sum(w**2))
    if segment_len % 2 == 0:
        p[:, 1:-1] *= 2
    else:
        p[:, 1:] *= 2
    freqs = np.fft.rfftfreq(segment_len, 1.0 / x.sample_rate_hz)
    return PowerSpectrum(freqs, p)


def band_power(spectrum: PowerSpectrum, band: FrequencyBand) -> np.ndarray:
    """Per-channel power in [lo_hz, hi_hz): PSD summed over bins times bin width."""
    f = spectrum.freqs_hz
    sel = (f >= band.lo_hz) & (f < band.hi_hz)
    if not sel.any():
        raise ValidationError(
            f"band {band.name} [{band.lo_hz}, {band.hi_hz}) Hz contains no bins at {spectrum.resolution_hz:g} Hz resolution"
        )
    return spectrum.psd[:, sel].sum(axis=1) * spectrum.resolution_hz
