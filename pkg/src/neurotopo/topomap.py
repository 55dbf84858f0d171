"""Spectral topographic images: per-band electrode power rasterized over the projected scalp."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clough_tocher import CloughTocherRaster
from .errors import ValidationError
from .geometry import ElectrodeLayout, delaunay_triangulate, project_azimuthal_equidistant
from .spectral import (
    BAND_NAMES,
    CANONICAL_BANDS,
    TimeSeries,
    band_power,
    design_butterworth_bandpass,
    filtfilt,
    welch_psd,
)

LOG_EPS = 1e-12
DEFAULT_RESOLUTION = 32
FILTER_ORDER = 6


@dataclass
class TopographicImage:
    pixels: np.ndarray  # width x height x 5, planes in BAND_NAMES order
    mask: np.ndarray  # width x height, True inside the electrode hull
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != len(BAND_NAMES):
            raise ValidationError(f"pixels must be W x H x 5, got {self.pixels.shape}")
        if self.mask.shape != self.pixels.shape[:2]:
            raise ValidationError(f"mask shape {self.mask.shape} does not match pixels {self.pixels.shape}")


def standardize_band_powers(powers: np.ndarray) -> np.ndarray:
    """log10(power + eps), then zero mean / unit variance over all bands and electrodes jointly."""
    v = np.log10(np.asarray(powers, dtype=float) + LOG_EPS)
    sd = v.std()
    if not np.isfinite(sd) or sd <= 1e-12 * max(1.0, np.abs(v).max()):
        return np.zeros_like(v)
    return (v - v.mean()) / sd


class Featurizer:
    """Turns EEG chunks into topographic images for a fixed layout and grid.

    Filters, projection, triangulation and the raster's point location are
    built once; :meth:`band_powers` and :meth:`image` are pure per chunk.
    """

    def __init__(
        self,
        layout: ElectrodeLayout,
        sample_rate_hz: float,
        bands=CANONICAL_BANDS,
        resolution: int = DEFAULT_RESOLUTION,
        filter_order: int = FILTER_ORDER,
        segment_len: int | None = None,
        overlap_fraction: float = 0.5,
    ):
        if len(bands) != len(BAND_NAMES):
            raise ValidationError(f"need exactly {len(BAND_NAMES)} bands, got {len(bands)}")
        self.layout = layout
        self.sample_rate_hz = float(sample_rate_hz)
        self.bands = tuple(bands)
        self.resolution = int(resolution)
        self.segment_len = int(round(sample_rate_hz)) if segment_len is None else int(segment_len)
        self.overlap_fraction = overlap_fraction
        self.cascades = [design_butterworth_bandpass(filter_order, b.lo_hz, b.hi_hz, sample_rate_hz) for b in self.bands]
        self.projected = project_azimuthal_equidistant(layout)
        self.triangulation = delaunay_triangulate(self.projected.points)
        self.raster = CloughTocherRaster(self.triangulation, self.resolution)

    @property
    def mask(self) -> np.ndarray:
        return self.raster.mask

    def band_powers(self, chunk: TimeSeries) -> np.ndarray:
        """5 x channels power: bandpass, Welch, then integrate inside the same band."""
        if chunk.n_channels != len(self.layout):
            raise ValidationError(f"chunk has {chunk.n_channels} channels, layout has {len(self.layout)}")
        out = np.empty((len(self.bands), chunk.n_channels))
        for i, (band, casc) in enumerate(zip(self.bands, self.cascades)):
            filtered = filtfilt(casc, chunk)
            spec = welch_psd(filtered, self.segment_len, self.overlap_fraction)
            out[i] = band_power(spec, band)
        return out

    def image_from_powers(self, powers: np.ndarray, meta=None) -> TopographicImage:
        z = standardize_band_powers(powers)
        planes = [self.raster(z[i])[0] for i in range(len(self.bands))]
        return TopographicImage(np.stack(planes, axis=-1), self.mask.copy(), dict(meta or {}))

    def image(self, chunk: TimeSeries, meta=None) -> TopographicImage:
        return self.image_from_powers(self.band_powers(chunk), meta)


def build_topomap(chunk: TimeSeries, layout: ElectrodeLayout, bands=CANONICAL_BANDS, resolution: int = DEFAULT_RESOLUTION) -> TopographicImage:
    """One-shot convenience wrapper; build a :class:`Featurizer` when converting many chunks."""
    return Featurizer(layout, chunk.sample_rate_hz, bands, resolution).image(chunk)
