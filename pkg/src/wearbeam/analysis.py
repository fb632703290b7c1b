"""Transfer functions and body-acoustics analyses.

Curves are computed in fractional-octave bands by power averaging the
squared magnitude of the DFT bins inside each band. Bands without bins, or
with zero energy in a quantity that is divided by, are flagged invalid
rather than reported as infinities.
"""

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .dataset import ImpulseResponse, MeasurementKey, load_ir
from .errors import AnalysisError

DEFAULT_SMOOTHING = 1.0 / 3.0
DEFAULT_BAND_RANGE = (50.0, 20000.0)
ARC_HALF_WIDTH_DEG = 45.0


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Real-input spectrum ``A(w)`` of one channel on an rfft grid."""

    bins: np.ndarray
    bin_hz: float
    source_key: Optional[MeasurementKey] = None

    def __post_init__(self):
        bins = np.array(self.bins, dtype=np.complex128)
        if bins.ndim != 1 or bins.size < 2:
            raise AnalysisError("transfer function needs a 1-D array of at least 2 bins")
        if not np.all(np.isfinite(bins)):
            raise AnalysisError("transfer function contains non-finite bins")
        if self.bin_hz <= 0:
            raise AnalysisError("bin spacing must be positive")
        bins.setflags(write=False)
        object.__setattr__(self, "bins", bins)

    @property
    def fft_size(self):
        return 2 * (self.bins.size - 1)

    @property
    def freqs(self):
        return np.arange(self.bins.size) * self.bin_hz


@dataclass(frozen=True, eq=False)
class BandCurve:
    """Per-band levels in dB.

    ``valid`` is False for bands marked "insufficient energy"; their
    ``values_db`` entries are NaN.
    """

    band_centers_hz: np.ndarray
    values_db: np.ndarray
    smoothing: float = DEFAULT_SMOOTHING
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        centers = np.asarray(self.band_centers_hz, dtype=np.float64)
        values = np.asarray(self.values_db, dtype=np.float64)
        valid = np.isfinite(values) if self.valid is None else np.asarray(self.valid, bool)
        if centers.shape != values.shape or valid.shape != values.shape:
            raise AnalysisError("band centers, values and validity must have equal length")
        if np.any(np.diff(centers) <= 0):
            raise AnalysisError("band centers must be strictly increasing")
        if not np.all(np.isfinite(values[valid])):
            raise AnalysisError("valid bands must have finite values")
        values = np.where(valid, values, np.nan)
        object.__setattr__(self, "band_centers_hz", centers)
        object.__setattr__(self, "values_db", values)
        object.__setattr__(self, "valid", valid)

    def __neg__(self):
        return BandCurve(self.band_centers_hz, -self.values_db, self.smoothing, self.valid)


def transfer_function(ir: ImpulseResponse, fft_size: int, source_key=None) -> TransferFunction:
    """DFT of the (zero-padded) impulse response.

    Refuses ``fft_size`` shorter than the response instead of truncating.
    """
    if fft_size < len(ir):
        raise AnalysisError(f"fft_size {fft_size} is shorter than the IR ({len(ir)} samples)")
    bins = np.fft.rfft(ir.samples, fft_size)
    return TransferFunction(bins, ir.sample_rate_hz / fft_size, source_key)


def octave_bands(smoothing=DEFAULT_SMOOTHING, f_lo=DEFAULT_BAND_RANGE[0],
                 f_hi=DEFAULT_BAND_RANGE[1], nyquist=None):
    """Base-2 fractional-octave bands referenced to 1 kHz.

    Returns ``(centers, lower_edges, upper_edges)``. Nominal end points such
    as 50 Hz and 20 kHz map to the exact centers 49.6 Hz and 20.2 kHz.
    """
    if smoothing <= 0:
        raise AnalysisError("smoothing must be a positive octave fraction")
    k_lo = int(np.ceil(np.log2(f_lo / 1000.0) / smoothing - 0.05))
    k_hi = int(np.floor(np.log2(f_hi / 1000.0) / smoothing + 0.05))
    centers = 1000.0 * 2.0 ** (np.arange(k_lo, k_hi + 1) * smoothing)
    if nyquist is not None:
        centers = centers[centers * 2.0 ** (smoothing / 2) <= nyquist]
    half = 2.0 ** (smoothing / 2)
    return centers, centers / half, centers * half


def band_powers(tf: TransferFunction, smoothing=DEFAULT_SMOOTHING, band_range=DEFAULT_BAND_RANGE):
    """Mean |A|^2 over the bins of each band and the bin count per band."""
    nyquist = tf.bin_hz * (tf.bins.size - 1)
    centers, lower, upper = octave_bands(smoothing, *band_range, nyquist=nyquist)
    power = np.abs(tf.bins) ** 2
    freqs = tf.freqs
    # bin membership via cumulative sums keeps this O(bins + bands)
    csum = np.concatenate([[0.0], np.cumsum(power)])
    lo_idx = np.searchsorted(freqs, lower, side="left")
    hi_idx = np.searchsorted(freqs, upper, side="left")
    counts = hi_idx - lo_idx
    sums = csum[hi_idx] - csum[lo_idx]
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return centers, means, counts


def band_levels_db(tf, smoothing=DEFAULT_SMOOTHING, band_range=DEFAULT_BAND_RANGE):
    """10*log10 of band power; invalid (NaN) where a band is empty or silent."""
    centers, means, counts = band_powers(tf, smoothing, band_range)
    ok = (counts > 0) & (means > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        levels = np.where(ok, 10.0 * np.log10(np.where(ok, means, 1.0)), np.nan)
    return centers, levels, ok


def _check_grid(a, b):
    if a.bins.size != b.bins.size or not np.isclose(a.bin_hz, b.bin_hz, rtol=1e-12):
        raise AnalysisError("transfer functions are on different frequency grids")


def ild(left: TransferFunction, right: TransferFunction, smoothing=DEFAULT_SMOOTHING,
        band_range=DEFAULT_BAND_RANGE) -> BandCurve:
    """Interaural level difference, positive when the left ear is louder."""
    _check_grid(left, right)
    centers, l_db, l_ok = band_levels_db(left, smoothing, band_range)
    _, r_db, r_ok = band_levels_db(right, smoothing, band_range)
    ok = l_ok & r_ok
    return BandCurve(centers, np.where(ok, l_db - r_db, np.nan), smoothing, ok)


def received_power(irs_by_angle: Mapping[int, ImpulseResponse],
                   free_space: Optional[ImpulseResponse]) -> dict:
    """Full-band energy per source angle in dB relative to a free-space mic."""
    if free_space is None:
        raise AnalysisError("no free-space reference available")
    ref_energy = float(np.sum(free_space.samples ** 2))
    if ref_energy <= 0:
        raise AnalysisError("free-space reference carries no energy")
    out = {}
    for az in sorted(irs_by_angle):
        ir = irs_by_angle[az]
        if ir.sample_rate_hz != free_space.sample_rate_hz:
            raise AnalysisError(f"azimuth {az}: sample rate differs from the reference")
        energy = float(np.sum(ir.samples ** 2))
        if energy <= 0:
            raise AnalysisError(f"azimuth {az}: response carries no energy")
        out[az] = 10.0 * np.log10(energy / ref_energy)
    return out


def angular_distance(a, b):
    """Smallest absolute difference between two azimuths, in degrees."""
    d = np.abs((np.asarray(a, dtype=np.float64) - b) % 360.0)
    return np.minimum(d, 360.0 - d)


def arc_angles(angles, center, half_width=ARC_HALF_WIDTH_DEG):
    """Angles within ``half_width`` (inclusive) of ``center``."""
    return [a for a in sorted(angles) if angular_distance(a, center) <= half_width + 1e-9]


def arc_mean_db(values_by_angle, center, half_width=ARC_HALF_WIDTH_DEG):
    sel = arc_angles(values_by_angle, center, half_width)
    if not sel:
        raise AnalysisError(f"no angles within {half_width} degrees of {center}")
    return float(np.mean([values_by_angle[a] for a in sel]))


def front_back_contrast(power_by_angle, facing_azimuth, half_width=ARC_HALF_WIDTH_DEG):
    """Mean level over the arc the mic faces minus mean over the opposite arc."""
    return arc_mean_db(power_by_angle, facing_azimuth, half_width) - arc_mean_db(
        power_by_angle, (facing_azimuth + 180.0) % 360.0, half_width
    )


def shadow_attenuation(tfs_by_angle: Mapping[int, TransferFunction], facing_azimuth,
                       smoothing=DEFAULT_SMOOTHING, half_width=ARC_HALF_WIDTH_DEG,
                       band_range=DEFAULT_BAND_RANGE) -> BandCurve:
    """Band levels averaged over the nearest arc minus those of the farthest arc.

    Averaging is done on dB values. Positive values mean the body attenuates
    sources on the far side.
    """
    if len(tfs_by_angle) < 2:
        raise AnalysisError("need at least two source angles")
    near = arc_angles(tfs_by_angle, facing_azimuth, half_width)
    far = arc_angles(tfs_by_angle, (facing_azimuth + 180.0) % 360.0, half_width)
    if not near or not far:
        raise AnalysisError("nearest or farthest arc contains no measured angles")
    first = tfs_by_angle[near[0]]
    for tf in tfs_by_angle.values():
        _check_grid(first, tf)

    def mean_levels(angles):
        rows = [band_levels_db(tfs_by_angle[a], smoothing, band_range) for a in angles]
        levels = np.array([r[1] for r in rows])
        ok = np.all([r[2] for r in rows], axis=0)
        return rows[0][0], np.where(ok, np.nanmean(np.where(ok, levels, 0.0), axis=0), np.nan), ok

    centers, near_db, near_ok = mean_levels(near)
    _, far_db, far_ok = mean_levels(far)
    ok = near_ok & far_ok
    return BandCurve(centers, np.where(ok, near_db - far_db, np.nan), smoothing, ok)


def clothing_attenuation(clothed: Mapping, bare: Mapping, mic_set=None,
                         smoothing=DEFAULT_SMOOTHING,
                         band_range=DEFAULT_BAND_RANGE) -> BandCurve:
    """Mean over (mic, angle) of 20*log10(|bare| / |clothed|) per band.

    ``clothed`` and ``bare`` map ``(mic_id, azimuth)`` to TransferFunction
    and must cover the same grid after restricting to ``mic_set``. Positive
    values mean the garment attenuates; negative values (amplification) are
    kept as they are.
    """
    def restrict(m):
        return {k: v for k, v in m.items() if mic_set is None or k[0] in set(mic_set)}

    clothed, bare = restrict(clothed), restrict(bare)
    if set(clothed) != set(bare):
        missing = sorted(set(clothed) ^ set(bare))[:5]
        raise AnalysisError(f"clothed and bare slices cover different (mic, angle) grids: {missing}")
    if not clothed:
        raise AnalysisError("no measurements selected")
    diffs, oks, centers = [], [], None
    for k in sorted(bare):
        _check_grid(bare[k], clothed[k])
        centers, b_db, b_ok = band_levels_db(bare[k], smoothing, band_range)
        _, c_db, c_ok = band_levels_db(clothed[k], smoothing, band_range)
        ok = b_ok & c_ok
        diffs.append(np.where(ok, b_db - c_db, 0.0))
        oks.append(ok)
    ok = np.all(oks, axis=0)
    values = np.where(ok, np.mean(diffs, axis=0), np.nan)
    return BandCurve(centers, values, smoothing, ok)


def slice_transfer_functions(manifest, subject, wear_config, mic_ids=None, fft_size=None):
    """Load ``{(mic_id, azimuth): TransferFunction}`` for one measurement slice."""
    keys = [k for k in manifest.keys(subject, wear_config)
            if mic_ids is None or k.mic_id in set(mic_ids)]
    if not keys:
        raise AnalysisError(f"no measurements for subject={subject} wear_config={wear_config}")
    irs = {k: load_ir(manifest, k) for k in keys}
    n = fft_size or max(len(ir) for ir in irs.values())
    return {(k.mic_id, k.source_azimuth_deg): transfer_function(ir, n, k) for k, ir in irs.items()}


def curve_rows(curve: BandCurve):
    """CSV rows ``(frequency_hz, value_db)``; invalid bands read "insufficient_energy"."""
    rows = []
    for f, v, ok in zip(curve.band_centers_hz, curve.values_db, curve.valid):
        rows.append((f"{f:.2f}", f"{v:.4f}" if ok else "insufficient_energy"))
    return rows


def curve_document(curve: BandCurve):
    return {
        "smoothing_octaves": curve.smoothing,
        "band_centers_hz": [round(float(f), 4) for f in curve.band_centers_hz],
        "values_db": [round(float(v), 6) if ok else None
                      for v, ok in zip(curve.values_db, curve.valid)],
    }
