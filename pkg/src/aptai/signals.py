"""Articulatory signal processing.

Gap repair, low-pass filtering and tract-variable extraction for 100 Hz
sensor-coil data, plus resampling, per-utterance z-scoring and the fixed
sinc smoothing filter applied to predicted trajectories.

All functions are pure; nothing here holds mutable state, so distinct
utterances can be processed concurrently.
"""

import numpy as np
from dataclasses import dataclass, field

from .config import EMA_SENSORS, N_TV
from .errors import (
    ParameterError,
    SchemaError,
    UnitsError,
    UnrecoverableChannelError,
)


@dataclass
class EmaRecord:
    """Named 2-D articulator sensor series, millimeters, typically 100 Hz.

    sensors maps each name in EMA_SENSORS to a (T, 2) array of (x, y)
    coordinates. All series share one length; gaps are NaN cells.
    """

    sensors: dict
    rate: float = 100.0

    def __post_init__(self):
        if self.rate <= 0:
            raise ParameterError("sample rate must be positive")
        lengths = {np.asarray(v).shape[0] for v in self.sensors.values()}
        if len(lengths) > 1:
            raise SchemaError(f"sensor series lengths differ: {sorted(lengths)}")

    @property
    def length(self):
        return next(iter(self.sensors.values())).shape[0]


@dataclass
class TvTrajectory:
    """T x 9 tract-variable matrix at a known frame rate.

    Channel order is fixed: LA, LP, JA, TTCL, TTCD, TMCL, TMCD, TBCL, TBCD.
    normalized=False means raw units (mm for distances, radians for angles).
    """

    values: np.ndarray
    rate: float
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != N_TV:
            raise ParameterError(
                f"trajectory must be (T, {N_TV}), got {self.values.shape}"
            )
        if self.rate <= 0:
            raise ParameterError("frame rate must be positive")

    @property
    def n_frames(self):
        return self.values.shape[0]


@dataclass
class NormStats:
    """Per-channel mean and the divisor used for z-scoring.

    std holds the actual divisor (1.0 where the channel variance was below
    the degeneracy guard), so x * std + mean always inverts the mapping
    exactly.
    """

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if self.mean.shape != (N_TV,) or self.std.shape != (N_TV,):
            raise ParameterError("stats must be length-9 vectors")
        if np.any(self.std < 0):
            raise ParameterError("std entries must be nonnegative")


@dataclass
class GeometryConfig:
    """Fixed geometry for the sensor-to-tract-variable transform.

    origin is the polar reference point (mm), occlusal_angle the bite-plane
    direction (radians), palate an ordered polyline with strictly monotone
    x coordinates.
    """

    origin: tuple = (0.0, -10.0)
    occlusal_angle: float = 0.0
    palate: np.ndarray = field(default_factory=lambda: np.array(
        [[-50.0, 18.0], [-35.0, 24.0], [-20.0, 27.0], [-5.0, 25.0], [10.0, 18.0]]
    ))

    def __post_init__(self):
        self.palate = np.asarray(self.palate, dtype=float)
        if self.palate.ndim != 2 or self.palate.shape[1] != 2 or len(self.palate) < 2:
            raise ParameterError("palate polyline needs at least 2 (x, y) points")
        dx = np.diff(self.palate[:, 0])
        if not (np.all(dx > 0) or np.all(dx < 0)):
            raise ParameterError("palate x coordinates must be strictly monotone")

    @classmethod
    def from_section(cls, section):
        return cls(origin=tuple(section.origin),
                   occlusal_angle=float(section.occlusal_angle),
                   palate=np.asarray(section.palate, dtype=float))


def interpolate_nan(series):
    """Fill NaN gaps in a 1-D series by linear interpolation.

    Interior gaps are interpolated between the nearest finite neighbors;
    leading/trailing gaps take the nearest finite value. Finite entries are
    returned unchanged.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or len(x) < 1:
        raise ParameterError("expected a nonempty 1-D series")
    finite = np.isfinite(x)
    if finite.all():
        return x.copy()
    if not finite.any():
        raise UnrecoverableChannelError("channel has no finite samples")
    idx = np.arange(len(x))
    return np.interp(idx, idx[finite], x[finite])


def butterworth_lowpass(series, cutoff_hz, rate, order=4):
    """Zero-phase low-pass with the analytic squared-magnitude response
    1 / (1 + (f/fc)^(2*order)).

    Applied in the DFT domain on a reflect-padded copy, which realizes
    forward-then-backward filtering of the analog prototype without the
    frequency warping a bilinear-transform IIR would introduce near Nyquist.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ParameterError("expected a 1-D series")
    if not (0 < cutoff_hz < rate / 2):
        raise ParameterError(
            f"cutoff {cutoff_hz} Hz must lie in (0, {rate / 2}) for rate {rate}"
        )
    if order < 1:
        raise ParameterError("order must be >= 1")
    if not np.isfinite(x).all():
        raise ParameterError("series must be finite; interpolate gaps first")
    n = len(x)
    if n < 2:
        return x.copy()
    pad = n - 1
    xp = np.pad(x, pad, mode="reflect")
    m = len(xp)
    freqs = np.fft.rfftfreq(m, d=1.0 / rate)
    gain = 1.0 / (1.0 + (freqs / cutoff_hz) ** (2 * order))
    y = np.fft.irfft(np.fft.rfft(xp) * gain, m)
    return y[pad:pad + n]


def _angle_about(points, origin, axis_angle):
    """Polar angle of points about origin, measured from the occlusal axis."""
    v = np.asarray(points, dtype=float) - np.asarray(origin, dtype=float)
    ux, uy = np.cos(axis_angle), np.sin(axis_angle)
    dot = v[..., 0] * ux + v[..., 1] * uy
    cross = ux * v[..., 1] - uy * v[..., 0]
    return np.arctan2(cross, dot)


def _nearest_on_polyline(points, polyline):
    """Closest point on a polyline for each query point.

    Returns (distance, nearest_xy). Ties between segments resolve to the
    earliest segment, which is deterministic.
    """
    pts = np.asarray(points, dtype=float)            # (T, 2)
    a = polyline[:-1]                                # (S, 2)
    d = polyline[1:] - a                             # (S, 2)
    seg_len2 = (d ** 2).sum(axis=1)                  # (S,)
    rel = pts[:, None, :] - a[None, :, :]            # (T, S, 2)
    t = (rel * d[None, :, :]).sum(axis=2) / seg_len2
    t = np.clip(t, 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * d[None, :, :]
    dist2 = ((pts[:, None, :] - proj) ** 2).sum(axis=2)
    j = np.argmin(dist2, axis=1)
    rows = np.arange(len(pts))
    return np.sqrt(dist2[rows, j]), proj[rows, j]


def ema_to_tvs(record: EmaRecord, geo: GeometryConfig) -> TvTrajectory:
    """Transform cleaned sensor coordinates into the nine tract variables.

    LA   lip aperture: |UL - LL| (mm)
    LP   lip protrusion: signed offset of the lip midpoint from the origin
         along the occlusal axis (mm)
    JA   jaw angle about the origin relative to the occlusal axis (rad)
    sCD  constriction degree: distance from tongue sensor s to the palate (mm)
    sCL  constriction location: angle (about the origin, relative to the
         occlusal axis) of the palate point nearest to s (rad)
    """
    missing = [s for s in EMA_SENSORS if s not in record.sensors]
    if missing:
        raise SchemaError(f"missing sensor(s): {missing}")
    coords = {s: np.asarray(record.sensors[s], dtype=float) for s in EMA_SENSORS}
    for name, arr in coords.items():
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise SchemaError(f"sensor {name} must be a (T, 2) series")
        if not np.isfinite(arr).all():
            raise ParameterError(f"sensor {name} has non-finite values; clean first")

    origin = np.asarray(geo.origin, dtype=float)
    ul, ll, jaw = coords["UL"], coords["LL"], coords["JAW"]
    la = np.linalg.norm(ul - ll, axis=1)
    ux, uy = np.cos(geo.occlusal_angle), np.sin(geo.occlusal_angle)
    mid = 0.5 * (ul + ll) - origin
    lp = mid[:, 0] * ux + mid[:, 1] * uy
    ja = _angle_about(jaw, origin, geo.occlusal_angle)

    cols = [la, lp, ja]
    for s in ("TT", "TM", "TB"):
        dist, nearest = _nearest_on_polyline(coords[s], geo.palate)
        cl = _angle_about(nearest, origin, geo.occlusal_angle)
        cols.extend([cl, dist])
    values = np.stack(cols, axis=1)
    return TvTrajectory(values=values, rate=record.rate, normalized=False)


def resample_to_frames(traj: TvTrajectory, target_frames: int) -> TvTrajectory:
    """Linearly resample each channel onto target_frames uniformly spaced
    points spanning the original duration (endpoints preserved)."""
    if target_frames < 1:
        raise ParameterError("target_frames must be >= 1")
    n = traj.n_frames
    if n < 2:
        raise ParameterError("need at least 2 frames to resample")
    src = np.linspace(0.0, 1.0, n)
    dst = np.linspace(0.0, 1.0, target_frames)
    out = np.empty((target_frames, traj.values.shape[1]))
    for c in range(traj.values.shape[1]):
        out[:, c] = np.interp(dst, src, traj.values[:, c])
    new_rate = traj.rate * (target_frames - 1) / (n - 1) if target_frames > 1 else traj.rate
    return TvTrajectory(values=out, rate=new_rate, normalized=traj.normalized)


STD_GUARD = 1e-8


def zscore_normalize(traj: TvTrajectory):
    """Per-channel z-scoring with the utterance's own statistics.

    Channels with std below the guard use divisor 1, so constant channels
    map to zero. Returns (normalized trajectory, NormStats); stats invert
    the mapping exactly (see NormStats).
    """
    vals = traj.values
    mean = vals.mean(axis=0)
    std = vals.std(axis=0)
    divisor = np.where(std < STD_GUARD, 1.0, std)
    out = (vals - mean) / divisor
    return (
        TvTrajectory(values=out, rate=traj.rate, normalized=True),
        NormStats(mean=mean, std=divisor),
    )


def denormalize(traj: TvTrajectory, stats: NormStats) -> TvTrajectory:
    if not traj.normalized:
        raise UnitsError("trajectory is already in raw units")
    vals = traj.values * stats.std + stats.mean
    return TvTrajectory(values=vals, rate=traj.rate, normalized=False)


def windowed_sinc_kernel(cutoff_fraction, kernel_len):
    """Hamming-windowed sinc low-pass kernel with unit DC gain.

    cutoff_fraction is relative to Nyquist; the kernel is a fixed constant
    of the configuration and is never trained.
    """
    if kernel_len % 2 == 0 or kernel_len < 1:
        raise ParameterError("kernel_len must be odd and positive")
    if not (0 < cutoff_fraction < 1):
        raise ParameterError("cutoff_fraction must lie in (0, 1)")
    half = (kernel_len - 1) // 2
    k = np.arange(kernel_len) - half
    w = cutoff_fraction / 2.0  # cycles per sample; Nyquist = 0.5
    h = 2.0 * w * np.sinc(2.0 * w * k)
    h *= np.hamming(kernel_len)
    return h / h.sum()


def _reflect_index(n, half):
    # Index map realizing reflect padding; also used by the adjoint.
    return np.pad(np.arange(n), half, mode="reflect")


def smooth_columns(values, kernel):
    """Convolve each column with the (symmetric) kernel under reflect
    padding; output length equals input length."""
    x = np.asarray(values, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    n = x.shape[0]
    half = (len(kernel) - 1) // 2
    if n == 1 or half == 0:
        out = x.copy()
        return out[:, 0] if squeeze else out
    idx = _reflect_index(n, half)
    out = np.empty_like(x)
    for c in range(x.shape[1]):
        out[:, c] = np.convolve(x[idx, c], kernel, mode="valid")
    return out[:, 0] if squeeze else out


def smooth_columns_adjoint(grad, kernel, n):
    """Exact adjoint of smooth_columns for backpropagation."""
    g = np.asarray(grad, dtype=float)
    squeeze = g.ndim == 1
    if squeeze:
        g = g[:, None]
    half = (len(kernel) - 1) // 2
    if n == 1 or half == 0:
        out = g.copy()
        return out[:, 0] if squeeze else out
    idx = _reflect_index(n, half)
    out = np.zeros((n, g.shape[1]))
    for c in range(g.shape[1]):
        padded_grad = np.convolve(g[:, c], kernel, mode="full")
        np.add.at(out[:, c], idx, padded_grad)
    return out[:, 0] if squeeze else out


def sinc_smooth(traj: TvTrajectory, cutoff_fraction=0.4, kernel_len=17) -> TvTrajectory:
    """Apply the fixed windowed-sinc low-pass to every channel."""
    kernel = windowed_sinc_kernel(cutoff_fraction, kernel_len)
    out = smooth_columns(traj.values, kernel)
    return TvTrajectory(values=out, rate=traj.rate, normalized=traj.normalized)
