"""Hand-crafted tremor signals and features computed per keypoint.

For each of six keypoints (thumb, index, pinky, wrist, elbow, shoulder) the
vertical position over the temporal ROI yields two signals — peak-to-trough
amplitudes and a one-sided DFT power spectrum — from which five features are
taken: mean amplitude, 90th-percentile amplitude, dominant frequency,
power-weighted mean frequency, and the fraction of power within +-6 Hz of
the mean frequency. Signals are linearly detrended first; postural drift
otherwise dominates both extrema detection and the spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .poseproc import PoseSequence, TemporalROI

FEATURE_KEYPOINTS = ("thumb", "index", "pinky", "wrist", "elbow", "shoulder")
FEATURE_NAMES = ("mean_amplitude", "max_amplitude", "peak_frequency",
                 "mean_frequency", "relative_tremor_power")
# Required per-keypoint presence over the ROI for the pose-reliant branch.
PRESENCE_MIN = 0.5
# Half-width of the tremor-power window around the mean frequency, Hz.
TREMOR_POWER_HALF_BAND = 6.0
# Extrema below this fraction of the detrended signal range are jitter.
MIN_PROMINENCE_FRAC = 0.01


class TooShort(ValueError):
    pass


class PoseFailure(ValueError):
    def __init__(self, keypoint: str, coverage: float):
        self.keypoint = keypoint
        self.coverage = coverage
        super().__init__(f"keypoint {keypoint!r} present in only "
                         f"{coverage:.1%} of ROI frames")


@dataclass
class Spectrum:
    frequencies: np.ndarray  # Hz, ascending from 0
    power: np.ndarray

    @property
    def total_power(self) -> float:
        return float(self.power.sum())


def feature_columns() -> list[str]:
    return [f"{kp}_{feat}" for kp in FEATURE_KEYPOINTS for feat in FEATURE_NAMES]


def detrend(y: np.ndarray) -> np.ndarray:
    """Remove the least-squares line from a 1-D signal."""
    y = np.asarray(y, dtype=np.float64)
    t = np.arange(len(y), dtype=np.float64)
    a, b = np.polyfit(t, y, 1)
    return y - (a * t + b)


def _alternating_extrema(y: np.ndarray):
    """Indices of interior local extrema (strict first-difference sign flips)."""
    d = np.diff(y)
    idx = []
    for i in range(1, len(y) - 1):
        if (d[i - 1] > 0 and d[i] < 0) or (d[i - 1] < 0 and d[i] > 0):
            idx.append(i)
    return idx


def vertical_amplitude(y: np.ndarray, min_prominence_frac: float = MIN_PROMINENCE_FRAC) -> np.ndarray:
    """Peak-to-trough distances of the detrended vertical signal.

    Adjacent extrema pairs closer than ``min_prominence_frac`` of the signal
    range are pruned (smallest first), which keeps the remaining sequence
    alternating while suppressing jitter wiggles.
    """
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 3:
        raise TooShort(f"need at least 3 samples, got {len(y)}")
    s = detrend(y)
    idx = _alternating_extrema(s)
    if not idx:
        return np.zeros(0)

    vals = list(s[idx])
    rng = float(s.max() - s.min())
    thresh = min_prominence_frac * rng
    # remove weakest adjacent pair until every swing clears the threshold
    while len(vals) >= 2:
        gaps = np.abs(np.diff(vals))
        j = int(np.argmin(gaps))
        if gaps[j] >= thresh:
            break
        del vals[j:j + 2]
    if len(vals) < 2:
        return np.zeros(0)
    return np.abs(np.diff(vals))


def dft_power(y: np.ndarray, fps: float) -> Spectrum:
    """One-sided power spectrum of the mean-removed signal.

    Power is |DFT|^2 / N with interior bins doubled, so the total equals
    N * variance (Parseval).
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < 8:
        raise TooShort(f"need at least 8 samples, got {n}")
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    s = y - y.mean()
    spec = np.fft.rfft(s)
    power = (spec.real ** 2 + spec.imag ** 2) / n
    # double everything except DC and (for even n) the Nyquist bin
    last_single = n % 2 == 0
    hi = len(power) - 1 if last_single else len(power)
    power[1:hi] *= 2.0
    freqs = np.fft.rfftfreq(n, d=1.0 / fps)
    return Spectrum(frequencies=freqs, power=power)


def mean_amplitude(amplitudes: np.ndarray) -> float:
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    return float(amplitudes.mean()) if amplitudes.size else 0.0


def max_amplitude(amplitudes: np.ndarray) -> float:
    """Linear-interpolated 90th percentile of the amplitude series."""
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    return float(np.percentile(amplitudes, 90)) if amplitudes.size else 0.0


def peak_frequency(spec: Spectrum) -> float:
    if spec.total_power <= 0:
        return 0.0
    return float(spec.frequencies[int(np.argmax(spec.power))])


def mean_frequency(spec: Spectrum) -> float:
    total = spec.total_power
    if total <= 0:
        return 0.0
    return float(np.dot(spec.frequencies, spec.power) / total)


def relative_tremor_power(spec: Spectrum, mean_f: float,
                          half_band: float = TREMOR_POWER_HALF_BAND) -> float:
    total = spec.total_power
    if total <= 0:
        return 0.0
    mask = np.abs(spec.frequencies - mean_f) <= half_band
    return float(spec.power[mask].sum() / total)


def resolve_keypoint(name: str, laterality: str) -> str:
    """Map the feature keypoint name to the tracked keypoint for one side."""
    if name == "shoulder":
        return "shoulder_l" if laterality == "left" else "shoulder_r"
    return name


def keypoint_features(y: np.ndarray, fps: float) -> list[float]:
    """The five features of one keypoint's vertical signal."""
    try:
        amps = vertical_amplitude(y)
    except TooShort:
        amps = np.zeros(0)
    try:
        spec = dft_power(y, fps)
    except TooShort:
        spec = Spectrum(frequencies=np.zeros(1), power=np.zeros(1))
    m_f = mean_frequency(spec)
    return [mean_amplitude(amps), max_amplitude(amps), peak_frequency(spec),
            m_f, relative_tremor_power(spec, m_f)]


def feature_vector(seq: PoseSequence, roi: TemporalROI) -> np.ndarray:
    """30 features in ``feature_columns()`` order.

    Raises PoseFailure when any required keypoint is present in fewer than
    half the ROI frames; the per-keypoint signal uses only frames where that
    keypoint was detected.
    """
    roi.validate(len(seq))
    n_frames = len(roi)
    out = []
    for kp_name in FEATURE_KEYPOINTS:
        tracked = resolve_keypoint(kp_name, seq.laterality)
        pos, present = seq.track(tracked, roi)
        coverage = present.sum() / n_frames
        if coverage < PRESENCE_MIN:
            raise PoseFailure(kp_name, coverage)
        out.extend(keypoint_features(pos[present, 1], seq.fps))
    return np.array(out, dtype=np.float64)
