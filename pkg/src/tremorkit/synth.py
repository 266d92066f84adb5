"""Synthetic assessment generator with known ground truth.

Each assessment is a static upper-body posture whose hand oscillates
vertically with a severity-dependent peak-to-peak amplitude, rendered as a
textured sprite over a smooth background, together with per-frame keypoints
that mimic a pose-estimation output (confidences, detection jitter,
dropout). Confound modes reproduce the failure cases seen in real video:
hand-held camera shake, pulsing autofocus zoom, finger fidgeting, tremor
outside the temporal ROI, and keypoint dropout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .imageops import bilinear_sample
from .io import ManifestRow
from .poseproc import Keypoint, PoseFrame, PoseSequence, TemporalROI

# Peak-to-peak tremor amplitude per severity score, as a fraction of spine
# length. Log-like spacing: adjacent severities differ by a ratio, not a step.
AMPLITUDE_LADDER = (0.0, 0.01, 0.04, 0.12, 0.30)
# Typical parkinsonian tremor band, Hz.
TREMOR_BAND = (4.0, 7.0)
# Keypoint detection jitter, fraction of spine length (std).
JITTER_STD = 0.00015
# Extra detection noise per unit dropout rate (pose quality degrades when
# detection starts failing), fraction of spine length.
DROPOUT_NOISE_SCALE = 0.02
# Frames of non-posture lead-in/out around the temporal ROI.
ROI_PAD = 3

CONFOUNDS = ("none", "camera_shake", "autofocus_pulse", "finger_fidget",
             "off_roi_tremor", "keypoint_dropout")

# Severity distribution observed in routine clinical collections (scores 0-4).
CLINICAL_SCORE_WEIGHTS = (0.5634, 0.3403, 0.0638, 0.0281, 0.0044)


@dataclass(frozen=True)
class SynthSpec:
    score: int
    laterality: str = "left"
    fps: float = 30.0
    duration: float = 1.6          # seconds inside the temporal ROI
    tremor_freq: float | None = None   # Hz; None -> uniform in TREMOR_BAND
    tremor_amp: float | None = None    # peak-to-peak, fraction of spine length
    confound: str = "none"
    dropout_rate: float = 0.0
    seed: int = 0
    img_size: int = 96

    def validate(self):
        if self.score not in (0, 1, 2, 3, 4):
            raise ValueError(f"score must be 0..4, got {self.score}")
        if self.laterality not in ("left", "right"):
            raise ValueError(f"bad laterality {self.laterality!r}")
        if self.fps <= 0 or self.duration <= 0:
            raise ValueError("fps and duration must be positive")
        if self.tremor_amp is not None and self.tremor_amp < 0:
            raise ValueError("tremor amplitude must be non-negative")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError("dropout rate must be in [0, 1]")
        if self.confound not in CONFOUNDS:
            raise ValueError(f"unknown confound {self.confound!r}")


@dataclass
class SynthAssessment:
    spec: SynthSpec
    seq: PoseSequence
    frames: np.ndarray           # T,H,W,3 float32 in [0,1]
    roi: TemporalROI
    score: int
    spine_length: float          # ground-truth h in pixels


def _posture(img_size: float, laterality: str) -> dict[str, np.ndarray]:
    """Static world-space keypoint anchors; spine length is 0.32 * img_size."""
    s = img_size
    sx = -1.0 if laterality == "left" else 1.0
    pts = {
        "shoulder_l": (0.34 * s, 0.30 * s),
        "shoulder_r": (0.66 * s, 0.30 * s),
        "hip_l": (0.42 * s, 0.62 * s),
        "hip_r": (0.58 * s, 0.62 * s),
    }
    h = 0.32 * s
    wrist_x = 0.5 * s + sx * 0.28 * s
    wrist_y = 0.44 * s
    pts["wrist"] = (wrist_x, wrist_y)
    pts["elbow"] = (0.5 * s + sx * 0.21 * s, 0.36 * s)
    pts["thumb"] = (wrist_x - sx * 0.10 * h, wrist_y + 0.06 * h)
    pts["index"] = (wrist_x + sx * 0.04 * h, wrist_y + 0.16 * h)
    pts["pinky"] = (wrist_x - sx * 0.09 * h, wrist_y + 0.15 * h)
    return {k: np.array(v, dtype=np.float64) for k, v in pts.items()}


# how strongly tremor displaces each keypoint (distal limb moves fully)
_TREMOR_GAIN = {"wrist": 1.0, "thumb": 1.0, "index": 1.0, "pinky": 1.0,
                "elbow": 0.3}
_HAND_PARTS = ("wrist", "thumb", "index", "pinky")


def _smooth_noise(rng, cells: int, out_size: int, lo: float, hi: float,
                  channels: int = 1) -> np.ndarray:
    """Bilinearly upsampled uniform noise grid; smooth static texture."""
    grid = rng.uniform(lo, hi, size=(cells, cells, channels))
    ys = np.linspace(0, cells - 1, out_size)
    xs = np.linspace(0, cells - 1, out_size)
    gx, gy = np.meshgrid(xs, ys)
    x0 = np.clip(np.floor(gx).astype(int), 0, cells - 2)
    y0 = np.clip(np.floor(gy).astype(int), 0, cells - 2)
    fx = (gx - x0)[..., None]
    fy = (gy - y0)[..., None]
    out = (grid[y0, x0] * (1 - fx) * (1 - fy) + grid[y0, x0 + 1] * fx * (1 - fy)
           + grid[y0 + 1, x0] * (1 - fx) * fy + grid[y0 + 1, x0 + 1] * fx * fy)
    return out


class _HandScene:
    """World-space scene: static background plus a textured hand sprite."""

    HAND_COLOR = np.array([0.82, 0.64, 0.52])

    def __init__(self, rng, img_size: int, h: float):
        self.size = img_size
        # background larger than the frame so small camera motions stay inside
        self.bg_pad = max(6, int(0.08 * img_size))
        bg_size = img_size + 2 * self.bg_pad
        base = 0.32 + _smooth_noise(rng, 7, bg_size, -0.10, 0.10, channels=3)
        self.background = np.clip(base, 0.0, 1.0)
        self.sigma_palm = 0.11 * h
        self.sigma_finger = 0.045 * h
        # multiplicative texture riding on the sprite (attached to hand frame);
        # fine high-contrast cells keep sub-pixel motion visible after resize
        self.tex_cells = 14
        self.tex = rng.uniform(0.45, 1.55, size=(self.tex_cells, self.tex_cells))
        self.h = h

    def background_at(self, qx: np.ndarray, qy: np.ndarray) -> np.ndarray:
        return bilinear_sample(self.background, qx + self.bg_pad, qy + self.bg_pad)

    def _texture_at(self, rx: np.ndarray, ry: np.ndarray) -> np.ndarray:
        # hand-local coords -> texture cell grid (clamped bilinear)
        span = 5.0 * self.sigma_palm
        u = np.clip((rx / span + 0.5) * (self.tex_cells - 1), 0, self.tex_cells - 1)
        v = np.clip((ry / span + 0.5) * (self.tex_cells - 1), 0, self.tex_cells - 1)
        u0 = np.clip(np.floor(u).astype(int), 0, self.tex_cells - 2)
        v0 = np.clip(np.floor(v).astype(int), 0, self.tex_cells - 2)
        fu, fv = u - u0, v - v0
        t = self.tex
        return (t[v0, u0] * (1 - fu) * (1 - fv) + t[v0, u0 + 1] * fu * (1 - fv)
                + t[v0 + 1, u0] * (1 - fu) * fv + t[v0 + 1, u0 + 1] * fu * fv)

    def render(self, qx: np.ndarray, qy: np.ndarray,
               parts: dict[str, np.ndarray]) -> np.ndarray:
        """Evaluate the scene on world coordinates (qx, qy)."""
        img = self.background_at(qx, qy)
        wrist = parts["wrist"]
        palm = wrist + (parts["index"] - wrist) * 0.45
        alpha = np.zeros_like(qx)
        for name, sigma, gain in (("palm", self.sigma_palm, 1.0),
                                  ("thumb", self.sigma_finger, 0.9),
                                  ("index", self.sigma_finger, 0.9),
                                  ("pinky", self.sigma_finger, 0.9)):
            c = palm if name == "palm" else parts[name]
            d2 = (qx - c[0]) ** 2 + (qy - c[1]) ** 2
            alpha += gain * np.exp(-d2 / (2.0 * sigma ** 2))
        alpha = np.minimum(alpha, 1.0)
        tex = self._texture_at(qx - wrist[0], qy - wrist[1])
        hand = self.HAND_COLOR[None, None, :] * tex[..., None]
        return img * (1 - alpha[..., None]) + hand * alpha[..., None]


def gen_assessment(spec: SynthSpec) -> SynthAssessment:
    """Deterministic synthetic assessment for one severity/confound spec."""
    spec.validate()
    rng = rngmod.substream(spec.seed, "assessment")

    size = spec.img_size
    anchors = _posture(size, spec.laterality)
    h = float(np.linalg.norm(
        (anchors["shoulder_l"] + anchors["shoulder_r"]) / 2
        - (anchors["hip_l"] + anchors["hip_r"]) / 2))

    t_roi = max(8, int(round(spec.duration * spec.fps)))
    n_frames = t_roi + 2 * ROI_PAD
    roi = TemporalROI(ROI_PAD, ROI_PAD + t_roi - 1)

    amp_pp = AMPLITUDE_LADDER[spec.score] if spec.tremor_amp is None else spec.tremor_amp
    freq = (rng.uniform(*TREMOR_BAND) if spec.tremor_freq is None
            else float(spec.tremor_freq))
    phase = rng.uniform(0, 2 * math.pi)

    scene = _HandScene(rng, size, h)

    # confound parameters (drawn regardless of mode to keep streams aligned)
    shake_amp = 0.035 * h
    shake_freq = rng.uniform(2.0, 4.0)
    shake_phase = rng.uniform(0, 2 * math.pi, size=2)
    zoom_amp = 0.04
    zoom_freq = rng.uniform(0.6, 1.5)
    zoom_phase = rng.uniform(0, 2 * math.pi)
    fidget_freq = rng.uniform(1.0, 2.0)
    fidget_phase = rng.uniform(0, 2 * math.pi)

    jitter = rng.normal(0.0, JITTER_STD * h, size=(n_frames, 9, 2))
    dropout_noise = rng.normal(0.0, DROPOUT_NOISE_SCALE * h * spec.dropout_rate,
                               size=(n_frames, 9, 2))
    dropped = np.zeros(n_frames, dtype=bool)
    if spec.confound == "keypoint_dropout" and spec.dropout_rate > 0:
        dropped = rng.random(n_frames) < spec.dropout_rate
    confidences = rng.uniform(0.5, 0.98, size=(n_frames, 9))

    kp_order = ("shoulder_l", "shoulder_r", "hip_l", "hip_r",
                "wrist", "elbow", "thumb", "index", "pinky")

    centre = np.array([size / 2.0, size / 2.0])
    px = np.arange(size, dtype=np.float64) + 0.5
    gx0, gy0 = np.meshgrid(px, px)

    frames_img = np.empty((n_frames, size, size, 3), dtype=np.float32)
    pose_frames = []
    identity_cam = spec.confound not in ("camera_shake", "autofocus_pulse")
    base_img = None

    for t in range(n_frames):
        ts = t / spec.fps
        in_roi = roi.start_frame <= t <= roi.end_frame

        tremor_on = (not in_roi) if spec.confound == "off_roi_tremor" else in_roi
        d_y = (amp_pp * h / 2.0) * math.sin(2 * math.pi * freq * ts + phase) if tremor_on else 0.0

        parts = {}
        for name, anchor in anchors.items():
            p = anchor.copy()
            if not in_roi and name in _HAND_PARTS + ("elbow",):
                p[1] += 0.20 * h        # arms not yet raised outside the ROI
            p[1] += _TREMOR_GAIN.get(name, 0.0) * d_y
            parts[name] = p
        if spec.confound == "finger_fidget":
            wob = 0.08 * h * math.sin(2 * math.pi * fidget_freq * ts + fidget_phase)
            parts["index"] = parts["index"] + np.array([0.4 * wob, wob])

        # camera model: image(p) = scene(centre + (p - centre)/zoom + shift)
        shift = np.zeros(2)
        zoom = 1.0
        if spec.confound == "camera_shake":
            shift = shake_amp * np.sin(2 * math.pi * shake_freq * ts + shake_phase)
        elif spec.confound == "autofocus_pulse":
            zoom = 1.0 + zoom_amp * math.sin(2 * math.pi * zoom_freq * ts + zoom_phase)

        if identity_cam:
            if base_img is None:
                base_img = scene.background_at(gx0, gy0)
            img = base_img.copy()
            # restamp only a window around the hand
            lo = np.min([parts[p] for p in _HAND_PARTS], axis=0) - 4.5 * scene.sigma_palm
            hi = np.max([parts[p] for p in _HAND_PARTS], axis=0) + 4.5 * scene.sigma_palm
            x0, y0 = np.maximum(np.floor(lo).astype(int), 0)
            x1 = min(int(np.ceil(hi[0])), size)
            y1 = min(int(np.ceil(hi[1])), size)
            if x1 > x0 and y1 > y0:
                img[y0:y1, x0:x1] = scene.render(gx0[y0:y1, x0:x1],
                                                 gy0[y0:y1, x0:x1], parts)
        else:
            qx = centre[0] + (gx0 - centre[0]) / zoom + shift[0]
            qy = centre[1] + (gy0 - centre[1]) / zoom + shift[1]
            img = scene.render(qx, qy, parts)
        frames_img[t] = np.clip(img, 0.0, 1.0)

        keypoints = {}
        if not dropped[t]:
            for k, name in enumerate(kp_order):
                w = parts[name]
                p_img = centre + (w - shift - centre) * zoom
                p_img = p_img + jitter[t, k] + dropout_noise[t, k]
                keypoints[name] = Keypoint(float(p_img[0]), float(p_img[1]),
                                           float(confidences[t, k]))
        pose_frames.append(PoseFrame(index=t, keypoints=keypoints))

    seq = PoseSequence(frames=pose_frames, fps=spec.fps, laterality=spec.laterality)
    return SynthAssessment(spec=spec, seq=seq, frames=frames_img, roi=roi,
                           score=spec.score, spine_length=h)


# ------------------------------------------------------------------ datasets

@dataclass
class AssessmentPlan:
    row: ManifestRow
    spec: SynthSpec


def largest_remainder_counts(total: int, weights) -> list[int]:
    raw = np.asarray(weights, dtype=np.float64) * total
    base = np.floor(raw).astype(int)
    rem = raw - base
    short = total - int(base.sum())
    order = np.argsort(-rem, kind="stable")
    for i in range(short):
        base[order[i]] += 1
    return base.tolist()


def _format_confound(name: str, rate: float) -> str:
    if name == "keypoint_dropout":
        return f"keypoint_dropout({rate:.4f})"
    return name


def parse_confound(text: str):
    """Inverse of the manifest confound column; returns (name, rate)."""
    if text.startswith("keypoint_dropout(") and text.endswith(")"):
        return "keypoint_dropout", float(text[len("keypoint_dropout("):-1])
    return text, 0.0


def gen_dataset(n_per_class: int | None = None, *, total: int | None = None,
                class_weights=None, confound_mix: dict[str, float] | None = None,
                dropout_rate=0.3, seed: int = 0, fps: float = 30.0,
                duration: float = 1.6, img_size: int = 96) -> list[AssessmentPlan]:
    """Plan a dataset of synthetic assessments.

    Balanced mode: ``n_per_class`` per severity score. Skewed mode: ``total``
    assessments split by ``class_weights`` (defaults to the clinical severity
    distribution) with largest-remainder rounding. Assessments are paired two
    per exam id (left + right laterality). ``confound_mix`` maps confound
    name to the fraction of assessments it affects; ``dropout_rate`` may be a
    scalar or a (lo, hi) range sampled per affected assessment.
    """
    if (n_per_class is None) == (total is None):
        raise ValueError("specify exactly one of n_per_class or total")
    if n_per_class is not None:
        if n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        counts = [n_per_class] * 5
    else:
        weights = CLINICAL_SCORE_WEIGHTS if class_weights is None else class_weights
        counts = largest_remainder_counts(total, weights)

    scores = np.repeat(np.arange(5), counts)
    rng = rngmod.substream(seed, "dataset")
    rng.shuffle(scores)
    n = len(scores)

    confounds = ["none"] * n
    rates = np.zeros(n)
    if confound_mix:
        mix_names = sorted(confound_mix)
        mix_counts = largest_remainder_counts(
            n, [confound_mix[m] for m in mix_names] + [max(0.0, 1 - sum(confound_mix.values()))])
        pool = rng.permutation(n)
        pos = 0
        for name, cnt in zip(mix_names, mix_counts[:-1]):
            for idx in pool[pos:pos + cnt]:
                confounds[idx] = name
            pos += cnt
    for i in range(n):
        if confounds[i] == "keypoint_dropout":
            if np.ndim(dropout_rate) == 0:
                rates[i] = float(dropout_rate)
            else:
                lo, hi = dropout_rate
                rates[i] = float(rng.uniform(lo, hi))

    t_roi = max(8, int(round(duration * fps)))
    plans = []
    for i in range(n):
        lat = "left" if i % 2 == 0 else "right"
        aid = f"synth-{i // 2:05d}"
        spec = SynthSpec(score=int(scores[i]), laterality=lat, fps=fps,
                         duration=duration, confound=confounds[i],
                         dropout_rate=float(rates[i]),
                         seed=rngmod.seed_for(seed, "assessment", i),
                         img_size=img_size)
        row = ManifestRow(assessment_id=aid, laterality=lat, score=int(scores[i]),
                          roi_start=ROI_PAD, roi_end=ROI_PAD + t_roi - 1,
                          confound=_format_confound(confounds[i], rates[i]),
                          seed=spec.seed)
        plans.append(AssessmentPlan(row=row, spec=spec))
    return plans


def treated_score(baseline: int, reduction: float) -> int:
    """Severity after a treatment that cuts tremor amplitude by ``reduction``."""
    return int(math.floor(baseline * (1.0 - reduction) + 0.5))


def gen_cohort(n_patients: int = 28, arm_reductions: dict[str, float] | None = None,
               seed: int = 0, fps: float = 30.0, duration: float = 1.6,
               img_size: int = 96) -> list[AssessmentPlan]:
    """Treatment cohort: per patient, a baseline plus one assessment per arm.

    Baseline severities cycle over 1..4 (inclusion requires baseline > 0);
    each arm's severity follows from its amplitude reduction.
    """
    arms = {"ldopa": 0.30, "dbs": 0.70, "dbs_ldopa": 0.80} if arm_reductions is None \
        else dict(arm_reductions)
    t_roi = max(8, int(round(duration * fps)))
    plans = []
    for p in range(n_patients):
        baseline = (p % 4) + 1
        entries = [("baseline", baseline)]
        entries += [(arm, treated_score(baseline, red)) for arm, red in sorted(arms.items())]
        for arm, score in entries:
            aid = f"cohort-{p:03d}-{arm}"
            spec = SynthSpec(score=score, laterality="left", fps=fps,
                             duration=duration,
                             seed=rngmod.seed_for(seed, "cohort", p, arm),
                             img_size=img_size)
            row = ManifestRow(assessment_id=aid, laterality="left", score=score,
                              roi_start=ROI_PAD, roi_end=ROI_PAD + t_roi - 1,
                              seed=spec.seed, patient_id=f"P{p:03d}", treatment=arm)
            plans.append(AssessmentPlan(row=row, spec=spec))
    return plans
