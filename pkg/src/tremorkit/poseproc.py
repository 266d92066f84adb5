"""Assessment preprocessing: ROI clipping, hand bounding box, 32x32 clips.

A raw assessment is a keypoint sequence plus video frames. Preprocessing
computes a spine-length-scaled square box around the median wrist position
inside the temporal ROI, then crops and resizes every ROI frame into a
C x T x 32 x 32 clip with intensities in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imageops import crop_resize

# Side of the hand bounding box as a fraction of mean spine length.
HAND_BOX_SPINE_RATIO = 0.593
# Output clip spatial resolution.
CLIP_SIZE = 32
# Detections with lower confidence count as absent.
CONFIDENCE_FLOOR = 0.3
# Assessment fails when coverage of the box-defining keypoints drops below this.
POSE_COVERAGE_MIN = 0.10

BOX_KEYPOINTS = ("shoulder_l", "shoulder_r", "hip_l", "hip_r", "wrist")
SPINE_KEYPOINTS = ("shoulder_l", "shoulder_r", "hip_l", "hip_r")


class MissingKeypoint(ValueError):
    pass


class NoValidFrames(ValueError):
    pass


class EmptyIntersection(ValueError):
    pass


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    confidence: float = 1.0

    @property
    def present(self) -> bool:
        return (self.confidence >= CONFIDENCE_FLOOR
                and np.isfinite(self.x) and np.isfinite(self.y))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass
class PoseFrame:
    index: int
    keypoints: dict[str, Keypoint] = field(default_factory=dict)

    def get(self, name: str):
        """Keypoint if present (detected with enough confidence), else None."""
        kp = self.keypoints.get(name)
        return kp if kp is not None and kp.present else None


@dataclass
class PoseSequence:
    frames: list[PoseFrame]
    fps: float
    laterality: str = "left"

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if not self.frames:
            raise ValueError("pose sequence has no frames")
        if self.laterality not in ("left", "right"):
            raise ValueError(f"laterality must be left/right, got {self.laterality!r}")

    def __len__(self):
        return len(self.frames)

    def track(self, name: str, roi=None):
        """(positions (n,2), present (n,)) for one keypoint over the ROI."""
        frames = self.frames if roi is None else self.frames[roi.start_frame:roi.end_frame + 1]
        pos = np.zeros((len(frames), 2), dtype=np.float64)
        present = np.zeros(len(frames), dtype=bool)
        for i, fr in enumerate(frames):
            kp = fr.get(name)
            if kp is not None:
                pos[i] = (kp.x, kp.y)
                present[i] = True
        return pos, present

    @classmethod
    def from_jsonl_records(cls, records, fps: float, laterality: str = "left"):
        """Build from ``tremorkit.io.read_keypoints_jsonl`` output."""
        frames = [PoseFrame(index=idx,
                            keypoints={n: Keypoint(x, y, c) for n, (x, y, c) in kps.items()})
                  for idx, kps in records]
        return cls(frames=frames, fps=fps, laterality=laterality)


@dataclass(frozen=True)
class TemporalROI:
    start_frame: int
    end_frame: int

    def __post_init__(self):
        if not (0 <= self.start_frame < self.end_frame):
            raise ValueError(f"invalid ROI [{self.start_frame}, {self.end_frame}]")

    def __len__(self):
        return self.end_frame - self.start_frame + 1

    def validate(self, seq_len: int):
        if self.end_frame >= seq_len:
            raise ValueError(f"ROI end {self.end_frame} beyond sequence of {seq_len} frames")


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    side: float

    def __post_init__(self):
        if self.side <= 0:
            raise ValueError(f"box side must be positive, got {self.side}")


@dataclass
class ClipTensor:
    data: np.ndarray  # C,T,H,W float32 in [0,1]
    fps: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise ValueError(f"clip must be 4-D, got {self.data.shape}")


def derived_points(frame: PoseFrame):
    """Neck = mean of shoulders, mid-hip = mean of hips."""
    pts = {}
    for name in SPINE_KEYPOINTS:
        kp = frame.get(name)
        if kp is None:
            raise MissingKeypoint(f"frame {frame.index}: {name} absent")
        pts[name] = kp.xy
    neck = (pts["shoulder_l"] + pts["shoulder_r"]) / 2.0
    midhip = (pts["hip_l"] + pts["hip_r"]) / 2.0
    return neck, midhip


def mean_spine_length(seq: PoseSequence, roi: TemporalROI) -> float:
    """Average neck-to-midhip distance over ROI frames with full torso pose.

    Frames missing any of the four source keypoints are excluded from the
    average rather than interpolated.
    """
    roi.validate(len(seq))
    dists = []
    for frame in seq.frames[roi.start_frame:roi.end_frame + 1]:
        try:
            neck, midhip = derived_points(frame)
        except MissingKeypoint:
            continue
        dists.append(float(np.linalg.norm(neck - midhip)))
    if not dists:
        raise NoValidFrames("no ROI frame has all shoulder/hip keypoints")
    return float(np.mean(dists))


def hand_bounding_box(seq: PoseSequence, roi: TemporalROI, h: float) -> BoundingBox:
    """Square box at the per-coordinate median wrist position, side 0.593*h."""
    roi.validate(len(seq))
    if h <= 0:
        raise ValueError(f"spine length must be positive, got {h}")
    pos, present = seq.track("wrist", roi)
    if not present.any():
        raise NoValidFrames("wrist never present inside ROI")
    med = np.median(pos[present], axis=0)
    return BoundingBox(cx=float(med[0]), cy=float(med[1]), side=HAND_BOX_SPINE_RATIO * h)


def keypoint_coverage(seq: PoseSequence, roi: TemporalROI, needed) -> float:
    """Fraction of ROI frames where every keypoint in ``needed`` is present."""
    roi.validate(len(seq))
    frames = seq.frames[roi.start_frame:roi.end_frame + 1]
    ok = sum(1 for fr in frames if all(fr.get(name) is not None for name in needed))
    return ok / len(frames)


def extract_clip(video, roi: TemporalROI, box: BoundingBox, fps: float = 0.0) -> ClipTensor:
    """Crop each ROI frame to the box and bilinearly resize to 32x32.

    Regions of the box outside the image read as zero, so the output shape
    is always 3 x len(ROI) x 32 x 32.
    """
    n = len(video)
    roi.validate(n)
    first = np.asarray(video[roi.start_frame])
    h_img, w_img = first.shape[:2]
    half = box.side / 2.0
    if (box.cx + half <= 0 or box.cx - half >= w_img
            or box.cy + half <= 0 or box.cy - half >= h_img):
        raise EmptyIntersection("bounding box lies fully outside the image")

    frames = []
    for t in range(roi.start_frame, roi.end_frame + 1):
        img = np.asarray(video[t], dtype=np.float64)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=-1)
        patch = crop_resize(img, box.cx, box.cy, box.side, CLIP_SIZE)
        frames.append(patch)
    data = np.stack(frames, axis=0)                # T,H,W,C
    data = np.transpose(data, (3, 0, 1, 2))        # C,T,H,W
    return ClipTensor(data=np.clip(data, 0.0, 1.0).astype(np.float32), fps=fps)


def assessment_usable(seq: PoseSequence, roi: TemporalROI) -> bool:
    """Whether box-keypoint coverage clears the preprocessing threshold."""
    return keypoint_coverage(seq, roi, BOX_KEYPOINTS) >= POSE_COVERAGE_MIN
