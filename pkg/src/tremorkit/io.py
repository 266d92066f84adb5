"""File formats shared across the pipeline.

* keypoints: JSON Lines, one object per frame:
  ``{"frame": int, "kp": {"<name>": [x, y, confidence]}}``; absent keypoints
  are omitted from ``kp``.
* clip tensor: binary file, magic ``CLIP`` + four little-endian u32 dims
  (C, T, H, W) followed by row-major little-endian float32 data.
* video: directory of per-frame ``frame_%06d.ppm``/``.png`` images, or a
  single clip-tensor file holding C,T,H,W.
* manifest: CSV with one row per assessment.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CLIP_MAGIC = b"CLIP"


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------- keypoints

def write_keypoints_jsonl(path, frames):
    """``frames``: iterable of (frame_index, {name: (x, y, confidence)})."""
    path = Path(path)
    with path.open("w") as fh:
        for idx, kps in frames:
            obj = {"frame": int(idx),
                   "kp": {name: [float(x), float(y), float(c)]
                          for name, (x, y, c) in sorted(kps.items())}}
            fh.write(json.dumps(obj) + "\n")


def read_keypoints_jsonl(path):
    """Returns a list of (frame_index, {name: (x, y, confidence)})."""
    out = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            kps = {name: (float(v[0]), float(v[1]), float(v[2]))
                   for name, v in obj.get("kp", {}).items()}
            out.append((int(obj["frame"]), kps))
    out.sort(key=lambda r: r[0])
    return out


# -------------------------------------------------------------- clip tensor

def write_clip(path, data: np.ndarray):
    """Write a C,T,H,W float32 tensor in the binary clip format."""
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim != 4:
        raise FormatError(f"clip tensor must be 4-D, got shape {arr.shape}")
    with Path(path).open("wb") as fh:
        fh.write(CLIP_MAGIC)
        fh.write(struct.pack("<4I", *arr.shape))
        fh.write(arr.tobytes())


def read_clip(path) -> np.ndarray:
    with Path(path).open("rb") as fh:
        magic = fh.read(4)
        if magic != CLIP_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        dims = struct.unpack("<4I", fh.read(16))
        count = int(np.prod(dims))
        data = np.frombuffer(fh.read(count * 4), dtype="<f4", count=count)
    return data.reshape(dims).copy()


# -------------------------------------------------------------------- video

def write_ppm(path, img: np.ndarray):
    """Write an H,W,3 image (float in [0,1] or uint8) as binary PPM."""
    if img.dtype != np.uint8:
        img = np.clip(np.asarray(img, dtype=np.float64) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    with Path(path).open("wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    with Path(path).open("rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P6"):
        raise FormatError(f"{path}: not a binary PPM")
    # header = three whitespace-separated tokens after P6, comments allowed
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    img = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos)
    return img.reshape(h, w, 3).copy()


def write_png(path, img: np.ndarray):
    from PIL import Image

    if img.dtype != np.uint8:
        img = np.clip(np.asarray(img, dtype=np.float64) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(Path(path), format="PNG")


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(Path(path)) as im:
        return np.asarray(im.convert("RGB"))


class FrameDir:
    """Frame source over a directory of numbered PPM/PNG images."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.paths = sorted(p for p in self.directory.iterdir()
                            if p.suffix.lower() in (".ppm", ".png"))
        if not self.paths:
            raise FormatError(f"{directory}: no PPM/PNG frames found")

    def __len__(self):
        return len(self.paths)

    def __getitem__(self, i) -> np.ndarray:
        p = self.paths[i]
        img = read_ppm(p) if p.suffix.lower() == ".ppm" else read_png(p)
        return img.astype(np.float32) / 255.0


class FrameArray:
    """Frame source over an in-memory T,H,W,3 array (float in [0,1])."""

    def __init__(self, frames: np.ndarray):
        self.frames = np.asarray(frames)

    def __len__(self):
        return self.frames.shape[0]

    def __getitem__(self, i) -> np.ndarray:
        f = self.frames[i]
        if f.dtype == np.uint8:
            return f.astype(np.float32) / 255.0
        return f.astype(np.float32, copy=False)


class FrameTensorFile:
    """Frame source over a clip-tensor file storing full C,T,H,W video."""

    def __init__(self, path):
        data = read_clip(path)  # C,T,H,W
        self.frames = np.transpose(data, (1, 2, 3, 0))

    def __len__(self):
        return self.frames.shape[0]

    def __getitem__(self, i) -> np.ndarray:
        return self.frames[i]


def open_video(path):
    path = Path(path)
    if path.is_dir():
        return FrameDir(path)
    return FrameTensorFile(path)


def write_video(path, frames: np.ndarray, fmt: str = "ppm"):
    """Write T,H,W,3 frames as an image directory or a single tensor file."""
    path = Path(path)
    if fmt in ("ppm", "png"):
        path.mkdir(parents=True, exist_ok=True)
        writer = write_ppm if fmt == "ppm" else write_png
        for t in range(frames.shape[0]):
            writer(path / f"frame_{t:06d}.{fmt}", frames[t])
    elif fmt == "tensor":
        write_clip(path, np.transpose(frames, (3, 0, 1, 2)))
    else:
        raise FormatError(f"unknown video format {fmt!r}")


# ----------------------------------------------------------------- manifest

MANIFEST_COLUMNS = ["assessment_id", "laterality", "score", "roi_start", "roi_end",
                    "confound", "seed", "patient_id", "treatment",
                    "keypoints_path", "video_path", "clip_path"]


@dataclass
class ManifestRow:
    assessment_id: str
    laterality: str
    score: int
    roi_start: int
    roi_end: int
    confound: str = "none"
    seed: int = 0
    patient_id: str = ""
    treatment: str = ""
    keypoints_path: str = ""
    video_path: str = ""
    clip_path: str = ""
    extra: dict = field(default_factory=dict, repr=False)

    def key(self):
        return (self.assessment_id, self.laterality)


def write_manifest(path, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_COLUMNS)
        for r in rows:
            w.writerow([r.assessment_id, r.laterality, r.score, r.roi_start,
                        r.roi_end, r.confound, r.seed, r.patient_id, r.treatment,
                        r.keypoints_path, r.video_path, r.clip_path])


def read_manifest(path):
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ManifestRow(
                assessment_id=rec["assessment_id"],
                laterality=rec["laterality"],
                score=int(rec["score"]),
                roi_start=int(rec["roi_start"]),
                roi_end=int(rec["roi_end"]),
                confound=rec.get("confound", "none") or "none",
                seed=int(rec.get("seed", 0) or 0),
                patient_id=rec.get("patient_id", "") or "",
                treatment=rec.get("treatment", "") or "",
                keypoints_path=rec.get("keypoints_path", "") or "",
                video_path=rec.get("video_path", "") or "",
                clip_path=rec.get("clip_path", "") or "",
            ))
    return rows


def write_csv(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path):
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]
