"""Detection-conditioned alignment: frames + body/head/abdomen boxes -> crops.

Orientation is the clockwise angle from image "up" to the abdomen->head
vector; the frame is counter-rotated about the body-box center so every crop
comes out head-up, then a square ``crop_px`` window is extracted and resized
to ``out_px``. All geometry is recorded in ``TransformParams`` so points can
be mapped between source frame and crop.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from .data import CropRecord, TransformParams, encode_png, hash_image, normalize_angle
from .errors import CropRejected, OrientationUndefined, ValidationError

log = logging.getLogger(__name__)

MIN_BODY_SIDE_PX = 4.0
MIN_AXIS_SEPARATION_PX = 1.0


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float
    confidence: float = 1.0

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"box sides must be positive, got w={self.w}, h={self.h}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"confidence must lie in [0, 1], got {self.confidence}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def clamped(self, frame_w: int, frame_h: int) -> "Box":
        x0 = min(max(self.x, 0.0), frame_w)
        y0 = min(max(self.y, 0.0), frame_h)
        x1 = min(max(self.x + self.w, 0.0), frame_w)
        y1 = min(max(self.y + self.h, 0.0), frame_h)
        if x1 - x0 <= 0 or y1 - y0 <= 0:
            raise ValidationError("box lies entirely outside the frame")
        return Box(x0, y0, x1 - x0, y1 - y0, self.confidence)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h, self.confidence]


@dataclass(frozen=True)
class Detection:
    frame_index: int
    body: Box
    head: Box
    abdomen: Box

    def clamped(self, frame_w: int, frame_h: int) -> "Detection":
        return Detection(
            frame_index=self.frame_index,
            body=self.body.clamped(frame_w, frame_h),
            head=self.head.clamped(frame_w, frame_h),
            abdomen=self.abdomen.clamped(frame_w, frame_h),
        )

    def to_json(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "body": self.body.to_list(),
            "head": self.head.to_list(),
            "abdomen": self.abdomen.to_list(),
        }


@dataclass(frozen=True)
class AlignedCrop:
    pixels: np.ndarray
    record: CropRecord


def load_detections(sidecar_path: str | Path) -> tuple[list[Detection], list[tuple[int, str]]]:
    """Parse a detection sidecar (JSONL, one detection per frame).

    Returns the detections in strictly increasing frame order plus a list of
    (line_number, reason) for every skipped line. Skips are logged; they feed
    the QC trail rather than aborting the session.
    """
    path = Path(sidecar_path)
    if not path.exists():
        raise ValidationError(f"detection sidecar not found: {path}")
    detections: list[Detection] = []
    skipped: list[tuple[int, str]] = []
    last_index = -1
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            skipped.append((line_no, f"malformed JSON: {exc.msg}"))
            continue
        missing = [k for k in ("frame_index", "body", "head", "abdomen") if k not in obj]
        if missing:
            skipped.append((line_no, f"missing {', '.join(missing)}"))
            continue
        try:
            det = Detection(
                frame_index=int(obj["frame_index"]),
                body=Box(*obj["body"]),
                head=Box(*obj["head"]),
                abdomen=Box(*obj["abdomen"]),
            )
        except (TypeError, ValidationError) as exc:
            skipped.append((line_no, f"invalid detection: {exc}"))
            continue
        if det.frame_index <= last_index:
            skipped.append((line_no, f"frame_index {det.frame_index} not increasing"))
            continue
        last_index = det.frame_index
        detections.append(det)
    for line_no, reason in skipped:
        log.warning("%s:%d skipped: %s", path, line_no, reason)
    return detections, skipped


def estimate_orientation(det: Detection) -> float:
    """Clockwise angle in degrees from image up to the abdomen->head vector.

    0 means the head sits directly above the abdomen; the result lies in
    [-180, 180). Raises OrientationUndefined when the two centers (nearly)
    coincide, so the caller can route the crop to QC.
    """
    hx, hy = det.head.center
    ax, ay = det.abdomen.center
    vx, vy = hx - ax, hy - ay
    if math.hypot(vx, vy) < MIN_AXIS_SEPARATION_PX:
        raise OrientationUndefined(
            f"head and abdomen centers coincide at frame {det.frame_index}"
        )
    return normalize_angle(math.degrees(math.atan2(vx, -vy)))


def _inverse_map(
    center: tuple[float, float], orientation_deg: float, crop_px: int, out_px: int
) -> np.ndarray:
    """Affine matrix mapping output pixel indices to source pixel indices."""
    theta = math.radians(orientation_deg)
    c, s = math.cos(theta), math.sin(theta)
    scale = crop_px / out_px
    half = crop_px / 2.0
    off = 0.5 * scale - half
    cx, cy = center
    return np.array(
        [
            [c * scale, -s * scale, cx - 0.5 + c * off - s * off],
            [s * scale, c * scale, cy - 0.5 + s * off + c * off],
        ],
        dtype=np.float64,
    )


def source_to_crop(tp: TransformParams, point: tuple[float, float]) -> tuple[float, float]:
    """Map a source-frame point (pixel indices) into crop pixel indices."""
    theta = math.radians(normalize_angle(-tp.rotation_deg))
    c, s = math.cos(theta), math.sin(theta)
    px = point[0] - tp.center_xy[0]
    py = point[1] - tp.center_xy[1]
    # Inverse rotation: the crop samples the source through R(theta).
    dx = c * px + s * py
    dy = -s * px + c * py
    scale = tp.crop_px / tp.out_px
    return (
        (dx + tp.crop_px / 2.0) / scale - 0.5,
        (dy + tp.crop_px / 2.0) / scale - 0.5,
    )


def crop_to_source(tp: TransformParams, point: tuple[float, float]) -> tuple[float, float]:
    """Map a crop pixel index back into source-frame pixel indices."""
    theta = math.radians(normalize_angle(-tp.rotation_deg))
    c, s = math.cos(theta), math.sin(theta)
    scale = tp.crop_px / tp.out_px
    dx = (point[0] + 0.5) * scale - tp.crop_px / 2.0
    dy = (point[1] + 0.5) * scale - tp.crop_px / 2.0
    return (
        tp.center_xy[0] + c * dx - s * dy,
        tp.center_xy[1] + s * dx + c * dy,
    )


def align_crop(
    frame: np.ndarray,
    det: Detection,
    crop_px: int = 400,
    out_px: int = 256,
    pad_mode: str = "edge",
    individual: str = "unknown",
    session: tuple[int, int] = (1, 1),
    source: str = "",
) -> AlignedCrop:
    """Rotate about the body center, crop a square window, resize.

    The frame is rotated by minus the estimated orientation so the subject
    ends up head-up; regions of the window outside the frame are filled
    according to ``pad_mode``.
    """
    frame = np.asarray(frame)
    if frame.size == 0:
        raise ValidationError("empty frame")
    if det.body.w < MIN_BODY_SIDE_PX or det.body.h < MIN_BODY_SIDE_PX:
        raise CropRejected(
            f"body box {det.body.w:.1f}x{det.body.h:.1f} too small at frame {det.frame_index}"
        )
    orientation = estimate_orientation(det)
    center = det.body.center
    matrix = _inverse_map(center, orientation, crop_px, out_px)
    if pad_mode == "edge":
        border, value = cv2.BORDER_REPLICATE, 0
    elif pad_mode == "zero":
        border, value = cv2.BORDER_CONSTANT, 0
    else:
        raise ValidationError(f"unknown pad_mode {pad_mode!r}")
    pixels = cv2.warpAffine(
        frame,
        matrix,
        (out_px, out_px),
        flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
        borderMode=border,
        borderValue=value,
    )
    transform = TransformParams(
        rotation_deg=normalize_angle(-orientation),
        center_xy=center,
        crop_px=crop_px,
        out_px=out_px,
        pad_mode=pad_mode,
    )
    day, set_ = session
    record = CropRecord(
        crop_id=f"{individual}_d{day:02d}s{set_:02d}_f{det.frame_index:05d}",
        sha256=hash_image(encode_png(pixels)),
        individual=individual,
        day=day,
        set=set_,
        frame_index=det.frame_index,
        source=source,
        transform=transform,
        stage="aligned",
    )
    return AlignedCrop(pixels=pixels, record=record)


def process_session(
    frames: Sequence[np.ndarray],
    detections: Sequence[Detection],
    session: tuple[int, int],
    individual: str,
    crop_px: int = 400,
    out_px: int = 256,
    pad_mode: str = "edge",
    source_prefix: str = "",
) -> tuple[list[AlignedCrop], list[tuple[int, str]]]:
    """Align every detection of one session; failures are logged, not fatal."""
    if not frames:
        log.warning("session %s/%s has no frames", individual, session)
        return [], []
    crops: list[AlignedCrop] = []
    skips: list[tuple[int, str]] = []
    h, w = frames[0].shape[:2]
    for det in detections:
        if not (0 <= det.frame_index < len(frames)):
            skips.append((det.frame_index, "frame_index outside the frame sequence"))
            continue
        try:
            clamped = det.clamped(w, h)
            crop = align_crop(
                frames[det.frame_index],
                clamped,
                crop_px=crop_px,
                out_px=out_px,
                pad_mode=pad_mode,
                individual=individual,
                session=session,
                source=f"{source_prefix}f{det.frame_index:05d}.png",
            )
        except (CropRejected, OrientationUndefined, ValidationError) as exc:
            skips.append((det.frame_index, str(exc)))
            continue
        crops.append(crop)
    for frame_index, reason in skips:
        log.info("session %s/%s frame %d skipped: %s", individual, session, frame_index, reason)
    return crops, skips
