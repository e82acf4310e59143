"""Dataset model: crop records, JSONL manifests, hashing, temporal segregation.

A manifest is one metadata line followed by one line per crop (JSONL). Crop
images live next to the manifest under ``metadata["image_root"]`` (default
``crops/``), one PNG named after the crop id. Manifests are treated as
immutable values after load; every operation here returns new objects.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

STAGES = ("raw", "aligned", "enhanced")
QC_STATUSES = ("pending", "keep", "discard")

DEFAULT_IMAGE_ROOT = "crops"


def _check_text(value: str, what: str) -> str:
    if not isinstance(value, str):
        raise ValidationError(f"{what} must be a string, got {type(value).__name__}")
    try:
        value.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise ValidationError(f"{what} is not valid UTF-8: {value!r}") from exc
    return value


@dataclass(frozen=True)
class TransformParams:
    """Geometry that produced a crop from its source frame."""

    rotation_deg: float = 0.0
    center_xy: tuple[float, float] = (0.0, 0.0)
    crop_px: int = 400
    out_px: int = 256
    pad_mode: str = "edge"

    def __post_init__(self):
        if self.crop_px <= 0 or self.out_px <= 0:
            raise ValidationError(
                f"crop_px and out_px must be positive, got {self.crop_px}, {self.out_px}"
            )
        if not (-180.0 <= self.rotation_deg < 180.0):
            raise ValidationError(
                f"rotation_deg must lie in [-180, 180), got {self.rotation_deg}"
            )
        if self.pad_mode not in ("edge", "zero"):
            raise ValidationError(f"unknown pad_mode {self.pad_mode!r}")

    def to_json(self) -> dict:
        return {
            "rotation_deg": self.rotation_deg,
            "center_xy": list(self.center_xy),
            "crop_px": self.crop_px,
            "out_px": self.out_px,
            "pad_mode": self.pad_mode,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TransformParams":
        return cls(
            rotation_deg=float(obj["rotation_deg"]),
            center_xy=(float(obj["center_xy"][0]), float(obj["center_xy"][1])),
            crop_px=int(obj["crop_px"]),
            out_px=int(obj["out_px"]),
            pad_mode=str(obj["pad_mode"]),
        )


def normalize_angle(deg: float) -> float:
    """Map an angle in degrees onto [-180, 180)."""
    return (float(deg) + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class CropRecord:
    """Provenance, identity and QC state of a single crop."""

    crop_id: str
    sha256: str
    individual: str
    day: int
    set: int
    frame_index: int
    source: str
    transform: TransformParams
    stage: str = "raw"
    qc: str = "pending"

    def __post_init__(self):
        _check_text(self.crop_id, "crop_id")
        _check_text(self.individual, "individual")
        _check_text(self.source, "source")
        if not (len(self.sha256) == 64 and all(c in "0123456789abcdef" for c in self.sha256)):
            raise ValidationError(f"sha256 must be 64 lowercase hex chars, got {self.sha256!r}")
        if self.day < 1:
            raise ValidationError(f"day must be >= 1, got {self.day}")
        if self.set < 1:
            raise ValidationError(f"set must be >= 1, got {self.set}")
        if self.stage not in STAGES:
            raise ValidationError(f"unknown stage {self.stage!r}")
        if self.qc not in QC_STATUSES:
            raise ValidationError(f"unknown qc status {self.qc!r}")

    @property
    def session(self) -> tuple[int, int]:
        return (self.day, self.set)

    def advanced(self, stage: str, sha256: str) -> "CropRecord":
        """Return a copy moved to the next stage; transitions only run forward."""
        if STAGES.index(stage) != STAGES.index(self.stage) + 1:
            raise ValidationError(f"illegal stage transition {self.stage!r} -> {stage!r}")
        return replace(self, stage=stage, sha256=sha256)

    def to_json(self) -> dict:
        return {
            "type": "crop",
            "crop_id": self.crop_id,
            "sha256": self.sha256,
            "individual": self.individual,
            "day": self.day,
            "set": self.set,
            "frame_index": self.frame_index,
            "source": self.source,
            "stage": self.stage,
            "qc": self.qc,
            "transform": self.transform.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CropRecord":
        return cls(
            crop_id=obj["crop_id"],
            sha256=obj["sha256"],
            individual=obj["individual"],
            day=int(obj["day"]),
            set=int(obj["set"]),
            frame_index=int(obj["frame_index"]),
            source=obj["source"],
            transform=TransformParams.from_json(obj["transform"]),
            stage=obj["stage"],
            qc=obj["qc"],
        )


@dataclass
class Manifest:
    """An ordered collection of crop records plus experiment metadata."""

    records: list[CropRecord] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        seen_ids: set[str] = set()
        session_hashes: dict[tuple[int, int], set[str]] = {}
        num_days = int(self.metadata.get("num_days") or 0)
        for rec in self.records:
            if rec.crop_id in seen_ids:
                raise ValidationError(f"duplicate crop_id {rec.crop_id!r}")
            seen_ids.add(rec.crop_id)
            if num_days and rec.day > num_days:
                raise ValidationError(
                    f"crop {rec.crop_id!r} has day {rec.day} beyond num_days {num_days}"
                )
            hashes = session_hashes.setdefault(rec.session, set())
            if rec.sha256 in hashes:
                raise ValidationError(
                    f"duplicate sha256 {rec.sha256} within session {rec.session}"
                )
            hashes.add(rec.sha256)
        individuals = self.metadata.get("individuals", [])
        if len(individuals) != len(set(individuals)):
            raise ValidationError("individual ids in metadata are not unique")

    @property
    def image_root(self) -> str:
        return self.metadata.get("image_root", DEFAULT_IMAGE_ROOT)

    def sessions(self) -> list[tuple[int, int]]:
        return sorted({rec.session for rec in self.records})

    def individuals(self) -> list[str]:
        listed = self.metadata.get("individuals")
        if listed:
            return list(listed)
        return sorted({rec.individual for rec in self.records})

    def subset(self, records: Iterable[CropRecord]) -> "Manifest":
        return Manifest(records=list(records), metadata=dict(self.metadata))


def hash_image(image_bytes: bytes) -> str:
    """SHA-256 hex digest of encoded image bytes."""
    if not image_bytes:
        raise ValidationError("cannot hash an empty byte string")
    return hashlib.sha256(image_bytes).hexdigest()


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of values (order-sensitive)."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def write_manifest(manifest: Manifest, path: str | Path) -> Path:
    """Write a manifest as JSONL: one metadata line, then one line per record."""
    manifest.validate()
    path = Path(path)
    meta = {"type": "meta", **manifest.metadata}
    meta.setdefault("num_days", max((r.day for r in manifest.records), default=0))
    meta.setdefault("individuals", sorted({r.individual for r in manifest.records}))
    lines = [json.dumps(meta, sort_keys=True)]
    lines.extend(json.dumps(rec.to_json(), sort_keys=True) for rec in manifest.records)
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot write manifest to {path}: {exc}") from exc
    return path


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read manifest from {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValidationError(f"manifest {path} is empty")
    meta = json.loads(lines[0])
    if meta.get("type") != "meta":
        raise ValidationError(f"manifest {path} does not start with a metadata line")
    meta.pop("type")
    records = []
    for i, line in enumerate(lines[1:], start=2):
        obj = json.loads(line)
        if obj.get("type") != "crop":
            raise ValidationError(f"{path}:{i}: expected a crop record line")
        records.append(CropRecord.from_json(obj))
    manifest = Manifest(records=records, metadata=meta)
    manifest.validate()
    return manifest


@dataclass(frozen=True)
class SegregationReport:
    """Hashes and sessions shared between a train and a test manifest."""

    shared_hashes: tuple[str, ...]
    shared_sessions: tuple[tuple[int, int], ...]

    @property
    def passed(self) -> bool:
        return not self.shared_hashes and not self.shared_sessions

    def summary(self) -> str:
        if self.passed:
            return "PASS: no shared image hashes, no shared sessions"
        parts = []
        if self.shared_hashes:
            parts.append(f"{len(self.shared_hashes)} shared sha256: " + ", ".join(self.shared_hashes))
        if self.shared_sessions:
            parts.append(
                "shared sessions: " + ", ".join(f"(day={d}, set={s})" for d, s in self.shared_sessions)
            )
        return "FAIL: " + "; ".join(parts)


def verify_segregation(train: Manifest, test: Manifest) -> SegregationReport:
    """Report image hashes and (day, set) sessions appearing in both manifests."""
    if not train.records or not test.records:
        raise ValidationError("verify_segregation requires two non-empty manifests")
    train_hashes = {r.sha256 for r in train.records}
    test_hashes = {r.sha256 for r in test.records}
    train_sessions = {r.session for r in train.records}
    test_sessions = {r.session for r in test.records}
    return SegregationReport(
        shared_hashes=tuple(sorted(train_hashes & test_hashes)),
        shared_sessions=tuple(sorted(train_sessions & test_sessions)),
    )


def usable_records(
    manifest: Manifest,
    day: int | None = None,
    set_: int | None = None,
    stage: str | None = None,
) -> list[CropRecord]:
    """Records eligible for training or evaluation: qc != discard, optional filters."""
    out = []
    for rec in manifest.records:
        if rec.qc == "discard":
            continue
        if day is not None and rec.day != day:
            continue
        if set_ is not None and rec.set != set_:
            continue
        if stage is not None and rec.stage != stage:
            continue
        out.append(rec)
    return out


@dataclass
class CropSet:
    """Labeled crops ready for the identification harness."""

    images: list[np.ndarray]
    records: list[CropRecord]

    def __post_init__(self):
        if len(self.images) != len(self.records):
            raise ValidationError("images and records differ in length")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> list[str]:
        return [rec.individual for rec in self.records]

    def classes(self) -> list[str]:
        return sorted({rec.individual for rec in self.records})


class CropStore:
    """Resolves crop ids to pixel arrays, from disk or an in-memory mapping."""

    def __init__(
        self,
        manifest: Manifest,
        base_dir: str | Path | None = None,
        images: dict[str, np.ndarray] | None = None,
    ):
        if base_dir is None and images is None:
            raise ValidationError("CropStore needs a base_dir or an image mapping")
        self.manifest = manifest
        self.base_dir = Path(base_dir) if base_dir is not None else None
        self._images = images
        self._by_id = {rec.crop_id: rec for rec in manifest.records}

    def record(self, crop_id: str) -> CropRecord:
        try:
            return self._by_id[crop_id]
        except KeyError:
            raise ValidationError(f"unknown crop_id {crop_id!r}") from None

    def image_path(self, crop_id: str) -> Path:
        if self.base_dir is None:
            raise ValidationError("this store has no on-disk images")
        rec = self.record(crop_id)
        path = self.base_dir / self.manifest.image_root / f"{crop_id}.png"
        if path.exists():
            return path
        # Raw manifests point at source frames rather than per-crop files.
        source = self.base_dir / rec.source
        if rec.source and source.exists():
            return source
        return path

    def image(self, crop_id: str) -> np.ndarray:
        import cv2

        if self._images is not None:
            try:
                return self._images[crop_id]
            except KeyError:
                raise ValidationError(f"no image stored for crop {crop_id!r}") from None
        path = self.image_path(crop_id)
        img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if img is None:
            raise ValidationError(f"cannot decode image for crop {crop_id!r} at {path}")
        return img

    def crop_set(
        self, day: int, set_: int = 1, stage: str | None = "enhanced"
    ) -> CropSet:
        records = usable_records(self.manifest, day=day, set_=set_, stage=stage)
        images = [self.image(rec.crop_id) for rec in records]
        return CropSet(images=images, records=records)

    def session_manifest(self, day: int, set_: int = 1) -> Manifest:
        records = [r for r in self.manifest.records if r.session == (day, set_)]
        return self.manifest.subset(records)


def encode_png(image: np.ndarray) -> bytes:
    """Canonical PNG encoding used for hashing and writing crops."""
    import cv2

    ok, buf = cv2.imencode(".png", image)
    if not ok:
        raise ValidationError("PNG encoding failed")
    return buf.tobytes()


def write_crop_images(
    crops: Sequence[tuple[CropRecord, np.ndarray]],
    base_dir: str | Path,
    image_root: str = DEFAULT_IMAGE_ROOT,
) -> None:
    out_dir = Path(base_dir) / image_root
    out_dir.mkdir(parents=True, exist_ok=True)
    for rec, img in crops:
        (out_dir / f"{rec.crop_id}.png").write_bytes(encode_png(img))
