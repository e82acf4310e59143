"""Stage runners connecting the dataset layout on disk (or in memory) to the
alignment, enhancement and evaluation operations."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__
from .align import AlignedCrop, load_detections, process_session
from .clahe import ClaheConfig, clahe
from .data import (
    CropRecord,
    CropStore,
    Manifest,
    encode_png,
    hash_image,
    read_manifest,
    write_manifest,
)
from .errors import ValidationError
from .synth import DriftConfig, SyntheticSession, iter_sessions

log = logging.getLogger(__name__)


def _jobs(jobs: int | None) -> int:
    return jobs if jobs and jobs > 0 else (os.cpu_count() or 1)


def _session_sources(manifest: Manifest) -> dict[tuple[str, int, int], list[CropRecord]]:
    groups: dict[tuple[str, int, int], list[CropRecord]] = {}
    for rec in manifest.records:
        groups.setdefault((rec.individual, rec.day, rec.set), []).append(rec)
    for recs in groups.values():
        recs.sort(key=lambda r: r.frame_index)
    return groups


def align_dataset(
    dataset_dir: str | Path,
    out_dir: str | Path,
    crop_px: int = 400,
    out_px: int = 256,
    pad_mode: str = "edge",
    jobs: int | None = None,
) -> Manifest:
    """Align every session of a raw dataset directory into crop PNGs + manifest.

    Expects the layout written by the synthetic generator (or an equivalent
    external exporter): a raw manifest, ``frames/<session>/`` PNG frames and
    ``detections/<session>.jsonl`` sidecars.
    """
    import cv2

    dataset_dir = Path(dataset_dir)
    out_dir = Path(out_dir)
    raw = read_manifest(dataset_dir / "manifest.jsonl")
    crops_dir = out_dir / "crops"
    crops_dir.mkdir(parents=True, exist_ok=True)

    records: list[CropRecord] = []
    total_skips = 0
    for (individual, day, set_), recs in sorted(_session_sources(raw).items()):
        name = f"{individual}_d{day:02d}s{set_:02d}"
        sidecar = dataset_dir / "detections" / f"{name}.jsonl"
        detections, _ = load_detections(sidecar)
        with ThreadPoolExecutor(max_workers=_jobs(jobs)) as pool:
            frames = list(
                pool.map(
                    lambda r: cv2.imread(str(dataset_dir / r.source), cv2.IMREAD_UNCHANGED),
                    recs,
                )
            )
        if any(f is None for f in frames):
            raise ValidationError(f"missing or undecodable frames in session {name}")
        crops, skips = process_session(
            frames,
            detections,
            session=(day, set_),
            individual=individual,
            crop_px=crop_px,
            out_px=out_px,
            pad_mode=pad_mode,
            source_prefix=f"frames/{name}/",
        )
        total_skips += len(skips)
        for crop in crops:
            (crops_dir / f"{crop.record.crop_id}.png").write_bytes(encode_png(crop.pixels))
            records.append(crop.record)
    if total_skips:
        log.info("alignment skipped %d detections in total", total_skips)

    manifest = Manifest(
        records=records,
        metadata={
            "num_days": raw.metadata.get("num_days", 0),
            "individuals": raw.metadata.get("individuals", []),
            "image_root": "crops",
            "tool_version": __version__,
            "align": {"crop_px": crop_px, "out_px": out_px, "pad_mode": pad_mode},
        },
    )
    write_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


def enhance_manifest(
    in_manifest: str | Path,
    out_manifest: str | Path,
    cfg: ClaheConfig | None = None,
    jobs: int | None = None,
) -> Manifest:
    """Contrast-enhance every aligned crop; writes new images and a new manifest."""
    cfg = cfg or ClaheConfig()
    in_manifest = Path(in_manifest)
    out_manifest = Path(out_manifest)
    manifest = read_manifest(in_manifest)
    store = CropStore(manifest, base_dir=in_manifest.parent)
    out_dir = out_manifest.parent / "crops"
    out_dir.mkdir(parents=True, exist_ok=True)

    def enhance_one(rec: CropRecord) -> CropRecord:
        enhanced = clahe(store.image(rec.crop_id), cfg)
        png = encode_png(enhanced)
        (out_dir / f"{rec.crop_id}.png").write_bytes(png)
        return rec.advanced("enhanced", hash_image(png))

    with ThreadPoolExecutor(max_workers=_jobs(jobs)) as pool:
        records = list(pool.map(enhance_one, manifest.records))

    out = Manifest(
        records=records,
        metadata={
            **manifest.metadata,
            "image_root": "crops",
            "tool_version": __version__,
            "clahe": cfg.to_json(),
        },
    )
    write_manifest(out, out_manifest)
    return out


def build_enhanced_dataset(
    cfg: DriftConfig,
    crop_px: int = 288,
    out_px: int = 96,
    clahe_cfg: ClaheConfig | None = None,
    jobs: int | None = None,
) -> tuple[Manifest, dict[str, np.ndarray]]:
    """Run synth -> align -> enhance fully in memory.

    Returns the enhanced manifest plus a crop_id -> image mapping for a
    CropStore; frames are discarded session by session so memory stays at the
    crop level. This is the desk-scale driver for protocol experiments.
    """
    clahe_cfg = clahe_cfg or ClaheConfig()
    records: list[CropRecord] = []
    images: dict[str, np.ndarray] = {}

    def enhance_crop(crop: AlignedCrop) -> tuple[CropRecord, np.ndarray]:
        enhanced = clahe(crop.pixels, clahe_cfg)
        rec = crop.record.advanced("enhanced", hash_image(encode_png(enhanced)))
        return rec, enhanced

    for session in iter_sessions(cfg):
        crops, _ = process_session(
            session.frames,
            session.detections,
            session=(session.day, session.set),
            individual=session.individual,
            crop_px=crop_px,
            out_px=out_px,
            source_prefix=f"synth/{session.individual}_d{session.day:02d}s{session.set:02d}/",
        )
        with ThreadPoolExecutor(max_workers=_jobs(jobs)) as pool:
            for rec, img in pool.map(enhance_crop, crops):
                records.append(rec)
                images[rec.crop_id] = img
        session.frames.clear()

    manifest = Manifest(
        records=records,
        metadata={
            "num_days": cfg.num_days,
            "individuals": cfg.individuals(),
            "tool_version": __version__,
            "generator": {"kind": "synthetic-drift", "config": cfg.to_json()},
            "align": {"crop_px": crop_px, "out_px": out_px, "pad_mode": "edge"},
            "clahe": clahe_cfg.to_json(),
        },
    )
    return manifest, images


def sessions_from_config(cfg: DriftConfig) -> Iterable[SyntheticSession]:
    return iter_sessions(cfg)
