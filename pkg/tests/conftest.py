import numpy as np
import pytest

from retroid.data import CropRecord, Manifest, TransformParams, hash_image


def make_record(
    crop_id: str,
    individual: str = "ind00",
    day: int = 1,
    set_: int = 1,
    frame_index: int = 0,
    sha256: str | None = None,
    stage: str = "enhanced",
    qc: str = "pending",
    source: str = "frames/f00000.png",
) -> CropRecord:
    if sha256 is None:
        sha256 = hash_image(f"{crop_id}:{individual}:{day}:{set_}:{frame_index}".encode())
    return CropRecord(
        crop_id=crop_id,
        sha256=sha256,
        individual=individual,
        day=day,
        set=set_,
        frame_index=frame_index,
        source=source,
        transform=TransformParams(),
        stage=stage,
        qc=qc,
    )


def make_manifest(records, num_days: int | None = None, **metadata) -> Manifest:
    meta = {
        "num_days": num_days or max((r.day for r in records), default=0),
        "individuals": sorted({r.individual for r in records}),
    }
    meta.update(metadata)
    return Manifest(records=list(records), metadata=meta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
