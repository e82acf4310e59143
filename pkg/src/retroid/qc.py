"""Quality-control review service: serve crops, record keep/discard decisions.

Decisions are appended to a JSONL log, never rewritten, so review history
stays auditable and concurrent reviewers cannot clobber each other. Applying
a log to a manifest is a pure function: the last decision per crop (by
timestamp, then file order) wins.
"""

import json
import logging
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

from pydantic import BaseModel

from .data import Manifest, read_manifest
from .errors import ValidationError

log = logging.getLogger(__name__)

DECISION_STATUSES = ("keep", "discard")


@dataclass(frozen=True)
class Decision:
    crop_id: str
    status: str
    reviewer: str
    timestamp: str  # UTC ISO-8601

    def __post_init__(self):
        if self.status not in DECISION_STATUSES:
            raise ValidationError(f"decision status must be keep or discard, got {self.status!r}")

    def to_json(self) -> dict:
        return {
            "crop_id": self.crop_id,
            "status": self.status,
            "reviewer": self.reviewer,
            "timestamp": self.timestamp,
        }


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%f+00:00")


class DecisionIn(BaseModel):
    """POST /api/decision request body."""

    crop_id: str
    status: str
    reviewer: str = ""


def read_decisions(decisions_path: str | Path) -> list[tuple[int, Decision]]:
    """Parse a decisions log; malformed lines are skipped with a warning."""
    path = Path(decisions_path)
    if not path.exists():
        return []
    out: list[tuple[int, Decision]] = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            decision = Decision(
                crop_id=obj["crop_id"],
                status=obj["status"],
                reviewer=obj.get("reviewer", ""),
                timestamp=obj["timestamp"],
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as exc:
            log.warning("%s:%d malformed decision skipped: %s", path, line_no, exc)
            continue
        out.append((line_no, decision))
    return out


def apply_decisions(manifest: Manifest, decisions_path: str | Path) -> Manifest:
    """Fold a decisions log into a manifest's qc fields (last decision wins).

    Ties on timestamp resolve to the later line in the file. Crops without a
    decision keep their prior qc status. Idempotent.
    """
    final: dict[str, tuple[str, int, str]] = {}
    known = {rec.crop_id for rec in manifest.records}
    for line_no, decision in read_decisions(decisions_path):
        if decision.crop_id not in known:
            log.warning("decision for unknown crop %r ignored", decision.crop_id)
            continue
        current = final.get(decision.crop_id)
        key = (decision.timestamp, line_no)
        if current is None or key >= (current[0], current[1]):
            final[decision.crop_id] = (decision.timestamp, line_no, decision.status)
    records = [
        replace(rec, qc=final[rec.crop_id][2]) if rec.crop_id in final else rec
        for rec in manifest.records
    ]
    return Manifest(records=records, metadata=dict(manifest.metadata))


def create_app(
    manifest_path: str | Path,
    decisions_path: str | Path,
    static_dir: str | Path | None = None,
):
    """Build the review app over one manifest and one append-only decisions log."""
    from fastapi import FastAPI, HTTPException, Response

    manifest_path = Path(manifest_path)
    decisions_path = Path(decisions_path)
    manifest = read_manifest(manifest_path)
    from .data import CropStore

    store = CropStore(manifest, base_dir=manifest_path.parent)
    by_id = {rec.crop_id: rec for rec in manifest.records}

    # Live qc view: manifest values overlaid with decisions already on disk.
    qc_state = {rec.crop_id: rec.qc for rec in manifest.records}
    for _, decision in read_decisions(decisions_path):
        if decision.crop_id in qc_state:
            qc_state[decision.crop_id] = decision.status

    decisions_path.parent.mkdir(parents=True, exist_ok=True)
    write_lock = threading.Lock()

    app = FastAPI(title="retroid qc")

    @app.get("/api/sessions")
    def sessions():
        counts: dict[tuple[int, int], int] = {}
        for rec in manifest.records:
            counts[rec.session] = counts.get(rec.session, 0) + 1
        return [
            {"day": day, "set": set_, "count": counts[(day, set_)]}
            for day, set_ in sorted(counts)
        ]

    @app.get("/api/crops")
    def crops(
        day: int | None = None,
        set: int | None = None,
        status: str | None = None,
        page: int = 1,
        page_size: int = 100,
    ):
        if page < 1 or page_size < 1:
            raise HTTPException(status_code=400, detail="page and page_size must be >= 1")
        items = []
        for rec in manifest.records:
            qc = qc_state[rec.crop_id]
            if day is not None and rec.day != day:
                continue
            if set is not None and rec.set != set:
                continue
            if status is not None and qc != status:
                continue
            items.append(
                {
                    "crop_id": rec.crop_id,
                    "individual": rec.individual,
                    "day": rec.day,
                    "set": rec.set,
                    "qc": qc,
                    "url": f"/api/image/{rec.crop_id}",
                }
            )
        start = (page - 1) * page_size
        return {
            "items": items[start:start + page_size],
            "total": len(items),
            "page": page,
            "page_size": page_size,
        }

    @app.get("/api/image/{crop_id}")
    def image(crop_id: str):
        if crop_id not in by_id:
            raise HTTPException(status_code=404, detail=f"unknown crop {crop_id!r}")
        path = store.image_path(crop_id)
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no image file for {crop_id!r}")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.post("/api/decision")
    def decide(body: DecisionIn):
        if body.crop_id not in by_id:
            raise HTTPException(status_code=404, detail=f"unknown crop {body.crop_id!r}")
        if body.status not in DECISION_STATUSES:
            raise HTTPException(
                status_code=400, detail=f"status must be one of {DECISION_STATUSES}"
            )
        decision = Decision(
            crop_id=body.crop_id,
            status=body.status,
            reviewer=body.reviewer,
            timestamp=_utc_now(),
        )
        with write_lock:
            with decisions_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(decision.to_json(), sort_keys=True) + "\n")
                fh.flush()
            qc_state[decision.crop_id] = decision.status
        return {"ok": True}

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app


def serve(
    manifest_path: str | Path,
    decisions_path: str | Path,
    bind_addr: str = "127.0.0.1:8077",
    static_dir: str | Path | None = None,
) -> None:
    """Run the review service until interrupted."""
    import socket

    import uvicorn

    host, _, port = bind_addr.partition(":")
    host = host or "127.0.0.1"
    port_num = int(port or 8077)
    # uvicorn logs-and-exits on a busy port; probe first so this is fatal.
    try:
        with socket.socket() as probe:
            probe.bind((host, port_num))
    except OSError as exc:
        raise ValidationError(f"cannot bind {bind_addr}: {exc}") from exc
    app = create_app(manifest_path, decisions_path, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port_num, log_level="warning")
