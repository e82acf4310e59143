"""Synthetic longitudinal datasets with controlled day-to-day appearance drift.

Each individual is a parameter vector (body ellipse axes, stripe texture,
blob sizes, intensities) drawn from a seeded RNG. Day-k parameters move along
a fixed per-individual drift direction, anchored at the experiment midpoint:

    values(day) = base + (day - (D+1)/2) * drift_rate * (direction * scale)

so reversing the day order and negating the direction yields exactly the same
parameter sequence - the generative process is time-symmetric, which is what
makes forward/backward identification comparisons on this data fair.

Frames are rendered as one textured-ellipse subject (distinct head and
abdomen blobs) on a smooth noise background, together with exact detection
boxes, so detection-conditioned cropping is non-trivial but ground truth is
known.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import cv2
import numpy as np

from . import __version__
from .align import Box, Detection
from .data import (
    CropRecord,
    Manifest,
    TransformParams,
    derive_seed,
    hash_image,
)
from .errors import ConfigurationError, ValidationError

COMPONENTS = (
    "body_a",
    "body_b",
    "stripe_freq",
    "stripe_phase",
    "stripe_amp",
    "mottle_amp",
    "mottle_fx",
    "mottle_fy",
    "base_intensity",
    "head_r",
    "abd_r",
    "head_intensity",
    "abd_intensity",
)

_BASE_LO = np.array([52.0, 31.0, 2.4, 0.0, 24.0, 10.0, 1.2, 0.8, 122.0, 15.0, 19.0, 56.0, 144.0])
_BASE_HI = np.array([70.0, 43.0, 4.0, 6.283, 40.0, 18.0, 2.2, 1.6, 156.0, 21.0, 27.0, 92.0, 192.0])
# Per-frame jitter sigma at intra_session_noise == 1.
_NOISE_SCALE = np.array([0.8, 0.6, 0.04, 0.05, 1.2, 0.8, 0.03, 0.03, 1.5, 0.4, 0.5, 1.5, 1.5])
# Per-day drift sigma at drift_rate == 1.
_DRIFT_SCALE = np.array([2.2, 1.6, 0.12, 0.22, 3.2, 2.2, 0.10, 0.10, 4.5, 1.1, 1.3, 4.5, 4.5])
_CLAMP_LO = np.array([40.0, 24.0, 1.4, -12.6, 6.0, 0.0, 0.5, 0.3, 90.0, 10.0, 12.0, 30.0, 110.0])
_CLAMP_HI = np.array([82.0, 52.0, 5.2, 18.9, 60.0, 30.0, 3.2, 2.6, 200.0, 28.0, 34.0, 120.0, 225.0])

_BG_MEAN = 112.0
_BG_SIGMA = 10.0
_BG_GRID_STEP = 32
_PIXEL_NOISE = 1.2
_EDGE_FEATHER_PX = 1.5


@dataclass(frozen=True)
class DriftConfig:
    num_individuals: int = 15
    num_days: int = 5
    images_per_session: int = 200
    drift_rate: float = 0.0
    intra_session_noise: float = 1.0
    seed: int = 0
    frame_size: tuple[int, int] = (640, 480)  # (width, height)
    # Additional (day, set) replicate sessions beyond set 1, e.g. ((5, 2),)
    # for a second final-day recording used in model screening.
    extra_sets: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.num_individuals < 2:
            raise ConfigurationError("need at least 2 individuals")
        if self.num_days < 2:
            raise ConfigurationError("need at least 2 days")
        if self.images_per_session < 1:
            raise ConfigurationError("images_per_session must be positive")
        if self.drift_rate < 0 or self.intra_session_noise < 0:
            raise ConfigurationError("drift_rate and intra_session_noise must be >= 0")
        w, h = self.frame_size
        if w < 256 or h < 256:
            raise ConfigurationError(f"frame_size {self.frame_size} too small to place a subject")
        for day, set_ in self.extra_sets:
            if not (1 <= day <= self.num_days) or set_ < 2:
                raise ConfigurationError(f"bad extra set ({day}, {set_})")

    def individuals(self) -> list[str]:
        return [f"ind{i:02d}" for i in range(self.num_individuals)]

    def sessions(self) -> list[tuple[int, int]]:
        base = [(day, 1) for day in range(1, self.num_days + 1)]
        return base + sorted(self.extra_sets)

    def to_json(self) -> dict:
        return {
            "num_individuals": self.num_individuals,
            "num_days": self.num_days,
            "images_per_session": self.images_per_session,
            "drift_rate": self.drift_rate,
            "intra_session_noise": self.intra_session_noise,
            "seed": self.seed,
            "frame_size": list(self.frame_size),
            "extra_sets": [list(s) for s in self.extra_sets],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DriftConfig":
        kwargs = dict(obj)
        if "frame_size" in kwargs:
            kwargs["frame_size"] = tuple(kwargs["frame_size"])
        if "extra_sets" in kwargs:
            kwargs["extra_sets"] = tuple(tuple(s) for s in kwargs["extra_sets"])
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class IndividualParams:
    """Day-level appearance vector plus the per-frame jitter scale."""

    individual: str
    day: int
    values: np.ndarray
    noise_scale: np.ndarray


def individual_base(cfg: DriftConfig, index: int) -> np.ndarray:
    """Base appearance vector for one individual.

    Sampling is stratified per component: each individual occupies a distinct
    quantile cell of every component range (seeded permutation), jittered
    within the cell. This keeps cohorts distinguishable at any seed while
    still being a seeded random draw.
    """
    n = cfg.num_individuals
    cells = np.empty(len(COMPONENTS))
    for comp in range(len(COMPONENTS)):
        perm_rng = np.random.Generator(np.random.PCG64(derive_seed(cfg.seed, "strata", comp)))
        cells[comp] = perm_rng.permutation(n)[index]
    jitter_rng = np.random.Generator(np.random.PCG64(derive_seed(cfg.seed, "base", index)))
    u = jitter_rng.uniform(0.15, 0.85, size=len(COMPONENTS))
    return _BASE_LO + (_BASE_HI - _BASE_LO) * (cells + u) / n


def drift_direction(cfg: DriftConfig, index: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(derive_seed(cfg.seed, "drift", index)))
    g = rng.normal(size=len(COMPONENTS))
    return g / np.linalg.norm(g)


def day_values(
    base: np.ndarray, direction: np.ndarray, day: int, num_days: int, drift_rate: float
) -> np.ndarray:
    """Drifted, clamped parameter vector for one day (midpoint-anchored)."""
    offset = day - (num_days + 1) / 2.0
    values = base + offset * drift_rate * direction * _DRIFT_SCALE
    return np.clip(values, _CLAMP_LO, _CLAMP_HI)


def individual_day_params(cfg: DriftConfig, index: int, day: int) -> IndividualParams:
    if not (1 <= day <= cfg.num_days):
        raise ValidationError(f"day {day} outside [1, {cfg.num_days}]")
    values = day_values(
        individual_base(cfg, index),
        drift_direction(cfg, index),
        day,
        cfg.num_days,
        cfg.drift_rate,
    )
    return IndividualParams(
        individual=cfg.individuals()[index],
        day=day,
        values=values,
        noise_scale=_NOISE_SCALE * cfg.intra_session_noise,
    )


def _params_dict(values: np.ndarray) -> dict[str, float]:
    return dict(zip(COMPONENTS, (float(v) for v in values)))


def _subject_extent(p: dict[str, float]) -> float:
    head_reach = p["body_a"] + 0.4 * p["head_r"] + p["head_r"]
    abd_reach = 0.6 * p["body_a"] + p["abd_r"]
    return max(p["body_a"], p["body_b"], head_reach, abd_reach) + 2.0


def render_individual(
    params: IndividualParams,
    rng: np.random.Generator,
    frame_size: tuple[int, int] = (640, 480),
    frame_index: int = 0,
    position: tuple[float, float] | None = None,
    orientation_deg: float | None = None,
) -> tuple[np.ndarray, Detection]:
    """Render one frame containing exactly one subject, with exact boxes.

    Position and orientation come from the RNG unless overridden; overrides
    still consume the same RNG draws so frame streams stay aligned.
    """
    w, h = frame_size
    jitter = rng.normal(size=len(COMPONENTS)) * params.noise_scale
    values = np.clip(params.values + jitter, _CLAMP_LO, _CLAMP_HI)
    p = _params_dict(values)

    # Smooth noise background: coarse grid upsampled bilinearly.
    gw = w // _BG_GRID_STEP + 2
    gh = h // _BG_GRID_STEP + 2
    grid = rng.standard_normal((gh, gw), dtype=np.float32) * _BG_SIGMA + _BG_MEAN
    frame = cv2.resize(grid, (w, h), interpolation=cv2.INTER_LINEAR)

    extent = _subject_extent(p)
    if 2 * extent >= min(w, h):
        raise ValidationError(f"frame {frame_size} too small for subject extent {extent:.0f}")
    cx = rng.uniform(extent, w - extent)
    cy = rng.uniform(extent, h - extent)
    psi = rng.uniform(-180.0, 180.0)
    if position is not None:
        cx, cy = position
    if orientation_deg is not None:
        psi = orientation_deg

    theta = math.radians(psi)
    # Unit vector toward the head for clockwise-from-up angle psi.
    e1 = np.array([math.sin(theta), -math.cos(theta)])
    e2 = np.array([math.cos(theta), math.sin(theta)])

    r = int(math.ceil(extent))
    x0 = max(int(math.floor(cx)) - r, 0)
    x1 = min(int(math.floor(cx)) + r + 1, w)
    y0 = max(int(math.floor(cy)) - r, 0)
    y1 = min(int(math.floor(cy)) + r + 1, h)
    xs = (np.arange(x0, x1) + 0.5 - cx).astype(np.float32)
    ys = (np.arange(y0, y1) + 0.5 - cy).astype(np.float32)
    gx, gy = np.meshgrid(xs, ys)
    u = gx * e1[0] + gy * e1[1]
    v = gx * e2[0] + gy * e2[1]

    a, b = p["body_a"], p["body_b"]
    rho = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    body_alpha = np.clip((1.0 - rho) * (min(a, b) / _EDGE_FEATHER_PX), 0.0, 1.0)
    stripes = p["stripe_amp"] * np.cos(
        2.0 * math.pi * p["stripe_freq"] * (u + a) / (2.0 * a) + p["stripe_phase"]
    )
    mottle = p["mottle_amp"] * (
        np.sin(2.0 * math.pi * p["mottle_fx"] * (u + a) / (2.0 * a))
        * np.sin(2.0 * math.pi * p["mottle_fy"] * (v + b) / (2.0 * b))
    )
    body_tex = stripes
    body_tex += mottle
    body_tex += p["base_intensity"]

    region = frame[y0:y1, x0:x1]
    region *= 1.0 - body_alpha
    region += body_tex * body_alpha

    head_c = np.array([cx, cy]) + (a + 0.4 * p["head_r"]) * e1
    abd_c = np.array([cx, cy]) - 0.6 * a * e1
    for center, radius, intensity in (
        (head_c, p["head_r"], p["head_intensity"]),
        (abd_c, p["abd_r"], p["abd_intensity"]),
    ):
        # blend each blob on its own small window
        bx0 = max(int(center[0] - radius - 2), 0)
        bx1 = min(int(center[0] + radius + 3), w)
        by0 = max(int(center[1] - radius - 2), 0)
        by1 = min(int(center[1] + radius + 3), h)
        bxs = (np.arange(bx0, bx1) + 0.5 - center[0]).astype(np.float32)
        bys = (np.arange(by0, by1) + 0.5 - center[1]).astype(np.float32)
        du, dv = np.meshgrid(bxs, bys)
        dist = np.sqrt(du * du + dv * dv)
        alpha = np.clip((radius - dist) / _EDGE_FEATHER_PX, 0.0, 1.0)
        tex = intensity + 0.25 * p["stripe_amp"] * (dist / radius - 0.5)
        window = frame[by0:by1, bx0:bx1]
        window *= 1.0 - alpha
        window += tex * alpha

    # Fine-grain sensor noise: uniform, from raw generator bytes (cheap).
    raw = np.frombuffer(rng.bytes(h * w), dtype=np.uint8).reshape(h, w)
    frame += (raw.astype(np.float32) - 127.5) * (_PIXEL_NOISE / 73.9)
    np.clip(frame, 0.0, 255.0, out=frame)
    frame += 0.5
    frame_u8 = frame.astype(np.uint8)

    # Exact bounding boxes: ellipse extents plus the two blobs.
    ell_hx = math.sqrt((a * e1[0]) ** 2 + (b * e2[0]) ** 2)
    ell_hy = math.sqrt((a * e1[1]) ** 2 + (b * e2[1]) ** 2)
    body_x0 = min(cx - ell_hx, head_c[0] - p["head_r"], abd_c[0] - p["abd_r"])
    body_x1 = max(cx + ell_hx, head_c[0] + p["head_r"], abd_c[0] + p["abd_r"])
    body_y0 = min(cy - ell_hy, head_c[1] - p["head_r"], abd_c[1] - p["abd_r"])
    body_y1 = max(cy + ell_hy, head_c[1] + p["head_r"], abd_c[1] + p["abd_r"])
    det = Detection(
        frame_index=frame_index,
        body=Box(body_x0, body_y0, body_x1 - body_x0, body_y1 - body_y0, 1.0),
        head=Box(
            head_c[0] - p["head_r"], head_c[1] - p["head_r"],
            2 * p["head_r"], 2 * p["head_r"], 1.0,
        ),
        abdomen=Box(
            abd_c[0] - p["abd_r"], abd_c[1] - p["abd_r"],
            2 * p["abd_r"], 2 * p["abd_r"], 1.0,
        ),
    )
    return frame_u8, det


@dataclass
class SyntheticSession:
    individual: str
    day: int
    set: int
    frames: list[np.ndarray] = field(default_factory=list)
    detections: list[Detection] = field(default_factory=list)
    params: IndividualParams | None = None


def session_seed(cfg: DriftConfig, individual: str, day: int, set_: int) -> int:
    return derive_seed(cfg.seed, "session", individual, day, set_)


def generate_session(cfg: DriftConfig, index: int, day: int, set_: int = 1) -> SyntheticSession:
    params = individual_day_params(cfg, index, day)
    rng = np.random.Generator(np.random.PCG64(session_seed(cfg, params.individual, day, set_)))
    session = SyntheticSession(individual=params.individual, day=day, set=set_, params=params)
    for i in range(cfg.images_per_session):
        frame, det = render_individual(params, rng, frame_size=cfg.frame_size, frame_index=i)
        session.frames.append(frame)
        session.detections.append(det)
    return session


def iter_sessions(cfg: DriftConfig) -> Iterator[SyntheticSession]:
    """All sessions of the experiment, individual-major then (day, set)."""
    for index in range(cfg.num_individuals):
        for day, set_ in cfg.sessions():
            yield generate_session(cfg, index, day, set_)


def generate_dataset(cfg: DriftConfig, out_dir: str | Path) -> Manifest:
    """Write frames, detection sidecars and a raw ground-truth manifest.

    Layout under ``out_dir``: ``frames/<session>/fNNNNN.png``,
    ``detections/<session>.jsonl``, ``params.json``, ``config.json`` and
    ``manifest.jsonl`` with one stage=raw record per frame.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out}: {exc}") from exc

    records: list[CropRecord] = []
    params_log: dict[str, dict[str, list[float]]] = {}
    w, h = cfg.frame_size
    placeholder = TransformParams(
        rotation_deg=0.0, center_xy=(w / 2.0, h / 2.0), crop_px=min(w, h), out_px=min(w, h)
    )
    for session in iter_sessions(cfg):
        name = f"{session.individual}_d{session.day:02d}s{session.set:02d}"
        frame_dir = out / "frames" / name
        frame_dir.mkdir(parents=True, exist_ok=True)
        sidecar_lines = []
        for i, (frame, det) in enumerate(zip(session.frames, session.detections)):
            ok, buf = cv2.imencode(".png", frame)
            if not ok:
                raise ValidationError("PNG encoding failed")
            png = buf.tobytes()
            rel = f"frames/{name}/f{i:05d}.png"
            (out / rel).write_bytes(png)
            sidecar_lines.append(json.dumps(det.to_json()))
            records.append(
                CropRecord(
                    crop_id=f"raw_{name}_f{i:05d}",
                    sha256=hash_image(png),
                    individual=session.individual,
                    day=session.day,
                    set=session.set,
                    frame_index=i,
                    source=rel,
                    transform=placeholder,
                    stage="raw",
                )
            )
        det_dir = out / "detections"
        det_dir.mkdir(parents=True, exist_ok=True)
        (det_dir / f"{name}.jsonl").write_text("\n".join(sidecar_lines) + "\n", encoding="utf-8")
        params_log.setdefault(session.individual, {})[str(session.day)] = [
            float(x) for x in session.params.values
        ]

    (out / "config.json").write_text(
        json.dumps({**cfg.to_json(), "tool_version": __version__}, indent=2),
        encoding="utf-8",
    )
    (out / "params.json").write_text(
        json.dumps({"components": list(COMPONENTS), "per_individual": params_log}, indent=2),
        encoding="utf-8",
    )
    manifest = Manifest(
        records=records,
        metadata={
            "num_days": cfg.num_days,
            "individuals": cfg.individuals(),
            "image_root": "frames",
            "tool_version": __version__,
            "generator": {"kind": "synthetic-drift", "config": cfg.to_json()},
        },
    )
    from .data import write_manifest

    write_manifest(manifest, out / "manifest.jsonl")
    return manifest
