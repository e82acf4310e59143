"""Report emission: comparison JSON, grid CSV, per-model SVG accuracy charts."""

from __future__ import annotations

import csv
import json
from pathlib import Path

_FORWARD_COLOR = "#1f77b4"
_BACKWARD_COLOR = "#ff7f0e"

_W, _H = 420, 300
_ML, _MR, _MT, _MB = 52, 16, 34, 44  # chart margins


def _points(offsets, values) -> str:
    span = max(offsets) - min(offsets) or 1
    pts = []
    for x, y in zip(offsets, values):
        px = _ML + (x - min(offsets)) / span * (_W - _ML - _MR)
        py = _MT + (1.0 - y) * (_H - _MT - _MB)
        pts.append(f"{px:.1f},{py:.1f}")
    return " ".join(pts)


def svg_accuracy_chart(
    title: str,
    offsets,
    forward,
    backward,
) -> str:
    """Accuracy (y in [0, 1]) against day offset, one polyline per direction."""
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="18" text-anchor="middle" font-size="13">{title}</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = _MT + (1.0 - frac) * (_H - _MT - _MB)
        lines.append(
            f'<line x1="{_ML}" y1="{y:.1f}" x2="{_W - _MR}" y2="{y:.1f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        lines.append(
            f'<text x="{_ML - 6}" y="{y + 4:.1f}" text-anchor="end">{frac:.2f}</text>'
        )
    span = max(offsets) - min(offsets) or 1
    for x in offsets:
        px = _ML + (x - min(offsets)) / span * (_W - _ML - _MR)
        lines.append(
            f'<text x="{px:.1f}" y="{_H - _MB + 16}" text-anchor="middle">{x}</text>'
        )
    lines.append(
        f'<text x="{(_ML + _W - _MR) / 2}" y="{_H - 8}" text-anchor="middle">day offset</text>'
    )
    for values, color, label, ly in (
        (forward, _FORWARD_COLOR, "forward", _MT + 10),
        (backward, _BACKWARD_COLOR, "backward", _MT + 24),
    ):
        lines.append(
            f'<polyline points="{_points(offsets, values)}" fill="none" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        lines.append(
            f'<rect x="{_W - _MR - 86}" y="{ly - 8}" width="10" height="10" fill="{color}"/>'
        )
        lines.append(f'<text x="{_W - _MR - 72}" y="{ly + 1}">{label}</text>')
    lines.append("</svg>")
    return "\n".join(lines)


def write_comparison_reports(comparison, fwd, bwd, out_dir, welch: bool = False) -> dict:
    """Write report.json, grid.csv and one SVG per model; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    from . import __version__

    report = comparison.to_json()
    report["config"] = {
        "t_test": "welch" if welch else "student-pooled",
        "tool_version": __version__,
        "forward": fwd.config,
        "backward": bwd.config,
    }
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")

    csv_path = out / "grid.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = (
            ["model"]
            + [f"fwd_day{d}" for d in fwd.test_days]
            + [f"bwd_day{d}" for d in bwd.test_days]
        )
        writer.writerow(header)
        for model in fwd.models:
            writer.writerow(
                [model]
                + [f"{v:.4f}" for v in fwd.accuracy[model]]
                + [f"{v:.4f}" for v in bwd.accuracy[model]]
            )
        writer.writerow(
            ["mean"] + [f"{v:.2f}" for v in fwd.means] + [f"{v:.2f}" for v in bwd.means]
        )
        writer.writerow(
            ["std"] + [f"{v:.2f}" for v in fwd.std] + [f"{v:.2f}" for v in bwd.std]
        )

    svg_paths = []
    offsets = list(fwd.day_offsets)
    for model in fwd.models:
        svg = svg_accuracy_chart(
            model, offsets, list(fwd.accuracy[model]), list(bwd.accuracy[model])
        )
        path = out / f"{model.replace(':', '_')}.svg"
        path.write_text(svg, encoding="utf-8")
        svg_paths.append(path)
    return {"report": report_path, "csv": csv_path, "svg": svg_paths}
