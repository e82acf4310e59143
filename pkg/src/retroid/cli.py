"""Command-line entry point orchestrating the pipeline end to end.

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure. A JSON
config file supplies defaults per stage; command-line flags win over it, and
the RETROID_SEED environment variable overrides every configured seed.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import __version__
from .clahe import ClaheConfig
from .data import read_manifest, verify_segregation
from .errors import RetroidError, ValidationError
from .harness import Hyperparams
from .synth import DriftConfig


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc


def _resolve_seed(cli_seed: int | None, config: dict, default: int = 0) -> int:
    env = os.environ.get("RETROID_SEED")
    if cli_seed is not None:
        return cli_seed
    if env is not None:
        return int(env)
    return int(config.get("seed", default))


def _merge(section: dict, overrides: dict) -> dict:
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _parse_grid(value: str) -> tuple[int, int]:
    try:
        tx, ty = value.lower().split("x")
        return (int(tx), int(ty))
    except ValueError as exc:
        raise ValidationError(f"grid must look like 8x8, got {value!r}") from exc


def _hyperparams(config: dict, **overrides) -> Hyperparams:
    merged = _merge(config.get("hyperparams", {}), overrides)
    merged["seed"] = _resolve_seed(
        overrides.get("seed"), merged, int(config.get("seed", 0))
    )
    return Hyperparams(**merged)


@click.group()
@click.version_option(__version__, prog_name="retroid")
def cli():
    """Markerless re-identification and retro-identification toolkit."""


@cli.command()
@click.option("--config", "config_path", type=click.Path(), help="JSON config file.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--individuals", type=int, default=None)
@click.option("--days", type=int, default=None)
@click.option("--images", type=int, default=None)
@click.option("--drift-rate", type=float, default=None)
@click.option("--noise", type=float, default=None)
def synth(config_path, out_dir, seed, individuals, days, images, drift_rate, noise):
    """Generate a synthetic drift dataset (frames, sidecars, raw manifest)."""
    from .synth import generate_dataset

    config = _load_config(config_path)
    section = _merge(
        config.get("drift", {}),
        {
            "num_individuals": individuals,
            "num_days": days,
            "images_per_session": images,
            "drift_rate": drift_rate,
            "intra_session_noise": noise,
        },
    )
    section["seed"] = _resolve_seed(seed, section)
    cfg = DriftConfig.from_json(section)
    manifest = generate_dataset(cfg, out_dir)
    click.echo(f"wrote {len(manifest.records)} frames to {out_dir}")


@cli.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--crop-px", type=int, default=400, show_default=True)
@click.option("--out-px", type=int, default=256, show_default=True)
@click.option("--pad", type=click.Choice(["edge", "zero"]), default="edge", show_default=True)
@click.option("--jobs", type=int, default=None)
def align(dataset_dir, out_dir, crop_px, out_px, pad, jobs):
    """Turn frames + detections into orientation-normalized crops."""
    from .pipeline import align_dataset

    manifest = align_dataset(
        dataset_dir, out_dir, crop_px=crop_px, out_px=out_px, pad_mode=pad, jobs=jobs
    )
    click.echo(f"aligned {len(manifest.records)} crops into {out_dir}")


@cli.command()
@click.option("--in", "in_manifest", required=True, type=click.Path(exists=True))
@click.option("--out", "out_manifest", required=True, type=click.Path())
@click.option("--clip", type=float, default=2.0, show_default=True)
@click.option("--grid", default="8x8", show_default=True)
@click.option("--jobs", type=int, default=None)
def enhance(in_manifest, out_manifest, clip, grid, jobs):
    """Contrast-enhance aligned crops (updates stage, re-hashes images)."""
    from .pipeline import enhance_manifest

    cfg = ClaheConfig(grid=_parse_grid(grid), clip_limit=clip)
    manifest = enhance_manifest(in_manifest, out_manifest, cfg, jobs=jobs)
    click.echo(f"enhanced {len(manifest.records)} crops -> {out_manifest}")


@cli.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--day", required=True, type=int)
@click.option("--set", "set_", type=int, default=1, show_default=True)
@click.option("--backend", default="small-cnn", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path())
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", "learning_rate", type=float, default=None)
@click.option("--weight-decay", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--pretrained-weights/--no-pretrained-weights", default=True)
def train(manifest_path, day, set_, backend, out_dir, config_path, epochs, batch_size,
          learning_rate, weight_decay, seed, pretrained_weights):
    """Train one classifier on a single session."""
    from .data import CropStore
    from .harness import save_classifier
    from .harness import train as train_op

    config = _load_config(config_path)
    hp = _hyperparams(
        config,
        epochs=epochs,
        batch_size=batch_size,
        learning_rate=learning_rate,
        weight_decay=weight_decay,
        seed=seed,
    )
    manifest = read_manifest(manifest_path)
    store = CropStore(manifest, base_dir=Path(manifest_path).parent)
    clf = train_op(store.crop_set(day, set_), backend, hp, pretrained_weights=pretrained_weights)
    save_classifier(clf, out_dir)
    click.echo(f"trained {backend} on day {day} set {set_} -> {out_dir}")


@cli.command("eval")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--train-day", required=True, type=int)
@click.option("--train-set", type=int, default=1, show_default=True)
@click.option("--direction", type=click.Choice(["forward", "backward", "both"]), required=True)
@click.option("--backend", "backends", multiple=True, default=("small-cnn",), show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path())
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", "learning_rate", type=float, default=None)
@click.option("--weight-decay", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--pretrained-weights/--no-pretrained-weights", default=True)
def eval_cmd(manifest_path, train_day, train_set, direction, backends, out_path, config_path,
             epochs, batch_size, learning_rate, weight_decay, seed, pretrained_weights):
    """Run the directional evaluation grid for one training day."""
    from .data import CropStore
    from .protocol import build_schedule, run_protocol

    config = _load_config(config_path)
    hp = _hyperparams(
        config,
        epochs=epochs,
        batch_size=batch_size,
        learning_rate=learning_rate,
        weight_decay=weight_decay,
        seed=seed,
    )
    manifest = read_manifest(manifest_path)
    store = CropStore(manifest, base_dir=Path(manifest_path).parent)
    num_days = int(manifest.metadata.get("num_days") or max(d for d, _ in manifest.sessions()))
    schedule = build_schedule(train_day, train_set, num_days, direction)
    result = run_protocol(store, schedule, list(backends), hp,
                          pretrained_weights=pretrained_weights)
    payload = result.to_json()
    payload["config"]["tool_version"] = __version__
    Path(out_path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    click.echo(f"evaluated {len(backends)} model(s) {direction} from day {train_day} -> {out_path}")


@cli.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--day", type=int, default=5, show_default=True)
@click.option("--set1", type=int, default=1, show_default=True)
@click.option("--set2", type=int, default=2, show_default=True)
@click.option("--backend", "backends", multiple=True, required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path())
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--pretrained-weights/--no-pretrained-weights", default=True)
def screen(manifest_path, day, set1, set2, backends, out_path, config_path, epochs, seed,
           pretrained_weights):
    """Rank backends by same-day replicate accuracy (intra-day screening)."""
    from .data import CropStore
    from .protocol import screen_models

    config = _load_config(config_path)
    hp = _hyperparams(config, epochs=epochs, seed=seed)
    manifest = read_manifest(manifest_path)
    store = CropStore(manifest, base_dir=Path(manifest_path).parent)
    table = screen_models(
        list(backends),
        store.crop_set(day, set1),
        store.crop_set(day, set2),
        hp,
        pretrained_weights=pretrained_weights,
    )
    payload = {
        "day": day,
        "set1": set1,
        "set2": set2,
        "rows": [
            {"backend": r.backend, "accuracy": r.accuracy, "macro_f1": r.macro_f1}
            for r in table
        ],
        "config": {"hyperparams": hp.to_json(), "tool_version": __version__},
    }
    Path(out_path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    for row in table:
        click.echo(f"{row.backend}\t{row.accuracy:.4f}\t{row.macro_f1:.4f}")


@cli.command()
@click.option("--table", "table_path", required=True, type=click.Path(exists=True))
@click.option("--min-accuracy", type=float, default=0.40, show_default=True)
@click.option("--min-f1", type=float, default=0.35, show_default=True)
@click.option("--out", "out_path", type=click.Path())
def select(table_path, min_accuracy, min_f1, out_path):
    """Filter a screening table by strict accuracy and F1 thresholds."""
    from .protocol import ScreenRow, SelectionThresholds, select_models

    payload = json.loads(Path(table_path).read_text(encoding="utf-8"))
    table = [ScreenRow(r["backend"], r["accuracy"], r["macro_f1"]) for r in payload["rows"]]
    chosen = select_models(table, SelectionThresholds(min_accuracy, min_f1))
    if out_path:
        Path(out_path).write_text(
            json.dumps({"selected": [r.backend for r in chosen]}, indent=2), encoding="utf-8"
        )
    for row in chosen:
        click.echo(row.backend)


@cli.command()
@click.option("--forward", "forward_path", required=True, type=click.Path(exists=True))
@click.option("--backward", "backward_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--welch", is_flag=True, default=False)
def compare(forward_path, backward_path, out_dir, alpha, welch):
    """Statistically compare forward and backward accuracy trends."""
    from .protocol import compare_directions

    fwd = json.loads(Path(forward_path).read_text(encoding="utf-8"))
    bwd = json.loads(Path(backward_path).read_text(encoding="utf-8"))
    comparison = compare_directions(fwd, bwd, alpha=alpha, welch=welch, out_dir=out_dir)
    click.echo(
        f"t={comparison.t_stat:.4f} p={comparison.p_value:.4f} df={comparison.df:.0f}: "
        f"{comparison.decision}"
    )


@cli.command()
@click.option("--train", "train_path", required=True, type=click.Path(exists=True))
@click.option("--test", "test_path", required=True, type=click.Path(exists=True))
def verify(train_path, test_path):
    """Check train/test manifests for temporal leakage; exits 1 on overlap."""
    report = verify_segregation(read_manifest(train_path), read_manifest(test_path))
    click.echo(report.summary())
    if not report.passed:
        raise ValidationError("segregation check failed")


@cli.group()
def qc():
    """Quality-control review service and decision application."""


@qc.command("serve")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--decisions", "decisions_path", required=True, type=click.Path())
@click.option("--bind", default="127.0.0.1:8077", show_default=True)
@click.option("--static", "static_dir", type=click.Path(), default=None,
              help="Directory of built frontend assets to serve at /.")
def qc_serve(manifest_path, decisions_path, bind, static_dir):
    """Serve crops for review; decisions append to a JSONL log."""
    from .qc import serve

    if static_dir is None:
        bundled = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"
        static_dir = bundled if bundled.is_dir() else None
    serve(manifest_path, decisions_path, bind_addr=bind, static_dir=static_dir)


@qc.command("apply")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--decisions", "decisions_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def qc_apply(manifest_path, decisions_path, out_path):
    """Fold reviewed decisions into a manifest's qc fields."""
    from .data import write_manifest
    from .qc import apply_decisions

    manifest = apply_decisions(read_manifest(manifest_path), decisions_path)
    write_manifest(manifest, out_path)
    discarded = sum(1 for r in manifest.records if r.qc == "discard")
    click.echo(f"applied decisions: {discarded} crop(s) discarded -> {out_path}")


def dispatch(argv) -> int:
    """Route argv to a subcommand; maps errors onto the documented exit codes."""
    try:
        cli.main(args=list(argv), prog_name="retroid", standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        return 1
    except click.exceptions.ClickException as exc:
        exc.show()
        return 1
    except RetroidError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"runtime failure: {exc}", err=True)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
