"""Experimental design: screening, model selection, directional schedules,
the leakage-guarded evaluation grid, and the forward/backward comparison."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import CropSet, CropStore, usable_records, verify_segregation
from .errors import LeakageError, ValidationError
from .harness import Hyperparams, Metrics, evaluate, train
from .stats import TTestResult, ttest_two_sample

log = logging.getLogger(__name__)

DIRECTIONS = ("forward", "backward", "both")


@dataclass(frozen=True)
class Schedule:
    train_day: int
    train_set: int
    direction: str
    test_sessions: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValidationError(f"unknown direction {self.direction!r}")
        if (self.train_day, self.train_set) in self.test_sessions:
            raise ValidationError("training session cannot appear among test sessions")

    @property
    def test_days(self) -> tuple[int, ...]:
        return tuple(day for day, _ in self.test_sessions)

    def day_offsets(self) -> tuple[int, ...]:
        return tuple(abs(day - self.train_day) for day, _ in self.test_sessions)


def build_schedule(
    train_day: int,
    train_set: int,
    num_days: int,
    direction: str,
    test_set: int = 1,
) -> Schedule:
    """Test-day order for one training session.

    forward: the days after the training day, ascending. backward: the days
    before it, descending. both: nearer days first, the backward day listed
    before the forward day at each offset.
    """
    if direction not in DIRECTIONS:
        raise ValidationError(f"unknown direction {direction!r}")
    if not (1 <= train_day <= num_days):
        raise ValidationError(f"train_day {train_day} outside [1, {num_days}]")
    days: list[int] = []
    if direction == "forward":
        days = list(range(train_day + 1, num_days + 1))
    elif direction == "backward":
        days = list(range(train_day - 1, 0, -1))
    else:
        for offset in range(1, num_days):
            if train_day - offset >= 1:
                days.append(train_day - offset)
            if train_day + offset <= num_days:
                days.append(train_day + offset)
    if not days:
        log.warning(
            "empty %s schedule from day %d of %d days", direction, train_day, num_days
        )
    return Schedule(
        train_day=train_day,
        train_set=train_set,
        direction=direction,
        test_sessions=tuple((d, test_set) for d in days),
    )


@dataclass(frozen=True)
class SelectionThresholds:
    min_accuracy: float = 0.40
    min_f1: float = 0.35

    def __post_init__(self):
        if not (0.0 < self.min_accuracy < 1.0 and 0.0 < self.min_f1 < 1.0):
            raise ValidationError("selection thresholds must lie in (0, 1)")


@dataclass(frozen=True)
class ScreenRow:
    backend: str
    accuracy: float
    macro_f1: float


def rank_screen_results(results: Mapping[str, tuple[float, float]]) -> list[ScreenRow]:
    """Sort screening metrics by accuracy desc, ties by macro F1 desc, then name."""
    rows = [ScreenRow(name, acc, f1) for name, (acc, f1) in results.items()]
    return sorted(rows, key=lambda r: (-r.accuracy, -r.macro_f1, r.backend))


def screen_models(
    backends: Sequence[str],
    day5_set1: CropSet,
    day5_set2: CropSet,
    hp: Hyperparams,
    pretrained_weights: bool = True,
) -> list[ScreenRow]:
    """Train every backend on one same-day session and rank on its replicate."""
    if day5_set1.classes() != day5_set2.classes():
        raise ValidationError(
            f"individual sets differ between screening sessions: "
            f"{day5_set1.classes()} vs {day5_set2.classes()}"
        )
    results: dict[str, tuple[float, float]] = {}
    for backend in backends:
        clf = train(day5_set1, backend, hp, pretrained_weights=pretrained_weights)
        metrics = evaluate(clf, day5_set2)
        results[backend] = (metrics.accuracy, metrics.macro_f1)
    return rank_screen_results(results)


def select_models(
    table: Sequence[ScreenRow], thresholds: SelectionThresholds = SelectionThresholds()
) -> list[ScreenRow]:
    """Rows strictly above both thresholds; an empty result is allowed."""
    if not table:
        raise ValidationError("screening table is empty")
    return [
        row
        for row in table
        if row.accuracy > thresholds.min_accuracy and row.macro_f1 > thresholds.min_f1
    ]


@dataclass
class ProtocolResult:
    schedule: Schedule
    backends: tuple[str, ...]
    grid: dict[str, list[Metrics]]
    config: dict

    def accuracy_series(self, backend: str) -> list[float]:
        return [m.accuracy for m in self.grid[backend]]

    def mean_accuracy(self) -> list[float]:
        cols = np.array([[m.accuracy for m in self.grid[b]] for b in self.backends])
        return [float(v) for v in cols.mean(axis=0)]

    def std_accuracy(self) -> list[float]:
        cols = np.array([[m.accuracy for m in self.grid[b]] for b in self.backends])
        if cols.shape[0] < 2:
            return [0.0] * cols.shape[1]
        return [float(v) for v in cols.std(axis=0, ddof=1)]

    def to_json(self) -> dict:
        return {
            "direction": self.schedule.direction,
            "train_day": self.schedule.train_day,
            "train_set": self.schedule.train_set,
            "test_sessions": [list(s) for s in self.schedule.test_sessions],
            "day_offsets": list(self.schedule.day_offsets()),
            "models": {
                b: {
                    "accuracy": [m.accuracy for m in self.grid[b]],
                    "macro_f1": [m.macro_f1 for m in self.grid[b]],
                }
                for b in self.backends
            },
            "means": self.mean_accuracy(),
            "std": self.std_accuracy(),
            "config": self.config,
        }


def run_protocol(
    store: CropStore,
    schedule: Schedule,
    backends: Sequence[str],
    hp: Hyperparams,
    pretrained_weights: bool = True,
) -> ProtocolResult:
    """Train per backend on the schedule's session and evaluate along it.

    Every (train, test) pair must pass the temporal-segregation check before
    any evaluation happens; a shared hash or session aborts the run.
    """
    manifest = store.manifest
    train_records = usable_records(
        manifest, day=schedule.train_day, set_=schedule.train_set, stage="enhanced"
    )
    if not train_records:
        raise ValidationError(
            f"no usable enhanced crops in training session "
            f"(day={schedule.train_day}, set={schedule.train_set})"
        )
    train_manifest = manifest.subset(train_records)
    test_manifests = []
    for day, set_ in schedule.test_sessions:
        recs = usable_records(manifest, day=day, set_=set_, stage="enhanced")
        if not recs:
            raise ValidationError(f"no usable enhanced crops in test session (day={day}, set={set_})")
        test_manifest = manifest.subset(recs)
        report = verify_segregation(train_manifest, test_manifest)
        if not report.passed:
            raise LeakageError(
                f"temporal leakage between training session "
                f"(day={schedule.train_day}, set={schedule.train_set}) and test session "
                f"(day={day}, set={set_}): {report.summary()}",
                report=report,
            )
        test_manifests.append(test_manifest)

    train_set = CropSet(
        images=[store.image(r.crop_id) for r in train_records], records=train_records
    )
    grid: dict[str, list[Metrics]] = {}
    for backend in backends:
        clf = train(train_set, backend, hp, pretrained_weights=pretrained_weights)
        row = []
        for test_manifest in test_manifests:
            test_set = CropSet(
                images=[store.image(r.crop_id) for r in test_manifest.records],
                records=test_manifest.records,
            )
            row.append(evaluate(clf, test_set))
        grid[backend] = row
    return ProtocolResult(
        schedule=schedule,
        backends=tuple(backends),
        grid=grid,
        config={"hyperparams": hp.to_json(), "pretrained_weights": pretrained_weights},
    )


@dataclass
class DirectionComparison:
    forward_means: tuple[float, ...]
    backward_means: tuple[float, ...]
    forward_std: tuple[float, ...]
    backward_std: tuple[float, ...]
    t_stat: float
    p_value: float
    df: float
    alpha: float
    decision: str

    def to_json(self) -> dict:
        return {
            "forward": {"means": list(self.forward_means), "std": list(self.forward_std)},
            "backward": {"means": list(self.backward_means), "std": list(self.backward_std)},
            "t_stat": self.t_stat,
            "p_value": self.p_value,
            "df": self.df,
            "alpha": self.alpha,
            "decision": self.decision,
        }


@dataclass(frozen=True)
class GridData:
    """Direction-agnostic view of one evaluation grid (result or JSON)."""

    models: tuple[str, ...]
    accuracy: dict[str, tuple[float, ...]]
    means: tuple[float, ...]
    std: tuple[float, ...]
    day_offsets: tuple[int, ...]
    test_days: tuple[int, ...]
    config: dict


def as_grid(obj) -> GridData:
    if isinstance(obj, GridData):
        return obj
    if isinstance(obj, ProtocolResult):
        obj = obj.to_json()
    models = tuple(sorted(obj["models"]))
    return GridData(
        models=models,
        accuracy={m: tuple(obj["models"][m]["accuracy"]) for m in models},
        means=tuple(obj["means"]),
        std=tuple(obj["std"]),
        day_offsets=tuple(obj.get("day_offsets", range(1, len(obj["means"]) + 1))),
        test_days=tuple(day for day, _ in obj.get("test_sessions", [])) or
        tuple(obj.get("day_offsets", range(1, len(obj["means"]) + 1))),
        config=obj.get("config", {}),
    )


def compare_directions(
    forward,
    backward,
    alpha: float = 0.05,
    welch: bool = False,
    out_dir: str | Path | None = None,
) -> DirectionComparison:
    """T-test the per-offset mean accuracies of the two directions.

    Accepts ProtocolResult objects or their JSON form. When ``out_dir`` is
    given, a JSON report, a grid CSV and one SVG accuracy chart per model are
    written there.
    """
    fwd = as_grid(forward)
    bwd = as_grid(backward)
    if fwd.models != bwd.models:
        raise ValidationError(f"model sets differ: {fwd.models} vs {bwd.models}")
    if len(fwd.means) != len(bwd.means):
        raise ValidationError(
            f"offset counts differ: {len(fwd.means)} vs {len(bwd.means)}"
        )
    result: TTestResult = ttest_two_sample(list(fwd.means), list(bwd.means), welch=welch)
    decision = (
        "no significant difference" if result.p_value > alpha else "significant difference"
    )
    comparison = DirectionComparison(
        forward_means=fwd.means,
        backward_means=bwd.means,
        forward_std=fwd.std,
        backward_std=bwd.std,
        t_stat=result.t_stat,
        p_value=result.p_value,
        df=result.df,
        alpha=alpha,
        decision=decision,
    )
    if out_dir is not None:
        from .reports import write_comparison_reports

        write_comparison_reports(comparison, fwd, bwd, out_dir, welch=welch)
    return comparison
