"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s``. The direction-symmetry
check is the long one (tens of minutes on CPU); deselect with
``-m "not slow"`` during development.
"""

import json
import shutil
import socket
import subprocess
import threading
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import scipy.integrate
import scipy.stats

from retroid.align import align_crop, source_to_crop
from retroid.clahe import ClaheConfig, _tile_luts_and_centers, clahe, clip_histogram, global_he
from retroid.cli import dispatch
from retroid.data import CropSet, CropStore
from retroid.errors import LeakageError
from retroid.harness import Hyperparams, Metrics, compute_metrics, train
from retroid.pipeline import build_enhanced_dataset
from retroid.protocol import (
    ProtocolResult,
    Schedule,
    SelectionThresholds,
    build_schedule,
    compare_directions,
    rank_screen_results,
    run_protocol,
    select_models,
)
from retroid.qc import apply_decisions, create_app
from retroid.stats import ttest_two_sample, two_tailed_p

from conftest import make_manifest, make_record
from fixtures import (
    BACKWARD_GRID,
    BACKWARD_TEST_DAYS,
    FORWARD_GRID,
    FORWARD_TEST_DAYS,
    PUBLISHED_BACKWARD_MEANS,
    PUBLISHED_BACKWARD_STD,
    PUBLISHED_FORWARD_MEANS,
    PUBLISHED_FORWARD_STD,
    SCREENING_TABLE,
    SELECTED_BACKBONES,
)


@contextmanager
def criterion(name):
    start = time.time()
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {name}: FAIL ({time.time() - start:.1f}s)")
        raise
    print(f"\nACCEPTANCE {name}: PASS ({time.time() - start:.1f}s)")


# --------------------------------------------------------------------------
# criterion 1: screening-fixture selection


def test_screening_fixture_selection():
    with criterion("screening-fixture selection"):
        table = rank_screen_results({name: (acc, f1) for name, acc, f1 in SCREENING_TABLE})
        chosen = select_models(table, SelectionThresholds(0.40, 0.35))
        assert [row.backend for row in chosen] == SELECTED_BACKBONES
        assert len(chosen) == 7
        excluded = {row.backend for row in table} - {row.backend for row in chosen}
        assert "densenet201" in excluded  # accuracy clears 0.40; F1 0.3472 does not


# --------------------------------------------------------------------------
# criterion 2: published-grid statistics


def _grid_to_result(grid: dict, train_day: int, test_days: list[int], direction: str) -> ProtocolResult:
    """Wrap a fixture accuracy grid in the production aggregation type."""
    schedule = Schedule(
        train_day=train_day,
        train_set=1,
        direction=direction,
        test_sessions=tuple((d, 1) for d in test_days),
    )
    cells = {
        model: [
            Metrics(accuracy=a, macro_f1=0.0, confusion=np.zeros((1, 1), dtype=np.int64),
                    n_samples=1)
            for a in series
        ]
        for model, series in grid.items()
    }
    return ProtocolResult(schedule=schedule, backends=tuple(sorted(grid)), grid=cells, config={})


def test_published_grid_statistics():
    """Aggregates of the published per-model grid against its printed rows.

    The forward day-5 cell of the printed grid averages to 0.2057, which
    displays as 0.21, not the published 0.20 (the published mean row was
    computed from unrounded per-model accuracies that are not available).
    This assertion is kept as stated and fails on that single cell; see the
    companion test below for the fully reproducible remainder.
    """
    with criterion("published-grid statistics (verbatim mean rows)"):
        fwd = _grid_to_result(FORWARD_GRID, 1, FORWARD_TEST_DAYS, "forward")
        bwd = _grid_to_result(BACKWARD_GRID, 5, BACKWARD_TEST_DAYS, "backward")
        result = ttest_two_sample(PUBLISHED_FORWARD_MEANS, PUBLISHED_BACKWARD_MEANS)
        assert abs(result.t_stat - 0.685) < 0.005
        assert abs(result.p_value - 0.519) < 0.005
        assert result.p_value > 0.05  # no significant difference at alpha=0.05
        assert [f"{v:.2f}" for v in bwd.mean_accuracy()] == [
            f"{v:.2f}" for v in PUBLISHED_BACKWARD_MEANS
        ]
        assert [f"{v:.2f}" for v in fwd.mean_accuracy()] == [
            f"{v:.2f}" for v in PUBLISHED_FORWARD_MEANS
        ]


def test_published_grid_statistics_reproducible_part():
    """Everything in the fixture grids that is arithmetically reproducible."""
    with criterion("published-grid statistics (reproducible checks)"):
        fwd = _grid_to_result(FORWARD_GRID, 1, FORWARD_TEST_DAYS, "forward")
        bwd = _grid_to_result(BACKWARD_GRID, 5, BACKWARD_TEST_DAYS, "backward")
        # 7 of 8 mean cells reproduce; the forward day-5 mean is 0.2057 -> "0.21".
        assert [f"{v:.2f}" for v in fwd.mean_accuracy()] == ["0.33", "0.33", "0.24", "0.21"]
        assert [f"{v:.2f}" for v in bwd.mean_accuracy()] == [
            f"{v:.2f}" for v in PUBLISHED_BACKWARD_MEANS
        ]
        # all eight sample-std cells reproduce at display precision
        assert [f"{v:.2f}" for v in fwd.std_accuracy()] == [
            f"{v:.2f}" for v in PUBLISHED_FORWARD_STD
        ]
        assert [f"{v:.2f}" for v in bwd.std_accuracy()] == [
            f"{v:.2f}" for v in PUBLISHED_BACKWARD_STD
        ]
        # the published conclusion holds for the published mean rows
        result = ttest_two_sample(PUBLISHED_FORWARD_MEANS, PUBLISHED_BACKWARD_MEANS)
        assert abs(result.t_stat - 0.685) < 0.005
        assert abs(result.p_value - 0.519) < 0.005
        comparison = compare_directions(fwd, bwd)
        assert comparison.decision == "no significant difference"


# --------------------------------------------------------------------------
# criterion 3: t-distribution correctness


def _t_pdf(x, df):
    import math

    return (
        math.gamma((df + 1) / 2)
        / (math.sqrt(df * math.pi) * math.gamma(df / 2))
        * (1 + x * x / df) ** (-(df + 1) / 2)
    )


def test_t_cdf_correctness():
    with criterion("t-CDF correctness"):
        rng = np.random.default_rng(2026)
        for _ in range(200):
            t = float(rng.uniform(-8, 8))
            df = int(rng.integers(1, 51))
            p = two_tailed_p(t, df)
            tail, _ = scipy.integrate.quad(_t_pdf, abs(t), np.inf, args=(df,))
            assert abs(p - 2 * tail) < 1e-6
        assert abs(two_tailed_p(0.0, 6) - 1.0) < 1e-9
        assert abs(two_tailed_p(1.0, 1) - 0.5) < 1e-9


# --------------------------------------------------------------------------
# criterion 4: contrast-enhancement oracle suite


def test_clahe_oracle_suite():
    with criterion("contrast-enhancement oracle suite"):
        rng = np.random.default_rng(7)
        # constant-image identity
        for value in (0, 77, 255):
            img = np.full((64, 64), value, dtype=np.uint8)
            assert np.array_equal(clahe(img, ClaheConfig(grid=(4, 4))), img)
        # single-tile, non-binding clip reduces to plain equalisation bit-exactly
        cfg = ClaheConfig(grid=(1, 1), clip_limit=1e9)
        for _ in range(50):
            shape = (int(rng.integers(16, 96)), int(rng.integers(16, 96)))
            img = np.clip(rng.normal(128, 40, shape), 0, 255).astype(np.uint8)
            assert np.array_equal(clahe(img, cfg), global_he(img))
        # clipping conserves counts exactly
        for _ in range(1000):
            hist = rng.integers(0, 400, 256)
            clip_abs = int(rng.integers(1, 220))
            out = clip_histogram(hist, clip_abs)
            assert int(out.sum()) == int(hist.sum())
        # per-tile mappings are monotone
        for _ in range(10):
            img = np.clip(rng.normal(120, 35, (64, 64)), 0, 255).astype(np.uint8)
            luts, _, _ = _tile_luts_and_centers(img, ClaheConfig(grid=(4, 4), clip_limit=2.0))
            assert (np.diff(luts.reshape(-1, 256), axis=1) >= 0).all()


# --------------------------------------------------------------------------
# criterion 5: alignment equivariance


def test_alignment_equivariance():
    import cv2
    import math

    from retroid.synth import DriftConfig, individual_day_params, render_individual

    with criterion("alignment equivariance"):
        cfg = DriftConfig(num_individuals=4, num_days=2, images_per_session=1,
                          seed=17, frame_size=(768, 768))
        rng = np.random.default_rng(99)
        worst_diff = 0.0
        worst_angle = 0.0
        for i in range(100):
            params = individual_day_params(cfg, i % 4, 1 + i % 2)
            frame, det = render_individual(
                params, rng, frame_size=(768, 768), position=(384.0, 384.0)
            )
            phi = float(rng.uniform(-180.0, 180.0))
            center = det.body.center
            matrix = cv2.getRotationMatrix2D(center, -phi, 1.0)
            rotated = cv2.warpAffine(
                frame, matrix, (768, 768), flags=cv2.INTER_LINEAR,
                borderMode=cv2.BORDER_REPLICATE,
            )

            def rot(point):
                th = math.radians(phi)
                dx, dy = point[0] - center[0], point[1] - center[1]
                return (
                    center[0] + math.cos(th) * dx - math.sin(th) * dy,
                    center[1] + math.sin(th) * dx + math.cos(th) * dy,
                )

            from retroid.align import Box, Detection

            def rotated_box(box):
                cx, cy = rot(box.center)
                return Box(cx - box.w / 2, cy - box.h / 2, box.w, box.h, box.confidence)

            det_rot = Detection(
                frame_index=det.frame_index,
                body=Box(center[0] - det.body.w / 2, center[1] - det.body.h / 2,
                         det.body.w, det.body.h, 1.0),
                head=rotated_box(det.head),
                abdomen=rotated_box(det.abdomen),
            )
            crop_a = align_crop(frame, det, crop_px=288, out_px=96)
            crop_b = align_crop(rotated, det_rot, crop_px=288, out_px=96)
            diff = float(
                np.abs(crop_a.pixels.astype(np.float64) - crop_b.pixels.astype(np.float64)).mean()
            ) / 255.0
            worst_diff = max(worst_diff, diff)
            assert diff < 3 / 255
            for crop in (crop_a, crop_b):
                tp = crop.record.transform
                src_det = det if crop is crop_a else det_rot
                h2 = source_to_crop(tp, src_det.head.center)
                a2 = source_to_crop(tp, src_det.abdomen.center)
                angle = math.degrees(math.atan2(h2[0] - a2[0], -(h2[1] - a2[1])))
                worst_angle = max(worst_angle, abs(angle))
                assert abs(angle) < 2.0
        print(f"\n  worst mean-abs diff {worst_diff * 255:.3f}/255, worst angle {worst_angle:.3f} deg")


# --------------------------------------------------------------------------
# criterion 6: leakage guard


def test_leakage_guard_aborts_with_hash():
    with criterion("leakage guard"):
        rng = np.random.default_rng(0)
        records, images = [], {}
        for day in (1, 2):
            for ind, base in (("ind00", 60), ("ind01", 190)):
                for i in range(4):
                    img = np.clip(rng.normal(base, 5, (32, 32)), 0, 255).astype(np.uint8)
                    crop_id = f"{ind}_d{day}_f{i}"
                    from retroid.data import hash_image

                    records.append(
                        make_record(crop_id, individual=ind, day=day, frame_index=i,
                                    sha256=hash_image(img.tobytes()))
                    )
                    images[crop_id] = img
        # plant a byte-identical duplicate across the two days
        donor = records[0]
        victim = records[-1]
        planted = make_record(
            victim.crop_id, individual=victim.individual, day=victim.day,
            frame_index=victim.frame_index, sha256=donor.sha256,
        )
        images[victim.crop_id] = images[donor.crop_id]
        records[-1] = planted
        store = CropStore(make_manifest(records), images=images)
        with pytest.raises(LeakageError) as err:
            run_protocol(store, build_schedule(1, 1, 2, "forward"), ["nearest-centroid"],
                         Hyperparams(epochs=1))
        assert donor.sha256 in str(err.value)
        assert err.value.report.shared_hashes == (donor.sha256,)


# --------------------------------------------------------------------------
# criterion 7: direction symmetry at desk scale (the central hypothesis)


HYPOTHESIS_SEEDS = (100, 101, 102, 103, 104)


@pytest.mark.slow
def test_direction_symmetry_at_desk_scale():
    """Time-symmetric drift generator: accuracy declines with day offset in
    both directions, and the directions are statistically indistinguishable.

    Config tuned on measured curves (drift_rate 1.8, intra-session noise
    3.25): day-offset-4 accuracy lands at ~0.5 and same-day holdout at ~0.95
    (the closest jointly reachable point to the 0.9/0.5 guideline; pushing
    same-day lower drags offset-4 well under 0.5).
    """
    from retroid.synth import DriftConfig

    with criterion("direction symmetry at desk scale"):
        negative_trend = 0
        insignificant = 0
        for seed in HYPOTHESIS_SEEDS:
            cfg = DriftConfig(
                num_individuals=15, num_days=5, images_per_session=200,
                drift_rate=1.8, intra_session_noise=3.25, seed=seed,
                frame_size=(512, 384),
            )
            manifest, images = build_enhanced_dataset(cfg, crop_px=288, out_px=96)
            store = CropStore(manifest, images=images)
            hp = Hyperparams(epochs=12, batch_size=64, seed=seed)
            fwd = run_protocol(store, build_schedule(1, 1, 5, "forward"), ["small-cnn"], hp)
            bwd = run_protocol(store, build_schedule(5, 1, 5, "backward"), ["small-cnn"], hp)
            fa = fwd.accuracy_series("small-cnn")
            ba = bwd.accuracy_series("small-cnn")
            offsets = list(fwd.schedule.day_offsets())
            rho_f = scipy.stats.spearmanr(offsets, fa).statistic
            rho_b = scipy.stats.spearmanr(offsets, ba).statistic
            comparison = compare_directions(fwd, bwd)
            if rho_f < 0 and rho_b < 0:
                negative_trend += 1
            if comparison.p_value > 0.05:
                insignificant += 1
            print(
                f"\n  seed {seed}: fwd={[f'{a:.3f}' for a in fa]} "
                f"bwd={[f'{a:.3f}' for a in ba]} rho=({rho_f:.2f}, {rho_b:.2f}) "
                f"t={comparison.t_stat:.3f} p={comparison.p_value:.3f}"
            )
        assert negative_trend >= 4, f"declining trend in only {negative_trend}/5 seeds"
        assert insignificant >= 4, f"p > 0.05 in only {insignificant}/5 seeds"


# --------------------------------------------------------------------------
# criterion 8: metrics oracle


def test_metrics_oracle():
    with criterion("metrics oracle"):
        rng = np.random.default_rng(55)
        for _ in range(100):
            k = int(rng.integers(2, 10))
            n = int(rng.integers(1, 80))
            truth = rng.integers(0, k, n)
            preds = rng.integers(0, k, n)
            metrics = compute_metrics(truth, preds, k)
            correct = int((truth == preds).sum())
            assert abs(metrics.accuracy - correct / n) < 1e-12
            f1s = []
            for c in range(k):
                tp = int(((truth == c) & (preds == c)).sum())
                fp = int(((truth != c) & (preds == c)).sum())
                fn = int(((truth == c) & (preds != c)).sum())
                f1s.append(2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0)
            assert abs(metrics.macro_f1 - float(np.mean(f1s))) < 1e-12


# --------------------------------------------------------------------------
# criterion 9: end-to-end determinism


@pytest.mark.slow
def test_pipeline_determinism(tmp_path):
    with criterion("end-to-end determinism"):
        payloads = []
        for run in ("a", "b"):
            root = tmp_path / run
            assert dispatch([
                "synth", "--out", str(root / "ds"), "--seed", "31",
                "--individuals", "4", "--days", "3", "--images", "10",
            ]) == 0
            assert dispatch([
                "align", "--dataset", str(root / "ds"), "--out", str(root / "aligned"),
                "--crop-px", "288", "--out-px", "64",
            ]) == 0
            assert dispatch([
                "enhance", "--in", str(root / "aligned" / "manifest.jsonl"),
                "--out", str(root / "enhanced" / "manifest.jsonl"), "--grid", "4x4",
            ]) == 0
            assert dispatch([
                "train", "--manifest", str(root / "enhanced" / "manifest.jsonl"),
                "--day", "1", "--backend", "small-cnn", "--out", str(root / "model"),
                "--epochs", "4", "--seed", "31",
            ]) == 0
            assert dispatch([
                "eval", "--manifest", str(root / "enhanced" / "manifest.jsonl"),
                "--train-day", "1", "--direction", "forward", "--backend", "small-cnn",
                "--out", str(root / "eval.json"), "--epochs", "4", "--seed", "31",
            ]) == 0
            payloads.append((root / "eval.json").read_bytes())
            # deterministic stages are byte-identical too
        assert payloads[0] == payloads[1]
        a_manifest = (tmp_path / "a" / "enhanced" / "manifest.jsonl").read_bytes()
        b_manifest = (tmp_path / "b" / "enhanced" / "manifest.jsonl").read_bytes()
        assert a_manifest == b_manifest


# --------------------------------------------------------------------------
# secondary criterion: QC round trip through the browser frontend


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture
def qc_review_server(tmp_path):
    import uvicorn

    from retroid.data import encode_png, hash_image, write_manifest

    rng = np.random.default_rng(3)
    records = []
    crops_dir = tmp_path / "crops"
    crops_dir.mkdir()
    images = {}
    for ind, base in (("ind00", 60), ("ind01", 190)):
        for i in range(12):
            img = np.clip(rng.normal(base, 6, (32, 32)), 0, 255).astype(np.uint8)
            png = encode_png(img)
            crop_id = f"{ind}_f{i:02d}"
            (crops_dir / f"{crop_id}.png").write_bytes(png)
            records.append(
                make_record(crop_id, individual=ind, day=1, frame_index=i,
                            sha256=hash_image(png))
            )
            images[crop_id] = img
    manifest = make_manifest(records, image_root="crops")
    manifest_path = write_manifest(manifest, tmp_path / "manifest.jsonl")
    decisions_path = tmp_path / "decisions.jsonl"

    app = create_app(manifest_path, decisions_path)
    port = _free_port()
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("review service did not start")
        time.sleep(0.05)
    yield {
        "base_url": f"http://127.0.0.1:{port}",
        "manifest": manifest,
        "manifest_path": manifest_path,
        "decisions_path": decisions_path,
        "images": images,
    }
    server.should_exit = True
    thread.join(timeout=5)


def test_secondary_qc_round_trip(qc_review_server):
    frontend = Path(__file__).resolve().parent.parent / "frontend"
    node = shutil.which("node")
    assert node, "node is required for the frontend round-trip check"
    assert (frontend / "dist" / "state.js").exists(), (
        "frontend not built; run `npm run build` in frontend/"
    )
    with criterion("qc round trip via frontend"):
        keys = "kdskkdsdkkdsdkksdkdk"  # 20 keys: 9 keep, 7 discard, 4 skip
        proc = subprocess.run(
            [node, str(frontend / "scripts" / "triage-session.mjs"),
             qc_review_server["base_url"], "1", "1", keys, "acceptance"],
            capture_output=True, text=True, timeout=90,
        )
        assert proc.returncode == 0, proc.stderr
        summary = json.loads(proc.stdout)
        assert len(summary["actions"]) == 20
        assert summary["unsynced"] == 0

        posted = [a for a in summary["actions"] if a["action"] != "skip"]
        lines = [
            json.loads(line)
            for line in qc_review_server["decisions_path"].read_text().splitlines()
        ]
        assert [(l["crop_id"], l["status"]) for l in lines] == [
            (a["crop_id"], a["action"]) for a in posted
        ]
        assert all(l["reviewer"] == "acceptance" for l in lines)
        assert summary["counts"] == summary["remote"]

        applied = apply_decisions(qc_review_server["manifest"],
                                  qc_review_server["decisions_path"])
        discarded = {r.crop_id for r in applied.records if r.qc == "discard"}
        expected_discards = {a["crop_id"] for a in posted if a["action"] == "discard"}
        assert discarded == expected_discards

        from retroid.data import usable_records

        usable = usable_records(applied, day=1, set_=1, stage="enhanced")
        trained_ids = {r.crop_id for r in usable}
        assert trained_ids == {r.crop_id for r in applied.records} - discarded
        train_set = CropSet(
            images=[qc_review_server["images"][r.crop_id] for r in usable],
            records=usable,
        )
        clf = train(train_set, "nearest-centroid", Hyperparams(epochs=1))
        assert set(clf.labels) == {"ind00", "ind01"}
