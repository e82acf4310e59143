"""Published reference numbers used as regression fixtures.

SCREENING_TABLE holds same-day replicate screening metrics for the
17-backbone zoo as (backend, accuracy, macro_f1), already sorted by accuracy.
FORWARD_GRID / BACKWARD_GRID hold the per-day accuracies of the seven
selected backbones (forward: test days 2..5; backward: test days 4..1), and
the *_MEANS / *_STD rows are the published two-decimal aggregate rows.
"""

SCREENING_TABLE = [
    ("regnet_y_3_2gf", 0.5342, 0.4791),
    ("shufflenet_v2_x2_0", 0.4769, 0.4311),
    ("mnasnet0_75", 0.4651, 0.4180),
    ("densenet121", 0.4618, 0.3832),
    ("googlenet", 0.4448, 0.3821),
    ("mnasnet1_3", 0.4428, 0.3667),
    ("regnet_y_400mf", 0.4216, 0.3679),
    ("densenet201", 0.4044, 0.3472),
    ("efficientnet_v2_s", 0.3953, 0.3576),
    ("resnet18", 0.3937, 0.3299),
    ("shufflenet_v2_x1_0", 0.3584, 0.3028),
    ("mobilenet_v3_small", 0.3524, 0.3572),
    ("efficientnet_b0", 0.3343, 0.3072),
    ("resnext50_32x4d", 0.3303, 0.2972),
    ("mobilenet_v3_large", 0.3210, 0.2732),
    ("swin_v2_s", 0.2928, 0.2440),
    ("squeezenet1_1", 0.2670, 0.2082),
]

SELECTED_BACKBONES = [
    "regnet_y_3_2gf",
    "shufflenet_v2_x2_0",
    "mnasnet0_75",
    "densenet121",
    "googlenet",
    "mnasnet1_3",
    "regnet_y_400mf",
]

# Per-model accuracy by test day: forward columns are days 2, 3, 4, 5 after
# training on day 1; backward columns are days 4, 3, 2, 1 after training on
# day 5.
FORWARD_GRID = {
    "densenet121": [0.33, 0.26, 0.24, 0.17],
    "googlenet": [0.26, 0.23, 0.19, 0.21],
    "mnasnet0_75": [0.25, 0.29, 0.15, 0.17],
    "mnasnet1_3": [0.37, 0.35, 0.35, 0.15],
    "regnet_y_400mf": [0.36, 0.37, 0.23, 0.22],
    "regnet_y_3_2gf": [0.36, 0.39, 0.30, 0.30],
    "shufflenet_v2_x2_0": [0.39, 0.39, 0.25, 0.22],
}

BACKWARD_GRID = {
    "densenet121": [0.33, 0.22, 0.23, 0.10],
    "googlenet": [0.32, 0.20, 0.14, 0.11],
    "mnasnet0_75": [0.24, 0.15, 0.28, 0.08],
    "mnasnet1_3": [0.35, 0.26, 0.26, 0.17],
    "regnet_y_400mf": [0.28, 0.29, 0.23, 0.24],
    "regnet_y_3_2gf": [0.35, 0.32, 0.38, 0.34],
    "shufflenet_v2_x2_0": [0.29, 0.27, 0.29, 0.17],
}

PUBLISHED_FORWARD_MEANS = [0.33, 0.33, 0.24, 0.20]
PUBLISHED_BACKWARD_MEANS = [0.31, 0.24, 0.26, 0.17]
PUBLISHED_FORWARD_STD = [0.06, 0.07, 0.07, 0.05]
PUBLISHED_BACKWARD_STD = [0.04, 0.06, 0.07, 0.09]

FORWARD_TEST_DAYS = [2, 3, 4, 5]
BACKWARD_TEST_DAYS = [4, 3, 2, 1]


def grid_as_eval_json(grid: dict, train_day: int, test_days: list[int]) -> dict:
    """Shape a fixture grid like an eval artifact for the comparison API."""
    import numpy as np

    rows = np.array([grid[m] for m in sorted(grid)])
    means = rows.mean(axis=0)
    std = rows.std(axis=0, ddof=1)
    return {
        "direction": "forward" if test_days[0] > train_day else "backward",
        "train_day": train_day,
        "train_set": 1,
        "test_sessions": [[d, 1] for d in test_days],
        "day_offsets": [abs(d - train_day) for d in test_days],
        "models": {
            m: {"accuracy": list(map(float, grid[m])), "macro_f1": []} for m in grid
        },
        "means": [float(v) for v in means],
        "std": [float(v) for v in std],
        "config": {},
    }
