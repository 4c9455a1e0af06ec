import csv

import numpy as np
import pytest

from spinegrade.classifier import (DEFAULT_AXES, FINAL_VALUES, GridSpec, TrainConfig, grid_search,
                                   save_leaderboard)
from spinegrade.refine import RefineConfig


def data(seed, n, d=10):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 3
    X = rng.normal(size=(n, d))
    X[np.arange(n), y] += 3.0
    return X, y


FAST_REFINE = RefineConfig(T=3)


def test_default_grid_size():
    assert len(GridSpec()) == 4 * 3 * 3 * 4 * 3 * 4 == 1728
    assert len(GridSpec().points()) == 1728
    assert GridSpec.smoke().points() == [FINAL_VALUES]


def test_unknown_axis_rejected():
    with pytest.raises(ValueError):
        GridSpec({"momentum": [0.9]})
    with pytest.raises(ValueError):
        GridSpec({"learning_rate": []})


def test_single_point_grid():
    X, y = data(0, 60)
    Xv, yv = data(1, 30)
    grid = GridSpec({"learning_rate": [0.01], "epochs": [2]})
    res = grid_search(grid, X, y, Xv, yv, FAST_REFINE)
    assert res.best == {"learning_rate": 0.01, "epochs": 2}
    assert len(res.leaderboard) == 1 and res.leaderboard[0]["status"] == "ok"


def test_frozen_point_loses_to_working_point():
    X, y = data(0, 90)
    Xv, yv = data(1, 30)
    grid = GridSpec({"learning_rate": [0.0, 0.05], "epochs": [10]})
    res = grid_search(grid, X, y, Xv, yv, FAST_REFINE, TrainConfig(dropout_rate=0.0))
    assert res.best["learning_rate"] == 0.05
    losses = [r["val_loss"] for r in res.leaderboard]
    assert res.leaderboard[int(np.argmin(losses))]["learning_rate"] == 0.05


def test_ties_go_to_lexicographically_smaller_point():
    X, y = data(0, 60)
    Xv, yv = data(1, 30)
    # lr 0 freezes both points; batch size then cannot change the loss
    grid = GridSpec({"learning_rate": [0.0], "batch_size": [64, 16], "epochs": [1]})
    res = grid_search(grid, X, y, Xv, yv, FAST_REFINE)
    assert res.leaderboard[0]["val_loss"] == res.leaderboard[1]["val_loss"]
    assert res.best["batch_size"] == 16


def test_failed_point_is_marked_not_fatal(tmp_path):
    X, y = data(0, 60)
    Xv, yv = data(1, 30)
    # lambda 100 zeroes every gate so the reduced feature set is empty
    grid = GridSpec({"lam": [100.0, 1e-4], "epochs": [1]})
    res = grid_search(grid, X, y, Xv, yv, FAST_REFINE)
    statuses = [r["status"] for r in res.leaderboard]
    assert statuses[0].startswith("failed") and statuses[1] == "ok"
    assert res.best["lam"] == 1e-4
    save_leaderboard(tmp_path / "lb.csv", res.leaderboard, grid.names())
    rows = list(csv.DictReader(open(tmp_path / "lb.csv")))
    assert len(rows) == 2 and rows[0]["val_loss"] == "nan"


def test_refinement_reused_across_head_axes():
    X, y = data(0, 60)
    Xv, yv = data(1, 30)
    grid = GridSpec({"dropout_rate": [0.2, 0.5], "epochs": [1]})
    res = grid_search(grid, X, y, Xv, yv, FAST_REFINE)
    assert res.best_refine.config.lam == FAST_REFINE.lam
    assert len(res.leaderboard) == 2
