import json

import numpy as np
import pytest

import eirm


def test_benchmark_shapes_and_labels():
    bench = eirm.make_benchmark("COLORED_SHAPES", [100, 100, 50], seed=3)
    assert len(bench.train_envs) == 2
    env = bench.train_envs[0]
    assert env.features.shape == (100, 16 * 16 * 3)
    assert set(np.unique(env.labels)) <= {0, 1}
    assert env.spurious_bits.shape == (100,)
    assert bench.oracle_env.features.shape == (200, 256)
    assert len(bench.test_env) == 50


def test_synth_shapes_balanced_binary_images():
    images, labels = eirm.synth_shapes(10, seed=1)
    assert images.shape == (10, 256)
    assert set(np.unique(images)) <= {0.0, 1.0}
    assert labels.sum() == 5


def test_grid_shared_minimizer_and_split():
    shared = eirm.scalar_game_grid(0.5, 0.5, bound=1.0, step=0.1)
    assert shared["equal"]
    assert shared["ne_ensemble_values"] == pytest.approx([0.5])
    split = eirm.scalar_game_grid(0.0, 1.0)
    assert split["invariant_values"] == []
    assert split["ne_boundary_only"] == "true"


def test_bounded_ne():
    ne = eirm.bounded_linear_ne(0.3, 0.3, bound=1.0)
    assert ne["invariant"]
    assert ne["ensemble"] == pytest.approx(0.3)


def test_sem_certificate():
    report = eirm.sem_nash_check(seed=0, turns=3000)
    assert report["pass"]
    assert np.max(np.abs(np.array(report["coefficients"][:2]) - report["gamma"])) < 0.05


def test_termination_monitor_square_wave():
    monitor = eirm.TerminationMonitor(warm_start=0)
    fired = [s for s in range(1, 60) if monitor.update(0.88 if s % 2 == 0 else 0.75, s)]
    assert fired and fired[0] >= 20
    assert all(s % 2 == 1 for s in fired)


def test_config_error_names_field():
    with pytest.raises(eirm.ConfigError, match="train.lr"):
        eirm.run_experiment(json.dumps({"train": {"lr": "fast"}}))


def test_small_experiment(tmp_path):
    config = {
        "methods": ["ERM", "F_IRM"],
        "n_seeds": 1,
        "data": {"sizes": [100, 100, 100]},
        "arch": {"hidden": [8]},
        "train": {"max_iters": 20},
    }
    runs = eirm.run_experiment(json.dumps(config), "desk", str(tmp_path))
    assert [r["method"] for r in runs] == ["ERM", "F_IRM"]
    assert (tmp_path / "results.csv").exists()
    assert json.loads(eirm.preset_config("desk"))["n_seeds"] == 3
