from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy.stats import norm

from app.services import experiment
from app.services.errors import ConfigValidationError
from app.services.experiment import (
    MANIFEST_NAME,
    PARTIAL_MARKER,
    ExperimentConfig,
    collect_violations,
    load_config,
    mean_size_experiment,
    run_experiment,
)
from app.services.exit_times import ExitMode
from app.services.ldp import ControlFunction
from app.services.storage import read_header, write_control_csv, write_fields_csv
from app.services.weighted_space import Field


def with_run(cfg: ExperimentConfig, **run) -> ExperimentConfig:
    return cfg.model_copy(update={"run": cfg.run.model_copy(update=run)})


def test_load_config_file_and_overrides(tmp_path: Path) -> None:
    ini = tmp_path / "exp.ini"
    ini.write_text(
        "[model]\nkind = fvp\n\n[solver]\nepsilon = 0.3\n\n[constants]\nM = 2.5\n\n"
        "[run]\neps_list = 0.8, 0.4, 0.2\n",
        encoding="utf-8",
    )
    cfg = load_config(str(ini), ["solver.epsilon=0.2", "constants.K3=0.1"])
    assert cfg.model.kind.value == "fvp"
    assert cfg.solver.epsilon == 0.2
    assert cfg.bounds.overrides == {"M": 2.5, "K3": 0.1}
    assert cfg.run.eps_list == [0.8, 0.4, 0.2]
    grid = cfg.grid_spec()
    assert (grid.a_min, grid.a_max) == (0.0, 1.0)


def test_load_config_errors(tmp_path: Path) -> None:
    with pytest.raises(ConfigValidationError):
        load_config(str(tmp_path / "missing.ini"))
    with pytest.raises(ConfigValidationError):
        load_config(None, ["no-section"])
    with pytest.raises(ConfigValidationError):
        load_config(None, ["model.kind=galton_watson"])


def test_all_violations_are_reported(small_config: ExperimentConfig) -> None:
    bad = small_config.model_copy(update={
        "exit": small_config.exit.model_copy(update={"T": 2.0, "delta0": 0.8}),
        "bounds": small_config.bounds.model_copy(update={"k": 6}),
    })
    errors = collect_violations(bad)
    assert len(errors) >= 3
    assert any("T ≤ t_end" in e for e in errors)
    assert any("bounds.k" in e for e in errors)
    assert any("delta0 < r" in e for e in errors)


def test_stability_is_checked_up_front(small_config: ExperimentConfig) -> None:
    coarse = small_config.model_copy(update={"grid": small_config.grid.model_copy(update={"nt": 4})})
    with pytest.raises(ConfigValidationError) as info:
        run_experiment(coarse)
    assert any("dt/dx²" in e for e in info.value.errors)
    assert not Path(coarse.run.output_dir).exists()


def test_command_specific_checks(small_config: ExperimentConfig) -> None:
    assert any("eps_list" in e for e in collect_violations(
        with_run(small_config, command="ldp-scan", eps_list=[0.1, 0.2])))
    assert any("path_file" in e for e in collect_violations(with_run(small_config, command="rate-eval")))
    assert any("control_file" in e for e in collect_violations(with_run(small_config, command="skeleton")))
    assert any("run.times" in e for e in collect_violations(
        with_run(small_config, command="mean-size", times=[0.25, 1.0])))


def test_population_radius_must_fit_grid(small_config: ExperimentConfig) -> None:
    wide = small_config.model_copy(update={
        "exit": small_config.exit.model_copy(update={"r": 10.0, "mode": ExitMode.POPULATION_EXIT}),
    })
    assert any("sortie de population" in e for e in collect_violations(wide))
    assert not any("sortie de population" in e for e in collect_violations(small_config))


def test_config_hash_ignores_placement(small_config: ExperimentConfig, tmp_path: Path) -> None:
    moved = with_run(small_config, output_dir=str(tmp_path / "elsewhere"), workers=3)
    reseeded = with_run(small_config, seed=8)
    assert moved.config_hash() == small_config.config_hash()
    assert reseeded.config_hash() != small_config.config_hash()


def test_simulate_writes_manifest(small_config: ExperimentConfig) -> None:
    manifest = run_experiment(small_config)
    out = Path(small_config.run.output_dir)
    assert set(manifest.outputs) == {"fields.csv", "norms.csv"}
    saved = json.loads((out / MANIFEST_NAME).read_text(encoding="utf-8"))
    assert saved["config_hash"] == small_config.config_hash()
    assert saved["stream_algorithm"] == "philox4x64-10"
    assert read_header(out / "norms.csv")["config_hash"] == manifest.config_hash
    norms = pd.read_csv(out / "norms.csv", comment="#")
    assert sorted(norms["replica"].unique()) == [0, 1, 2, 3]
    assert not (out / PARTIAL_MARKER).exists()


def test_runs_are_reproducible(small_config: ExperimentConfig, tmp_path: Path) -> None:
    first = run_experiment(small_config)
    second = run_experiment(with_run(small_config, output_dir=str(tmp_path / "again")))
    assert first.outputs == second.outputs


def test_binary_snapshots(small_config: ExperimentConfig) -> None:
    manifest = run_experiment(with_run(small_config, format="binary", replicas=2))
    assert {"path_r00000.bin", "path_r00001.bin", "norms.csv"} == set(manifest.outputs)


def test_exit_probability_pipeline(small_config: ExperimentConfig) -> None:
    run_experiment(with_run(small_config, command="exit-prob"))
    table = pd.read_csv(Path(small_config.run.output_dir) / "exit_prob.csv", comment="#")
    assert 0.0 <= table.loc[0, "p_hat"] <= 1.0
    assert table.loc[0, "replicas"] + table.loc[0, "failed_replicas"] == 4


def test_bounds_pipeline(small_config: ExperimentConfig) -> None:
    manifest = run_experiment(with_run(small_config, command="bounds"))
    table = pd.read_csv(Path(small_config.run.output_dir) / "bounds.csv", comment="#")
    assert len(table) == 1
    assert table.loc[0, "rate_label"] == "user_supplied"
    assert 0.0 <= table.loc[0, "J"] <= 1.0
    assert table.loc[0, "thm1_lower"] == pytest.approx(np.exp(-9.0))
    assert manifest.constants is not None and "C1" in manifest.constants
    assert manifest.status == ("vacuous" if manifest.vacuous_only else "ok")


def test_sweep_pipeline(small_config: ExperimentConfig) -> None:
    cfg = with_run(small_config, command="sweep", r_list=[0.5, 1.0], eps_sweep=[0.1, 0.05], T_list=[0.5])
    run_experiment(cfg)
    table = pd.read_csv(Path(cfg.run.output_dir) / "sweep.csv", comment="#")
    assert len(table) == 4
    assert set(table["r"]) == {0.5, 1.0}


def test_skeleton_and_rate_eval(small_config: ExperimentConfig, tmp_path: Path) -> None:
    grid = small_config.grid_spec()
    control = write_control_csv(tmp_path / "h.csv", ControlFunction(np.zeros((grid.nt, grid.na)), grid))
    run_experiment(with_run(small_config, command="skeleton", control_file=str(control)))
    skeleton = pd.read_csv(Path(small_config.run.output_dir) / "skeleton_rate.csv", comment="#")
    assert skeleton.loc[0, "rate_spde"] == 0.0
    assert skeleton.loc[0, "steps"] == grid.nt

    fields = [Field(values=norm.cdf(grid.nodes, scale=np.sqrt(1.0 + t)), grid=grid, time=t)
              for t in np.linspace(0.0, 0.5, 11)]
    path_file = write_fields_csv(tmp_path / "path.csv", fields)
    out = tmp_path / "rate"
    run_experiment(with_run(small_config, command="rate-eval", path_file=str(path_file),
                            control_file=str(control), output_dir=str(out)))
    rate = pd.read_csv(out / "rate_eval.csv", comment="#")
    assert bool(rate.loc[0, "admissible"])
    assert rate.loc[0, "value"] < 0.05
    assert rate.loc[0, "rate_spde"] == 0.0


def test_failure_leaves_partial_marker(small_config: ExperimentConfig, tmp_path: Path) -> None:
    cfg = with_run(small_config, command="rate-eval", path_file=str(tmp_path / "absent.csv"))
    with pytest.raises(Exception):
        run_experiment(cfg)
    out = Path(cfg.run.output_dir)
    assert (out / PARTIAL_MARKER).exists()
    assert not (out / MANIFEST_NAME).exists()


def test_mean_size_experiment(small_config: ExperimentConfig) -> None:
    cfg = with_run(small_config, command="mean-size", times=[0.25, 0.5], replicas=3)
    frame = mean_size_experiment(cfg)
    assert list(frame["t"]) == [0.25, 0.5]
    assert (frame["mean_norm_sq"] > 0).all()
    assert frame.attrs["failed_replicas"] == 0
    assert np.isnan(frame.attrs["growth_exponent"])
    assert frame["rhs"].notna().all()


def test_mean_size_constants_use_run_workers(small_config: ExperimentConfig,
                                              monkeypatch: pytest.MonkeyPatch) -> None:
    seen = {}
    original = experiment.build_constants

    def spy(*args, **kwargs):
        seen["workers"] = kwargs.get("workers")
        return original(*args, **kwargs)

    monkeypatch.setattr(experiment, "build_constants", spy)
    mean_size_experiment(with_run(small_config, command="mean-size", times=[0.5], replicas=2, workers=1))
    assert seen["workers"] == 1


def test_sweep_marks_domination(small_config: ExperimentConfig) -> None:
    cfg = with_run(small_config, command="sweep", r_list=[1.0, 2.0], eps_sweep=[0.1], T_list=[0.5],
                   with_mc=True)
    run_experiment(cfg)
    table = pd.read_csv(Path(cfg.run.output_dir) / "sweep.csv", comment="#")
    assert {"p_hat", "std_err", "dominated"} <= set(table.columns)
    assert table["dominated"].all()


def acceptance_sweep(small_config: ExperimentConfig, r_list, eps_sweep) -> pd.DataFrame:
    cfg = with_run(small_config, command="sweep", r_list=r_list, eps_sweep=eps_sweep, T_list=[0.5],
                   with_mc=True, replicas=2000)
    cfg = cfg.model_copy(update={"grid": cfg.grid.model_copy(update={"a_min": -4.0, "a_max": 4.0, "na": 128})})
    run_experiment(cfg)
    return pd.read_csv(Path(cfg.run.output_dir) / "sweep.csv", comment="#")


@pytest.mark.slow
def test_bound_dominates_monte_carlo(small_config: ExperimentConfig) -> None:
    table = acceptance_sweep(small_config, [0.3, 0.5, 1.0, 2.0], [0.4, 0.2, 0.1, 0.05, 0.025])
    assert len(table) == 20
    informative = table[~table["J_trivial"] & (table["J"] < 1.0)]
    assert (informative["p_hat"] <= informative["J"] + 2 * informative["std_err"]).all()


@pytest.mark.slow
def test_attraction_sandwich(small_config: ExperimentConfig) -> None:
    table = acceptance_sweep(small_config, [0.3, 0.5], [0.4, 0.2, 0.1, 0.05, 0.025])
    upper = table["p_hat"] + 2 * table["std_err"]
    assert (table["thm2_lower"] <= upper).all()
    assert (upper <= table["thm2_upper"] + 4 * table["std_err"]).all()
