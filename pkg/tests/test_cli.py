from __future__ import annotations

from pathlib import Path

import pytest

from app.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VACUOUS, EXIT_VALIDATION, collect_overrides, build_parser, main
from app.services.errors import ConfigValidationError
from app.services.experiment import MANIFEST_NAME, PARTIAL_MARKER

GRID = "32,64,64,-4:4"
SMALL = ["--set", "grid.t_end=0.5", "--T", "0.5", "--replicas", "2",
         "--workers", "1", "--r", "0.5"]


def test_flags_become_overrides() -> None:
    args = build_parser().parse_args(["bounds", "--epsilon", "0.05", "--set", "constants.M=2",
                                      "--grid", "64,128,256", "--with-mc"])
    items = collect_overrides(args)
    assert items[0] == "run.command=bounds"
    assert items[1] == "constants.M=2"
    assert "grid.nx=64" in items and "grid.nt=256" in items
    assert "solver.epsilon=0.05" in items
    assert "run.with_mc=true" in items


def test_malformed_grid_flag() -> None:
    args = build_parser().parse_args(["simulate", "--grid", "32,64"])
    with pytest.raises(ConfigValidationError):
        collect_overrides(args)
    assert main(["simulate", "--grid", "32,64"]) == EXIT_VALIDATION


def test_simulate_succeeds(tmp_path: Path) -> None:
    out = tmp_path / "sim"
    assert main(["simulate", "--out", str(out), "--seed", "3", "--grid", GRID, *SMALL]) == EXIT_OK
    assert (out / MANIFEST_NAME).exists()
    assert (out / "run.log").exists()


def test_invalid_configuration_exits_with_one(tmp_path: Path) -> None:
    out = tmp_path / "unstable"
    argv = ["simulate", "--out", str(out), "--grid", "32,64,4,-4:4", *SMALL]
    assert main(argv) == EXIT_VALIDATION
    assert not (out / MANIFEST_NAME).exists()


def test_runtime_failure_exits_with_two(tmp_path: Path) -> None:
    out = tmp_path / "broken"
    argv = ["rate-eval", "--out", str(out), "--path", str(tmp_path / "absent.csv"), "--grid", GRID, *SMALL]
    assert main(argv) == EXIT_RUNTIME
    assert (out / PARTIAL_MARKER).exists()


def test_vacuous_bounds_exit_with_three(tmp_path: Path) -> None:
    out = tmp_path / "vacuous"
    argv = ["bounds", "--out", str(out), "--grid", GRID, *SMALL, "--rate-inf", "1e6", "--rate-inf-ann", "1e6",
            "--set", "constants.C1=100", "--set", "constants.K5=1e6"]
    assert main(argv) == EXIT_VACUOUS
    assert (out / MANIFEST_NAME).exists()
