from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy.stats import norm

from app.services.errors import GridMismatchError
from app.services.ldp import ControlFunction
from app.services.storage import (
    fields_to_frame,
    file_checksum,
    read_control_csv,
    read_fields_csv,
    read_header,
    read_snapshot,
    write_control_csv,
    write_fields_csv,
    write_gnuplot_script,
    write_snapshot,
    write_table,
)
from app.services.weighted_space import Field, SpaceTimeGrid


@pytest.fixture
def fields(small_grid: SpaceTimeGrid) -> list:
    return [Field(values=norm.cdf(small_grid.nodes, scale=1.0 + t), grid=small_grid, time=t)
            for t in (0.0, 0.125, 0.25)]


def test_table_header(tmp_path: Path) -> None:
    path = write_table(tmp_path / "nested" / "table.csv", pd.DataFrame({"a": [1, 2]}),
                       {"config_hash": "abc", "stream": "philox4x64-10"})
    assert read_header(path) == {"config_hash": "abc", "stream": "philox4x64-10"}
    assert list(pd.read_csv(path, comment="#")["a"]) == [1, 2]


def test_fields_csv(tmp_path: Path, fields: list, small_grid: SpaceTimeGrid) -> None:
    path = write_fields_csv(tmp_path / "path.csv", fields, {"seed": 1})
    loaded, header = read_fields_csv(path)
    assert header["seed"] == "1"
    assert [f.time for f in loaded] == [0.0, 0.125, 0.25]
    assert loaded[0].grid.nx == small_grid.nx
    for a, b in zip(fields, loaded):
        np.testing.assert_allclose(a.values, b.values, rtol=1e-11, atol=1e-15)


def test_fields_csv_selects_replica(tmp_path: Path, fields: list, small_grid: SpaceTimeGrid) -> None:
    path = tmp_path / "replicas.csv"
    write_fields_csv(path, fields[:1], replica=0)
    shifted = [Field(values=f.values + 1.0, grid=f.grid, time=f.time) for f in fields[:1]]
    with open(path, "a", encoding="utf-8") as handle:
        fields_to_frame(shifted, replica=1).to_csv(handle, index=False, header=False)
    loaded, _ = read_fields_csv(path, grid=small_grid, replica=1)
    np.testing.assert_allclose(loaded[0].values, fields[0].values + 1.0, rtol=1e-11)


def test_fields_csv_missing_columns(tmp_path: Path) -> None:
    path = tmp_path / "bad.csv"
    pd.DataFrame({"t": [0.0], "x": [1.0]}).to_csv(path, index=False)
    with pytest.raises(GridMismatchError):
        read_fields_csv(path)


def test_snapshot(tmp_path: Path, fields: list, small_grid: SpaceTimeGrid) -> None:
    path = write_snapshot(tmp_path / "path.bin", fields)
    assert path.read_bytes()[:8] == b"SPDEXIT1"
    loaded = read_snapshot(path, small_grid)
    assert len(loaded) == 3
    np.testing.assert_array_equal(loaded[2].values, fields[2].values)
    assert loaded[1].time == 0.125


def test_snapshot_errors(tmp_path: Path) -> None:
    with pytest.raises(ValueError):
        write_snapshot(tmp_path / "empty.bin", [])
    bogus = tmp_path / "bogus.bin"
    bogus.write_bytes(b"NOTASNAP" + bytes(32))
    with pytest.raises(GridMismatchError):
        read_snapshot(bogus)


def test_control_csv(tmp_path: Path, small_grid: SpaceTimeGrid) -> None:
    values = np.random.default_rng(0).normal(size=(small_grid.nt, small_grid.na))
    path = write_control_csv(tmp_path / "h.csv", ControlFunction(values, small_grid))
    loaded = read_control_csv(path, small_grid)
    assert loaded.axis == "a"
    np.testing.assert_allclose(loaded.values, values, rtol=1e-11)
    with pytest.raises(GridMismatchError):
        read_control_csv(path, small_grid.model_copy(update={"nt": small_grid.nt * 2}))


def test_checksum(tmp_path: Path) -> None:
    path = tmp_path / "blob"
    path.write_bytes(b"exit-times")
    assert file_checksum(path) == hashlib.sha256(b"exit-times").hexdigest()


def test_gnuplot_script(tmp_path: Path) -> None:
    csv = write_table(tmp_path / "scan.csv", pd.DataFrame({"epsilon": [0.4, 0.2], "eps_log_p": [-0.1, -0.2]}),
                      {"command": "ldp-scan"})
    script = write_gnuplot_script(csv, "epsilon", "eps_log_p")
    text = script.read_text(encoding="utf-8")
    assert script.suffix == ".gp"
    assert "using 1:2" in text
    assert "scan.png" in text
