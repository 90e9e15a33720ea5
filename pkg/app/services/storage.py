"""
Persistance - CSV (t, y, value) avec en-tête commenté, instantanés binaires, contrôles
======================================================================================
En-tête CSV : lignes « # clé: valeur » (algorithme du flux, hachage de configuration,
manifeste de référence), puis le corps écrit par pandas.

Format binaire des instantanés (little-endian) :
    magic  b"SPDEXIT1"
    header n_times:u8, n_nodes:u8, x_min:f8, x_max:f8
    times  n_times × f8
    values n_times × n_nodes × f8
"""
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union
import hashlib
import logging

import numpy as np
import pandas as pd

from .errors import GridMismatchError
from .ldp import ControlFunction
from .weighted_space import Field, SpaceTimeGrid

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"SPDEXIT1"
FLOAT_FORMAT = "%.12g"
FIELD_COLUMNS = ("t", "y", "value")
_HEADER_DTYPE = np.dtype([("n_times", "<u8"), ("n_nodes", "<u8"), ("x_min", "<f8"), ("x_max", "<f8")])

PathLike = Union[str, Path]


def _write_with_header(path: PathLike, frame: pd.DataFrame, header: Optional[Mapping[str, object]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for key, value in (header or {}).items():
            handle.write(f"# {key}: {value}\n")
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_header(path: PathLike) -> Dict[str, str]:
    header = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition(": ")
            header[key] = value
    return header


def write_table(path: PathLike, frame: pd.DataFrame, header: Optional[Mapping[str, object]] = None) -> Path:
    """Écrit un tableau de résultats CSV précédé de son en-tête"""
    written = _write_with_header(path, frame, header)
    logger.info(f"✅ Tableau écrit : {written} ({len(frame)} lignes)")
    return written


def fields_to_frame(fields: Sequence[Field], replica: Optional[int] = None) -> pd.DataFrame:
    frames = []
    for f in fields:
        frame = pd.DataFrame({"t": f.time, "y": f.grid.nodes, "value": f.values})
        if replica is not None:
            frame.insert(0, "replica", replica)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def write_fields_csv(path: PathLike, fields: Sequence[Field],
                     header: Optional[Mapping[str, object]] = None,
                     replica: Optional[int] = None) -> Path:
    return _write_with_header(path, fields_to_frame(fields, replica), header)


def _grid_from_nodes(nodes: np.ndarray, template: Optional[SpaceTimeGrid]) -> SpaceTimeGrid:
    update = {"x_min": float(nodes[0]), "x_max": float(nodes[-1]), "nx": nodes.size - 1}
    if template is None:
        return SpaceTimeGrid(**update)
    grid = template.model_copy(update=update)
    if not np.allclose(grid.nodes, nodes, atol=1e-9):
        raise GridMismatchError("Nœuds du fichier non uniformes ou incompatibles")
    return grid


def read_fields_csv(path: PathLike, grid: Optional[SpaceTimeGrid] = None,
                    replica: Optional[int] = None) -> Tuple[List[Field], Dict[str, str]]:
    """Relit les champs d'un CSV (t, y, value), filtrés sur un réplica si la colonne existe"""
    frame = pd.read_csv(path, comment="#")
    missing = set(FIELD_COLUMNS) - set(frame.columns)
    if missing:
        raise GridMismatchError(f"Colonnes manquantes dans {path}: {sorted(missing)}")
    if "replica" in frame.columns:
        chosen = frame["replica"].iloc[0] if replica is None else replica
        frame = frame[frame["replica"] == chosen]
    fields = []
    for t, group in frame.groupby("t", sort=True):
        group = group.sort_values("y")
        grid_t = _grid_from_nodes(group["y"].to_numpy(), grid)
        grid = grid or grid_t
        fields.append(Field(values=group["value"].to_numpy(), grid=grid_t, time=float(t)))
    return fields, read_header(path)


def write_snapshot(path: PathLike, fields: Sequence[Field]) -> Path:
    """Instantané binaire rejouable des champs d'une trajectoire"""
    if not fields:
        raise ValueError("Aucun champ à écrire")
    grid = fields[0].grid
    header = np.array([(len(fields), grid.nx + 1, grid.x_min, grid.x_max)], dtype=_HEADER_DTYPE)
    times = np.array([f.time for f in fields], dtype="<f8")
    values = np.vstack([f.values for f in fields]).astype("<f8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(SNAPSHOT_MAGIC)
        handle.write(header.tobytes())
        handle.write(times.tobytes())
        handle.write(values.tobytes())
    return path


def read_snapshot(path: PathLike, grid: Optional[SpaceTimeGrid] = None) -> List[Field]:
    raw = Path(path).read_bytes()
    if raw[:len(SNAPSHOT_MAGIC)] != SNAPSHOT_MAGIC:
        raise GridMismatchError(f"{path} n'est pas un instantané SPDEXIT1")
    offset = len(SNAPSHOT_MAGIC)
    header = np.frombuffer(raw, dtype=_HEADER_DTYPE, count=1, offset=offset)[0]
    offset += _HEADER_DTYPE.itemsize
    n_times, n_nodes = int(header["n_times"]), int(header["n_nodes"])
    times = np.frombuffer(raw, dtype="<f8", count=n_times, offset=offset)
    offset += 8 * n_times
    values = np.frombuffer(raw, dtype="<f8", count=n_times * n_nodes, offset=offset).reshape(n_times, n_nodes)
    nodes = np.linspace(float(header["x_min"]), float(header["x_max"]), n_nodes)
    grid = _grid_from_nodes(nodes, grid)
    return [Field(values=row, grid=grid, time=float(t)) for t, row in zip(times, values)]


def write_control_csv(path: PathLike, h: ControlFunction,
                      header: Optional[Mapping[str, object]] = None) -> Path:
    grid = h.grid
    axis_values = grid.a_centers if h.axis == "a" else grid.cell_centers
    t = np.repeat(np.arange(grid.nt) * grid.dt, axis_values.size)
    frame = pd.DataFrame({"t": t, h.axis: np.tile(axis_values, grid.nt), "value": h.values.ravel()})
    return _write_with_header(path, frame, header)


def read_control_csv(path: PathLike, grid: SpaceTimeGrid) -> ControlFunction:
    """Relit un contrôle (t, a, value) sur la grille donnée"""
    frame = pd.read_csv(path, comment="#")
    axis = "a" if "a" in frame.columns else "y"
    frame = frame.sort_values(["t", axis])
    width = grid.na if axis == "a" else grid.nx
    values = frame["value"].to_numpy()
    if values.size != grid.nt * width:
        raise GridMismatchError(
            f"Contrôle de {values.size} valeurs, attendu {grid.nt}×{width}"
        )
    return ControlFunction(values.reshape(grid.nt, width), grid, axis)


def file_checksum(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_gnuplot_script(csv_path: PathLike, x: str, y: str, title: str = "") -> Path:
    """Script gnuplot traçant la colonne y contre x du CSV"""
    csv_path = Path(csv_path)
    columns = list(pd.read_csv(csv_path, comment="#", nrows=0).columns)
    script = csv_path.with_suffix(".gp")
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set title '{title or csv_path.stem}'",
        f"set xlabel '{x}'",
        f"set ylabel '{y}'",
        "set terminal pngcairo size 900,600",
        f"set output '{csv_path.with_suffix('.png').name}'",
        f"plot '{csv_path.name}' using {columns.index(x) + 1}:{columns.index(y) + 1} with linespoints",
    ]
    script.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return script
