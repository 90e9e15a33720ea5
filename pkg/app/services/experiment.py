"""
Expériences - configuration, validation, orchestration et manifeste
===================================================================
Une configuration d'expérience est un fichier texte à sections (syntaxe INI) :
[model] [grid] [weights] [solver] [exit] [bounds] [constants] [run]
Les options de la CLI et les surcharges « section.clé=valeur » priment sur le fichier.
Toute sortie est accompagnée d'un manifest.json portant le hachage de configuration
et le registre des constantes.
"""
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import configparser
import hashlib
import json
import logging
import math
import time

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field as PydanticField, field_validator

from .. import __version__
from ..config import settings
from . import storage
from .bounds import (BoundConstants, RateValue, build_constants, eval_J, eval_N2, mean_size_rhs,
                     optimize_k, population_norm_bound, thm1_lower, thm1_mean_bound, thm2_bounds,
                     thm3_exit_bound, upperbound_survival)
from .errors import ConfigValidationError, SimulationError, VacuousBoundError
from .exit_times import ExitMode, ExitSpec, mc_exit
from .ldp import (candidate_rate_infimum, ldp_scaling_scan, rate_measure, rate_spde,
                  scaling_trend_ok, skeleton_solve)
from .models import ModelKind, ModelSpec, initial_field
from .noise import STREAM_ALGORITHM, NoiseStream
from .parallel import map_replicas
from .solver import Boundary, Projection, Scheme, SolverConfig, solve_path
from .verification import run_oracles
from .weighted_space import (MeasurePath, SpaceTimeGrid, WeightParams, cumulative_to_measure,
                             measure_beta_norm_sq)

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "exit-prob", "bounds", "sweep", "ldp-scan", "rate-eval", "skeleton",
            "mean-size", "verify")
PARTIAL_MARKER = "PARTIAL"
MANIFEST_NAME = "manifest.json"


def _split_list(value):
    if isinstance(value, str):
        return [float(v) for v in value.replace(";", ",").split(",") if v.strip()]
    return value


class ModelBlock(BaseModel):
    kind: ModelKind = ModelKind.SBM
    mass: float = 1.0
    sigma0: float = 1.0
    center: float = 0.0
    sbm_branch: str = "signed"


class GridBlock(BaseModel):
    x_min: float = -8.0
    x_max: float = 8.0
    nx: int = 128
    na: int = 512
    nt: int = 512
    t_end: float = 1.0
    a_min: Optional[float] = None
    a_max: Optional[float] = None


class WeightsBlock(BaseModel):
    beta: float = 1.0
    beta0: float = 0.25
    beta1: float = 0.5


class SolverBlock(BaseModel):
    epsilon: float = 0.1
    scheme: Scheme = Scheme.EXPLICIT_EM
    projection: Projection = Projection.NONE
    boundary: Boundary = Boundary.NEUMANN


class ExitBlock(BaseModel):
    r: float = 1.0
    delta0: float = 0.05
    T: float = 1.0
    mode: ExitMode = ExitMode.NORM_EXIT


class BoundsBlock(BaseModel):
    k: int = 4
    k_max: int = 32
    t_min: Optional[float] = None
    delta: float = 0.1
    rate_inf: Optional[float] = None
    rate_inf_ann: Optional[float] = None
    moment_replicas: int = 0
    K: float = 1.0
    overrides: Dict[str, float] = PydanticField(default_factory=dict)


class RunBlock(BaseModel):
    command: str = "simulate"
    seed: int = 12345
    replicas: int = 100
    workers: int = 0
    output_dir: str = PydanticField(default_factory=lambda: settings.output_dir)
    stride: int = 1
    format: str = "csv"
    times: List[float] = PydanticField(default_factory=lambda: [0.25, 0.5, 1.0])
    eps_list: List[float] = PydanticField(default_factory=lambda: [0.8, 0.4, 0.2, 0.1])
    r_list: List[float] = PydanticField(default_factory=list)
    eps_sweep: List[float] = PydanticField(default_factory=list)
    T_list: List[float] = PydanticField(default_factory=list)
    with_mc: bool = False
    path_file: Optional[str] = None
    control_file: Optional[str] = None
    basis_size: Optional[int] = None
    gnuplot: bool = False

    @field_validator("times", "eps_list", "r_list", "eps_sweep", "T_list", mode="before")
    @classmethod
    def _parse_list(cls, v):
        return _split_list(v)


class ExperimentConfig(BaseModel):
    """Configuration complète d'une exécution"""
    model: ModelBlock = PydanticField(default_factory=ModelBlock)
    grid: GridBlock = PydanticField(default_factory=GridBlock)
    weights: WeightsBlock = PydanticField(default_factory=WeightsBlock)
    solver: SolverBlock = PydanticField(default_factory=SolverBlock)
    exit: ExitBlock = PydanticField(default_factory=ExitBlock)
    bounds: BoundsBlock = PydanticField(default_factory=BoundsBlock)
    run: RunBlock = PydanticField(default_factory=RunBlock)

    def grid_spec(self) -> SpaceTimeGrid:
        g = self.grid
        if self.model.kind == ModelKind.FVP:
            a_min, a_max = 0.0, 1.0
        else:
            half = 4.0 * self.model.mass
            a_min = -half if g.a_min is None else g.a_min
            a_max = half if g.a_max is None else g.a_max
        return SpaceTimeGrid(x_min=g.x_min, x_max=g.x_max, nx=g.nx, a_min=a_min, a_max=a_max,
                             na=g.na, t_end=g.t_end, nt=g.nt)

    def weights_spec(self) -> WeightParams:
        return WeightParams(**self.weights.model_dump())

    def model_spec(self) -> ModelSpec:
        return ModelSpec(**self.model.model_dump())

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.solver.model_dump(), weights=self.weights_spec(), stride=self.run.stride)

    def exit_spec(self) -> ExitSpec:
        return ExitSpec(**self.exit.model_dump())

    def config_hash(self) -> str:
        payload = self.model_dump(mode="json", exclude={"run": {"output_dir", "workers"}})
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


class RunManifest(BaseModel):
    """Manifeste d'exécution : provenance et sommes de contrôle des sorties"""
    command: str
    config_hash: str
    config: Dict[str, Any]
    constants: Optional[Dict[str, Any]] = None
    software_version: str = __version__
    stream_algorithm: str = STREAM_ALGORITHM
    seed: int
    started_at: str
    wall_clock: float = 0.0
    outputs: Dict[str, str] = PydanticField(default_factory=dict)
    status: str = "ok"
    vacuous_only: bool = False
    notes: Dict[str, Any] = PydanticField(default_factory=dict)


def collect_violations(cfg: ExperimentConfig) -> List[str]:
    """Liste toutes les contraintes violées (sans s'arrêter à la première)"""
    errors: List[str] = []
    g, w, run = cfg.grid, cfg.weights, cfg.run
    if not g.x_min < 0 < g.x_max:
        errors.append(f"grid: x_min < 0 < x_max requis ({g.x_min}, {g.x_max})")
    if g.nx < 2:
        errors.append(f"grid.nx={g.nx} doit être ≥ 2")
    if g.na < 1:
        errors.append(f"grid.na={g.na} doit être ≥ 1")
    if g.nt < 1:
        errors.append(f"grid.nt={g.nt} doit être ≥ 1")
    if g.t_end <= 0:
        errors.append(f"grid.t_end={g.t_end} doit être > 0")
    if cfg.model.kind == ModelKind.FVP and (g.a_min not in (None, 0.0) or g.a_max not in (None, 1.0)):
        errors.append("grid: FVP exige a_min=0 et a_max=1")
    if g.a_min is not None and g.a_max is not None and g.a_min >= g.a_max:
        errors.append(f"grid: a_min < a_max requis ({g.a_min}, {g.a_max})")
    if cfg.model.kind == ModelKind.GENERIC:
        errors.append("model.kind=generic n'est pas configurable par fichier (G doit être fourni en code)")
    if cfg.model.mass <= 0 or cfg.model.sigma0 <= 0:
        errors.append("model: mass et sigma0 doivent être > 0")
    if cfg.model.sbm_branch not in ("signed", "indicator"):
        errors.append(f"model.sbm_branch={cfg.model.sbm_branch} inconnu")
    if not 0 < w.beta0 < w.beta1 < w.beta:
        errors.append(f"weights: 0 < beta0 < beta1 < beta requis ({w.beta0}, {w.beta1}, {w.beta})")
    if cfg.solver.epsilon < 0:
        errors.append(f"solver.epsilon={cfg.solver.epsilon} doit être ≥ 0")
    if cfg.solver.scheme == Scheme.EXPLICIT_EM and g.nx > 0 and g.nt > 0 and g.t_end > 0 and g.x_max > g.x_min:
        ratio = (g.t_end / g.nt) / ((g.x_max - g.x_min) / g.nx) ** 2
        if ratio > settings.stability_limit:
            errors.append(f"grid: dt/dx² = {ratio:.4f} > {settings.stability_limit} (schéma explicite)")
    e = cfg.exit
    if e.r <= 0 or e.delta0 <= 0:
        errors.append("exit: r et delta0 doivent être > 0")
    if not e.delta0 < e.r:
        errors.append(f"exit: delta0 < r requis ({e.delta0}, {e.r})")
    if e.T <= 0:
        errors.append(f"exit.T={e.T} doit être > 0")
    if e.T > g.t_end:
        errors.append(f"exit: T ≤ t_end requis ({e.T}, {g.t_end})")
    if e.mode == ExitMode.POPULATION_EXIT and not (g.x_min < -e.r and e.r < g.x_max):
        errors.append(f"exit: sortie de population exige x_min < −r et r < x_max (r={e.r})")
    b = cfg.bounds
    if b.k < 4 or b.k % 4:
        errors.append(f"bounds.k={b.k} doit être ≥ 4 et multiple de 4")
    if b.k_max < 4:
        errors.append(f"bounds.k_max={b.k_max} doit être ≥ 4")
    if b.t_min is not None and b.t_min <= 0:
        errors.append(f"bounds.t_min={b.t_min} doit être > 0")
    if b.delta <= 0:
        errors.append(f"bounds.delta={b.delta} doit être > 0")
    if run.command not in COMMANDS:
        errors.append(f"run.command={run.command} inconnue ({', '.join(COMMANDS)})")
    if run.replicas < 1:
        errors.append(f"run.replicas={run.replicas} doit être ≥ 1")
    if run.workers < 0:
        errors.append(f"run.workers={run.workers} doit être ≥ 0")
    if run.stride < 1:
        errors.append(f"run.stride={run.stride} doit être ≥ 1")
    if run.format not in ("csv", "binary"):
        errors.append(f"run.format={run.format} doit valoir csv ou binary")
    if run.command == "ldp-scan":
        eps = run.eps_list
        if not eps or any(x <= 0 for x in eps) or any(b2 >= a2 for a2, b2 in zip(eps, eps[1:])):
            errors.append(f"run.eps_list doit être strictement décroissante et positive ({eps})")
    if run.command == "rate-eval" and not run.path_file:
        errors.append("run.path_file requis pour rate-eval")
    if run.command == "skeleton" and not run.control_file:
        errors.append("run.control_file requis pour skeleton")
    if run.command == "mean-size":
        if cfg.model.kind not in (ModelKind.SBM, ModelKind.FVP):
            errors.append("mean-size exige model.kind ∈ {sbm, fvp}")
        if not run.times or any(t <= 0 or t > g.t_end for t in run.times):
            errors.append(f"run.times doit être dans (0, t_end] ({run.times})")
    return errors


def validate(cfg: ExperimentConfig) -> None:
    errors = collect_violations(cfg)
    if errors:
        for err in errors:
            logger.error(f"❌ {err}")
        raise ConfigValidationError(errors)


def apply_overrides(data: Dict[str, Dict[str, Any]], overrides: Sequence[str]) -> Dict[str, Dict[str, Any]]:
    """Applique des surcharges « section.clé=valeur » ; [constants] alimente bounds.overrides"""
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigValidationError([f"Surcharge invalide '{item}' (attendu section.clé=valeur)"])
        if section == "constants":
            data.setdefault("bounds", {}).setdefault("overrides", {})[name] = float(value)
        else:
            data.setdefault(section, {})[name] = value.strip()
    return data


def load_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Charge un fichier INI (optionnel) puis applique les surcharges"""
    data: Dict[str, Dict[str, Any]] = {}
    if path:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        if not parser.read(path, encoding="utf-8"):
            raise ConfigValidationError([f"Fichier de configuration introuvable : {path}"])
        for section in parser.sections():
            values = dict(parser.items(section))
            if section == "constants":
                data.setdefault("bounds", {})["overrides"] = {k: float(v) for k, v in values.items()}
            else:
                data.setdefault(section, {}).update(values)
    apply_overrides(data, overrides)
    try:
        return ExperimentConfig(**data)
    except ValueError as e:
        raise ConfigValidationError([str(e)]) from e


# --- pipelines -------------------------------------------------------------------


class RunContext:
    """État partagé d'une exécution : répertoire, en-tête et sorties"""

    def __init__(self, cfg: ExperimentConfig, out_dir: Path):
        self.cfg = cfg
        self.out_dir = out_dir
        self.config_hash = cfg.config_hash()
        self.outputs: List[Path] = []
        self.constants: Optional[BoundConstants] = None
        self.vacuous_only = False
        self.notes: Dict[str, Any] = {}

    def header(self, **extra) -> Dict[str, object]:
        head = {
            "manifest": MANIFEST_NAME,
            "config_hash": self.config_hash,
            "command": self.cfg.run.command,
            "stream_algorithm": STREAM_ALGORITHM,
            "seed": self.cfg.run.seed,
            "software_version": __version__,
        }
        if self.constants is not None:
            head["constants"] = json.dumps(self.constants.ledger(), sort_keys=True)
        head.update(extra)
        return head

    def table(self, name: str, frame: pd.DataFrame, x: Optional[str] = None,
              y: Optional[str] = None, **extra) -> Path:
        path = storage.write_table(self.out_dir / name, frame, self.header(**extra))
        self.outputs.append(path)
        if self.cfg.run.gnuplot and x and y and len(frame):
            self.outputs.append(storage.write_gnuplot_script(path, x, y))
        return path


def _simulate_task(payload):
    m, cfg, grid, seed, replica_id = payload
    return solve_path(m, cfg, grid, NoiseStream(seed, replica_id))


def run_simulate(ctx: RunContext) -> None:
    cfg = ctx.cfg
    m, solver_cfg, grid = cfg.model_spec(), cfg.solver_config(), cfg.grid_spec()
    payloads = [(m, solver_cfg, grid, cfg.run.seed, r) for r in range(cfg.run.replicas)]
    paths = map_replicas(_simulate_task, payloads, cfg.run.workers)
    norms = []
    if cfg.run.format == "binary":
        for r, path in enumerate(paths):
            snap = storage.write_snapshot(ctx.out_dir / f"path_r{r:05d}.bin", path.fields)
            ctx.outputs.append(snap)
    else:
        frames = [storage.fields_to_frame(p.fields, replica=r) for r, p in enumerate(paths)]
        ctx.table("fields.csv", pd.concat(frames, ignore_index=True))
    for r, path in enumerate(paths):
        norms.append(pd.DataFrame({"replica": r, "t": path.norm_times, "beta_norm": path.norms}))
    ctx.table("norms.csv", pd.concat(norms, ignore_index=True), x="t", y="beta_norm")
    ctx.notes["projection_total"] = float(sum(p.projection_total for p in paths))
    ctx.notes["tail_warnings"] = int(sum(p.tail_warnings for p in paths))


def exit_row(cfg: ExperimentConfig, spec: ExitSpec, epsilon: float) -> Dict[str, Any]:
    """Estimation Monte Carlo de P(τ ≤ T) en un point, sous forme de ligne de tableau"""
    solver_cfg = cfg.solver_config().model_copy(update={"epsilon": epsilon})
    est = mc_exit(spec, cfg.model_spec(), solver_cfg, cfg.grid_spec(), cfg.run.replicas,
                  cfg.run.seed, cfg.run.workers)
    return {
        "r": spec.r, "delta0": spec.delta0, "T": spec.T, "mode": spec.mode.value, "epsilon": epsilon,
        "p_hat": est.p_hat, "std_err": est.std_err, "mean_tau_censored": est.mean_tau_censored,
        "censor_fraction": est.censor_fraction, "replicas": est.replicas,
        "failed_replicas": est.failed_replicas,
    }


def run_exit_prob(ctx: RunContext) -> None:
    cfg = ctx.cfg
    row = exit_row(cfg, cfg.exit_spec(), cfg.solver.epsilon)
    ctx.table("exit_prob.csv", pd.DataFrame([row]))


def _constants(cfg: ExperimentConfig, T: float) -> BoundConstants:
    b = cfg.bounds
    return build_constants(
        cfg.model_spec(), cfg.grid_spec(), cfg.weights_spec(), T, k=b.k, t_min=b.t_min,
        delta=b.delta, overrides=b.overrides, cfg=cfg.solver_config(),
        moment_replicas=b.moment_replicas, seed=cfg.run.seed, workers=cfg.run.workers, K=b.K,
    )


def _rates(cfg: ExperimentConfig, spec: ExitSpec) -> Dict[str, Optional[RateValue]]:
    b = cfg.bounds
    rates: Dict[str, Optional[RateValue]] = {}
    for key, level in (("rate_inf", spec.r), ("rate_inf_ann", spec.delta0)):
        supplied = getattr(b, key)
        if supplied is not None:
            rates[key] = RateValue(value=supplied, provenance="user_supplied")
        else:
            level_spec = spec.model_copy(update={"mode": ExitMode.NORM_EXIT}) if key == "rate_inf_ann" else spec
            rates[key] = candidate_rate_infimum(level_spec, cfg.model_spec(), cfg.grid_spec(),
                                                cfg.solver_config(), level=level)
    return rates


def bound_row(cfg: ExperimentConfig, r: float, epsilon: float, T: float, c: BoundConstants,
              rates: Dict[str, Optional[RateValue]]) -> Dict[str, Any]:
    """Une ligne regroupant toutes les bornes en un point (r, ε, T)"""
    w, grid, delta0 = cfg.weights_spec(), cfg.grid_spec(), min(cfg.exit.delta0, 0.5 * r)
    j = eval_J(r, epsilon, T, c)
    k_star, j_star = optimize_k(r, epsilon, T, c, cfg.bounds.k_max)
    pop = population_norm_bound(r, epsilon, T, grid, c)
    n2 = eval_N2(r, epsilon, T, w, c)
    thm3 = thm3_exit_bound(r, epsilon, T, w, c)
    size = mean_size_rhs(T, epsilon, w, c)
    rate, rate_ann = rates["rate_inf"], rates["rate_inf_ann"]
    row: Dict[str, Any] = {
        "r": r, "epsilon": epsilon, "T": T, "k": c.k,
        "J": j.value, "J_trivial": j.trivial, "k_opt": k_star, "J_opt": j_star.value,
        "J_population": pop.value, "J_population_trivial": pop.trivial,
        "rate_inf": rate.value, "rate_label": rate.label,
        "thm1_lower": thm1_lower(rate, epsilon, c.delta),
    }
    for name, fn in (("thm1_mean", lambda: thm1_mean_bound(rate, epsilon, c.delta)),
                     ("survival_upper", lambda: upperbound_survival(T, rate, epsilon, c.delta))):
        try:
            row[name] = fn()
        except VacuousBoundError:
            row[name] = math.nan
    try:
        att = thm2_bounds(r, delta0, epsilon, T, rate_ann, c)
        row.update({"thm2_lower": att.lower, "thm2_upper": att.upper, "thm2_mean_upper": att.mean_upper})
    except VacuousBoundError:
        # seule la borne de temps moyen diverge ; l'encadrement reste valable
        j_delta = eval_J(delta0, epsilon, T, c)
        row.update({
            "thm2_lower": 0.0 if j_delta.trivial else max(0.0, 1.0 - j_delta.value),
            "thm2_upper": min(1.0, j.value + thm1_lower(rate_ann, epsilon, c.delta)),
            "thm2_mean_upper": math.nan,
        })
    row.update({
        "rate_inf_ann": rate_ann.value, "N2": n2.value, "N2_vacuous": n2.trivial,
        "thm3": thm3.value, "thm3_trivial": thm3.trivial,
        "mean_size_rhs": size.value, "mean_size_vacuous": size.trivial,
    })
    return row


def _all_vacuous(frame: pd.DataFrame) -> bool:
    informative = (~frame["J_trivial"] & (frame["J"] < 1.0)) | (~frame["thm3_trivial"] & (frame["thm3"] < 1.0))
    informative |= frame["thm1_lower"] > 0
    return not bool(informative.any())


def _with_mc(cfg: ExperimentConfig, frame: pd.DataFrame) -> pd.DataFrame:
    mc_rows = []
    for _, row in frame.iterrows():
        spec = cfg.exit_spec().model_copy(update={"r": float(row["r"]), "T": float(row["T"]),
                                                   "delta0": min(cfg.exit.delta0, 0.5 * float(row["r"]))})
        mc_rows.append(exit_row(cfg, spec, float(row["epsilon"])))
    mc = pd.DataFrame(mc_rows)[["p_hat", "std_err", "mean_tau_censored", "failed_replicas"]]
    joined = pd.concat([frame.reset_index(drop=True), mc], axis=1)
    joined["dominated"] = joined["p_hat"] <= joined["J"] + 2.0 * joined["std_err"]
    return joined


def bounds_table(cfg: ExperimentConfig, sweep: bool = False) -> Tuple[pd.DataFrame, BoundConstants]:
    """
    Tableau des bornes au point configuré, ou sur la grille r_list × eps_sweep × T_list.
    Avec run.with_mc, p̂ est joint à chaque ligne avec l'indicateur p̂ ≤ J + 2 SE.
    """
    spec = cfg.exit_spec()
    r_list = (cfg.run.r_list or [spec.r]) if sweep else [spec.r]
    eps_list = (cfg.run.eps_sweep or [cfg.solver.epsilon]) if sweep else [cfg.solver.epsilon]
    T_list = (cfg.run.T_list or [spec.T]) if sweep else [spec.T]
    c = _constants(cfg, max(T_list))
    rows = []
    for T in T_list:
        for r in r_list:
            point = spec.model_copy(update={"T": T, "r": r, "delta0": min(spec.delta0, 0.5 * r)})
            rates = _rates(cfg, point)
            for eps in eps_list:
                rows.append(bound_row(cfg, r, eps, T, c, rates))
    frame = pd.DataFrame(rows)
    if cfg.run.with_mc:
        frame = _with_mc(cfg, frame)
    return frame, c


def run_bounds(ctx: RunContext, sweep: bool = False) -> None:
    frame, ctx.constants = bounds_table(ctx.cfg, sweep)
    ctx.vacuous_only = _all_vacuous(frame)
    if ctx.vacuous_only:
        logger.warning("⚠️ Toutes les bornes sont sans contenu pour cette configuration")
    name = "sweep.csv" if sweep else "bounds.csv"
    ctx.table(name, frame, x="r" if sweep else None, y="J" if sweep else None)


def run_ldp_scan(ctx: RunContext) -> None:
    cfg = ctx.cfg
    table = ldp_scaling_scan(cfg.exit_spec(), cfg.model_spec(), cfg.solver_config(), cfg.grid_spec(),
                             cfg.run.eps_list, cfg.run.replicas, cfg.run.seed, cfg.run.workers)
    trend = scaling_trend_ok(table)
    ctx.notes["trend_ok"] = trend
    ctx.table("ldp_scan.csv", table, x="epsilon", y="eps_log_p", trend_ok=trend)


def run_rate_eval(ctx: RunContext) -> None:
    cfg = ctx.cfg
    grid = cfg.grid_spec()
    path_file = Path(cfg.run.path_file)
    if path_file.suffix == ".bin":
        fields = storage.read_snapshot(path_file, grid)
    else:
        fields, _ = storage.read_fields_csv(path_file, grid)
    measures = MeasurePath.from_fields(fields)
    result = rate_measure(measures, cfg.model.kind)
    row = {"kind": cfg.model.kind.value, "value": result.value, "admissible": result.admissible}
    row.update(result.residuals)
    if cfg.run.control_file:
        row["rate_spde"] = rate_spde(storage.read_control_csv(cfg.run.control_file, grid)).value
    ctx.table("rate_eval.csv", pd.DataFrame([row]))


def run_skeleton(ctx: RunContext) -> None:
    cfg = ctx.cfg
    grid = cfg.grid_spec()
    h = storage.read_control_csv(cfg.run.control_file, grid)
    path = skeleton_solve(cfg.model_spec(), h, grid, cfg.solver_config().model_copy(update={"epsilon": 0.0}))
    if cfg.run.format == "binary":
        ctx.outputs.append(storage.write_snapshot(ctx.out_dir / "skeleton_path.bin", path.fields))
    else:
        ctx.table("skeleton_path.csv", storage.fields_to_frame(path.fields))
    ctx.table("skeleton_rate.csv", pd.DataFrame([{"rate_spde": rate_spde(h).value,
                                                   "steps": path.steps_taken}]))


def _mean_size_task(payload):
    m, cfg, grid, seed, replica_id, targets, basis_size = payload
    observer = _SizeObserver(cfg.weights, targets, basis_size)
    observer.record(0, initial_field(m, grid))
    last = max(targets) if targets else 0
    try:
        solve_path(m, cfg, grid, NoiseStream(seed, replica_id), [observer], n_steps=last)
    except SimulationError as e:
        logger.warning(f"⚠️ Réplica {replica_id} interrompu : {e}")
        return None
    return [observer.values.get(s, math.nan) for s in targets]


class _SizeObserver:
    name = "mean_size"

    def __init__(self, w: WeightParams, targets: Sequence[int], basis_size: Optional[int]):
        self.w = w
        self.targets = set(targets)
        self.basis_size = basis_size
        self.values: Dict[int, float] = {}
        self.fired_at = None

    def record(self, step, field):
        if step in self.targets:
            self.values[step] = measure_beta_norm_sq(cumulative_to_measure(field), self.w, self.basis_size)

    def observe(self, step, field, norm_value):
        self.record(step, field)


def mean_size_experiment(cfg: ExperimentConfig) -> pd.DataFrame:
    """
    Ê‖μ_t‖²_β aux temps configurés, confrontée à la borne de taille moyenne ;
    l'exposant de croissance (régression log-log sur t ≥ 1) est dans attrs.
    """
    grid, m, w = cfg.grid_spec(), cfg.model_spec(), cfg.weights_spec()
    # μ_t n'est défini que pour un champ croissant
    solver_cfg = cfg.solver_config().model_copy(update={"projection": Projection.MONOTONE_CLAMP})
    targets = [int(round(t / grid.dt)) for t in cfg.run.times]
    payloads = [(m, solver_cfg, grid, cfg.run.seed, r, targets, cfg.run.basis_size)
                for r in range(cfg.run.replicas)]
    results = [res for res in map_replicas(_mean_size_task, payloads, cfg.run.workers) if res is not None]
    failed = cfg.run.replicas - len(results)
    samples = np.array(results, dtype=float).reshape(len(results), len(targets))
    c = build_constants(m, grid, w, grid.t_end, k=cfg.bounds.k, t_min=cfg.bounds.t_min,
                        delta=cfg.bounds.delta, overrides=cfg.bounds.overrides, cfg=solver_cfg,
                        moment_replicas=cfg.bounds.moment_replicas, seed=cfg.run.seed, K=cfg.bounds.K,
                        workers=cfg.run.workers)
    rows = []
    for j, step_index in enumerate(targets):
        t = step_index * grid.dt
        column = samples[:, j] if len(results) else np.array([math.nan])
        n = max(np.isfinite(column).sum(), 1)
        rhs = mean_size_rhs(t, cfg.solver.epsilon, w, c) if t > 0 else None
        rows.append({
            "t": t,
            "mean_norm_sq": float(np.nanmean(column)) if len(results) else math.nan,
            "std_err": float(np.nanstd(column, ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
            "rhs": math.nan if rhs is None else rhs.value,
            "rhs_vacuous": True if rhs is None else rhs.trivial,
            "replicas": int(n),
        })
    frame = pd.DataFrame(rows)
    frame.attrs["constants"] = c
    frame.attrs["failed_replicas"] = failed
    late = frame[(frame["t"] >= 1.0) & (frame["mean_norm_sq"] > 0)]
    exponent = math.nan
    if len(late) >= 2:
        exponent = float(np.polyfit(np.log(late["t"]), np.log(late["mean_norm_sq"]), 1)[0])
    frame.attrs["growth_exponent"] = exponent
    logger.info(f"✅ Taille moyenne : exposant de croissance {exponent:.3f}")
    return frame


def run_mean_size(ctx: RunContext) -> None:
    frame = mean_size_experiment(ctx.cfg)
    ctx.constants = frame.attrs["constants"]
    ctx.notes["growth_exponent"] = frame.attrs["growth_exponent"]
    ctx.table("mean_size.csv", frame, x="t", y="mean_norm_sq",
              growth_exponent=f"{frame.attrs['growth_exponent']:.6g}")


def run_verify(ctx: RunContext) -> None:
    frame = run_oracles()
    ctx.notes["oracles_passed"] = int(frame["passed"].sum())
    ctx.notes["oracles_total"] = int(len(frame))
    ctx.table("verify.csv", frame)


PIPELINES: Dict[str, Callable[[RunContext], None]] = {
    "simulate": run_simulate,
    "exit-prob": run_exit_prob,
    "bounds": run_bounds,
    "sweep": lambda ctx: run_bounds(ctx, sweep=True),
    "ldp-scan": run_ldp_scan,
    "rate-eval": run_rate_eval,
    "skeleton": run_skeleton,
    "mean-size": run_mean_size,
    "verify": run_verify,
}


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    """
    Valide la configuration, exécute la commande demandée, écrit les CSV et le manifeste.

    Raises:
        ConfigValidationError: avant toute écriture, avec toutes les violations
        SimulationError: en cours d'exécution ; un marqueur PARTIAL est écrit
    """
    validate(cfg)
    out_dir = Path(cfg.run.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    marker = out_dir / PARTIAL_MARKER
    if marker.exists():
        marker.unlink()
    ctx = RunContext(cfg, out_dir)
    started = time.perf_counter()
    started_at = datetime.now().isoformat()
    logger.info(f"Démarrage '{cfg.run.command}' (hash {ctx.config_hash[:12]}) → {out_dir}")
    try:
        PIPELINES[cfg.run.command](ctx)
    except Exception as e:
        marker.write_text(f"{type(e).__name__}: {e}\n", encoding="utf-8")
        logger.error(f"❌ Exécution interrompue : {e}")
        raise

    manifest = RunManifest(
        command=cfg.run.command,
        config_hash=ctx.config_hash,
        config=cfg.model_dump(mode="json"),
        constants=None if ctx.constants is None else ctx.constants.ledger(),
        seed=cfg.run.seed,
        started_at=started_at,
        wall_clock=time.perf_counter() - started,
        outputs={p.name: storage.file_checksum(p) for p in ctx.outputs},
        status="vacuous" if ctx.vacuous_only else "ok",
        vacuous_only=ctx.vacuous_only,
        notes=ctx.notes,
    )
    (out_dir / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"✅ '{cfg.run.command}' terminé en {manifest.wall_clock:.2f}s, {len(ctx.outputs)} sorties")
    return manifest
