"""
Vérification - suite d'oracles déterministes
============================================
Chaque oracle confronte une opération du paquet à une référence indépendante
(forme close, quadrature, flot de la chaleur) et renvoie une ligne du tableau
oracle / valeur / référence / erreur / tolérance / succès.
"""
from typing import Callable, Dict, Iterable, List, Optional
import logging
import math

import numpy as np
import pandas as pd
from scipy.integrate import quad
from scipy.stats import norm

from .bounds import log_weighted_gaussian_mass
from .ldp import ControlFunction, path_to_measure, rate_measure, rate_spde, skeleton_solve
from .models import ModelKind, ModelSpec, g_cross_integral, g_quadrature, initial_profile, noise_increment
from .noise import NoiseStream, sample_slice
from .solver import SolverConfig, heat_flow, solve_path
from .weighted_space import MeasurePath, SpaceTimeGrid, WeightParams

logger = logging.getLogger(__name__)


def _row(name: str, value: float, reference: float, tolerance: float,
         relative: bool = False, error: Optional[float] = None) -> Dict[str, object]:
    if error is None:
        error = abs(value - reference)
        if relative:
            error /= max(abs(reference), 1e-300)
    return {
        "oracle": name,
        "value": float(value),
        "reference": float(reference),
        "error": float(error),
        "tolerance": float(tolerance),
        "passed": bool(error <= tolerance),
    }


def heat_consistency(nx: int = 256, nt: int = 1024) -> Dict[str, object]:
    """ε = 0 : dernier champ du solveur contre le flot de la chaleur exact de F"""
    grid = SpaceTimeGrid(nx=nx, nt=nt, t_end=1.0)
    m = ModelSpec(kind=ModelKind.SBM)
    w = WeightParams()
    path = solve_path(m, SolverConfig(epsilon=0.0, weights=w), grid)
    reference = heat_flow(lambda y: initial_profile(m, y), grid.t_end, grid)
    weights = np.exp(-w.beta * np.abs(grid.nodes))
    error = float(np.max(weights * np.abs(path.final.values - reference.values)))
    return _row("heat_consistency", error, 0.0, 2e-3, error=error)


def noise_variance(steps: int = 200) -> Dict[str, object]:
    """Variance empirique des incréments du bruit contre da·dt (4 erreurs standard)"""
    grid = SpaceTimeGrid(na=512, nt=steps)
    stream = NoiseStream(seed=2024, replica_id=0)
    samples = np.concatenate([sample_slice(stream, grid, n).increments for n in range(steps)])
    reference = grid.da * grid.dt
    value = float(np.mean(samples ** 2))
    se = reference * math.sqrt(2.0 / samples.size)
    return _row("noise_variance", value, reference, 4.0 * se)


def _frozen_covariance(kind: ModelKind, u_pairs, steps: int) -> List[Dict[str, object]]:
    if kind == ModelKind.FVP:
        grid = SpaceTimeGrid(a_min=0.0, a_max=1.0, na=512, nt=steps)
    else:
        grid = SpaceTimeGrid(na=512, nt=steps)
    m = ModelSpec(kind=kind)
    stream = NoiseStream(seed=99, replica_id=int(kind == ModelKind.FVP))
    u = np.array([v for pair in u_pairs for v in pair])
    draws = np.vstack([noise_increment(m, u, grid, sample_slice(stream, grid, n).increments)
                       for n in range(steps)])
    rows = []
    for j, (u1, u2) in enumerate(u_pairs):
        x1, x2 = draws[:, 2 * j], draws[:, 2 * j + 1]
        value = float(np.mean(x1 * x2))
        reference = float(g_cross_integral(m, 0.0, u1, 0.0, u2)) * grid.dt
        var1 = float(g_cross_integral(m, 0.0, u1, 0.0, u1)) * grid.dt
        var2 = float(g_cross_integral(m, 0.0, u2, 0.0, u2)) * grid.dt
        se = math.sqrt((var1 * var2 + reference ** 2) / steps)
        rows.append(_row(f"noise_covariance_{kind.value}({u1:g},{u2:g})", value, reference,
                         4.0 * se + 1e-15))
    return rows


def noise_covariance(steps: int = 4000) -> List[Dict[str, object]]:
    """Covariance des incréments à champ gelé contre ∫G(u₁)G(u₂)da·dt"""
    return (_frozen_covariance(ModelKind.SBM, [(0.5, 0.25), (0.5, 0.5), (0.25, -0.25)], steps)
            + _frozen_covariance(ModelKind.FVP, [(0.5, 0.25), (0.25, 0.25), (0.75, 0.5)], steps))


def closed_form_integrals() -> List[Dict[str, object]]:
    """Intégrales en a sous forme close contre la quadrature par trapèzes"""
    rows = []
    for kind, pairs in ((ModelKind.SBM, [(0.7, 0.3), (-0.6, -0.2), (0.5, -0.5)]),
                        (ModelKind.FVP, [(0.3, 0.8), (0.5, 0.5), (0.1, 0.9)])):
        m = ModelSpec(kind=kind)
        for u1, u2 in pairs:
            rows.append(_row(f"cross_integral_{kind.value}({u1:g},{u2:g})",
                             float(g_cross_integral(m, 0.0, u1, 0.0, u2)),
                             g_quadrature(m, 0.0, u1, 0.0, u2, points=20001), 1e-3))
    for y, c, lam in ((0.0, 0.5, 1.0), (1.5, 0.2, 0.5), (-2.0, 1.0, 1.5)):
        closed = float(math.exp(log_weighted_gaussian_mass(y, c, lam)))
        numeric = sum(
            quad(lambda x: norm.pdf(y - x, scale=math.sqrt(c)) * math.exp(lam * abs(x)), lo, hi)[0]
            for lo, hi in ((-np.inf, 0.0), (0.0, np.inf))
        )
        rows.append(_row(f"weighted_gaussian_mass(y={y:g},c={c:g})", closed, numeric, 1e-6, relative=True))
    return rows


def _gaussian_path(grid: SpaceTimeGrid, drift: float, sigma0: float) -> MeasurePath:
    times = grid.times
    centers = grid.cell_centers
    densities = norm.pdf(centers[None, :], loc=drift * times[:, None],
                         scale=np.sqrt(sigma0 ** 2 + times[:, None]))
    return MeasurePath(times=times, densities=densities, grid=grid)


def rate_heat_path(nx: int = 256, nt: int = 512) -> Dict[str, object]:
    """Le taux d'une trajectoire solution de ρ̇ = ½Δρ est nul"""
    grid = SpaceTimeGrid(nx=nx, nt=nt)
    result = rate_measure(_gaussian_path(grid, 0.0, 1.0), ModelKind.SBM)
    return _row("rate_heat_path", result.value, 0.0, 1e-3)


def rate_drifted_gaussian(drifts: Iterable[float] = (0.5, 1.0, 2.0), sigma0: float = 1.0,
                          nx: int = 256, nt: int = 512) -> List[Dict[str, object]]:
    """ρ_t = N(bt, σ₀²+t) : taux ½b² ln((σ₀²+1)/σ₀²)"""
    grid = SpaceTimeGrid(nx=nx, nt=nt)
    rows = []
    for b in drifts:
        result = rate_measure(_gaussian_path(grid, b, sigma0), ModelKind.SBM)
        reference = 0.5 * b * b * math.log((sigma0 ** 2 + 1.0) / sigma0 ** 2)
        rows.append(_row(f"rate_drifted_gaussian(b={b:g})", result.value, reference, 0.02, relative=True))
    return rows


def rate_spde_scaling(seed: int = 7) -> Dict[str, object]:
    """rate_spde(2h) = 4·rate_spde(h)"""
    grid = SpaceTimeGrid(nx=16, na=32, nt=16)
    h = ControlFunction(np.random.default_rng(seed).normal(size=(grid.nt, grid.na)), grid)
    base = rate_spde(h).value
    return _row("rate_spde_scaling", rate_spde(h.scaled(2.0)).value, 4.0 * base, 1e-12, relative=True)


def certificate_consistency(controls: int = 5, seed: int = 11) -> List[Dict[str, object]]:
    """Taux mesure de la trajectoire de squelette ≤ 1.05 · ½‖h‖²"""
    grid = SpaceTimeGrid(nx=64, na=256, nt=256)
    m = ModelSpec(kind=ModelKind.SBM)
    rng = np.random.default_rng(seed)
    a = grid.a_centers
    rows = []
    for i in range(controls):
        amp, freq, phase = rng.uniform(0.2, 0.8), rng.uniform(0.5, 2.0), rng.uniform(0, 2 * np.pi)
        profile = amp * np.cos(freq * a + phase)
        h = ControlFunction(np.tile(profile, (grid.nt, 1)), grid)
        path = skeleton_solve(m, h, grid)
        measured = rate_measure(path_to_measure(path), ModelKind.SBM).value
        bound = 1.05 * rate_spde(h).value
        rows.append(_row(f"certificate_consistency[{i}]", measured, bound, 0.0,
                         error=max(0.0, measured - bound)))
    return rows


ORACLES: Dict[str, Callable[[], object]] = {
    "heat_consistency": heat_consistency,
    "noise_variance": noise_variance,
    "noise_covariance": noise_covariance,
    "closed_form_integrals": closed_form_integrals,
    "rate_heat_path": rate_heat_path,
    "rate_drifted_gaussian": rate_drifted_gaussian,
    "rate_spde_scaling": rate_spde_scaling,
    "certificate_consistency": certificate_consistency,
}


def run_oracles(names: Optional[Iterable[str]] = None) -> pd.DataFrame:
    """Exécute les oracles demandés (tous par défaut) et tabule les résultats"""
    selected = list(ORACLES) if names is None else list(names)
    unknown = set(selected) - set(ORACLES)
    if unknown:
        raise ValueError(f"Oracles inconnus : {sorted(unknown)}")
    rows: List[Dict[str, object]] = []
    for name in selected:
        result = ORACLES[name]()
        rows.extend(result if isinstance(result, list) else [result])
    frame = pd.DataFrame(rows)
    failed = frame.loc[~frame["passed"], "oracle"].tolist()
    if failed:
        logger.warning(f"⚠️ Oracles en échec : {failed}")
    else:
        logger.info(f"✅ {len(frame)} oracles satisfaits")
    return frame
