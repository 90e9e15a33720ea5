"""
Ligne de commande - exécution des expériences
=============================================
    python -m app.cli <commande> [--config fichier.ini] [--set section.clé=valeur ...] [options]

Commandes : simulate, exit-prob, bounds, sweep, ldp-scan, rate-eval, skeleton, mean-size, verify.
Codes de sortie : 0 succès, 1 configuration invalide, 2 erreur d'exécution (marqueur PARTIAL),
3 uniquement des bornes sans contenu.
"""
from pathlib import Path
from typing import List, Optional
import argparse
import logging
import sys

from .config import settings
from .services.errors import ConfigValidationError
from .services.experiment import COMMANDS, load_config, run_experiment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_VACUOUS = 3

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# option → clé de configuration
_FLAG_KEYS = {
    "model": "model.kind",
    "epsilon": "solver.epsilon",
    "scheme": "solver.scheme",
    "projection": "solver.projection",
    "seed": "run.seed",
    "replicas": "run.replicas",
    "workers": "run.workers",
    "stride": "run.stride",
    "out": "run.output_dir",
    "format": "run.format",
    "r": "exit.r",
    "delta0": "exit.delta0",
    "T": "exit.T",
    "mode": "exit.mode",
    "k": "bounds.k",
    "k_max": "bounds.k_max",
    "t_min": "bounds.t_min",
    "delta": "bounds.delta",
    "rate_inf": "bounds.rate_inf",
    "rate_inf_ann": "bounds.rate_inf_ann",
    "moment_replicas": "bounds.moment_replicas",
    "eps_list": "run.eps_list",
    "r_list": "run.r_list",
    "eps_sweep": "run.eps_sweep",
    "T_list": "run.T_list",
    "times": "run.times",
    "path": "run.path_file",
    "control": "run.control_file",
    "basis_size": "run.basis_size",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spde-exit",
        description="Temps de sortie d'EDPS : simulation, Monte Carlo, bornes et grandes déviations",
    )
    parser.add_argument("command", choices=COMMANDS, help="Pipeline à exécuter")
    parser.add_argument("--config", type=Path, help="Fichier de configuration (INI)")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.CLÉ=VALEUR", help="Surcharge d'une clé de configuration")
    parser.add_argument("--model", choices=["sbm", "fvp"], help="Modèle")
    parser.add_argument("--kind", dest="model", choices=["sbm", "fvp"], help=argparse.SUPPRESS)
    parser.add_argument("--epsilon", type=float, help="Intensité du bruit ε")
    parser.add_argument("--scheme", choices=["explicit_em", "semi_implicit_em"])
    parser.add_argument("--projection", choices=["none", "monotone_clamp"])
    parser.add_argument("--grid", help="nx,na,nt[,x_min:x_max]")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--replicas", type=int)
    parser.add_argument("--workers", type=int, help="0 = valeur de SPDE_WORKERS")
    parser.add_argument("--stride", type=int, help="Pas de stockage des champs")
    parser.add_argument("--out", help="Répertoire de sortie")
    parser.add_argument("--format", choices=["csv", "binary"])
    parser.add_argument("--r", type=float, help="Rayon de sortie")
    parser.add_argument("--delta0", type=float, help="Rayon du voisinage attractif")
    parser.add_argument("--T", type=float, help="Échéance")
    parser.add_argument("--mode", choices=["norm_exit", "population_exit", "hitting"])
    parser.add_argument("--k", type=int)
    parser.add_argument("--k-max", dest="k_max", type=int)
    parser.add_argument("--t-min", dest="t_min", type=float)
    parser.add_argument("--delta", type=float)
    parser.add_argument("--rate-inf", dest="rate_inf", type=float, help="inf I sur l'ensemble de sortie")
    parser.add_argument("--rate-inf-ann", dest="rate_inf_ann", type=float)
    parser.add_argument("--moment-replicas", dest="moment_replicas", type=int)
    parser.add_argument("--eps-list", dest="eps_list", help="ε décroissants, séparés par des virgules")
    parser.add_argument("--r-list", dest="r_list")
    parser.add_argument("--eps-sweep", dest="eps_sweep")
    parser.add_argument("--T-list", dest="T_list")
    parser.add_argument("--times")
    parser.add_argument("--path", help="Trajectoire (CSV ou instantané binaire) pour rate-eval")
    parser.add_argument("--control", help="Contrôle h (CSV t,a,value)")
    parser.add_argument("--basis-size", dest="basis_size", type=int)
    parser.add_argument("--with-mc", dest="with_mc", action="store_true", help="Joindre p̂ aux bornes")
    parser.add_argument("--gnuplot", action="store_true", help="Écrire un script gnuplot par tableau")
    return parser


def _grid_overrides(spec: str) -> List[str]:
    parts = [p.strip() for p in spec.split(",")]
    if len(parts) not in (3, 4):
        raise ConfigValidationError([f"--grid '{spec}' : format attendu nx,na,nt[,x_min:x_max]"])
    items = [f"grid.nx={parts[0]}", f"grid.na={parts[1]}", f"grid.nt={parts[2]}"]
    if len(parts) == 4:
        lo, sep, hi = parts[3].partition(":")
        if not sep:
            raise ConfigValidationError([f"--grid '{spec}' : domaine attendu x_min:x_max"])
        items += [f"grid.x_min={lo}", f"grid.x_max={hi}"]
    return items


def collect_overrides(args: argparse.Namespace) -> List[str]:
    """Options explicites → surcharges « section.clé=valeur » (après --set)"""
    items = [f"run.command={args.command}"]
    items += list(args.overrides)
    if args.grid:
        items += _grid_overrides(args.grid)
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            items.append(f"{key}={value}")
    if args.with_mc:
        items.append("run.with_mc=true")
    if args.gnuplot:
        items.append("run.gnuplot=true")
    return items


def configure_logging(output_dir: str) -> None:
    Path(output_dir).mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=settings.log_level_value,
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(Path(output_dir) / "run.log", encoding="utf-8"),
            logging.StreamHandler(),
        ],
        force=True,
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(str(args.config) if args.config else None, collect_overrides(args))
    except ConfigValidationError as e:
        logging.basicConfig(level=logging.ERROR, format=LOG_FORMAT)
        for err in e.errors:
            logger.error(f"❌ {err}")
        return EXIT_VALIDATION

    configure_logging(cfg.run.output_dir)
    try:
        manifest = run_experiment(cfg)
    except ConfigValidationError:
        return EXIT_VALIDATION
    except Exception as e:
        logger.exception(f"❌ Échec de '{cfg.run.command}' : {e}")
        return EXIT_RUNTIME

    if manifest.vacuous_only:
        logger.warning("⚠️ Seules des bornes sans contenu ont été produites")
        return EXIT_VACUOUS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
