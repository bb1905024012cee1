"""
Linea de comandos flutter-lab.

Uso:
    flutter-lab simulate --config scenarios/subsonic-decay.toml --out output/subsonic-decay
    flutter-lab equilibria --config scenarios/buckling.toml
    flutter-lab kjc-probe --config scenarios/kjc-probe.toml
    flutter-lab compare-closures --config scenarios/compare-closures.toml --threads 3
    flutter-lab selftest --only restart delay_horizon
    flutter-lab serve --port 8000

Codigos de salida: 0 correcto, 1 verificacion fallida, 2 configuracion invalida,
3 divergencia numerica, 4 fallo de un solver.
"""

import argparse
import logging
import sys
from pathlib import Path

import uvicorn

from app.config import get_settings
from app.errors import ConfigError, LabError
from app.models.schemas import RunManifest, ScenarioConfig
from app.services.checks import CHECKS, run_selftest
from app.services.scenarios import scenario_service

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, help="Hilos para barridos y frecuencias")
    common.add_argument("--seed", type=int, help="Semilla de los generadores aleatorios")
    common.add_argument("--log-level", help="Nivel de logging (INFO, DEBUG, ...)")

    parser = argparse.ArgumentParser(
        prog="flutter-lab",
        description="Laboratorio numerico de aleteo de paneles de von Karman",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    for name, text in (
        ("simulate", "Integra un escenario en el tiempo"),
        ("equilibria", "Continuacion de equilibrios"),
        ("compare-closures", "Piston clasico frente a potencial con retardo"),
    ):
        sub = commands.add_parser(name, parents=[common], help=text)
        sub.add_argument("--config", type=Path, required=True, help="Escenario TOML")
        sub.add_argument("--out", type=Path, help="Directorio de salida")

    probe = commands.add_parser("kjc-probe", parents=[common], help="Tablas de simbolos y Hilbert")
    probe.add_argument("--config", type=Path, help="Escenario TOML con seccion [kjc]")
    probe.add_argument("--out", type=Path, help="Directorio de salida")

    selftest = commands.add_parser("selftest", parents=[common], help="Autoverificacion")
    selftest.add_argument("--out", type=Path, help="Directorio para el manifiesto")
    selftest.add_argument("--only", nargs="+", choices=sorted(CHECKS), help="Subconjunto")

    serve = commands.add_parser("serve", parents=[common], help="Servidor HTTP")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _apply_overrides(args: argparse.Namespace) -> None:
    """Las opciones globales pisan la configuracion cacheada."""
    settings = get_settings()
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError(f"--threads debe ser >= 1 (recibido {args.threads})")
        settings.threads = args.threads
    if args.seed is not None:
        settings.seed = args.seed
    if args.log_level:
        settings.log_level = args.log_level.upper()


def _resolve_config(path: Path) -> Path:
    """Un nombre suelto se busca tambien en el directorio de escenarios."""
    if path.exists():
        return path
    candidate = get_settings().scenarios_path / path
    if not candidate.suffix:
        candidate = candidate.with_suffix(".toml")
    return candidate if candidate.exists() else path


def _output_directory(args: argparse.Namespace, config: ScenarioConfig) -> Path:
    if args.out is not None:
        return args.out
    if config.output.dir is not None:
        return config.output.dir
    return get_settings().output_path / config.name


def _report(manifest: RunManifest) -> int:
    for check in manifest.checks:
        value = "-" if check.value is None else f"{check.value:.6g}"
        logger.info(f"  {check.name:<24} {check.status:<6} {value} {check.detail}")
    return 0 if manifest.passed else 1


def run_command(args: argparse.Namespace) -> int:
    if args.command == "serve":
        uvicorn.run("app.main:app", host=args.host, port=args.port)
        return 0

    if args.command == "selftest":
        return _report(run_selftest(args.out, args.only))

    if args.config is not None:
        config = scenario_service.load_config(_resolve_config(args.config))
    elif args.command == "kjc-probe":
        config = scenario_service.parse_config({"name": "kjc-probe", "model": {"U": 0.5}})
    else:
        raise ConfigError("Falta --config")

    out = _output_directory(args, config)
    runners = {
        "simulate": scenario_service.run_simulate,
        "equilibria": scenario_service.run_equilibria,
        "kjc-probe": scenario_service.run_kjc_probe,
        "compare-closures": scenario_service.run_compare_closures,
    }
    manifest = runners[args.command](config, out)
    logger.info(f"Salidas en {out}: {', '.join(manifest.outputs)}")
    return _report(manifest)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_overrides(args)
    except LabError as e:
        print(f"flutter-lab: {e}", file=sys.stderr)
        return e.exit_code

    logging.basicConfig(level=get_settings().log_level, format=LOG_FORMAT)
    try:
        return run_command(args)
    except LabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
