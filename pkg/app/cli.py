"""명령행 진입점

    python -m app run --scheme primal --k 2 --problem lshape2d --steps 10 --out runs/l2
    python -m app serve --port 8000

종료 코드: 0 성공, 1 수치 단계 실패, 2 잘못된 인자, 3 검증 실패
"""
from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from pydantic import ValidationError

from app.config import get_settings
from app.core.errors import DriverError
from app.core.models import RunConfig, SchemeType, Stabilization
from app.core.problems import BUILTIN_PROBLEMS
from app.utils.logger import get_logger, setup_logging

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_VERIFY = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hdg",
        description="HDG solver with equilibrated-flux error estimation and adaptive refinement",
    )
    parser.add_argument("--log-level", default=None, help="debug | info | warning | error")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an adaptive refinement loop")
    run.add_argument("--scheme", required=True, choices=[s.value for s in SchemeType])
    run.add_argument("--k", type=int, required=True, help="polynomial degree")
    run.add_argument("--delta", type=int, default=0, choices=[0, 1], help="facet degree reduction (primal)")
    run.add_argument("--gamma", type=float, default=None, help="lemma stabilization constant")
    run.add_argument("--stab", default=None, choices=[s.value for s in Stabilization])
    run.add_argument(
        "--facet-choice", default="newest", choices=["newest", "longest"], help="F*_K rule for single-facet"
    )
    run.add_argument(
        "--problem",
        required=True,
        help=f"{' | '.join(BUILTIN_PROBLEMS)} | FILE.json",
    )
    run.add_argument("--marking", default=None, help="dorfler:THETA | uniform")
    run.add_argument("--steps", type=int, default=10)
    run.add_argument("--max-dofs", type=int, default=None)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--verify", action="store_true", help="run the invariant suite on the final mesh")
    run.add_argument("--vtu", action="store_true", help="write mesh_NNN.vtu")
    run.add_argument("--no-estimates", action="store_true", help="skip estimate_NNN.csv")
    run.add_argument("--timing", action="store_true", help="fill the seconds column")
    run.add_argument("--error-quadrature", type=int, default=None, help="true error quadrature degree")

    serve = sub.add_parser("serve", help="start the HTTP API")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=None)
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    marking = args.marking or f"dorfler:{get_settings().dorfler_theta}"
    return RunConfig(
        scheme=args.scheme,
        k=args.k,
        delta=args.delta,
        gamma=args.gamma,
        stabilization=args.stab,
        facet_choice=args.facet_choice,
        problem=args.problem,
        marking=marking,
        steps=args.steps,
        max_dofs=args.max_dofs,
        output_dir=args.out,
        verify=args.verify,
        write_estimates=not args.no_estimates,
        write_vtu=args.vtu,
        timing=args.timing,
        error_quadrature_degree=args.error_quadrature,
    )


def _run(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    from app.core.driver import format_checks, run_adaptive

    try:
        config = _run_config(args)
    except ValidationError as e:
        parser.print_usage(sys.stderr)
        for error in e.errors():
            print(f"error: {error['msg']}", file=sys.stderr)
        return EXIT_USAGE

    try:
        result = run_adaptive(config)
    except DriverError as e:
        print(f"failed at stage '{e.stage}' (step {e.step}): {e.cause}", file=sys.stderr)
        return EXIT_FAILED

    last = result.records[-1]
    print(
        f"{len(result.records)} steps, {last.n_elements} elements, "
        f"{last.ndof_total} DOFs, eta = {last.eta:.6e}"
        + (f", error = {last.error:.6e}" if last.error is not None else "")
        + f", stopped: {result.stopped_reason}"
    )
    if config.verify:
        print(format_checks(result.checks))
        if not result.verified:
            return EXIT_VERIFY
    return EXIT_OK


def _serve(args: argparse.Namespace) -> int:
    import uvicorn

    port = args.port or get_settings().port
    uvicorn.run("app.main:app", host=args.host, port=port)
    return EXIT_OK


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    CLI 실행

    Returns:
        종료 코드
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    setup_logging(args.log_level)
    if args.command == "run":
        return _run(args, parser)
    return _serve(args)


def main() -> None:
    sys.exit(run_cli())
