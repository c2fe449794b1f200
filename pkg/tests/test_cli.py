"""명령행 테스트"""
import pytest

from app.cli import EXIT_FAILED, EXIT_OK, EXIT_USAGE, build_parser, run_cli
from app.core import driver
from app.core.errors import MeshError


def run_args(out, *extra):
    return ["run", "--scheme", "mixed", "--k", "0", "--problem", "square-smooth", "--out", str(out), *extra]


def test_run_succeeds(tmp_path, capsys):
    code = run_cli(run_args(tmp_path, "--steps", "2"))
    assert code == EXIT_OK
    assert "2 steps" in capsys.readouterr().out
    assert (tmp_path / "convergence.csv").exists()


def test_run_with_verify_prints_table(tmp_path, capsys):
    code = run_cli(
        ["run", "--scheme", "primal", "--k", "2", "--problem", "square-smooth", "--marking", "uniform",
         "--steps", "1", "--verify", "--out", str(tmp_path)]
    )
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "local conservation" in out
    assert "FAIL" not in out


def test_missing_arguments():
    assert run_cli(["run", "--scheme", "mixed"]) == EXIT_USAGE
    assert run_cli([]) == EXIT_USAGE


def test_invalid_combination(tmp_path, capsys):
    code = run_cli(run_args(tmp_path, "--delta", "1"))
    assert code == EXIT_USAGE
    assert "delta" in capsys.readouterr().err


def test_bad_marking(tmp_path):
    assert run_cli(run_args(tmp_path, "--marking", "dorfler:0")) == EXIT_USAGE


def test_failed_stage(tmp_path, capsys, monkeypatch):
    def broken_refine(mesh, marked):
        raise MeshError("refinement exploded")

    monkeypatch.setattr(driver, "refine", broken_refine)
    code = run_cli(run_args(tmp_path, "--steps", "3"))
    assert code == EXIT_FAILED
    assert "failed at stage 'refine' (step 0)" in capsys.readouterr().err


def test_unknown_problem_fails_at_setup(tmp_path, capsys):
    code = run_cli(["run", "--scheme", "mixed", "--k", "0", "--problem", "circle", "--out", str(tmp_path)])
    assert code == EXIT_FAILED
    assert "setup" in capsys.readouterr().err


def test_help_exits_cleanly():
    assert run_cli(["--help"]) == EXIT_OK


def test_parser_defaults():
    args = build_parser().parse_args(["run", "--scheme", "primal", "--k", "1", "--problem", "lshape2d", "--out", "x"])
    assert args.steps == 10
    assert args.delta == 0
    assert args.marking is None


def test_run_reports_stop_reason(tmp_path, capsys):
    code = run_cli(run_args(tmp_path, "--steps", "1"))
    assert code == EXIT_OK
    assert "stopped: steps" in capsys.readouterr().out


def test_facet_choice_option():
    args = build_parser().parse_args(["run", "--scheme", "mixed", "--k", "1", "--problem", "lshape2d",
                                      "--out", "x", "--stab", "single-facet", "--facet-choice", "longest"])
    assert args.facet_choice == "longest"
    assert build_parser().parse_args(["run", "--scheme", "mixed", "--k", "1", "--problem", "lshape2d",
                                      "--out", "x"]).facet_choice == "newest"
