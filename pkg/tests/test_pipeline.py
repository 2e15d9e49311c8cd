import json

import pytest
from filelock import FileLock

from dynkin_control.cli import main
from dynkin_control.errors import ConfigurationError, DependencyError
from dynkin_control.pipeline import STAGES, order_stages, resolve_output_dir, run_pipeline
from dynkin_control.scenario import load

QUICK = ["grid.counts=201", "game.paths=4000", "game.t_max=8", "control.paths=4000", "control.t_max=8",
         "bands.paths=1000", "bands.samples=1", "appendix.counts=51, 101, 201"]


@pytest.fixture(scope="module")
def quick():
    return load("s1").with_overrides(QUICK)


@pytest.fixture(scope="module")
def quick_run(quick, tmp_path_factory):
    out = tmp_path_factory.mktemp("quick")
    return out, run_pipeline(quick, out=out)


def test_full_run_writes_every_stage(quick_run):
    out, manifest = quick_run
    assert list(manifest.stages) == list(STAGES)
    assert manifest.passed, {k: v["status"] for k, v in manifest.stages.items()}
    data = json.loads((out / "manifest.json").read_text())
    assert data["passed"] and set(data["artifacts"]) >= {"solution.csv", "boundary.csv", "w.csv", "verify.txt"}


def test_rerun_reproduces_artifacts(quick, quick_run, tmp_path):
    out, manifest = quick_run
    again = run_pipeline(quick, out=tmp_path)
    assert again.artifacts == manifest.artifacts


def test_single_stage_reuses_previous_artifacts(quick, quick_run):
    out, manifest = quick_run
    again = run_pipeline(quick, ["build_w"], out=out)
    assert again.stages["build_w"]["status"] == "pass"
    assert again.artifacts["w.csv"] == manifest.artifacts["w.csv"]


def test_missing_dependency_is_named(quick, tmp_path):
    with pytest.raises(DependencyError) as info:
        run_pipeline(quick, ["build_w"], out=tmp_path)
    assert "solve" in str(info.value)


def test_changed_scenario_invalidates_artifacts(quick, quick_run):
    out, _ = quick_run
    with pytest.raises(DependencyError):
        run_pipeline(quick.with_overrides(["cost.f2=1.5"]), ["build_w"], out=out)


def test_stage_names_are_checked():
    assert order_stages(["verify", "solve"]) == ["solve", "verify"]
    with pytest.raises(ConfigurationError):
        order_stages(["solve", "plot"])


def test_busy_output_directory_is_refused(quick, tmp_path):
    with FileLock(str(tmp_path / ".lock")):
        with pytest.raises(ConfigurationError):
            run_pipeline(quick, ["appendix"], out=tmp_path)


def test_output_directory_precedence(quick, tmp_path, monkeypatch):
    monkeypatch.delenv("DYNKIN_OUTPUT_ROOT", raising=False)
    assert str(resolve_output_dir(quick)) == "runs/s1"
    named = quick.with_overrides([f"scenario.output_dir={tmp_path / 'own'}"])
    assert resolve_output_dir(named) == tmp_path / "own"
    monkeypatch.setenv("DYNKIN_OUTPUT_ROOT", str(tmp_path / "root"))
    assert resolve_output_dir(named) == tmp_path / "root" / "s1"
    assert resolve_output_dir(named, tmp_path / "flag") == tmp_path / "flag"


# --------------------------------------------------------------------------
# Command line

def test_cli_success(tmp_path, capsys):
    code = main(["appendix", "--scenario", "s1", "--out", str(tmp_path), "--set", "appendix.counts=51, 101"])
    assert code == 0
    assert f"artifacts in {tmp_path}" in capsys.readouterr().out
    assert (tmp_path / "appendix.csv").is_file()


def test_cli_configuration_error(tmp_path):
    assert main(["solve-vi", "--scenario", "s1", "--out", str(tmp_path), "--set", "solver.omega=3"]) == 2
    assert main(["solve-vi", "--scenario", "nowhere.ini", "--out", str(tmp_path)]) == 2
    assert main(["build-w", "--scenario", "s1", "--out", str(tmp_path / "empty")]) == 2


def test_cli_numerical_error(tmp_path):
    assert main(["solve-vi", "--scenario", "s1", "--out", str(tmp_path), "--set", "solver.max_iter=3"]) == 3


def test_cli_failed_check(tmp_path, capsys):
    args = ["run", "--scenario", "s1", "--out", str(tmp_path), "--stages", "solve,boundary,build-w",
            "--set", "grid.counts=201", "--set", "solver.hjb_tol=1e-30", "-q"]
    assert main(args) == 4
    assert "build_w" in capsys.readouterr().err


def test_cli_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert "dynkin-lab" in capsys.readouterr().out
