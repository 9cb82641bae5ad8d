import json
import subprocess
import sys
from pathlib import Path

import pytest

from envavg.cli import main
from envavg.config import ConfigError, load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

FLOCK = """\
experiment: flocking
seed: 0
domain: {kind: line}
model:
  kind: cucker_smale
  kernel: {profile: cs_power, beta: 0.4}
initial: {sampler: random_swarm, N: 12, seed: 1}
params: {T: 2, dt: 0.02, record_every: 5, fit_from: 0.5}
expect: {rate_below: -0.01}
"""


@pytest.fixture(autouse=True)
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("ENVAVG_OUTPUT_ROOT", str(tmp_path / "runs"))
    return tmp_path / "runs"


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.mark.parametrize("text, line, field", [
    (FLOCK.replace("beta: 0.4", "beta: -1"), 6, "model.kernel.beta"),
    (FLOCK.replace("N: 12", "N: 0"), 7, "initial.N"),
    (FLOCK.replace("experiment: flocking", "experiment: dance"), 1, "experiment"),
    (FLOCK.replace("dt: 0.02", "dtt: 0.02"), 8, "params"),
])
def test_invalid_config_exits_2_and_names_field(tmp_path, capsys, text, line, field):
    p = write(tmp_path, text)
    assert main(["run", str(p)]) == 2
    err = capsys.readouterr().err
    assert f"{p}:{line}: {field}" in err


def test_missing_seed_and_bad_yaml(tmp_path):
    with pytest.raises(ConfigError, match="seed"):
        load_config(write(tmp_path, "experiment: flocking\n"))
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(write(tmp_path, "experiment: [flocking\n"))
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.yaml")


def test_flocking_run_writes_manifest_and_is_reproducible(tmp_path, out_root):
    p = write(tmp_path, FLOCK, "flock.yaml")
    assert main(["run", str(p)]) == 0
    run_dir = out_root / "flock"
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["status"] == "ok" and summary["passed"]
    first = (run_dir / "manifest.json").read_text()
    manifest = json.loads(first)
    assert manifest["seeds"] == {"master": 0, "initial": 1}
    assert "summary.json" in manifest["outputs"]
    assert main(["run", str(p)]) == 0
    assert (run_dir / "manifest.json").read_text() == first


def test_failed_expectation_exits_1(tmp_path):
    p = write(tmp_path, FLOCK.replace("rate_below: -0.01", "rate_below: -100"))
    assert main(["run", str(p)]) == 1


def test_solver_error_exits_1_with_partial_summary(tmp_path, out_root):
    text = (CONFIGS / "monokinetic.yaml").read_text().replace("[0.4, 0.2, 0.1]", "[0.2, 0.01]")
    p = write(tmp_path, text, "mono.yaml")
    assert main(["run", str(p)]) == 1
    summary = json.loads((out_root / "mono" / "summary.json").read_text())
    assert summary["status"] == "solver_error" and summary["partial"] is True


def test_list_models_and_describe(capsys):
    assert main(["list-models"]) == 0
    out = capsys.readouterr().out
    assert "cucker_smale" in out and "segregation" in out
    assert main(["describe", "motsch_tadmor"]) == 0
    assert capsys.readouterr().out.strip()
    assert main(["describe", "no_such_model"]) == 2
    assert "unknown model" in capsys.readouterr().err


def test_suite_rejects_unknown_criterion(capsys):
    assert main(["suite", "--only", "42"]) == 2
    assert main(["suite", "--only", "x"]) == 2


def test_schema_is_json(capsys):
    assert main(["schema"]) == 0
    assert json.loads(capsys.readouterr().out)["title"] == "envavg experiment"


@pytest.mark.parametrize("name", ["flocking_beta04", "property_suite", "hydro_smooth"])
def test_shipped_configs_run(name):
    assert main(["run", str(CONFIGS / f"{name}.yaml")]) == 0


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "envavg", "describe", "global"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout
