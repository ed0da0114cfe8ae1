import pytest

from torchformation.scripts.cli import main, parser
from torchformation.sim.io import find_run_logs, read_run_log

HOVER = """\
name: hover
trajectory:
  kind: hover
  hover_before: 0.1
  hover_after: 0.1
vehicles:
  - controller: {controller}
    rate: 200
solver:
  N: 8
seeds: [0]
"""

TIGHT_STACK = """\
name: tight
formation:
  kind: i_stack
  z1: 0.2
  z2: 0.2
trajectory:
  kind: hover
  hover_before: 0.6
  hover_after: 0.6
vehicles:
  - controller: mpc
    rate: 200
  - controller: mpc
    rate: 400
  - controller: mpc
    rate: 400
plant:
  position_noise: true
seeds: [0, 1]
z_limit: 0.3
"""


def simulate(*args) -> int:
    args = ["simulate", *args, "--no_progress_bar"]
    return main(parser.parse_args(args))


@pytest.fixture
def hover_file(tmp_path):
    path = tmp_path / "hover.yaml"
    path.write_text(HOVER.format(controller="mpc"))
    return path


def test_hover_run_succeeds(hover_file, tmp_path):
    out = tmp_path / "runs"
    assert simulate(str(hover_file), "-o", str(out)) == 0

    (log,) = find_run_logs(out)
    record = read_run_log(log)
    assert record.seed == 0
    assert record.vehicles[0].metrics.rmse < 0.005


def test_seed_override(hover_file, tmp_path):
    out = tmp_path / "runs"
    assert simulate(str(hover_file), "--seed", "7", "-o", str(out)) == 0
    assert [p.name for p in find_run_logs(out)] == ["hover_seed7.csv"]


def test_output_dir_from_environment(hover_file, tmp_path, monkeypatch):
    monkeypatch.setenv("FORMATION_OUTPUT_DIR", str(tmp_path / "env"))
    assert simulate(str(hover_file)) == 0
    assert len(find_run_logs(tmp_path / "env")) == 1


def test_out_flag_beats_environment(hover_file, tmp_path, monkeypatch):
    monkeypatch.setenv("FORMATION_OUTPUT_DIR", str(tmp_path / "env"))
    assert simulate(str(hover_file), "--out", str(tmp_path / "flag")) == 0
    assert len(find_run_logs(tmp_path / "flag")) == 1
    assert not (tmp_path / "env").exists()


def test_missing_weights_names_vehicle(tmp_path, capsys):
    path = tmp_path / "knode.yaml"
    path.write_text(HOVER.format(controller="knode_dw_mpc"))

    assert simulate(str(path), "-o", str(tmp_path)) == 1
    assert "vehicle 0" in capsys.readouterr().err
    assert find_run_logs(tmp_path) == []


def test_syntax_error_reports_location(tmp_path, capsys):
    path = tmp_path / "broken.yaml"
    path.write_text("name: x\nvehicles: [\n")

    assert simulate(str(path), "-o", str(tmp_path)) == 1
    assert f"{path}:" in capsys.readouterr().err


def test_tight_stack_exits_with_failure(tmp_path, capsys):
    path = tmp_path / "tight.yaml"
    path.write_text(TIGHT_STACK)
    out = tmp_path / "runs"

    assert simulate(str(path), "-o", str(out)) == 2
    assert "excursion" in capsys.readouterr().out
    logs = find_run_logs(out)
    assert len(logs) == 2
    assert all(read_run_log(log).failed for log in logs)
