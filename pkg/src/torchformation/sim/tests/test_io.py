import json
from pathlib import Path

import pytest
import torch

from torchformation.control.ocp import OcpConfig
from torchformation.errors import CorruptLogError
from torchformation.sim.io import (
    OUTPUT_DIR_ENV,
    find_run_logs,
    metrics_path,
    output_dir,
    read_run_log,
    write_run_log,
)
from torchformation.sim.runner import run_scenario
from torchformation.sim.scenario import (
    Formation,
    PlantConfig,
    Scenario,
    TrajectorySpec,
    VehicleConfig,
)


def short_scenario(**kwargs) -> Scenario:
    return Scenario(
        name="short",
        trajectory=TrajectorySpec(
            kind="hover", hover_before=0.05, hover_after=0.05
        ),
        vehicles=[
            VehicleConfig("mpc", rate=200.0),
            VehicleConfig("l1_dw_mpc", rate=400.0),
        ],
        solver=OcpConfig(N=6),
        seeds=[0],
        **kwargs,
    )


@pytest.fixture(scope="module")
def record():
    scenario = short_scenario(plant=PlantConfig(position_noise=True))
    return run_scenario(scenario, 1)


def test_round_trip_is_exact(record, tmp_path):
    path = write_run_log(record, tmp_path)
    loaded = read_run_log(path)

    assert loaded.name == record.name
    assert loaded.seed == record.seed
    assert loaded.config_hash == record.config_hash
    assert loaded.failure is None
    for a, b in zip(record.vehicles, loaded.vehicles, strict=True):
        assert a.role == b.role and a.controller == b.controller
        assert a.rate == b.rate
        assert a.compensation_sign == b.compensation_sign
        assert a.status == b.status
        for key in a.series:
            assert torch.equal(a.series[key], b.series[key]), key
        assert a.metrics == b.metrics


def test_logs_are_byte_identical_across_runs(tmp_path):
    scenario = short_scenario(plant=PlantConfig(position_noise=True))
    first = write_run_log(run_scenario(scenario, 2), tmp_path / "a")
    second = write_run_log(run_scenario(scenario, 2), tmp_path / "b")
    assert first.read_bytes() == second.read_bytes()
    summaries = [metrics_path(p).read_bytes() for p in (first, second)]
    assert summaries[0] == summaries[1]


def test_failed_run_round_trip(tmp_path):
    record = run_scenario(short_scenario(formation=Formation(z2=0.05)), 0)
    loaded = read_run_log(write_run_log(record, tmp_path))

    assert loaded.failure == record.failure
    assert all(v.metrics is None for v in loaded.vehicles)
    summary_file = metrics_path(tmp_path / "short_seed0.csv")
    summary = json.loads(summary_file.read_text())
    assert summary["failure"].startswith("collision")


def test_header_carries_provenance(record, tmp_path):
    lines = write_run_log(record, tmp_path).read_text().splitlines()
    header = [line for line in lines if line.startswith("#")]
    keys = [line[2:].split(":")[0] for line in header[1:]]
    assert keys[:5] == ["name", "config_hash", "seed", "version", "commit"]
    assert any('"compensation_sign": "negated"' in line for line in header)


def test_corrupt_value_names_file_and_row(record, tmp_path):
    path = write_run_log(record, tmp_path)
    lines = path.read_text().splitlines()
    n_header = sum(line.startswith("#") for line in lines)
    target = n_header + 4  # 0-based index of the fourth data row
    fields = lines[target].split(",")
    fields[3] = "garbage"
    lines[target] = ",".join(fields)
    path.write_text("\n".join(lines) + "\n")

    with pytest.raises(CorruptLogError) as info:
        read_run_log(path)
    assert info.value.row == target + 1
    assert str(path) in str(info.value)


def test_truncated_row(record, tmp_path):
    path = write_run_log(record, tmp_path)
    lines = path.read_text().splitlines()
    lines[-1] = lines[-1] + ",1,2,3"
    path.write_text("\n".join(lines) + "\n")

    with pytest.raises(CorruptLogError) as info:
        read_run_log(path)
    assert info.value.row == len(lines)


def test_tampered_metrics_detected(record, tmp_path):
    path = write_run_log(record, tmp_path)
    summary_file = metrics_path(path)
    summary = json.loads(summary_file.read_text())
    summary["vehicles"][0]["rmse"] += 1e-9
    summary_file.write_text(json.dumps(summary))

    with pytest.raises(CorruptLogError, match="rmse"):
        read_run_log(path)


def test_not_a_run_log(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(CorruptLogError):
        read_run_log(path)
    assert find_run_logs(tmp_path) == []


def test_find_run_logs(record, tmp_path):
    path = write_run_log(record, tmp_path / "nested")
    (tmp_path / "table.csv").write_text("x\n1\n")
    assert find_run_logs(tmp_path) == [path]


def test_output_dir_override(monkeypatch, tmp_path):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    assert output_dir("runs") == Path("runs")
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    assert output_dir("runs") == tmp_path
