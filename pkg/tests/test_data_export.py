import sys
import os

import pytest
from pydantic import ValidationError

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.core.errors import ReportWriteError
from src.schemas.experiment import EannSimulateConfig, ExperimentConfig, ReportFormat, WeightScheme
from src.schemas.reports import TrainingReport
from src.services.data_export import emit_report, load_csv_rows, load_json_report, render_report
from src.services.experiment_service import run_eann_simulation


@pytest.fixture
def simulation_report():
    return run_eann_simulation(EannSimulateConfig(base=2.0, members=4, grid_points=31))


def test_same_config_gives_identical_bytes(tmp_path):
    cfg = EannSimulateConfig(base=3.0, members=5, grid_points=50)
    a = emit_report(run_eann_simulation(cfg), ReportFormat.JSON, tmp_path / "a.json")
    b = emit_report(run_eann_simulation(cfg), ReportFormat.JSON, tmp_path / "b.json")
    assert a.read_bytes() == b.read_bytes()


def test_json_report_embeds_config_and_version(simulation_report, tmp_path):
    path = emit_report(simulation_report, "json", tmp_path / "out" / "sim.json")
    doc = load_json_report(path)
    assert doc["schema_version"] == 1
    assert doc["kind"] == "eann_simulation"
    assert doc["config"]["base"] == 2.0
    assert path.read_text().endswith("}\n")


def test_csv_rows_read_back(simulation_report, tmp_path):
    path = emit_report(simulation_report, ReportFormat.CSV, tmp_path / "sim.csv")
    rows = load_csv_rows(path)
    assert len(rows) == 31
    assert list(rows[0]) == ["budget", "member", "z", "x_prime", "c"]
    for row, record in zip(rows, simulation_report.inflation.per_budget):
        assert float(row["c"]) == pytest.approx(record.c)
        assert int(row["member"]) == record.member


def test_missing_values_are_blank_in_csv():
    report = TrainingReport(
        dataset="BLOBS",
        scheme="OPT",
        train_losses=[0.5, 0.25],
        validation_losses=[0.6, 0.3],
        validation_errors=[0.1, 0.0],
    )
    lines = render_report(report, ReportFormat.CSV).splitlines()
    assert lines[0] == "head,weight,train_loss,validation_loss,validation_error"
    assert lines[1] == "1,,0.5,0.6,0.1"


def test_unwritable_path_raises(simulation_report, tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    with pytest.raises(ReportWriteError) as excinfo:
        emit_report(simulation_report, ReportFormat.JSON, blocker / "sim.json")
    assert "blocker" in excinfo.value.path


def test_empty_scheme_list_is_rejected():
    with pytest.raises(ValidationError):
        ExperimentConfig(schemes=[])
    with pytest.raises(ValidationError):
        ExperimentConfig(schemes=[WeightScheme.OPT])
