import csv
import io
import json
import logging
from pathlib import Path
from typing import Dict, List, Union

from src.core.config import REPORT_DIR
from src.core.errors import ReportWriteError
from src.schemas.experiment import ReportFormat
from src.schemas.reports import BaseReport

logger = logging.getLogger(__name__)


def default_report_path(report: BaseReport, fmt: ReportFormat) -> Path:
    return Path(REPORT_DIR) / f"{report.kind}.{fmt.value}"


def render_report(report: BaseReport, fmt: ReportFormat) -> str:
    """
    Serialize a report. JSON keeps the model's field order; CSV writes the
    report's flat table with a header row taken from the first row's keys.
    """
    if fmt == ReportFormat.JSON:
        return json.dumps(report.model_dump(mode="json"), indent=2, allow_nan=False) + "\n"

    rows = report.csv_rows()
    buffer = io.StringIO()
    if rows:
        writer = csv.DictWriter(buffer, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if v is None else v for k, v in row.items()})
    return buffer.getvalue()


def emit_report(report: BaseReport, fmt: Union[ReportFormat, str] = ReportFormat.JSON, path=None) -> Path:
    """
    Write `report` to `path` (default: REPORT_DIR/<kind>.<format>).

    Returns:
        The path written.

    Raises:
        ReportWriteError: the file or its directory cannot be written.
    """
    fmt = ReportFormat(fmt)
    path = Path(path) if path else default_report_path(report, fmt)
    content = render_report(report, fmt)
    if not content:
        logger.warning(f"{report.kind} report has no tabular rows; writing an empty CSV to {path}")

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(content)
    except OSError as e:
        raise ReportWriteError(f"cannot write report to {path}: {e.strerror or e}", str(path)) from e

    logger.info(f"Wrote {report.kind} report to {path}")
    return path


def load_csv_rows(path) -> List[Dict[str, str]]:
    """Read back a CSV report as a list of string-valued rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def load_json_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
