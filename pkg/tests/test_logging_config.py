import json
import logging
import sys
import os

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.core.logging_config import JsonFormatter, setup_logging


def make_record(**extra):
    record = logging.LogRecord("src.core.training", logging.INFO, __file__, 1, "Epoch %d done", (3,), None)
    for key, value in extra.items():
        setattr(record, key, value)
    return record


def test_json_formatter_includes_run_context():
    line = json.loads(JsonFormatter().format(make_record(scheme="ADALOSS", seed=4, epoch=3)))
    assert line["message"] == "Epoch 3 done"
    assert line["level"] == "INFO"
    assert line["name"] == "src.core.training"
    assert (line["scheme"], line["seed"], line["epoch"]) == ("ADALOSS", 4, 3)
    assert "base" not in line


def test_json_formatter_records_exceptions():
    try:
        raise RuntimeError("boom")
    except RuntimeError:
        record = logging.LogRecord("x", logging.ERROR, __file__, 1, "failed", (), sys.exc_info())
    line = json.loads(JsonFormatter().format(record))
    assert "RuntimeError: boom" in line["exception"]


def test_setup_logging_replaces_handlers(tmp_path):
    root = logging.getLogger()
    saved = root.handlers[:]
    try:
        setup_logging(level="DEBUG", log_file=str(tmp_path / "run.log"))
        setup_logging(level="DEBUG", log_file=str(tmp_path / "run.log"))
        assert len(root.handlers) == 2
        assert all(isinstance(h.formatter, JsonFormatter) for h in root.handlers)
        logging.getLogger("src.test").info("hello", extra={"base": 2.0})
        for h in root.handlers:
            h.flush()
        line = json.loads((tmp_path / "run.log").read_text().splitlines()[-1])
        assert line["base"] == 2.0
    finally:
        for h in root.handlers[:]:
            root.removeHandler(h)
            h.close()
        for h in saved:
            root.addHandler(h)
