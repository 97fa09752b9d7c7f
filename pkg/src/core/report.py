import json
import math
from pathlib import Path
from typing import Any, Optional

import pandas as pd
from pydantic import BaseModel, Field, field_validator, model_validator

from src.core.exceptions import IoFailure, ValidationError
from src.core.logging_setup import get_logger

logger = get_logger("report")

REPORT_SCHEMA_VERSION = "1.0"
FLOAT_FORMAT = "%.12e"


def _as_float(value: Any) -> Any:
    # emitted floats are strings, "inf" and "nan" included
    if isinstance(value, str):
        return float(value)
    return value


class Metric(BaseModel):
    """
    One measured quantity of a verification run.

    A metric with a `bound` (upper) and/or a `lower` limit always carries a pass flag; when
    no flag is given it is derived from the limits. Metrics without limits are informational.
    """
    name: str
    value: float
    bound: Optional[float] = None
    lower: Optional[float] = None
    passed: Optional[bool] = None
    witness: Optional[list[float]] = None
    unit: str = ""

    @field_validator("value", "bound", "lower", mode="before")
    @classmethod
    def _parse_number(cls, value: Any) -> Any:
        return _as_float(value)

    @field_validator("witness", mode="before")
    @classmethod
    def _parse_witness(cls, value: Any) -> Any:
        if value is None:
            return None
        return [_as_float(v) for v in value]

    @model_validator(mode="after")
    def _derive_pass(self) -> "Metric":
        if self.passed is None and (self.bound is not None or self.lower is not None):
            ok = not math.isnan(self.value)
            if self.bound is not None:
                ok = ok and self.value <= self.bound
            if self.lower is not None:
                ok = ok and self.value >= self.lower
            self.passed = ok
        return self


class VerificationReport(BaseModel):
    """
    Named metrics of one suite together with the configuration echo.
    """
    suite: str
    config: dict[str, Any] = Field(default_factory=dict)
    metrics: list[Metric] = Field(default_factory=list)
    tables: dict[str, list[list[float]]] = Field(default_factory=dict)
    wall_time: Optional[float] = None
    version: str = REPORT_SCHEMA_VERSION

    @field_validator("tables", mode="before")
    @classmethod
    def _parse_tables(cls, value: Any) -> Any:
        return {key: [[_as_float(v) for v in row] for row in rows] for key, rows in value.items()}

    @field_validator("wall_time", mode="before")
    @classmethod
    def _parse_wall_time(cls, value: Any) -> Any:
        return _as_float(value)

    def add(
        self,
        name: str,
        value: float,
        bound: Optional[float] = None,
        lower: Optional[float] = None,
        passed: Optional[bool] = None,
        witness: Optional[list[float]] = None,
        unit: str = "",
    ) -> Metric:
        metric = Metric(
            name=name,
            value=float(value),
            bound=None if bound is None else float(bound),
            lower=None if lower is None else float(lower),
            passed=passed,
            witness=None if witness is None else [float(v) for v in witness],
            unit=unit,
        )
        self.metrics.append(metric)
        if metric.passed is False:
            logger.warning(f"[{self.suite}] metric {name}={value:.6e} outside its limits")
        return metric

    def add_table(self, name: str, rows: list[tuple[float, float]]) -> None:
        self.tables[name] = [[float(a), float(b)] for a, b in rows]

    def metric(self, name: str) -> Metric:
        for metric in self.metrics:
            if metric.name == name:
                return metric
        raise KeyError(name)

    def extend(self, other: "VerificationReport", prefix: Optional[str] = None) -> None:
        """Copy metrics and tables of `other` into this report, namespaced by `prefix`."""
        label = f"{prefix}." if prefix else ""
        for metric in other.metrics:
            self.metrics.append(metric.model_copy(update={"name": f"{label}{metric.name}"}))
        for key, rows in other.tables.items():
            self.tables[f"{label}{key}"] = rows

    @property
    def failed(self) -> list[Metric]:
        return [m for m in self.metrics if m.passed is False]

    @property
    def all_passed(self) -> bool:
        return not self.failed


def _format_floats(obj: Any) -> Any:
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, float):
        return FLOAT_FORMAT % obj
    if isinstance(obj, dict):
        return {key: _format_floats(value) for key, value in obj.items()}
    if isinstance(obj, list):
        return [_format_floats(value) for value in obj]
    return obj


def report_to_json(report: VerificationReport, include_timing: bool = False) -> str:
    payload = report.model_dump(mode="python")
    if not include_timing:
        payload.pop("wall_time", None)
    payload["metrics"] = _format_floats(payload["metrics"])
    payload["tables"] = _format_floats(payload["tables"])
    if "wall_time" in payload:
        payload["wall_time"] = _format_floats(payload["wall_time"])
    return json.dumps(payload, sort_keys=True, indent=2, default=str) + "\n"


def report_to_frame(report: VerificationReport) -> pd.DataFrame:
    rows = [
        {"name": m.name, "value": m.value, "bound": m.bound, "pass": m.passed}
        for m in report.metrics
    ]
    return pd.DataFrame(rows, columns=["name", "value", "bound", "pass"])


def emit(
    report: VerificationReport,
    fmt: str,
    path: str | Path,
    include_timing: bool = False,
) -> None:
    """
    Write a report to disk.

    Args:
        report: the report to write.
        fmt: "json" for the full report, "csv" for one row per metric.
        path: destination file.
        include_timing: keep the wall time in the JSON output. Off by default so that
            identical runs produce byte-identical files.

    Raises:
        IoFailure: the file cannot be written.
    """
    path = Path(path)
    try:
        if fmt == "json":
            path.write_text(report_to_json(report, include_timing=include_timing), encoding="utf-8")
        elif fmt == "csv":
            report_to_frame(report).to_csv(path, index=False, float_format=FLOAT_FORMAT)
        else:
            raise ValidationError(f"Unknown report format {fmt!r}", {"format": fmt})
    except OSError as e:
        raise IoFailure(f"Cannot write report to {path}: {e}", {"path": str(path)}) from e
    logger.info(f"Report '{report.suite}' written as {fmt} to {path}")


def emit_table(report: VerificationReport, table: str, path: str | Path) -> None:
    """Write one curve of the report as a two-column CSV (M_or_k, value)."""
    frame = pd.DataFrame(report.tables[table], columns=["M_or_k", "value"])
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        raise IoFailure(f"Cannot write table {table} to {path}: {e}", {"path": str(path)}) from e


def load_report(path: str | Path) -> VerificationReport:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"Cannot read report {path}: {e}", {"path": str(path)}) from e
    return VerificationReport.model_validate(json.loads(text))
