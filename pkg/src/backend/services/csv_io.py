from typing import List, Literal, Union
import json
import logging
import math
import os
import re
import sys

import numpy as np
import pandas as pd
from pydantic import BaseModel

from services.bootstrap import TestReport
from services.errors import DataFormatError
from services.gcm import CondSample
from services.logrank import CensoredSample
from services.mmd import TwoSample
from services.simlab import ExperimentResult

logger = logging.getLogger(__name__)

Schema = Literal["two_sample", "survival", "conditional"]
Sample = Union[TwoSample, CensoredSample, CondSample]

EXPERIMENT_COLUMNS = ["param", "rate", "ci_low", "ci_high", "reps"]
FLOAT_FORMAT = "%.17g"
# placeholder that carries a float through json.dumps
FLOAT_TOKEN = "\x00float\x00"
FLOAT_PATTERN = re.compile(r'"\\u0000float\\u0000(\d+)\\u0000float\\u0000"')


def _float_text(value: float) -> str:
    if not math.isfinite(value):
        raise ValueError(f"cannot write non-finite number {value!r} to a JSON report")
    text = FLOAT_FORMAT % value
    # keep floats recognisable as floats once read back
    return text + ".0" if text.lstrip("-").isdigit() else text


def _swap_floats(value, texts: List[str]):
    if isinstance(value, float):
        texts.append(_float_text(value))
        return f"{FLOAT_TOKEN}{len(texts) - 1}{FLOAT_TOKEN}"
    if isinstance(value, dict):
        return {key: _swap_floats(item, texts) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_swap_floats(item, texts) for item in value]
    return value


def dumps_report(data) -> str:
    """json.dumps with every float written to 17 significant digits"""
    texts: List[str] = []
    encoded = json.dumps(_swap_floats(data, texts), indent=2)
    return FLOAT_PATTERN.sub(lambda m: texts[int(m.group(1))], encoded) + "\n"


def _read_frame(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DataFormatError("file does not exist", path)
    try:
        # blank lines are kept so that row indices map back to file lines
        return pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DataFormatError("file is empty (a header row is required)", path)
    except pd.errors.ParserError as e:
        raise DataFormatError(f"malformed CSV: {e}", path)
    except UnicodeDecodeError as e:
        raise DataFormatError(f"not valid UTF-8: {e}", path)


def _parse_float(cell: str, column: str, path: str, line: int) -> float:
    try:
        value = float(cell.strip())
    except ValueError:
        raise DataFormatError(f"column {column!r}: {cell!r} is not a number", path, line)
    if not math.isfinite(value):
        raise DataFormatError(f"column {column!r}: {cell!r} is not finite", path, line)
    return value


def _parse_flag(cell: str, column: str, path: str, line: int) -> int:
    value = cell.strip()
    if value not in ("0", "1"):
        raise DataFormatError(f"column {column!r}: expected 0 or 1, got {cell!r}", path, line)
    return int(value)


def _expect_header(frame: pd.DataFrame, expected: List[str], path: str):
    columns = [c.strip() for c in frame.columns]
    if columns != expected:
        raise DataFormatError(f"expected header {','.join(expected)}, got {','.join(columns)}", path, 1)


def _rows(frame: pd.DataFrame):
    """(1-based file line, row cells); the header is line 1"""
    for index, row in enumerate(frame.itertuples(index=False, name=None)):
        yield index + 2, row


def _check_row(row, width: int, path: str, line: int):
    # pandas pads short rows with NaN instead of strings
    present = [cell for cell in row if isinstance(cell, str) and cell.strip() != ""]
    if not present:
        raise DataFormatError("empty row", path, line)
    if len(row) != width or any(not isinstance(cell, str) for cell in row):
        raise DataFormatError(f"expected {width} fields", path, line)


def read_csv(path: str, schema: Schema) -> Sample:
    """
    two_sample:  value,group
    survival:    time,event,group
    conditional: x,y,z1,...,zd
    """
    frame = _read_frame(path)

    if schema == "two_sample":
        _expect_header(frame, ["value", "group"], path)
        values, groups = [], []
        for line, row in _rows(frame):
            _check_row(row, 2, path, line)
            values.append(_parse_float(row[0], "value", path, line))
            groups.append(_parse_flag(row[1], "group", path, line))
        values, groups = np.asarray(values), np.asarray(groups, dtype=int)
        _check_groups(groups, path)
        sample = TwoSample(values[groups == 0].reshape(-1, 1), values[groups == 1].reshape(-1, 1))

    elif schema == "survival":
        _expect_header(frame, ["time", "event", "group"], path)
        times, events, groups = [], [], []
        for line, row in _rows(frame):
            _check_row(row, 3, path, line)
            time = _parse_float(row[0], "time", path, line)
            if time < 0:
                raise DataFormatError(f"column 'time': negative value {row[0]!r}", path, line)
            times.append(time)
            events.append(_parse_flag(row[1], "event", path, line))
            groups.append(_parse_flag(row[2], "group", path, line))
        groups = np.asarray(groups, dtype=int)
        _check_groups(groups, path)
        sample = CensoredSample(np.asarray(times), np.asarray(events, dtype=bool), groups)

    elif schema == "conditional":
        columns = [c.strip() for c in frame.columns]
        d = len(columns) - 2
        if d < 1:
            raise DataFormatError("conditional schema needs x,y and at least one z column", path, 1)
        _expect_header(frame, ["x", "y"] + [f"z{i}" for i in range(1, d + 1)], path)
        rows = []
        for line, row in _rows(frame):
            _check_row(row, d + 2, path, line)
            rows.append([_parse_float(cell, columns[j], path, line) for j, cell in enumerate(row)])
        if not rows:
            raise DataFormatError("no data rows", path)
        data = np.asarray(rows)
        sample = CondSample(data[:, 0], data[:, 1], data[:, 2:])

    else:
        raise DataFormatError(f"unknown schema {schema!r}", path)

    logger.info(f"Read {schema} sample from {path}")
    return sample


def _check_groups(groups: np.ndarray, path: str):
    for label in (0, 1):
        if not np.any(groups == label):
            raise DataFormatError(f"group {label} is empty", path)


def sample_frame(sample: Sample) -> pd.DataFrame:
    if isinstance(sample, TwoSample):
        if sample.x.shape[1] != 1:
            raise DataFormatError("the value,group schema holds one-dimensional samples only")
        return pd.DataFrame({
            "value": np.concatenate([sample.x[:, 0], sample.y[:, 0]]),
            "group": np.concatenate([np.zeros(sample.n0, dtype=int), np.ones(sample.n1, dtype=int)]),
        })
    if isinstance(sample, CensoredSample):
        return pd.DataFrame({
            "time": sample.time,
            "event": sample.event.astype(int),
            "group": sample.group,
        })
    columns = {"x": sample.x, "y": sample.y}
    for j in range(sample.d):
        columns[f"z{j + 1}"] = sample.z[:, j]
    return pd.DataFrame(columns)


def write_csv(sample: Sample, path: str) -> None:
    """Write a sample in its read_csv schema; floats keep 17 significant digits"""
    sample_frame(sample).to_csv(path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8", lineterminator="\n")


def experiment_csv(result: ExperimentResult) -> str:
    frame = pd.DataFrame(result.rows(), columns=EXPERIMENT_COLUMNS)
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def render_report(report: Union[TestReport, ExperimentResult, BaseModel], as_csv: bool = False,
                  emit_replicates: bool = False) -> str:
    if isinstance(report, ExperimentResult) and as_csv:
        return experiment_csv(report)
    if isinstance(report, TestReport):
        data = report.to_json_dict(emit_replicates=emit_replicates)
    else:
        data = report.model_dump(mode="json")
    return dumps_report(data)


def write_report(report: Union[TestReport, ExperimentResult, BaseModel], path: str,
                 emit_replicates: bool = False) -> None:
    """JSON for test and spectrum reports; experiments go to CSV when the path ends in .csv. '-' is stdout."""
    text = render_report(report, as_csv=path.endswith(".csv"), emit_replicates=emit_replicates)
    if path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    except OSError as e:
        raise OSError(f"cannot write report to {path}: {e}") from e
    logger.info(f"Wrote report to {path}")
