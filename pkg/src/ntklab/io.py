"""Config parsing and artifact writing (CSV, JSON, SVG), all written atomically."""
from __future__ import annotations

import configparser
import csv
import io
import json
import os
import tempfile
from dataclasses import fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .experiments import CellConfig, SyntheticSpec
from .trainer import COLUMNS, TrainConfig

# section -> (dataclass or None, allowed keys); network/eval keys map onto CellConfig
_SECTIONS = {
    "data": {f.name: f.type for f in fields(SyntheticSpec)},
    "network": {"width": "int", "init_scale": "float"},
    "train": {f.name: f.type for f in fields(TrainConfig)},
    "eval": {"n_test": "int", "gap_test": "int"},
}


def _coerce(section, key, raw, typ):
    field = f"{section}.{key}"
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw.strip().strip('"')
    except ValueError:
        raise ConfigError(field, f"cannot parse {raw!r} as {typ}") from None


def parse_config(text: str) -> CellConfig:
    """Parse an INI-style run config. Unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__",
                                   inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None
    values = {s: {} for s in _SECTIONS}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(section, "unknown section")
        for key, raw in cp.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
            values[section][key] = _coerce(section, key, raw, _SECTIONS[section][key])
    if "width" not in values["network"]:
        raise ConfigError("network.width", "required")
    train = TrainConfig(**values["train"])
    data = values["data"]
    if data.get("input_radius", "unit") not in ("unit", "sqrt_d"):
        raise ConfigError("data.input_radius", "must be 'unit' or 'sqrt_d'")
    for key in ("n", "d"):
        if key in data and data[key] < (2 if key == "n" else 1):
            raise ConfigError(f"data.{key}", "too small")
    net = values["network"]
    if net["width"] < 1:
        raise ConfigError("network.width", "must be >= 1")
    if net.get("init_scale", 1.0) <= 0:
        raise ConfigError("network.init_scale", "must be positive")
    return CellConfig(SyntheticSpec(**data), width=net["width"], init_scale=net.get("init_scale", 1.0),
                      train=train, **values["eval"])


def load_config(path) -> CellConfig:
    return parse_config(Path(path).read_text())


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def trajectory_csv(traj) -> str:
    return csv_text(COLUMNS, traj.records)


def write_json(path, obj):
    return atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def load_inputs_csv(path) -> np.ndarray:
    """Numeric CSV of input points, one per row; a non-numeric first line is a header."""
    lines = Path(path).read_text().strip().splitlines()
    if not lines:
        raise ConfigError("dataset", "empty file")
    try:
        [float(v) for v in lines[0].split(",")]
    except ValueError:
        lines = lines[1:]
    try:
        return np.array([[float(v) for v in ln.split(",")] for ln in lines if ln.strip()], dtype=float)
    except ValueError as exc:
        raise ConfigError("dataset", f"non-numeric entry: {exc}") from None
