"""CSV and JSON reading/writing with line-numbered diagnostics."""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PREDICTOR_COLUMNS = ("mu", "rho", "qlo", "qhi")
BAND_COLUMNS = ("id", "lower", "upper", "infinite", "threshold", "k_star", "alpha_tilde")
_FEATURE = re.compile(r"x(\d+)$")


class InputError(ValueError):
    """Malformed input file; the message starts with ``path:line:``."""

    def __init__(self, path, line, message):
        self.path, self.line = str(path), line
        super().__init__(f"{path}:{line}: {message}")


@dataclass(frozen=True, eq=False)
class CsvTable:
    path: str
    columns: tuple
    data: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def has(self, name: str) -> bool:
        return name in self.columns

    def features(self) -> np.ndarray:
        """Columns ``x1..xp`` in order; they must be numbered contiguously from 1."""
        idx = sorted(int(m.group(1)) for c in self.columns if (m := _FEATURE.match(c)))
        if not idx:
            raise InputError(self.path, 1, "no feature columns x1..xp in header")
        if idx != list(range(1, len(idx) + 1)):
            raise InputError(self.path, 1, f"feature columns must be x1..x{len(idx)}")
        return np.column_stack([self.column(f"x{j}") for j in idx])


def read_csv(path) -> CsvTable:
    """Numeric CSV with a header row; every cell must parse as a float."""
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise InputError(path, 0, f"cannot open: {exc.strerror}") from None
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(path, 1, "empty file") from None
        header = tuple(h.strip() for h in header)
        if len(set(header)) != len(header) or not all(header):
            raise InputError(path, 1, "header has empty or duplicate column names")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(path, line, f"expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise InputError(path, line, f"not a number: {bad!r}") from None
    if not rows:
        raise InputError(path, 2, "no data rows")
    return CsvTable(str(path), header, np.array(rows, dtype=float))


def _is_float(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


@dataclass(frozen=True, eq=False)
class CalibrationData:
    X: np.ndarray
    values: np.ndarray
    scored: bool  # True when the file holds precomputed scores ``v``


def read_calibration(path) -> CalibrationData:
    table = read_csv(path)
    has_y, has_v = table.has("y"), table.has("v")
    if has_y == has_v:
        raise InputError(path, 1, "calibration file needs exactly one of the columns y or v")
    values = table.column("v" if has_v else "y")
    if not np.all(np.isfinite(values)):
        line = 2 + int(np.flatnonzero(~np.isfinite(values))[0])
        raise InputError(path, line, "response/score must be finite")
    return CalibrationData(table.features(), values, has_v)


def read_training(path) -> tuple[np.ndarray, np.ndarray]:
    table = read_csv(path)
    if not table.has("y"):
        raise InputError(path, 1, "training file needs a y column")
    return table.features(), table.column("y")


def read_test(path) -> tuple[np.ndarray, dict]:
    """Features plus whichever predictor columns are present."""
    table = read_csv(path)
    extra = {c: table.column(c) for c in PREDICTOR_COLUMNS if table.has(c)}
    return table.features(), extra


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return "" if x is None else str(x)


def write_rows(path, rows: list[dict], columns=None):
    """CSV from a list of dicts; floats use ``repr`` so output is exact and stable."""
    columns = list(columns or (rows[0].keys() if rows else []))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


def write_bands(path, lower, upper, threshold, k_star=None, alpha_tilde=None):
    """Per-point bands; ``infinite`` marks an unbounded threshold (an empty band is not infinite)."""
    T = len(lower)
    k_star = np.full(T, -1) if k_star is None else k_star
    alpha_tilde = np.full(T, np.nan) if alpha_tilde is None else alpha_tilde
    rows = [
        {
            "id": i,
            "lower": lower[i],
            "upper": upper[i],
            "infinite": bool(threshold[i] == np.inf),
            "threshold": threshold[i],
            "k_star": k_star[i],
            "alpha_tilde": alpha_tilde[i],
        }
        for i in range(T)
    ]
    write_rows(path, rows, BAND_COLUMNS)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def write_json(path, obj):
    """Deterministic JSON: sorted keys, NaN as null, infinities as strings."""
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class RunConfig:
    """Settings for ``tune`` and ``predict`` loaded from a JSON file."""

    family: str = "R"
    alpha: float = 0.9
    rule: str = "lcp"
    seed: int | None = None
    localizer: dict = field(default_factory=dict)
    tuning: dict = field(default_factory=dict)


_TUNING_KEYS = {"lambda": "lam", "lam": "lam", "delta": "delta", "B": "B", "grid_size": "grid_size", "seed": "seed"}
_LOCALIZER_KEYS = {"dissimilarity", "h", "p0", "radius"}


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(path, 0, f"cannot open: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(path, exc.lineno, exc.msg) from None
    if not isinstance(raw, dict):
        raise InputError(path, 1, "config must be a JSON object")

    def where(key):
        m = re.search(rf'"{re.escape(key)}"\s*:', text)
        return text.count("\n", 0, m.start()) + 1 if m else 1

    allowed = {"family", "alpha", "rule", "seed", "localizer", "tuning"}
    for key in raw:
        if key not in allowed:
            raise InputError(path, where(key), f"unknown key {key!r}")
    loc = raw.get("localizer", {})
    tun = raw.get("tuning", {})
    for section, keys, name in ((loc, _LOCALIZER_KEYS, "localizer"), (tun, set(_TUNING_KEYS), "tuning")):
        if not isinstance(section, dict):
            raise InputError(path, where(name), f"{name} must be an object")
        for key in section:
            if key not in keys:
                raise InputError(path, where(key), f"unknown {name} key {key!r}")
    tuning = {_TUNING_KEYS[k]: v for k, v in tun.items()}
    cfg = {k: raw[k] for k in ("family", "alpha", "rule", "seed") if k in raw}
    return RunConfig(localizer=dict(loc), tuning=tuning, **cfg)
