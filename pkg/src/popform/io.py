"""File formats: FRF and time-series CSVs, model JSON, atomic writes."""
from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import gp, omgp
from .gp import Bounds, Hyperparameters, TrainingSet
from .modal import FrfRecord, ModalModel
from .spectral import TimeSeries

SCHEMA_VERSION = 1
FRF_HEADER = ("freq_hz", "real", "imag")
TIMESERIES_HEADER = ("t_s", "value")


class InputError(ValueError):
    """Malformed or inconsistent input file."""


def fmt(value) -> str:
    """Text form of one CSV cell; floats keep 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def atomic_write_text(path, text: str) -> Path:
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


def write_csv(path, header, rows) -> Path:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return atomic_write_text(path, buf.getvalue())


def read_csv(path, header) -> list:
    """Rows of a CSV whose first line must equal ``header``; values stay strings.

    Returns ``[(line_number, row), ...]``.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows:
        raise InputError(f"{path}:1: empty file, expected header {','.join(header)}")
    got = [c.strip() for c in rows[0]]
    if got != list(header):
        raise InputError(f"{path}:1: expected header {','.join(header)}, got {','.join(got)}")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
        out.append((i, row))
    return out


def _floats(path, rows, columns) -> np.ndarray:
    out = np.empty((len(rows), len(columns)))
    for r, (line, row) in enumerate(rows):
        for c, col in enumerate(columns):
            try:
                out[r, c] = float(row[col])
            except ValueError:
                raise InputError(f"{path}:{line}: not a number: {row[col]!r}") from None
            if not np.isfinite(out[r, c]):
                raise InputError(f"{path}:{line}: non-finite value {row[col]!r}")
    return out


# ---------------------------------------------------------------- FRF / time series


def write_frf_csv(path, frf: FrfRecord) -> Path:
    return write_csv(path, FRF_HEADER, zip(frf.frequencies, frf.real, frf.imag))


def read_frf_csv(path, meta: dict | None = None) -> FrfRecord:
    rows = read_csv(path, FRF_HEADER)
    if not rows:
        raise InputError(f"{path}: no data rows")
    a = _floats(path, rows, (0, 1, 2))
    if np.any(np.diff(a[:, 0]) <= 0):
        bad = int(np.flatnonzero(np.diff(a[:, 0]) <= 0)[0]) + 1
        raise InputError(f"{path}:{rows[bad][0]}: frequencies must be strictly increasing")
    meta = dict(meta or {})
    meta.setdefault("structure_id", Path(path).stem)
    return FrfRecord(a[:, 0], a[:, 1] + 1j * a[:, 2], meta)


def write_timeseries_csv(path, ts: TimeSeries, t0: float = 0.0) -> Path:
    t = t0 + ts.dt * np.arange(len(ts))
    return write_csv(path, TIMESERIES_HEADER, zip(t, ts.samples))


def read_timeseries_csv(path, channel: str = "") -> TimeSeries:
    rows = read_csv(path, TIMESERIES_HEADER)
    if len(rows) < 2:
        raise InputError(f"{path}: need at least two samples")
    a = _floats(path, rows, (0, 1))
    steps = np.diff(a[:, 0])
    dt = float(np.mean(steps))
    if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-6 * dt:
        bad = int(np.argmax(np.abs(steps - dt))) + 1
        raise InputError(f"{path}:{rows[bad][0]}: time column is not uniformly sampled")
    return TimeSeries(dt, a[:, 1], channel or Path(path).stem)


# ---------------------------------------------------------------- JSON


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc


def _check_schema(d: dict, kind: str, path="<dict>"):
    if d.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"{path}: unsupported schema_version {d.get('schema_version')!r}")
    if d.get("kind") != kind:
        raise InputError(f"{path}: expected a {kind!r} file, got {d.get('kind')!r}")


def write_modal_json(path, model: ModalModel) -> Path:
    return write_json(path, model.to_dict())


def read_modal_json(path) -> ModalModel:
    d = read_json(path)
    try:
        return ModalModel.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: invalid modal model ({exc})") from exc


def _training_to_dict(t: TrainingSet) -> dict:
    return {"x": t.x.tolist(), "y": t.y.tolist(), "part": t.part, "residue_sign": t.residue_sign}


def _training_from_dict(d: dict) -> TrainingSet:
    return TrainingSet(np.array(d["x"], float), np.array(d["y"], float), d["part"], int(d.get("residue_sign", 1)))


def gp_model_to_dict(model: gp.GpModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "gp",
        "hyperparameters": model.hyper.to_dict(),
        "bounds": model.bounds.to_dict(),
        "training": _training_to_dict(model.training),
        "nlml": model.nlml,
        "converged": model.converged,
        "message": model.message,
    }


def gp_model_from_dict(d: dict, path="<dict>") -> gp.GpModel:
    _check_schema(d, "gp", path)
    try:
        return gp.build_model(Hyperparameters.from_dict(d["hyperparameters"]), _training_from_dict(d["training"]),
                              Bounds.from_dict(d["bounds"]), bool(d.get("converged", True)), d.get("message", ""))
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: invalid GP model ({exc})") from exc


def omgp_model_to_dict(model: omgp.OmgpModel, band=None, grid=None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "omgp",
        "k": model.k,
        "components": [c.to_dict() for c in model.components],
        "shared_noise_std": model.shared_noise_std,
        "responsibilities": model.responsibilities.tolist(),
        "training": _training_to_dict(model.training),
        "bound_trace": list(model.bound_trace),
        "restart_bounds": list(model.restart_bounds),
        "bounds": model.bounds.to_dict(),
        "converged": model.converged,
        "message": model.message,
        "band": None if band is None else [float(v) for v in band],
        "grid": None if grid is None else [float(v) for v in grid],
    }


def omgp_model_from_dict(d: dict, path="<dict>") -> omgp.OmgpModel:
    _check_schema(d, "omgp", path)
    try:
        comps = tuple(Hyperparameters.from_dict(c) for c in d["components"])
        if len(comps) != int(d["k"]):
            raise InputError(f"{path}: k={d['k']} but {len(comps)} components stored")
        return omgp.OmgpModel(
            comps, float(d["shared_noise_std"]), np.array(d["responsibilities"], float),
            _training_from_dict(d["training"]), None, tuple(d.get("bound_trace", ())), (),
            Bounds.from_dict(d["bounds"]), bool(d.get("converged", True)), d.get("message", ""),
            tuple(d.get("restart_bounds", ())),
        )
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: invalid OMGP model ({exc})") from exc


def read_gp_model(path) -> gp.GpModel:
    return gp_model_from_dict(read_json(path), path)


def read_omgp_model(path):
    """Model plus the stored band and grid (either may be ``None``)."""
    d = read_json(path)
    model = omgp_model_from_dict(d, path)
    grid = None if d.get("grid") is None else np.array(d["grid"], float)
    band = None if d.get("band") is None else tuple(d["band"])
    return model, band, grid
