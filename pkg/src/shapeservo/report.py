"""Telemetry CSV, summary JSON and plots for a finished run."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .diagnostics import LyapunovTrace
from .plotting import plot_norms


def csv_header(n: int, m: int) -> list[str]:
    cols = ["t"]
    cols += [f"q{i + 1}" for i in range(n)]
    cols += [f"qdot{i + 1}" for i in range(n)]
    cols += [f"x{i + 1}" for i in range(m)]
    cols += [f"xhat{i + 1}" for i in range(m)]
    cols += [f"e{i + 1}" for i in range(m)]
    return cols + ["norm_e", "norm_xtilde", "norm_xtildedot", "rank", "min_sv", "clamped", "disturbance"]


def _num(v) -> str:
    return repr(float(v))


def telemetry_rows(telemetry):
    for r in telemetry:
        yield ([_num(r.t)] + [_num(v) for v in r.q] + [_num(v) for v in r.qdot]
               + [_num(v) for v in r.x] + [_num(v) for v in r.x_hat] + [_num(v) for v in r.e]
               + [_num(r.norm_e), _num(r.norm_xtilde), _num(r.norm_xtildedot), str(int(r.rank)),
                  _num(r.min_sv), str(int(bool(r.clamped))), str(int(r.disturbance))])


def write_telemetry_csv(telemetry, path, n: int, m: int) -> Path:
    """Floats are written with ``repr`` so identical runs give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(n, m))
        w.writerows(telemetry_rows(telemetry))
    return path


def read_telemetry_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float) if body else np.empty((0, len(header)))
    return header, data


def write_lyapunov_csv(trace: LyapunovTrace, path) -> Path:
    path = Path(path)
    rows = list(trace.rows())
    cols = ["t", "V", "control", "estimation", "weights", "auxiliary", "R", "H", "delta_norm", "disturbed"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([str(int(row[c])) if c == "disturbed" else _num(row[c]) for c in cols])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "value") and not isinstance(obj, (str, int, float, bool)):
        return obj.value
    return obj


def write_json(doc: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    return path


def emit_outputs(result, out_dir, stem: str = "run", plots: bool = True, n: int | None = None,
                 m: int | None = None) -> dict[str, Path]:
    """Write ``<stem>.csv``, ``<stem>_summary.json`` and (optionally) ``<stem>_norms.svg``.

    ``n``/``m`` are only needed when the telemetry is empty.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tel = result.telemetry
    if tel:
        n, m = len(tel[0].q), len(tel[0].x)
    elif n is None or m is None:
        raise ValueError("empty telemetry needs explicit n and m")
    paths = {
        "csv": write_telemetry_csv(tel, out / f"{stem}.csv", n, m),
        "summary": write_json(result.summary, out / f"{stem}_summary.json"),
    }
    if plots:
        paths["plot"] = out / f"{stem}_norms.svg"
        plot_norms(tel, paths["plot"], title=result.summary.get("name", stem))
    return paths
