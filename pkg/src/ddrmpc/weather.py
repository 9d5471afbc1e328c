"""Weather records, Hargreaves evapotranspiration and forecast-error windows.

CSV schema (one row per sampling period, sorted or not)::

    timestamp,p_meas,t_meas,et_meas,p_fc_1,...,p_fc_H,t_fc_1,...,t_fc_H

``timestamp`` is ISO-8601 and marks the period start; ``p_fc_l`` and
``t_fc_l`` are forecasts issued at that timestamp for the period ``l - 1``
steps ahead (lead 1 is the period that starts at ``timestamp``).  Units are
mm and degrees C.  Missing values are empty cells.
"""

from __future__ import annotations

import csv
import math
import re
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

HARGREAVES_OFFSET_C = 17.8


class IngestionError(ValueError):
    """Raised when a weather CSV violates the schema; lists offending rows."""

    def __init__(self, problems: list[tuple[int, str]]):
        self.problems = problems
        lines = "\n".join(f"  line {ln}: {msg}" for ln, msg in problems)
        super().__init__(f"{len(problems)} malformed row(s):\n{lines}")


@dataclass(frozen=True)
class WeatherRecord:
    timestamp: datetime
    p_forecast: np.ndarray
    p_measured: float
    t_forecast: np.ndarray
    t_measured: float
    et_measured: float = math.nan

    def __post_init__(self):
        object.__setattr__(self, "p_forecast", np.asarray(self.p_forecast, float))
        object.__setattr__(self, "t_forecast", np.asarray(self.t_forecast, float))
        if self.p_measured < 0:
            raise ValueError("measured precipitation must be >= 0")
        if np.any(self.p_forecast < 0):
            raise ValueError("precipitation forecasts must be >= 0")

    @property
    def horizon(self) -> int:
        return self.p_forecast.size


@dataclass(frozen=True)
class HargreavesParams:
    gamma_c: float = 0.0023
    ra: float = 3.5
    td: float = 12.0

    def __post_init__(self):
        for name in ("gamma_c", "ra", "td"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be a positive finite number, got {val}")


def hargreaves_et(t_mean, params: HargreavesParams):
    """Evapotranspiration forecast (mm per period) from mean temperature.

    Works elementwise on arrays; the result is clamped below at zero.
    """
    t = np.asarray(t_mean, float)
    et = params.gamma_c * params.ra * math.sqrt(params.td) * (t + HARGREAVES_OFFSET_C)
    et = np.maximum(et, 0.0)
    return float(et) if et.ndim == 0 else et


def _horizon_from_header(header: list[str]) -> int:
    p_cols = sorted(int(m.group(1)) for h in header if (m := re.fullmatch(r"p_fc_(\d+)", h)))
    t_cols = sorted(int(m.group(1)) for h in header if (m := re.fullmatch(r"t_fc_(\d+)", h)))
    if not p_cols or p_cols != list(range(1, len(p_cols) + 1)) or p_cols != t_cols:
        raise IngestionError([(1, "header must contain p_fc_1..p_fc_H and t_fc_1..t_fc_H")])
    return len(p_cols)


def _cell(row: dict, key: str) -> float:
    raw = (row.get(key) or "").strip()
    return math.nan if raw == "" else float(raw)


def ingest_csv(path) -> list[WeatherRecord]:
    """Read a weather CSV into records sorted by timestamp."""
    path = Path(path)
    with path.open(newline="") as fh:
        text = fh.read()
    if not text.strip():
        warnings.warn(f"{path} is empty; no weather records read", stacklevel=2)
        return []
    reader = csv.DictReader(text.splitlines())
    header = reader.fieldnames or []
    missing = [c for c in ("timestamp", "p_meas", "t_meas", "et_meas") if c not in header]
    if missing:
        raise IngestionError([(1, f"missing column(s): {', '.join(missing)}")])
    H = _horizon_from_header(header)
    records, problems = [], []
    for lineno, row in enumerate(reader, start=2):
        try:
            ts = datetime.fromisoformat(row["timestamp"].strip())
        except (ValueError, AttributeError):
            problems.append((lineno, f"unparseable timestamp {row.get('timestamp')!r}"))
            continue
        try:
            p = _cell(row, "p_meas")
            p_fc = np.array([_cell(row, f"p_fc_{i}") for i in range(1, H + 1)])
            t_fc = np.array([_cell(row, f"t_fc_{i}") for i in range(1, H + 1)])
            rec = dict(timestamp=ts, p_forecast=p_fc, p_measured=p, t_forecast=t_fc,
                       t_measured=_cell(row, "t_meas"), et_measured=_cell(row, "et_meas"))
        except ValueError as exc:
            problems.append((lineno, f"unparseable number ({exc})"))
            continue
        if p < 0:
            problems.append((lineno, f"negative measured precipitation {p}"))
            continue
        if np.any(p_fc < 0):
            problems.append((lineno, "negative precipitation forecast"))
            continue
        records.append(WeatherRecord(**rec))
    if problems:
        raise IngestionError(problems)
    records.sort(key=lambda r: r.timestamp)
    for a, b in zip(records, records[1:]):
        if b.timestamp == a.timestamp:
            raise IngestionError([(0, f"duplicate timestamp {a.timestamp.isoformat()}")])
    return records


def write_csv(records: list[WeatherRecord], path) -> None:
    if not records:
        Path(path).write_text("")
        return
    H = records[0].horizon
    header = (["timestamp", "p_meas", "t_meas", "et_meas"]
              + [f"p_fc_{i}" for i in range(1, H + 1)]
              + [f"t_fc_{i}" for i in range(1, H + 1)])

    def fmt(v):
        return "" if not math.isfinite(v) else repr(float(v))

    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in records:
            w.writerow([r.timestamp.isoformat(), fmt(r.p_measured), fmt(r.t_measured),
                        fmt(r.et_measured)]
                       + [fmt(v) for v in r.p_forecast] + [fmt(v) for v in r.t_forecast])


@dataclass
class ErrorDataset:
    """Aligned forecast-error windows, one row per window.

    ``eta_windows[i, t]`` is measured minus forecast evapotranspiration and
    ``xi_windows[i, t]`` measured minus forecast precipitation at lead
    ``t + 1`` of the forecast issued at ``starts[i]``.
    """

    eta_windows: np.ndarray
    xi_windows: np.ndarray
    phat_windows: np.ndarray
    starts: list[datetime] = field(default_factory=list)
    skipped: int = 0

    def __post_init__(self):
        shapes = {self.eta_windows.shape, self.xi_windows.shape, self.phat_windows.shape}
        if len(shapes) != 1:
            raise ValueError("window arrays must share one shape")
        if np.any(self.xi_windows < -self.phat_windows - 1e-12):
            raise ValueError("precipitation errors below -forecast: data inconsistent")

    def __len__(self) -> int:
        return self.eta_windows.shape[0]

    @property
    def horizon(self) -> int:
        return self.eta_windows.shape[1]

    def subset(self, idx) -> "ErrorDataset":
        idx = np.asarray(idx, int)
        return ErrorDataset(self.eta_windows[idx], self.xi_windows[idx], self.phat_windows[idx],
                            [self.starts[i] for i in idx] if self.starts else [], 0)


def build_error_windows(records: list[WeatherRecord], dyn_params, hargreaves: HargreavesParams,
                        stride: int = 1) -> ErrorDataset:
    """Slide a length-H window over the record series.

    Window ``i`` uses the forecasts issued at record ``i * stride`` and the
    measurements of the H records starting there.  A window is skipped (and
    counted in ``skipped``) if its records are not consecutive periods or
    any needed value is missing.
    """
    H = dyn_params.horizon_steps
    if stride < 1:
        raise ValueError("stride must be >= 1")
    T = len(records)
    if T < H:
        raise ValueError(f"need at least H={H} records, got {T}")
    if records[0].horizon < H:
        raise ValueError(f"records carry {records[0].horizon} forecast leads, need {H}")
    period = timedelta(hours=dyn_params.period_hours)
    p_meas = np.array([r.p_measured for r in records])
    et_meas = np.array([r.et_measured for r in records])
    gaps = np.array([records[k + 1].timestamp - records[k].timestamp != period
                     for k in range(T - 1)], dtype=bool)
    eta, xi, phat, starts = [], [], [], []
    skipped = 0
    for k in range(0, T - H + 1, stride):
        rec = records[k]
        p_fc = rec.p_forecast[:H]
        e_fc = hargreaves_et(rec.t_forecast[:H], hargreaves)
        e_w = et_meas[k:k + H] - e_fc
        x_w = p_meas[k:k + H] - p_fc
        if gaps[k:k + H - 1].any() or not (np.all(np.isfinite(e_w)) and np.all(np.isfinite(x_w))):
            skipped += 1
            continue
        eta.append(e_w)
        xi.append(x_w)
        phat.append(p_fc.copy())
        starts.append(rec.timestamp)
    shape = (0, H)
    return ErrorDataset(
        np.array(eta).reshape(-1, H) if eta else np.zeros(shape),
        np.array(xi).reshape(-1, H) if xi else np.zeros(shape),
        np.array(phat).reshape(-1, H) if phat else np.zeros(shape),
        starts,
        skipped,
    )
