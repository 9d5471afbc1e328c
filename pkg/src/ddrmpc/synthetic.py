"""Seeded synthetic weather with imperfect multi-step forecasts.

Rain is a compound process: a Bernoulli event per period times a gamma
intensity capped at ``p_max``.  Temperature is a seasonal sinusoid plus a
diurnal cycle plus noise, and measured evapotranspiration is the Hargreaves
value of the true temperature perturbed by bounded multiplicative noise.

Forecasts issued at period ``k`` for lead ``l`` degrade with ``l``: rain
events are missed with growing probability, detected amounts are scaled by
log-normal noise, and false alarms appear on dry periods.  Every forecast
is clipped to ``[0, p_max]``, and so is the truth, so the error always
lies in ``[-p_hat, p_max - p_hat]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .weather import HargreavesParams, WeatherRecord, hargreaves_et


@dataclass(frozen=True)
class SyntheticWeatherParams:
    start: str = "2017-05-01T00:00:00"
    months: int = 6
    horizon: int = 8
    period_hours: float = 6.0
    p_max: float = 50.0
    rain_prob: float = 0.12
    rain_shape: float = 0.7
    rain_scale: float = 8.5
    temp_mean: float = 19.0
    temp_season_amp: float = 6.0
    temp_diurnal_amp: float = 5.0
    temp_noise: float = 1.5
    et_noise: float = 0.15
    fc_temp_noise: float = 0.8
    fc_temp_growth: float = 0.2
    fc_detect: float = 0.85
    fc_detect_decay: float = 0.03
    fc_amount_noise: float = 0.4
    fc_amount_growth: float = 0.05
    fc_false_alarm: float = 0.04
    fc_false_scale: float = 2.0

    def __post_init__(self):
        if self.months < 1:
            raise ValueError("months must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for name in ("rain_prob", "fc_detect", "fc_false_alarm"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.et_noise < 1.0:
            raise ValueError("et_noise must lie in [0, 1)")
        if self.p_max <= 0:
            raise ValueError("p_max must be positive")

    @property
    def start_time(self) -> datetime:
        return datetime.fromisoformat(self.start)


def _add_months(t: datetime, months: int) -> datetime:
    y, m = divmod(t.month - 1 + months, 12)
    return t.replace(year=t.year + y, month=m + 1)


def n_periods(params: SyntheticWeatherParams) -> int:
    span = _add_months(params.start_time, params.months) - params.start_time
    return int(span / timedelta(hours=params.period_hours))


def generate_synthetic_weather(seed: int, params: SyntheticWeatherParams = SyntheticWeatherParams(),
                               hargreaves: HargreavesParams = HargreavesParams()
                               ) -> list[WeatherRecord]:
    """One record per period over ``params.months`` calendar months."""
    rng = np.random.default_rng(seed)
    n = n_periods(params)
    H = params.horizon
    T = n + H  # truth beyond the end so that every forecast has a target
    period = timedelta(hours=params.period_hours)
    t0 = params.start_time
    times = [t0 + k * period for k in range(T)]

    wet = rng.random(T) < params.rain_prob
    amount = rng.gamma(params.rain_shape, params.rain_scale, T)
    p_true = np.where(wet, np.minimum(amount, params.p_max), 0.0)

    doy = np.array([t.timetuple().tm_yday for t in times], float)
    hour = np.array([t.hour + params.period_hours / 2 for t in times], float)
    season = params.temp_season_amp * np.sin(2 * math.pi * (doy - 105) / 365.25)
    diurnal = params.temp_diurnal_amp * np.sin(2 * math.pi * (hour - 9) / 24)
    temp = params.temp_mean + season + diurnal + rng.normal(0, params.temp_noise, T)
    et_noise = rng.uniform(-params.et_noise, params.et_noise, T)
    et_true = hargreaves_et(temp, hargreaves) * (1.0 + et_noise)

    leads = np.arange(H)
    records = []
    for k in range(n):
        idx = k + leads
        tnoise = rng.normal(0, 1, H) * (params.fc_temp_noise + params.fc_temp_growth * leads)
        t_fc = temp[idx] + tnoise
        detect = rng.random(H) < params.fc_detect - params.fc_detect_decay * leads
        scale = np.exp(rng.normal(0, 1, H) * (params.fc_amount_noise
                                              + params.fc_amount_growth * leads))
        alarm = rng.random(H) < params.fc_false_alarm
        false_amt = rng.exponential(params.fc_false_scale, H)
        p_fc = np.where(p_true[idx] > 0, np.where(detect, p_true[idx] * scale, 0.0),
                        np.where(alarm, false_amt, 0.0))
        p_fc = np.clip(p_fc, 0.0, params.p_max)
        records.append(WeatherRecord(times[k], p_fc, float(p_true[k]), t_fc,
                                     float(temp[k]), float(et_true[k])))
    return records
