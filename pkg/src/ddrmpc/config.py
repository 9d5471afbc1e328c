"""JSON run configuration shared by the CLI and the experiment scripts."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .control import ControllerConfig, config_from_dict
from .dynamics import ConstraintSet, WaterBalanceParams
from .svc import SvcTrainConfig
from .synthetic import SyntheticWeatherParams, generate_synthetic_weather
from .uncertainty import GuaranteeBudget
from .weather import HargreavesParams, WeatherRecord, ingest_csv


@dataclass(frozen=True)
class DataSource:
    """Either a CSV path or a synthetic generator seed with its parameters."""

    csv: str | None = None
    seed: int | None = None
    synthetic: SyntheticWeatherParams = SyntheticWeatherParams()

    def __post_init__(self):
        if (self.csv is None) == (self.seed is None):
            raise ValueError("a data source needs exactly one of 'csv' or 'seed'")

    def load(self, hargreaves: HargreavesParams = HargreavesParams()) -> list[WeatherRecord]:
        if self.csv is not None:
            return ingest_csv(self.csv)
        return generate_synthetic_weather(self.seed, self.synthetic, hargreaves)

    @classmethod
    def from_dict(cls, d: dict) -> "DataSource":
        d = dict(d)
        syn = SyntheticWeatherParams(**d.pop("synthetic", {}))
        return cls(synthetic=syn, **d)


DEFAULT_CONTROLLERS = (
    {"kind": "open_loop", "a": 0.07, "b": 6.4},
    {"kind": "rule_based", "threshold": 33.0, "dose": 3.0},
    {"kind": "cempc"},
    {"kind": "sp_tracking", "setpoint": 33.0},
    {"kind": "norm_rmpc", "omega": 2.0},
    {"kind": "ddrmpc", "policy": "gadf"},
)


@dataclass
class RunConfig:
    dynamics: WaterBalanceParams = WaterBalanceParams()
    constraints: ConstraintSet = ConstraintSet()
    hargreaves: HargreavesParams = HargreavesParams()
    budget: GuaranteeBudget = GuaranteeBudget()
    svc: SvcTrainConfig = SvcTrainConfig()
    p_max: float = 50.0
    x0: float = 40.0
    solver_tol: float = 1e-8
    split: str = "chronological"
    seed: int = 0
    train: DataSource = DataSource(seed=2016, synthetic=SyntheticWeatherParams(
        start="2016-05-01T00:00:00"))
    test: DataSource = DataSource(seed=2017)
    controllers: dict[str, ControllerConfig] = field(default_factory=lambda: {
        _default_name(d): config_from_dict(d) for d in DEFAULT_CONTROLLERS})
    output_dir: str = "runs/default"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        kw = {}
        simple = {"dynamics": WaterBalanceParams, "constraints": ConstraintSet,
                  "hargreaves": HargreavesParams, "budget": GuaranteeBudget,
                  "svc": SvcTrainConfig}
        for key, typ in simple.items():
            if key in d:
                kw[key] = typ(**d.pop(key))
        for key in ("train", "test"):
            if key in d:
                kw[key] = DataSource.from_dict(d.pop(key))
        if "controllers" in d:
            ctrl = d.pop("controllers")
            if isinstance(ctrl, list):
                ctrl = {c.get("name", _default_name(c)): {k: v for k, v in c.items() if k != "name"}
                        for c in ctrl}
            kw["controllers"] = {name: config_from_dict(c) for name, c in ctrl.items()}
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**kw, **d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        out = {}
        for key in ("dynamics", "constraints", "hargreaves", "budget", "svc", "train", "test"):
            out[key] = asdict(getattr(self, key))
        out["controllers"] = {name: asdict(c) for name, c in self.controllers.items()}
        for key in ("p_max", "x0", "solver_tol", "split", "seed", "output_dir"):
            out[key] = getattr(self, key)
        return out


def _default_name(d: dict) -> str:
    kind = d["kind"]
    if kind == "ddrmpc":
        return f"ddrmpc_{d.get('policy', 'gadf')}"
    if kind == "norm_rmpc":
        return f"norm_rmpc_{d.get('omega', 2.0):g}"
    return kind
