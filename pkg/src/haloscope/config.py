"""Run configuration: schema-validated JSON with explicit units in key names.

A run config bundles the haloscope, detector, truth, tuning-plan, analysis
and simulation sections.  Unknown keys are rejected with a path diagnostic;
all defaults equal the experiment preset ("paper2024").
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .axion import HaloscopeConfig
from .protocol import TuningPlan
from .smpd import SmpdParams, TruthParams


class ConfigError(ValueError):
    """Invalid run configuration; ``path`` locates the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class AnalysisOptions:
    k_b_policy: str = "fixed"       # "fixed" | "estimated"
    k_b_fixed: float = 0.05
    dt_m_s: float = 600.0
    cl: float = 0.95
    discovery_sigma: float = 5.0

    def __post_init__(self):
        if self.k_b_policy not in ("fixed", "estimated"):
            raise ValueError("k_b_policy must be 'fixed' or 'estimated'")
        if not (0.0 < self.cl < 1.0):
            raise ValueError("cl must be in (0, 1)")
        if self.dt_m_s <= 0:
            raise ValueError("dt_m_s must be positive")


@dataclass(frozen=True)
class SimulationOptions:
    time_compression: float = 1.0
    include_calibration_clicks: bool = False
    n_super_cycles: int | None = None

    def __post_init__(self):
        if self.time_compression <= 0:
            raise ValueError("time_compression must be positive")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    haloscope: HaloscopeConfig = field(default_factory=HaloscopeConfig)
    smpd: SmpdParams = field(default_factory=SmpdParams)
    truth: TruthParams = field(default_factory=TruthParams)
    plan: TuningPlan = field(default_factory=TuningPlan)
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)
    simulation: SimulationOptions = field(default_factory=SimulationOptions)

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "RunConfig":
        truth = TruthParams(signal_rate_s=self.truth.signal_rate_s,
                            k_b_true=self.truth.k_b_true, seed=seed)
        return RunConfig(seed=seed, haloscope=self.haloscope, smpd=self.smpd,
                         truth=truth, plan=self.plan, analysis=self.analysis,
                         simulation=self.simulation)


_SECTIONS = {
    "haloscope": HaloscopeConfig,
    "smpd": SmpdParams,
    "truth": TruthParams,
    "plan": TuningPlan,
    "analysis": AnalysisOptions,
    "simulation": SimulationOptions,
}

PRESETS = {"paper2024": {}}   # preset == all defaults


def _build_section(name: str, cls, data: dict):
    allowed = {f.name for f in fields(cls)}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key (allowed: {sorted(allowed)})",
                              f"{name}.{key}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), name) from exc


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    seed = data.pop("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer", "seed")
    parts = {}
    for name, payload in data.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section (allowed: {sorted(_SECTIONS)})",
                              name)
        if not isinstance(payload, dict):
            raise ConfigError("section must be a mapping", name)
        parts[name] = _build_section(name, _SECTIONS[name], payload)
    for name, cls in _SECTIONS.items():
        parts.setdefault(name, cls())
    truth = parts["truth"]
    if truth.seed != seed:
        parts["truth"] = TruthParams(signal_rate_s=truth.signal_rate_s,
                                     k_b_true=truth.k_b_true, seed=seed)
    return RunConfig(seed=seed, **parts)


def load_config(path=None, preset: str = "paper2024") -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r} "
                          f"(available: {sorted(PRESETS)})", "preset")
    data = dict(PRESETS[preset])
    if path is not None:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("top level must be a JSON object")
        for key, value in loaded.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                merged = dict(data[key])
                merged.update(value)
                data[key] = merged
            else:
                data[key] = value
    return config_from_dict(data)


def dump_config(cfg: RunConfig, path):
    with open(path, "w") as fh:
        json.dump(asdict(cfg), fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
