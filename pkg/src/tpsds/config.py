"""Experiment configuration: strict JSON loading, validation and presets.

Every module precondition is checked at load time so a sweep fails before
any run starts. Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from tpsds.diffusion import SCHEDULE_KINDS, NoiseSchedule, build_schedule
from tpsds.oracle import GaussianMixture, preset_mixture
from tpsds.scheduling import SAMPLER_PARAMS, TimestepSampler, build_sampler
from tpsds.sds import W_RULES, SdsConfig

PRESETS = ("paper-default", "ablation-grid", "hyperparam-grid", "schedule-comparison")
THETA0_KINDS = ("origin", "grey_grid", "explicit", "jittered")
_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")

_TOP_KEYS = {
    "name", "schedule", "mixture", "samplers", "sds", "seeds", "master_seed",
    "theta0", "output_dir", "tau", "workers",
}
_SDS_KEYS = {"lr", "N", "w_rule", "grad_samples"}


class ConfigError(ValueError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


@dataclass(frozen=True)
class SamplerSpec:
    name: str
    kind: str
    params: dict[str, Any]


@dataclass(frozen=True)
class Theta0Spec:
    kind: str = "origin"
    params: dict[str, Any] = field(default_factory=dict)

    def build(self, dim: int, rng: np.random.Generator | None = None) -> np.ndarray:
        if self.kind == "origin":
            return np.zeros(dim)
        if self.kind == "grey_grid":
            return np.full(self.params["H"] * self.params["W"], float(self.params.get("value", 0.5)))
        if self.kind == "explicit":
            return np.array(self.params["vector"], dtype=np.float64)
        base = self.params.get("base", "origin")
        base = np.zeros(dim) if base == "origin" else np.array(base, dtype=np.float64)
        if rng is None:
            raise ValueError("jittered theta0 needs an rng")
        return base + float(self.params["amplitude"]) * rng.standard_normal(dim)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    schedule_kind: str
    T: int
    mixture: GaussianMixture
    samplers: list[SamplerSpec]
    sds: SdsConfig
    seeds: list[int]
    master_seed: int
    theta0: Theta0Spec
    output_dir: str
    tau: float
    workers: int
    raw: dict[str, Any] = field(repr=False, compare=False, default_factory=dict)

    def schedule(self) -> NoiseSchedule:
        return build_schedule(self.schedule_kind, self.T)

    def build_samplers(self, schedule: NoiseSchedule | None = None) -> dict[str, TimestepSampler]:
        schedule = schedule or self.schedule()
        return {s.name: build_sampler(s.kind, schedule, **s.params) for s in self.samplers}

    def canonical(self) -> dict[str, Any]:
        """Fully-resolved, JSON-ready description (defaults filled in)."""
        return {
            "name": self.name,
            "schedule": {"kind": self.schedule_kind, "T": self.T},
            "mixture": {
                "name": self.mixture.name,
                "weights": self.mixture.weights.tolist(),
                "means": self.mixture.means.tolist(),
                "variances": self.mixture.variances.tolist(),
            },
            "samplers": [{"name": s.name, "kind": s.kind, **s.params} for s in self.samplers],
            "sds": {
                "lr": self.sds.lr,
                "N": self.sds.N,
                "w_rule": self.sds.w_rule,
                "grad_samples": self.sds.grad_samples,
            },
            "seeds": list(self.seeds),
            "master_seed": self.master_seed,
            "theta0": {"kind": self.theta0.kind, **self.theta0.params},
            "output_dir": self.output_dir,
            "tau": self.tau,
            "workers": self.workers,
        }

    def config_hash(self) -> str:
        """SHA-256 of the canonical description, excluding where outputs go and worker count."""
        body = self.canonical()
        body.pop("output_dir")
        body.pop("workers")
        return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    def with_overrides(self, **changes: Any) -> ExperimentConfig:
        return replace(self, **changes)


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x: Any) -> bool:
    return (isinstance(x, (int, float)) and not isinstance(x, bool)) and math.isfinite(x)


def _require_mapping(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected an object, got {type(value).__name__}")
    return value


def _reject_unknown(d: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], f"unknown key (allowed: {sorted(allowed)})")


def _parse_schedule(raw: Any) -> tuple[str, int]:
    d = _require_mapping(raw, "schedule")
    _reject_unknown(d, {"kind", "T"}, "schedule")
    kind = d.get("kind", "ddpm_linear")
    if kind not in SCHEDULE_KINDS:
        raise ConfigError("schedule.kind", f"must be one of {list(SCHEDULE_KINDS)}, got {kind!r}")
    T = d.get("T", 1000)
    if not _is_int(T) or T < 2:
        raise ConfigError("schedule.T", f"must be an integer >= 2, got {T!r}")
    return kind, T


def _parse_mixture(raw: Any) -> GaussianMixture:
    if isinstance(raw, str):
        try:
            return preset_mixture(raw)
        except ValueError as exc:
            raise ConfigError("mixture", str(exc)) from None
    d = _require_mapping(raw, "mixture")
    _reject_unknown(d, {"name", "weights", "means", "variances"}, "mixture")
    for key in ("weights", "means", "variances"):
        if key not in d:
            raise ConfigError(f"mixture.{key}", "missing")
    try:
        return GaussianMixture(d["weights"], d["means"], d["variances"], name=str(d.get("name", "custom")))
    except (ValueError, TypeError) as exc:
        raise ConfigError("mixture", str(exc)) from None


def _parse_sampler(raw: Any, k: int, schedule: NoiseSchedule) -> SamplerSpec:
    path = f"samplers[{k}]"
    d = _require_mapping(raw, path)
    kind = d.get("kind")
    if kind == "uniform":
        kind = "uniform_random"
    if kind not in SAMPLER_PARAMS:
        raise ConfigError(f"{path}.kind", f"must be one of {sorted(SAMPLER_PARAMS)}, got {kind!r}")
    _reject_unknown(d, {"kind", "name", *SAMPLER_PARAMS[kind]}, path)
    params = {key: d[key] for key in SAMPLER_PARAMS[kind] if key in d}
    for key in ("m", "s", "p", "boundary_fraction"):
        if key in params and not _is_num(params[key]):
            raise ConfigError(f"{path}.{key}", f"must be a finite number, got {params[key]!r}")
    if "s" in params and params["s"] <= 0:
        raise ConfigError(f"{path}.s", f"must be > 0, got {params['s']!r}")
    if "p" in params and params["p"] <= 0:
        raise ConfigError(f"{path}.p", f"must be > 0, got {params['p']!r}")
    for key in ("t_min", "t_max", "floor", "t_fixed"):
        if key in params and not _is_int(params[key]):
            raise ConfigError(f"{path}.{key}", f"must be an integer, got {params[key]!r}")
    for key in ("stage1_range", "stage2_range"):
        if key in params:
            v = params[key]
            if not (isinstance(v, list) and len(v) == 2 and all(_is_int(x) for x in v)):
                raise ConfigError(f"{path}.{key}", f"must be a [min, max] integer pair, got {v!r}")
    try:
        sampler = build_sampler(kind, schedule, **params)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None
    name = d.get("name", sampler.default_name())
    if not isinstance(name, str) or not _NAME_RE.match(name):
        raise ConfigError(f"{path}.name", f"must match {_NAME_RE.pattern}, got {name!r}")
    return SamplerSpec(name=name, kind=kind, params=params)


def _parse_sds(raw: Any) -> SdsConfig:
    d = _require_mapping(raw, "sds")
    _reject_unknown(d, _SDS_KEYS, "sds")
    lr = d.get("lr", 0.01)
    if not _is_num(lr) or lr <= 0:
        raise ConfigError("sds.lr", f"must be a positive number, got {lr!r}")
    N = d.get("N", 2000)
    if not _is_int(N) or N < 1:
        raise ConfigError("sds.N", f"must be a positive integer, got {N!r}")
    w_rule = d.get("w_rule", "one")
    if w_rule not in W_RULES:
        raise ConfigError("sds.w_rule", f"must be one of {list(W_RULES)}, got {w_rule!r}")
    gs = d.get("grad_samples", 1)
    if not _is_int(gs) or gs < 1:
        raise ConfigError("sds.grad_samples", f"must be a positive integer, got {gs!r}")
    return SdsConfig(w_rule=w_rule, lr=float(lr), N=N, grad_samples=gs)


def _parse_theta0(raw: Any, dim: int) -> Theta0Spec:
    if isinstance(raw, str):
        raw = {"kind": raw}
    d = _require_mapping(raw, "theta0")
    kind = d.get("kind", "origin")
    allowed = {
        "origin": set(),
        "grey_grid": {"H", "W", "value"},
        "explicit": {"vector"},
        "jittered": {"base", "amplitude"},
    }
    if kind not in allowed:
        raise ConfigError("theta0.kind", f"must be one of {list(THETA0_KINDS)}, got {kind!r}")
    _reject_unknown(d, {"kind", *allowed[kind]}, "theta0")
    params = {k: v for k, v in d.items() if k != "kind"}
    if kind == "grey_grid":
        for key in ("H", "W"):
            if not _is_int(params.get(key)) or params[key] < 1:
                raise ConfigError(f"theta0.{key}", f"must be a positive integer, got {params.get(key)!r}")
        if "value" in params and not _is_num(params["value"]):
            raise ConfigError("theta0.value", "must be a finite number")
        if params["H"] * params["W"] != dim:
            raise ConfigError("theta0", f"grid {params['H']}x{params['W']} does not match mixture dimension {dim}")
    elif kind == "explicit":
        vec = params.get("vector")
        if not (isinstance(vec, list) and len(vec) == dim and all(_is_num(x) for x in vec)):
            raise ConfigError("theta0.vector", f"must be a list of {dim} finite numbers")
    elif kind == "jittered":
        amp = params.get("amplitude")
        if not _is_num(amp) or amp < 0:
            raise ConfigError("theta0.amplitude", f"must be a non-negative number, got {amp!r}")
        base = params.get("base", "origin")
        if base != "origin" and not (isinstance(base, list) and len(base) == dim and all(_is_num(x) for x in base)):
            raise ConfigError("theta0.base", f"must be 'origin' or a list of {dim} finite numbers")
    return Theta0Spec(kind=kind, params=params)


def parse_config(raw: Any) -> ExperimentConfig:
    """Validate a decoded JSON document into an :class:`ExperimentConfig`."""
    d = _require_mapping(raw, "<root>")
    _reject_unknown(d, _TOP_KEYS, "")
    name = d.get("name", "experiment")
    if not isinstance(name, str) or not _NAME_RE.match(name):
        raise ConfigError("name", f"must match {_NAME_RE.pattern}, got {name!r}")
    kind, T = _parse_schedule(d.get("schedule", {}))
    schedule = build_schedule(kind, T)
    mixture = _parse_mixture(d.get("mixture", "bimodal-far"))

    samplers_raw = d.get("samplers")
    if not isinstance(samplers_raw, list) or not samplers_raw:
        raise ConfigError("samplers", "must be a non-empty list")
    samplers = [_parse_sampler(s, k, schedule) for k, s in enumerate(samplers_raw)]
    seen: set[str] = set()
    for k, s in enumerate(samplers):
        if s.name in seen:
            raise ConfigError(f"samplers[{k}].name", f"duplicate sampler name {s.name!r}")
        seen.add(s.name)

    sds = _parse_sds(d.get("sds", {}))

    seeds = d.get("seeds")
    if not isinstance(seeds, list) or not seeds or not all(_is_int(s) for s in seeds):
        raise ConfigError("seeds", "must be a non-empty list of integers")
    if len(set(seeds)) != len(seeds):
        dup = next(s for s in seeds if seeds.count(s) > 1)
        raise ConfigError("seeds", f"duplicate seed {dup}")
    master_seed = d.get("master_seed", 0)
    if not _is_int(master_seed):
        raise ConfigError("master_seed", f"must be an integer, got {master_seed!r}")

    theta0 = _parse_theta0(d.get("theta0", "origin"), mixture.dim)
    output_dir = d.get("output_dir", f"runs/{name}")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir", "must be a non-empty string")
    tau = d.get("tau", 0.2)
    if not _is_num(tau) or tau <= 0:
        raise ConfigError("tau", f"must be a positive number, got {tau!r}")
    workers = d.get("workers", 1)
    if not _is_int(workers) or workers < 1:
        raise ConfigError("workers", f"must be a positive integer, got {workers!r}")

    return ExperimentConfig(
        name=name,
        schedule_kind=kind,
        T=T,
        mixture=mixture,
        samplers=samplers,
        sds=sds,
        seeds=list(seeds),
        master_seed=master_seed,
        theta0=theta0,
        output_dir=output_dir,
        tau=float(tau),
        workers=workers,
        raw=d,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror or exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(raw)


def preset_path(name: str):
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; known: {list(PRESETS)}")
    return resources.files("tpsds") / "presets" / f"{name}.json"


def load_preset(name: str) -> ExperimentConfig:
    return parse_config(json.loads(preset_path(name).read_text()))


def resolve_config(spec: str | Path) -> ExperimentConfig:
    """Load ``spec`` as a file path, falling back to a preset name."""
    p = Path(spec)
    if p.exists() or str(spec) not in PRESETS:
        return load_config(p)
    return load_preset(str(spec))
