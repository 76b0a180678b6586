"""YAML run configuration: schema validation and builders for model objects.

A single config file drives every command; each command reads the sections
it needs and ignores the rest. Scalars are accepted where a constant vector
or an isotropic matrix is meant (drift 0.0, sigma 1.0) and expanded to the
graph dimension.
"""

import numpy as np

from .errors import ConfigError
from .graphs import Graph, PsiParams, ThetaParams, complete, erdos_renyi, q_from_psi, q_from_theta, ring
from .harness import SCENARIOS, ExperimentConfig
from .lasso import LassoConfig
from .likelihood import ContinuousPartOptions
from .simulate import CompoundPoissonSpec, JumpSizeSampler, LevyDriverSpec
from .stochvol import (CLOCK_INTEGRATED, CLOCK_LINEAR, JumpComponentSpec,
                       MatrixSubordinatorSpec, PsouSpec, RankOneJumpSampler, TimeChangeSpec)

_NUMBER = {"type": "number"}
_VECTOR = {"type": "array", "items": _NUMBER, "minItems": 1}
_MATRIX = {"type": "array", "items": _VECTOR, "minItems": 1}
_SCALAR_OR_VECTOR = {"oneOf": [_NUMBER, _VECTOR]}
_SCALAR_OR_MATRIX = {"oneOf": [_NUMBER, _MATRIX]}

_SIZES = {
    "type": "object",
    "properties": {"name": {"type": "string"}, "params": {"type": "object"}},
    "required": ["name", "params"],
    "additionalProperties": False,
}

_JUMPS = {
    "type": "object",
    "properties": {"rate": {"type": "number", "minimum": 0}, "sizes": _SIZES},
    "required": ["rate", "sizes"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "t_end": {"type": "number", "exclusiveMinimum": 0},
        "init": {"enum": ["stationary", "zero"]},
        "graph": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["ring", "complete", "erdos_renyi", "adjacency"]},
                "d": {"type": "integer", "minimum": 1},
                "p": {"type": "number", "minimum": 0, "maximum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "adjacency": _MATRIX,
            },
            "additionalProperties": False,
        },
        "dynamics": {
            "type": "object",
            "properties": {
                "theta": {"type": "array", "items": _NUMBER,
                          "minItems": 2, "maxItems": 2},
                "psi": _VECTOR,
                "q": _MATRIX,
            },
            "additionalProperties": False,
        },
        "driver": {
            "type": "object",
            "properties": {
                "drift": _SCALAR_OR_VECTOR,
                "sigma": _SCALAR_OR_MATRIX,
                "jumps": _JUMPS,
            },
            "additionalProperties": False,
        },
        "filter": {
            "type": "object",
            "properties": {
                "mode": {"enum": ["none", "oracle", "threshold"]},
                "threshold_c": {"type": "number", "exclusiveMinimum": 0},
                "threshold_exponent": {"type": "number",
                                       "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
            },
            "required": ["mode"],
            "additionalProperties": False,
        },
        "estimate": {
            "type": "object",
            "properties": {
                "mode": {"enum": ["theta", "psi", "q"]},
                "ci_level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "conditional": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "lasso": {
            "type": "object",
            "properties": {
                "gamma": {"type": "number", "exclusiveMinimum": 0},
                "lambda_schedule": {"type": "array", "items": _NUMBER,
                                    "minItems": 2, "maxItems": 2},
                "lambda_fixed": {"type": "number", "minimum": 0},
                "penalize_diagonal": {"type": "boolean"},
                "max_iter": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "weight_cap": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "mc": {
            "type": "object",
            "properties": {
                "scenario": {"enum": list(SCENARIOS)},
                "horizons": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                             "minItems": 1},
                "replicates": {"type": "integer", "minimum": 2},
                "plug_in": {"type": "boolean"},
            },
            "required": ["scenario", "horizons", "replicates"],
            "additionalProperties": False,
        },
        "psou": {
            "type": "object",
            "properties": {
                "v": _MATRIX,
                "gamma_l": _SCALAR_OR_MATRIX,
                "jump_rate": {"type": "number", "minimum": 0},
                "jump_sizes": _SIZES,
            },
            "required": ["v"],
            "additionalProperties": False,
        },
        "clock": {
            "type": "object",
            "properties": {
                "kind": {"enum": [CLOCK_LINEAR, CLOCK_INTEGRATED]},
                "rate": {"type": "number", "exclusiveMinimum": 0},
                "mean_reversion": {"type": "number", "exclusiveMinimum": 0},
                "volatility": {"type": "number", "exclusiveMinimum": 0},
                "floor": {"type": "number", "minimum": 0},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "jump_component": {
            "type": "object",
            "properties": {"drift": _SCALAR_OR_VECTOR, "jumps": _JUMPS},
            "additionalProperties": False,
        },
    },
}


def validate_config(obj) -> None:
    """Schema check with a readable path to the first offending key."""
    import jsonschema

    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(obj), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config key {where}: {err.message}")


def load_config(file) -> dict:
    """Parse and schema-validate a YAML config file."""
    import yaml

    try:
        with open(file) as fh:
            obj = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {file} is not valid YAML: {exc}") from exc
    if obj is None:
        obj = {}
    if not isinstance(obj, dict):
        raise ConfigError(f"config {file} must be a mapping at top level")
    validate_config(obj)
    return obj


def _require(cfg: dict, key: str) -> dict:
    if key not in cfg:
        raise ConfigError(f"config needs a {key!r} section for this command")
    return cfg[key]


def _expand_vector(value, d: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(d, float(arr))
    if arr.shape != (d,):
        raise ConfigError(f"{name} must be a scalar or a length-{d} vector, got shape {arr.shape}")
    return arr


def _expand_matrix(value, d: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(d)
    if arr.shape != (d, d):
        raise ConfigError(f"{name} must be a scalar or a {d}x{d} matrix, got shape {arr.shape}")
    return arr


def build_graph(cfg: dict) -> Graph:
    obj = _require(cfg, "graph")
    if "adjacency" in obj:
        return Graph(np.asarray(obj["adjacency"], dtype=float))
    kind = obj.get("kind")
    if kind is None:
        raise ConfigError("graph needs a kind or an explicit adjacency")
    if "d" not in obj:
        raise ConfigError(f"graph kind {kind!r} needs d")
    d = obj["d"]
    if kind == "ring":
        return ring(d)
    if kind == "complete":
        return complete(d)
    if kind == "erdos_renyi":
        if "p" not in obj or "seed" not in obj:
            raise ConfigError("erdos_renyi graphs need p and seed")
        return erdos_renyi(d, obj["p"], seed=obj["seed"])
    raise ConfigError(f"graph kind {kind!r} needs an explicit adjacency")


def _build_sizes(obj: dict, d: int) -> JumpSizeSampler:
    params = {}
    for key, value in obj["params"].items():
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0 and key in ("cov",):
            params[key] = float(arr) * np.eye(d)
        elif arr.ndim == 0:
            params[key] = np.full(d, float(arr))
        else:
            params[key] = arr
    try:
        return JumpSizeSampler(obj["name"], params)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid jump size distribution: {exc}") from exc


def _build_jumps(obj: dict, d: int) -> CompoundPoissonSpec:
    return CompoundPoissonSpec(rate=obj["rate"], sampler=_build_sizes(obj["sizes"], d))


def build_driver(cfg: dict, d: int) -> LevyDriverSpec:
    obj = _require(cfg, "driver")
    drift = _expand_vector(obj.get("drift", 0.0), d, "driver drift")
    sigma = _expand_matrix(obj.get("sigma", 1.0), d, "driver sigma")
    jumps = None
    if "jumps" in obj:
        jumps = _build_jumps(obj["jumps"], d)
    try:
        return LevyDriverSpec(drift=drift, sigma=sigma, jumps=jumps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_dynamics(cfg: dict, graph: Graph):
    """The drift matrix named by the dynamics section, with its parameters.

    Returns (kind, params, q) where kind is "theta", "psi" or "q" and params
    is the matching parameter object (None for an explicit q).
    """
    obj = _require(cfg, "dynamics")
    given = [k for k in ("theta", "psi", "q") if k in obj]
    if len(given) != 1:
        raise ConfigError("dynamics needs exactly one of theta, psi or q")
    kind = given[0]
    try:
        if kind == "theta":
            params = ThetaParams(*(float(x) for x in obj["theta"]))
            return kind, params, q_from_theta(graph, params).matrix
        if kind == "psi":
            params = PsiParams(np.asarray(obj["psi"], dtype=float))
            return kind, params, q_from_psi(graph, params).matrix
        return kind, None, np.asarray(obj["q"], dtype=float)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_filter(cfg: dict) -> ContinuousPartOptions | None:
    obj = cfg.get("filter")
    if obj is None or obj["mode"] == "none":
        return None
    try:
        if obj["mode"] == "threshold":
            return ContinuousPartOptions(
                mode="threshold",
                threshold_c=obj.get("threshold_c", 1.0),
                threshold_exponent=obj.get("threshold_exponent", 0.49))
        return ContinuousPartOptions(mode="oracle")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_lasso(cfg: dict) -> LassoConfig:
    obj = cfg.get("lasso", {})
    kwargs = {}
    for key in ("gamma", "lambda_fixed", "penalize_diagonal", "max_iter", "tol", "weight_cap"):
        if key in obj:
            kwargs[key] = obj[key]
    if "lambda_schedule" in obj:
        kwargs["lambda_schedule"] = tuple(float(x) for x in obj["lambda_schedule"])
    try:
        return LassoConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_psou(cfg: dict) -> PsouSpec:
    obj = _require(cfg, "psou")
    v = np.asarray(obj["v"], dtype=float)
    d = v.shape[0] if v.ndim == 2 else 1
    gamma_l = _expand_matrix(obj.get("gamma_l", 0.0), d, "psou gamma_l")
    sampler = None
    rate = obj.get("jump_rate", 0.0)
    if "jump_sizes" in obj:
        so = obj["jump_sizes"]
        try:
            sampler = RankOneJumpSampler(so["name"], {k: float(x) for k, x in so["params"].items()})
        except ValueError as exc:
            raise ConfigError(f"invalid subordinator jump distribution: {exc}") from exc
    elif rate > 0:
        raise ConfigError("psou jump_rate > 0 needs jump_sizes")
    try:
        sub = MatrixSubordinatorSpec(gamma_l=gamma_l, jump_rate=rate, jump_sampler=sampler)
        return PsouSpec(v_matrix=v, subordinator=sub)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_clock(cfg: dict) -> TimeChangeSpec:
    obj = cfg.get("clock")
    if obj is None:
        return TimeChangeSpec()
    kwargs = {k: obj[k] for k in ("kind", "rate", "mean_reversion", "volatility", "floor")
              if k in obj}
    try:
        return TimeChangeSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_jump_component(cfg: dict, d: int) -> JumpComponentSpec | None:
    obj = cfg.get("jump_component")
    if obj is None:
        return None
    drift = _expand_vector(obj.get("drift", 0.0), d, "jump component drift")
    jumps = _build_jumps(obj["jumps"], d) if "jumps" in obj else None
    try:
        return JumpComponentSpec(drift=drift, jumps=jumps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_experiment(cfg: dict, scenario: str | None = None,
                     seed: int | None = None) -> ExperimentConfig:
    """Assemble the replicated-experiment config for the mc command."""
    obj = _require(cfg, "mc")
    scenario = scenario if scenario is not None else obj["scenario"]
    graph = build_graph(cfg)
    kind, params, _ = build_dynamics(cfg, graph)
    kwargs = {
        "scenario": scenario,
        "graph": graph,
        "horizons": tuple(float(h) for h in obj["horizons"]),
        "dt": cfg.get("dt", 0.01),
        "replicates": obj["replicates"],
        "seed": seed if seed is not None else cfg.get("seed", 0),
        "filter_opts": build_filter(cfg),
        "plug_in": obj.get("plug_in", False),
    }
    if kind == "theta":
        kwargs["theta"] = params
    elif kind == "psi":
        kwargs["psi"] = np.asarray(params.values, dtype=float)
    else:
        raise ConfigError("mc experiments need dynamics given as theta or psi")
    if scenario == "conditional_clt":
        kwargs["psou"] = build_psou(cfg)
        kwargs["clock"] = build_clock(cfg)
        kwargs["jump_component"] = build_jump_component(cfg, graph.d)
    else:
        kwargs["driver"] = build_driver(cfg, graph.d)
    if "lasso" in cfg or scenario == "lasso_oracle":
        kwargs["lasso"] = build_lasso(cfg)
    return ExperimentConfig(**kwargs)
