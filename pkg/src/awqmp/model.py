"""Domain types, scenario files and node placement."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, fields, is_dataclass
from typing import NamedTuple

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .energy import RadioModel, SolarModel
from .nodesim import COND_SENSOR, PH_SENSOR, TEMP_SENSOR, SensorModel, WaterProfile

PROTOCOLS = ("echerp", "leach")
STREAMS = ("topology", "failure", "clustering", "election", "sensing")


class ScenarioError(ValueError):
    """Scenario document could not be parsed or failed validation."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class Position(NamedTuple):
    x: float
    y: float

    def distance(self, other) -> float:
        return math.hypot(self.x - other[0], self.y - other[1])


class Kind(enum.Enum):
    ORDINARY = "ordinary"
    SUPER = "super"


class Role(enum.Enum):
    MEMBER = "member"
    CLUSTER_HEAD = "head"


@dataclass(frozen=True)
class NodeSpec:
    id: int
    kind: Kind
    position: Position
    initial_energy: float
    accumulator_capacity: float
    failure_rate: float
    harvest_peak: float


@dataclass(slots=True)
class NodeState:
    residual_energy: float
    alive: bool = True
    role: Role = Role.MEMBER
    cluster_id: int | None = None
    ch_quota_remaining: float = 0.0
    last_head_round: int | None = None

    def copy(self) -> "NodeState":
        return NodeState(self.residual_energy, self.alive, self.role, self.cluster_id,
                         self.ch_quota_remaining, self.last_head_round)

    @classmethod
    def initial(cls, spec: NodeSpec) -> "NodeState":
        return cls(residual_energy=spec.initial_energy, alive=spec.initial_energy > 0.0)


@dataclass(frozen=True)
class ScenarioConfig:
    field_width: float = 100.0
    field_height: float = 100.0
    node_count: int = 100
    super_node_count: int = 1
    # None resolves to (field_width / 2, -10): on shore, just outside the water
    bs_position: Position | None = None
    node_positions: tuple[Position, ...] | None = None
    packet_bits: int = 4000
    rounds_max: int = 2000
    reelection_epoch: int = 20
    cluster_fraction: float = 0.05
    protocol: str = "echerp"
    rng_seed: int = 1

    initial_energy: float = 0.5
    accumulator_capacity: float = 2.0
    failure_rate: float = 0.0
    harvest_peak: float = 5e-4
    super_energy_factor: float = 2.0
    super_harvest_factor: float = 4.0
    sensing_energy: float = 5e-5

    wait_seconds: float = 5.0
    sensor_timeout_seconds: float = 5.0
    round_seconds: float = 30.0
    sensor_timeout_probability: float = 0.0

    radio: RadioModel = field(default_factory=RadioModel)
    solar: SolarModel = field(default_factory=SolarModel)
    water: WaterProfile = field(default_factory=WaterProfile)
    temp_sensor: SensorModel = TEMP_SENSOR
    ph_sensor: SensorModel = PH_SENSOR
    cond_sensor: SensorModel = COND_SENSOR

    def __post_init__(self):
        if self.bs_position is None:
            object.__setattr__(self, "bs_position", Position(self.field_width / 2.0, -10.0))
        else:
            object.__setattr__(self, "bs_position", Position(*self.bs_position))
        if self.node_positions is not None:
            object.__setattr__(self, "node_positions",
                               tuple(Position(*p) for p in self.node_positions))

    def with_overrides(self, **changes) -> "ScenarioConfig":
        """Copy with flat dotted-key overrides, e.g. ``{"radio.e_da": 1e-9}``."""
        flat = flatten(self)
        for key, value in changes.items():
            if key not in flat:
                raise ScenarioError(f"unknown key {key!r}", [f"{key}: unknown key"])
            flat[key] = value
        return _build(flat)


# -- flat key/value mapping --------------------------------------------

def flatten(obj, prefix="") -> dict:
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        key = prefix + f.name
        if is_dataclass(value):
            out.update(flatten(value, key + "."))
        else:
            out[key] = value
    return out


def _defaults() -> dict:
    return flatten(ScenarioConfig())


def _coerce(key, value, default):
    if key in ("bs_position",):
        return Position(*(float(v) for v in _pair(key, value)))
    if key == "node_positions":
        if value is None:
            return None
        return tuple(Position(*(float(v) for v in _pair(key, p))) for p in value)
    if key.endswith("noise_sigma"):
        return None if value is None else _number(key, value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ScenarioError(f"{key}: expected true/false, got {value!r}", [f"{key}: not a boolean"])
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ScenarioError(f"{key}: expected an integer, got {value!r}", [f"{key}: not an integer"])
        return value
    if isinstance(default, float):
        return _number(key, value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ScenarioError(f"{key}: expected a string, got {value!r}", [f"{key}: not a string"])
        return value.lower()
    if isinstance(default, tuple):
        return tuple(_number(key, v) for v in _pair(key, value))
    return value


def _number(key, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{key}: expected a number, got {value!r}", [f"{key}: not a number"])
    return float(value)


def _pair(key, value):
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ScenarioError(f"{key}: expected a 2-element list, got {value!r}",
                            [f"{key}: not a 2-element list"])
    return value


def _build(flat: dict) -> ScenarioConfig:
    nested: dict = {}
    for key, value in flat.items():
        head, _, rest = key.partition(".")
        if rest:
            nested.setdefault(head, {})[rest] = value
        else:
            nested[head] = value
    kwargs = {}
    for f in fields(ScenarioConfig):
        value = nested[f.name]
        if isinstance(value, dict):
            template = getattr(ScenarioConfig(), f.name)
            value = type(template)(**value)
        kwargs[f.name] = value
    return ScenarioConfig(**kwargs)


def _flatten_doc(doc: dict, prefix="") -> dict:
    out = {}
    for key, value in doc.items():
        if isinstance(value, dict):
            out.update(_flatten_doc(value, prefix + key + "."))
        else:
            out[prefix + key] = value
    return out


def load_scenario(text: str) -> ScenarioConfig:
    """Parse and validate a scenario document (TOML with dotted keys).

    Absent keys take the ``ScenarioConfig`` defaults; unknown keys are
    rejected so a typo cannot silently fall back to a default.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"parse error: {exc}") from None
    given = _flatten_doc(doc)
    defaults = _defaults()
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ScenarioError(f"unknown key(s): {', '.join(unknown)}",
                            [f"{k}: unknown key" for k in unknown])
    flat = dict(defaults)
    if "field_width" in given and "bs_position" not in given:
        flat["bs_position"] = None
    for key, value in given.items():
        flat[key] = _coerce(key, value, defaults[key])
    try:
        config = _build(flat)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from None
    violations = validate_scenario(config)
    if violations:
        raise ScenarioError("invalid scenario: " + "; ".join(violations), violations)
    return config


def toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {value!r}")


def serialize_scenario(config: ScenarioConfig) -> str:
    """Canonical document: one ``key = value`` line per field, None omitted."""
    lines = []
    for key, value in flatten(config).items():
        if value is None:
            continue
        lines.append(f"{key} = {toml_value(value)}")
    return "\n".join(lines) + "\n"


# -- validation ---------------------------------------------------------

def validate_scenario(config: ScenarioConfig) -> list[str]:
    """All invariant violations, each prefixed with the offending key."""
    v = []

    def need(ok, key, msg):
        if not ok:
            v.append(f"{key}: {msg}")

    need(config.field_width > 0, "field_width", "must be > 0")
    need(config.field_height > 0, "field_height", "must be > 0")
    need(config.node_count >= 1, "node_count", "must be >= 1")
    need(config.super_node_count >= 0, "super_node_count", "must be >= 0")
    need(config.super_node_count < max(config.node_count, 1), "super_node_count",
         "must leave at least one ordinary node")
    need(config.packet_bits > 0, "packet_bits", "must be > 0")
    need(config.rounds_max >= 0, "rounds_max", "must be >= 0")
    need(config.reelection_epoch >= 1, "reelection_epoch", "must be >= 1")
    need(0.0 < config.cluster_fraction <= 1.0, "cluster_fraction", "must lie in (0, 1]")
    # no cluster_fraction * node_count >= 1 check: the cluster count is floored at 1
    need(config.protocol in PROTOCOLS, "protocol", f"must be one of {', '.join(PROTOCOLS)}")
    need(0 <= config.rng_seed < 2 ** 64, "rng_seed", "must be an unsigned 64-bit integer")

    for key in ("initial_energy", "accumulator_capacity", "failure_rate", "harvest_peak",
                "sensing_energy", "wait_seconds", "sensor_timeout_seconds", "round_seconds"):
        value = getattr(config, key)
        need(math.isfinite(value) and value >= 0, key, "must be finite and >= 0")
    need(config.initial_energy <= config.accumulator_capacity, "initial_energy",
         "must not exceed accumulator_capacity")
    need(config.super_energy_factor > 0, "super_energy_factor", "must be > 0")
    need(config.super_energy_factor * config.initial_energy <= config.accumulator_capacity
         or config.super_node_count == 0, "super_energy_factor",
         "super node initial energy exceeds accumulator_capacity")
    need(config.super_harvest_factor >= 1.0, "super_harvest_factor", "must be >= 1")
    need(0.0 <= config.sensor_timeout_probability <= 1.0, "sensor_timeout_probability",
         "must lie in [0, 1]")

    for name in ("e_elec", "eps_fs", "eps_mp", "e_da"):
        value = getattr(config.radio, name)
        need(math.isfinite(value) and value >= 0, f"radio.{name}", "must be finite and >= 0")
    need(config.solar.day_length >= 1, "solar.day_length", "must be >= 1")
    need(math.isfinite(config.solar.dawn_offset), "solar.dawn_offset", "must be finite")
    need(config.water.day_seconds > 0, "water.day_seconds", "must be > 0")

    for name in ("temp_sensor", "ph_sensor", "cond_sensor"):
        s = getattr(config, name)
        need(s.min < s.max, f"{name}.min", "must be below max")
        need(s.resolution > 0, f"{name}.resolution", "must be > 0")
        need(s.accuracy >= 0, f"{name}.accuracy", "must be >= 0")
        need(s.noise_sigma is None or s.noise_sigma >= 0, f"{name}.noise_sigma", "must be >= 0")

    bs = config.bs_position
    need(math.isfinite(bs.x) and math.isfinite(bs.y), "bs_position", "must be finite")
    if config.node_positions is not None:
        need(len(config.node_positions) == config.node_count, "node_positions",
             "must list exactly node_count positions")
        for i, p in enumerate(config.node_positions):
            if not (0 <= p.x <= config.field_width and 0 <= p.y <= config.field_height):
                v.append(f"node_positions: entry {i} lies outside the field")
                break
    return v


# -- topology -----------------------------------------------------------

def rng_streams(seed: int) -> dict:
    """Independent numpy generators, one per stochastic concern."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(s)) for name, s in zip(STREAMS, children)}


def generate_topology(config: ScenarioConfig, rng=None) -> list[NodeSpec]:
    """Place the nodes; the first ``super_node_count`` of them are super nodes.

    Positions are i.i.d. uniform over the field unless the scenario lists
    them explicitly.  ``rng`` defaults to the scenario's topology stream.
    """
    if rng is None:
        rng = rng_streams(config.rng_seed)["topology"]
    n = config.node_count
    if config.node_positions is not None:
        positions = list(config.node_positions)
    else:
        xs = rng.uniform(0.0, config.field_width, n)
        ys = rng.uniform(0.0, config.field_height, n)
        positions = [Position(float(x), float(y)) for x, y in zip(xs, ys)]
    specs = []
    for i, pos in enumerate(positions):
        is_super = i < config.super_node_count
        specs.append(NodeSpec(
            id=i,
            kind=Kind.SUPER if is_super else Kind.ORDINARY,
            position=pos,
            initial_energy=config.initial_energy * (config.super_energy_factor if is_super else 1.0),
            accumulator_capacity=config.accumulator_capacity,
            failure_rate=config.failure_rate,
            harvest_peak=config.harvest_peak * (config.super_harvest_factor if is_super else 1.0),
        ))
    return specs
