"""Scenario configuration files.

A scenario is a JSON document with four sections: lane topology, the car
list, the barrier list, and the simulation settings, plus optional lane
targets for individual drivers and a success predicate. Everything is
validated up front: wrong types, missing fields, and unknown keys are
reported with the JSON path of the offending entry, before any simulation
starts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .cbf import (
    AccelLower,
    AccelUpper,
    BarrierSpec,
    GapLower,
    VelocityLower,
    VelocityUpper,
)
from .behavior import clamp_human_accel, current_idm_accel
from .core import (
    Background,
    ControlLimits,
    Human,
    IdmParams,
    LaneChangeParams,
    Robot,
    SimulationError,
    VehicleState,
    WorldState,
)
from .sim import NoiseConfig, SimConfig, TrajectoryLog

DEFAULT_LANE_CHANGE = {"s_min": 10.0, "dv_th": 3.0, "cooldown": 5.0}


class ConfigError(SimulationError):
    """A scenario document failed validation."""


def driver_profiles() -> dict[str, IdmParams]:
    """Named car-following parameter sets shipped with the package.

    These are stand-in values; calibrated sets can be dropped into
    data/driver_profiles.json without code changes.
    """
    raw = json.loads(_read_data("driver_profiles.json"))
    return {name: IdmParams(**vals) for name, vals in raw.items()}


def _read_data(*parts: str) -> str:
    node = resources.files("highway_influence").joinpath("data", *parts)
    return node.read_text()


def packaged_scenario_names() -> list[str]:
    names = []
    for entry in resources.files("highway_influence").joinpath("data", "scenarios").iterdir():
        if entry.name.endswith(".json"):
            names.append(entry.name[:-5])
    order = {n: i for i, n in enumerate(
        ["s1", "s2", "s3", "sm1", "sm2", "sm3", "m1", "m2", "m3"])}
    return sorted(names, key=lambda n: (order.get(n, 99), n))


def load_config(source) -> "ParsedConfig":
    """Load and validate a scenario: a packaged name or a JSON file path."""
    if isinstance(source, (str, Path)):
        text_source = str(source)
        if text_source in packaged_scenario_names():
            text = _read_data("scenarios", f"{text_source}.json")
        else:
            path = Path(source)
            if not path.exists():
                raise ConfigError(
                    f"{source!r} is neither a packaged scenario "
                    f"({', '.join(packaged_scenario_names())}) nor an existing file")
            text = path.read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{source}: invalid JSON at line {err.lineno}, "
                              f"column {err.colno}: {err.msg}") from None
    elif isinstance(source, dict):
        doc = source
    else:
        raise TypeError("source must be a name, a path, or a parsed dict")
    return parse_config(doc)


@dataclass
class SuccessSpec:
    """Declarative end-of-rollout check attached to a scenario."""

    kind: str
    car: Optional[int] = None
    to_lane: Optional[int] = None
    lanes: Optional[dict[int, int]] = None
    tol: float = 1e-3

    def evaluate(self, log: TrajectoryLog) -> bool:
        if not log.records:
            return False
        if self.kind == "lane_change":
            return any(car_id == self.car and to == self.to_lane
                       for _, car_id, _, to in log.lane_change_events())
        last = log.records[-1]
        if self.kind == "final_lanes":
            final = {row[0]: row[2] for row in last.cars}
            return all(final.get(cid) == lane for cid, lane in self.lanes.items())
        if self.kind == "psi_final":
            return all(psi >= -self.tol for _, psi in last.barriers)
        raise ValueError(f"unknown success kind {self.kind!r}")

    def describe(self) -> str:
        if self.kind == "lane_change":
            return f"car {self.car} changes into lane {self.to_lane}"
        if self.kind == "final_lanes":
            return "final lanes are " + ", ".join(
                f"{cid}->{lane}" for cid, lane in sorted(self.lanes.items()))
        return f"every barrier ends >= -{self.tol:g}"


@dataclass
class ParsedConfig:
    name: str
    description: str
    world: WorldState
    specs: list[BarrierSpec]
    sim: SimConfig
    lane_targets: dict[int, int] = field(default_factory=dict)
    success: Optional[SuccessSpec] = None


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------

def _expect(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _require_keys(obj: dict, path: str, required: set[str], optional: set[str]) -> None:
    _expect(isinstance(obj, dict), path, "expected an object")
    missing = required - obj.keys()
    _expect(not missing, path, f"missing required key(s): {', '.join(sorted(missing))}")
    unknown = obj.keys() - required - optional
    _expect(not unknown, path, f"unknown key(s): {', '.join(sorted(unknown))}")


def _number(obj: dict, key: str, path: str) -> float:
    val = obj[key]
    _expect(isinstance(val, (int, float)) and not isinstance(val, bool),
            f"{path}.{key}", "expected a number")
    return float(val)


def _integer(obj: dict, key: str, path: str) -> int:
    val = obj[key]
    _expect(isinstance(val, int) and not isinstance(val, bool),
            f"{path}.{key}", "expected an integer")
    return val


def parse_config(doc: dict) -> ParsedConfig:
    _require_keys(doc, "$", {"name", "lanes", "cars"},
                  {"description", "car_length", "barriers", "sim",
                   "lane_targets", "success"})
    name = doc["name"]
    _expect(isinstance(name, str) and name != "", "$.name", "expected a nonempty string")
    lanes = _integer(doc, "lanes", "$")
    _expect(lanes >= 1, "$.lanes", "must be >= 1")
    car_length = _number(doc, "car_length", "$") if "car_length" in doc else 5.0

    profiles = driver_profiles()
    cars = []
    _expect(isinstance(doc["cars"], list) and doc["cars"], "$.cars",
            "expected a nonempty array")
    for i, entry in enumerate(doc["cars"]):
        cars.append(_parse_car(entry, f"$.cars[{i}]", lanes, profiles))

    try:
        world = WorldState(cars, lanes, t=0.0, car_length=car_length)
    except (ValueError, SimulationError) as err:
        raise ConfigError(f"$.cars: {err}") from None
    pairs = world.collision_pairs()
    _expect(not pairs, "$.cars", f"initial state has overlapping cars: {pairs}")

    specs = []
    for i, entry in enumerate(doc.get("barriers", [])):
        specs.append(_parse_barrier(entry, f"$.barriers[{i}]", world))

    sim = _parse_sim(doc.get("sim", {}), "$.sim")

    lane_targets: dict[int, int] = {}
    for key, val in doc.get("lane_targets", {}).items():
        path = f"$.lane_targets.{key}"
        try:
            cid = int(key)
        except ValueError:
            raise ConfigError(f"{path}: keys must be car ids") from None
        _expect(world.has_car(cid), path, f"no car with id {cid}")
        _expect(world.car(cid).is_human, path, "lane targets apply to humans")
        _expect(isinstance(val, int) and 1 <= val <= lanes, path,
                f"target lane must be an integer in [1, {lanes}]")
        lane_targets[cid] = val

    success = _parse_success(doc.get("success"), "$.success", world) \
        if "success" in doc else None

    # Humans start out applying their model acceleration, so backward
    # differences of the acceleration are meaningful from the first step.
    for car in world.cars:
        if car.is_human and car.a == 0.0:
            car.a = clamp_human_accel(current_idm_accel(world, car.id),
                                      car.kind.idm, sim.accel_floor_mult)

    return ParsedConfig(
        name=name,
        description=doc.get("description", ""),
        world=world,
        specs=specs,
        sim=sim,
        lane_targets=lane_targets,
        success=success,
    )


def _parse_car(entry: Any, path: str, lanes: int,
               profiles: dict[str, IdmParams]) -> VehicleState:
    _require_keys(entry, path, {"id", "kind", "lane", "p", "v"},
                  {"a", "limits", "idm", "profile", "lane_change"})
    cid = _integer(entry, "id", path)
    kind_name = entry["kind"]
    _expect(kind_name in ("human", "robot", "background"), f"{path}.kind",
            "expected one of: human, robot, background")
    lane = _integer(entry, "lane", path)
    _expect(1 <= lane <= lanes, f"{path}.lane", f"must be in [1, {lanes}]")
    p = _number(entry, "p", path)
    v = _number(entry, "v", path)
    _expect(v >= 0.0, f"{path}.v", "must be >= 0")
    a = _number(entry, "a", path) if "a" in entry else 0.0

    if kind_name == "human":
        if "idm" in entry:
            idm_doc = entry["idm"]
            _require_keys(idm_doc, f"{path}.idm",
                          {"a_max", "b_max", "v0", "s0", "T"}, set())
            try:
                idm = IdmParams(**{k: _number(idm_doc, k, f"{path}.idm")
                                   for k in ("a_max", "b_max", "v0", "s0", "T")})
            except ValueError as err:
                raise ConfigError(f"{path}.idm: {err}") from None
        else:
            prof = entry.get("profile", "normal")
            _expect(prof in profiles, f"{path}.profile",
                    f"unknown profile {prof!r}; available: {', '.join(sorted(profiles))}")
            idm = profiles[prof]
        lc_doc = dict(DEFAULT_LANE_CHANGE)
        if "lane_change" in entry:
            _require_keys(entry["lane_change"], f"{path}.lane_change", set(),
                          {"s_min", "dv_th", "cooldown"})
            for k in entry["lane_change"]:
                lc_doc[k] = _number(entry["lane_change"], k, f"{path}.lane_change")
        try:
            kind: Any = Human(idm=idm, lane_change=LaneChangeParams(**lc_doc))
        except ValueError as err:
            raise ConfigError(f"{path}.lane_change: {err}") from None
    elif kind_name == "robot":
        _expect("idm" not in entry and "profile" not in entry and
                "lane_change" not in entry, path,
                "human-only keys on a robot entry")
        lim_doc = {"v_lo": 0.0, "v_hi": 35.0, "a_lo": -4.0, "a_hi": 2.0}
        if "limits" in entry:
            _require_keys(entry["limits"], f"{path}.limits", set(),
                          {"v_lo", "v_hi", "a_lo", "a_hi"})
            for k in entry["limits"]:
                lim_doc[k] = _number(entry["limits"], k, f"{path}.limits")
        try:
            kind = Robot(limits=ControlLimits(**lim_doc))
        except ValueError as err:
            raise ConfigError(f"{path}.limits: {err}") from None
        _expect(lim_doc["v_lo"] <= v <= lim_doc["v_hi"], f"{path}.v",
                "outside the robot's velocity limits")
    else:
        _expect("idm" not in entry and "profile" not in entry and
                "lane_change" not in entry and "limits" not in entry, path,
                "background cars take no parameters")
        kind = Background()

    return VehicleState(id=cid, kind=kind, lane=lane, p=p, v=v, a=a)


_BARRIER_KEYS = {
    "velocity_upper": ({"car", "bound"}, VelocityUpper),
    "velocity_lower": ({"car", "bound"}, VelocityLower),
    "gap_lower": ({"front", "back", "margin"}, GapLower),
    "accel_lower": ({"car", "bound"}, AccelLower),
    "accel_upper": ({"car", "bound"}, AccelUpper),
}


def _parse_barrier(entry: Any, path: str, world: WorldState) -> BarrierSpec:
    _expect(isinstance(entry, dict), path, "expected an object")
    _expect("form" in entry, path, "missing required key(s): form")
    form_name = entry["form"]
    _expect(form_name in _BARRIER_KEYS, f"{path}.form",
            f"expected one of: {', '.join(sorted(_BARRIER_KEYS))}")
    required, cls = _BARRIER_KEYS[form_name]
    _require_keys(entry, path, required | {"form"}, {"poles", "name", "enabled"})

    kwargs = {}
    for key in required:
        if key in ("car", "front", "back"):
            cid = _integer(entry, key, path)
            _expect(world.has_car(cid), f"{path}.{key}", f"no car with id {cid}")
            kwargs[key] = cid
        else:
            kwargs[key] = _number(entry, key, path)
    poles = None
    if "poles" in entry:
        _expect(isinstance(entry["poles"], list) and entry["poles"],
                f"{path}.poles", "expected a nonempty array of numbers")
        poles = []
        for j, val in enumerate(entry["poles"]):
            _expect(isinstance(val, (int, float)) and not isinstance(val, bool)
                    and val > 0, f"{path}.poles[{j}]", "expected a positive number")
            poles.append(float(val))
        poles = tuple(poles)
    name = entry.get("name", "")
    _expect(isinstance(name, str), f"{path}.name", "expected a string")
    enabled = entry.get("enabled", True)
    _expect(isinstance(enabled, bool), f"{path}.enabled", "expected a boolean")
    return BarrierSpec(form=cls(**kwargs), poles=poles, enabled=enabled, name=name)


def _parse_sim(entry: Any, path: str) -> SimConfig:
    _require_keys(entry, path, set(),
                  {"dt", "duration", "seed", "incentive_enabled", "noise",
                   "accel_floor_mult"})
    kwargs: dict[str, Any] = {}
    if "dt" in entry:
        kwargs["dt"] = _number(entry, "dt", path)
    if "duration" in entry:
        kwargs["duration"] = _number(entry, "duration", path)
    if "seed" in entry:
        kwargs["seed"] = _integer(entry, "seed", path)
    if "incentive_enabled" in entry:
        _expect(isinstance(entry["incentive_enabled"], bool),
                f"{path}.incentive_enabled", "expected a boolean")
        kwargs["incentive_enabled"] = entry["incentive_enabled"]
    if "accel_floor_mult" in entry:
        kwargs["accel_floor_mult"] = _number(entry, "accel_floor_mult", path)
    if "noise" in entry:
        npath = f"{path}.noise"
        _require_keys(entry["noise"], npath, set(),
                      {"sd_s0", "sd_v0", "sd_abT", "sd_control",
                       "background_control"})
        nkw: dict[str, Any] = {}
        for k in ("sd_s0", "sd_v0", "sd_abT", "sd_control"):
            if k in entry["noise"]:
                nkw[k] = _number(entry["noise"], k, npath)
        if "background_control" in entry["noise"]:
            _expect(isinstance(entry["noise"]["background_control"], bool),
                    f"{npath}.background_control", "expected a boolean")
            nkw["background_control"] = entry["noise"]["background_control"]
        kwargs["noise"] = NoiseConfig(**nkw)
    try:
        return SimConfig(**kwargs)
    except ValueError as err:
        raise ConfigError(f"{path}: {err}") from None


def _parse_success(entry: Any, path: str, world: WorldState) -> SuccessSpec:
    _expect(isinstance(entry, dict), path, "expected an object")
    _expect("kind" in entry, path, "missing required key(s): kind")
    kind = entry["kind"]
    if kind == "lane_change":
        _require_keys(entry, path, {"kind", "car", "to_lane"}, set())
        cid = _integer(entry, "car", path)
        _expect(world.has_car(cid), f"{path}.car", f"no car with id {cid}")
        lane = _integer(entry, "to_lane", path)
        _expect(1 <= lane <= world.lanes, f"{path}.to_lane",
                f"must be in [1, {world.lanes}]")
        return SuccessSpec(kind="lane_change", car=cid, to_lane=lane)
    if kind == "final_lanes":
        _require_keys(entry, path, {"kind", "lanes"}, set())
        lanes = {}
        for key, val in entry["lanes"].items():
            try:
                cid = int(key)
            except ValueError:
                raise ConfigError(f"{path}.lanes: keys must be car ids") from None
            _expect(world.has_car(cid), f"{path}.lanes.{key}", f"no car with id {cid}")
            _expect(isinstance(val, int) and 1 <= val <= world.lanes,
                    f"{path}.lanes.{key}", f"lane must be in [1, {world.lanes}]")
            lanes[cid] = val
        return SuccessSpec(kind="final_lanes", lanes=lanes)
    if kind == "psi_final":
        _require_keys(entry, path, {"kind"}, {"tol"})
        tol = _number(entry, "tol", path) if "tol" in entry else 1e-3
        return SuccessSpec(kind="psi_final", tol=tol)
    raise ConfigError(f"{path}.kind: expected one of: lane_change, final_lanes, psi_final")
