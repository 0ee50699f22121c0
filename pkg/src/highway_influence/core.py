"""Domain types and road geometry shared by every other module.

A world is a flat list of cars on an L-lane highway. All lanes share one
longitudinal axis, so positions of cars in different lanes are directly
comparable. A car occupies the interval [p - car_length, p] of its lane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

DEFAULT_CAR_LENGTH = 5.0


class SimulationError(Exception):
    """Base class for errors raised by this package."""


class UnknownCarError(SimulationError):
    """A car id was not found in the world."""


class GeometryError(SimulationError):
    """A geometric precondition (ordering, lane range) was violated."""


@dataclass(frozen=True)
class IdmParams:
    """Car-following parameters of one human driver.

    a_max and b_max are the comfortable acceleration/deceleration magnitudes
    (both positive), v0 the desired velocity, s0 the desired standstill gap,
    and T the desired time headway.
    """

    a_max: float
    b_max: float
    v0: float
    s0: float
    T: float

    def __post_init__(self):
        for name in ("a_max", "b_max", "v0", "s0", "T"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"IdmParams.{name} must be > 0")


@dataclass(frozen=True)
class LaneChangeParams:
    """Lane-change behavior of one human driver.

    s_min is the clearance (front and rear, in the target lane) required for
    a change to be considered safe; dv_th is the minimum speed advantage of
    the target lane's leading car that makes a change worthwhile; cooldown is
    the time that must pass between two changes by the same driver.
    """

    s_min: float
    dv_th: float
    cooldown: float = 5.0

    def __post_init__(self):
        if self.s_min <= 0.0:
            raise ValueError("LaneChangeParams.s_min must be > 0")
        if self.cooldown < 0.0:
            raise ValueError("LaneChangeParams.cooldown must be >= 0")


@dataclass(frozen=True)
class ControlLimits:
    """Box limits on a robot car's velocity and commanded acceleration."""

    v_lo: float = 0.0
    v_hi: float = 35.0
    a_lo: float = -4.0
    a_hi: float = 2.0

    def __post_init__(self):
        if not self.v_lo < self.v_hi:
            raise ValueError("ControlLimits requires v_lo < v_hi")
        if not self.a_lo < 0.0 < self.a_hi:
            raise ValueError("ControlLimits requires a_lo < 0 < a_hi")


@dataclass(frozen=True)
class Human:
    idm: IdmParams
    lane_change: LaneChangeParams


@dataclass(frozen=True)
class Robot:
    limits: ControlLimits = field(default_factory=ControlLimits)


@dataclass(frozen=True)
class Background:
    pass


CarKind = Union[Human, Robot, Background]


@dataclass
class VehicleState:
    """Kinematic state of one car.

    `a` is the acceleration applied over the last integration step (robots:
    the last commanded control). `lc_cooldown` counts down the time until the
    car may change lanes again; it only matters for humans.
    """

    id: int
    kind: CarKind
    lane: int
    p: float
    v: float
    a: float = 0.0
    lc_cooldown: float = 0.0

    @property
    def is_human(self) -> bool:
        return isinstance(self.kind, Human)

    @property
    def is_robot(self) -> bool:
        return isinstance(self.kind, Robot)

    @property
    def is_background(self) -> bool:
        return isinstance(self.kind, Background)

    def clone(self) -> "VehicleState":
        return VehicleState(self.id, self.kind, self.lane, self.p, self.v,
                            self.a, self.lc_cooldown)


@dataclass
class WorldState:
    """All cars plus lane topology and the simulation clock."""

    cars: list[VehicleState]
    lanes: int
    t: float = 0.0
    car_length: float = DEFAULT_CAR_LENGTH

    def __post_init__(self):
        if self.lanes < 1:
            raise ValueError("WorldState needs at least one lane")
        seen: set[int] = set()
        for car in self.cars:
            if car.id in seen:
                raise ValueError(f"duplicate car id {car.id}")
            seen.add(car.id)
            if not 1 <= car.lane <= self.lanes:
                raise GeometryError(
                    f"car {car.id} is in lane {car.lane}, outside [1, {self.lanes}]")
        self._index = {car.id: car for car in self.cars}

    def car(self, car_id: int) -> VehicleState:
        try:
            return self._index[car_id]
        except KeyError:
            raise UnknownCarError(f"no car with id {car_id}") from None

    def has_car(self, car_id: int) -> bool:
        return car_id in self._index

    def robots(self) -> list[VehicleState]:
        return [c for c in self.cars if c.is_robot]

    def humans(self) -> list[VehicleState]:
        return [c for c in self.cars if c.is_human]

    def clone(self) -> "WorldState":
        return WorldState([c.clone() for c in self.cars], self.lanes, self.t,
                          self.car_length)

    def collision_pairs(self) -> list[tuple[int, int]]:
        """Id pairs of same-lane cars whose bodies overlap (touching is fine)."""
        pairs = []
        by_lane: dict[int, list[VehicleState]] = {}
        for car in self.cars:
            by_lane.setdefault(car.lane, []).append(car)
        for cars in by_lane.values():
            cars = sorted(cars, key=lambda c: (c.p, c.id))
            for rear, front in zip(cars, cars[1:]):
                if front.p - rear.p < self.car_length - 1e-12:
                    pairs.append((rear.id, front.id))
        return pairs


def leader_of(world: WorldState, car_id: int, lane: Optional[int] = None) -> Optional[int]:
    """Id of the nearest car ahead of `car_id` in `lane` (default: own lane).

    "Ahead" means strictly larger position. Returns None when the lane ahead
    is empty.
    """
    me = world.car(car_id)
    lane = me.lane if lane is None else lane
    if not 1 <= lane <= world.lanes:
        raise GeometryError(f"lane {lane} outside [1, {world.lanes}]")
    best: Optional[VehicleState] = None
    for other in world.cars:
        if other.id == car_id or other.lane != lane or other.p <= me.p:
            continue
        if best is None or other.p < best.p or (other.p == best.p and other.id < best.id):
            best = other
    return None if best is None else best.id


def follower_of(world: WorldState, car_id: int, lane: Optional[int] = None) -> Optional[int]:
    """Id of the nearest car at or behind `car_id`'s position in `lane`.

    A car in another lane at exactly the same position counts as behind, so
    that the pair is never invisible to both leader_of and follower_of.
    """
    me = world.car(car_id)
    lane = me.lane if lane is None else lane
    if not 1 <= lane <= world.lanes:
        raise GeometryError(f"lane {lane} outside [1, {world.lanes}]")
    best: Optional[VehicleState] = None
    for other in world.cars:
        if other.id == car_id or other.lane != lane or other.p > me.p:
            continue
        if best is None or other.p > best.p or (other.p == best.p and other.id < best.id):
            best = other
    return None if best is None else best.id


def gap(world: WorldState, follower_id: int, leader_id: int) -> float:
    """Bumper-to-bumper distance between a follower and a car ahead of it."""
    rear = world.car(follower_id)
    front = world.car(leader_id)
    if front.p < rear.p:
        raise GeometryError(
            f"car {leader_id} (p={front.p}) is behind car {follower_id} (p={rear.p})")
    return front.p - rear.p - world.car_length
