"""Human driver models.

Longitudinal control follows the intelligent driver model (IDM): the driver
accelerates toward a desired velocity and keeps a dynamic desired gap behind
the leading car. Lateral control is a discrete lane-change rule gated by a
clearance (safety) test and a speed-gain (incentive) test on the target lane.

The closed-form partial derivatives of the IDM acceleration are what couple
robot motion to human motion: when a human's leader is a robot, the rate of
change of the human's acceleration is an affine function of the robot's
control, with slope df_dvL and intercept given by `drift_term`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .core import (
    GeometryError,
    Human,
    IdmParams,
    WorldState,
    follower_of,
    leader_of,
)

# Directions a driver may move, in preference order (left first).
LEFT = -1
RIGHT = +1

# Floor multiplier for the brake clamp applied before integration: the raw
# IDM braking term is unbounded as the gap shrinks, which destabilizes
# explicit integration. Normal operation never touches the clamp.
DEFAULT_BRAKE_FLOOR_MULT = 3.0


@dataclass(frozen=True)
class IdmPartials:
    """Partial derivatives of the IDM acceleration.

    df_dpH / df_dvH: with respect to the follower's own position / velocity.
    df_dpL / df_dvL: with respect to the leading car's position / velocity.
    The position partials are equal and opposite because position only enters
    through the gap.
    """

    df_dpH: float
    df_dvH: float
    df_dpL: float
    df_dvL: float


def idm_accel(v: float, v_leader: Optional[float], s: Optional[float],
              params: IdmParams) -> float:
    """IDM acceleration for a car at speed `v` with optional leader.

    `s` is the bumper-to-bumper gap to the leader and `v_leader` its speed;
    pass None for both on a free road. Raises GeometryError when the gap is
    not positive (the model diverges there).
    """
    free = 1.0 - (v / params.v0) ** 4
    if s is None:
        return params.a_max * free
    if s <= 0.0:
        raise GeometryError(f"IDM needs a positive gap, got s={s}")
    sstar = desired_gap(v, v - v_leader, params)
    return params.a_max * (free - (sstar / s) ** 2)


def desired_gap(v: float, dv: float, params: IdmParams) -> float:
    """Dynamic desired gap s*(v, dv); dv is follower minus leader speed."""
    coupling = v * dv / (2.0 * math.sqrt(params.a_max * params.b_max))
    return params.s0 + v * params.T + coupling


def idm_partials(v: float, v_leader: float, s: float,
                 params: IdmParams) -> IdmPartials:
    """Closed-form derivatives of `idm_accel` in the follower-with-leader case."""
    if s <= 0.0:
        raise GeometryError(f"IDM needs a positive gap, got s={s}")
    c = 1.0 / (2.0 * math.sqrt(params.a_max * params.b_max))
    sstar = params.s0 + v * params.T + c * v * (v - v_leader)
    common = 2.0 * params.a_max * sstar / (s * s)
    df_dpL = common * sstar / s
    df_dvH = -params.a_max * 4.0 * v ** 3 / params.v0 ** 4 \
        - common * (params.T + c * (2.0 * v - v_leader))
    df_dvL = common * c * v
    return IdmPartials(df_dpH=-df_dpL, df_dvH=df_dvH, df_dpL=df_dpL, df_dvL=df_dvL)


def drift_term(partials: IdmPartials, v_follower: float, a_follower: float,
               v_leader: float) -> float:
    """Control-independent part of d(IDM accel)/dt.

    The full rate of change of the follower's model acceleration is this value
    plus df_dvL times the leader's acceleration; when the leader is a robot
    that acceleration is exactly the robot's control input.
    """
    return (partials.df_dpH * v_follower
            + partials.df_dvH * a_follower
            + partials.df_dpL * v_leader)


def clamp_human_accel(a: float, params: IdmParams,
                      floor_mult: float = DEFAULT_BRAKE_FLOOR_MULT) -> float:
    """Bound the raw IDM output before integration (see DEFAULT_BRAKE_FLOOR_MULT)."""
    return min(max(a, -floor_mult * params.b_max), params.a_max)


def current_idm_accel(world: WorldState, car_id: int) -> float:
    """Raw (unclamped) IDM acceleration of a human given its current leader."""
    me = world.car(car_id)
    if not me.is_human:
        raise ValueError(f"car {car_id} is not human")
    ahead = leader_of(world, car_id)
    if ahead is None:
        return idm_accel(me.v, None, None, me.kind.idm)
    front = world.car(ahead)
    s = front.p - me.p - world.car_length
    return idm_accel(me.v, front.v, s, me.kind.idm)


def lane_safety(world: WorldState, car_id: int, target_lane: int) -> bool:
    """True when the target lane has s_min clearance ahead and behind the car.

    Clearances are measured between positions, against the nearest car ahead
    and the nearest car at-or-behind in the target lane; an empty slot passes.
    """
    me = _human(world, car_id)
    _check_adjacent(world, me.lane, target_lane)
    s_min = me.kind.lane_change.s_min
    ahead = leader_of(world, car_id, target_lane)
    if ahead is not None and world.car(ahead).p - me.p < s_min:
        return False
    behind = follower_of(world, car_id, target_lane)
    if behind is not None and me.p - world.car(behind).p < s_min:
        return False
    return True


def lane_incentive(world: WorldState, car_id: int, target_lane: int) -> bool:
    """True when the target lane's leading car is faster by at least dv_th.

    An empty lane ahead counts as an unbounded speed opportunity.
    """
    me = _human(world, car_id)
    _check_adjacent(world, me.lane, target_lane)
    ahead = leader_of(world, car_id, target_lane)
    if ahead is None:
        return True
    return world.car(ahead).v - me.v >= me.kind.lane_change.dv_th


def lane_decision(world: WorldState, car_id: int, incentive_enabled: bool = True,
                  toward: Optional[int] = None) -> int:
    """Direction of the lane change the driver takes now: -1 left, +1 right, 0 stay.

    Both neighbor lanes are considered and left wins ties, unless `toward`
    restricts the search to one direction (a driver with a destination lane in
    mind does not wander the other way). Callers are responsible for the
    cooldown; this function only evaluates the criteria.
    """
    me = _human(world, car_id)
    directions = (LEFT, RIGHT) if toward is None else (toward,)
    for d in directions:
        target = me.lane + d
        if not 1 <= target <= world.lanes:
            continue
        if not lane_safety(world, car_id, target):
            continue
        if incentive_enabled and not lane_incentive(world, car_id, target):
            continue
        return d
    return 0


def _human(world: WorldState, car_id: int):
    me = world.car(car_id)
    if not me.is_human:
        raise ValueError(f"car {car_id} is not human")
    return me


def _check_adjacent(world: WorldState, lane: int, target_lane: int) -> None:
    if abs(target_lane - lane) != 1:
        raise ValueError(f"lane {target_lane} is not adjacent to lane {lane}")
    if not 1 <= target_lane <= world.lanes:
        raise GeometryError(f"lane {target_lane} outside [1, {world.lanes}]")
