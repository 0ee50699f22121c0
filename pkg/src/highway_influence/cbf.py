"""Turn influence objectives into linear constraints on robot controls.

Each objective is a scalar barrier `psi(x)` that is nonnegative exactly when
the objective holds. Differentiating psi until robot controls appear, and
replacing human acceleration rates with their affine-in-control expressions
(or one-step backward differences when no robot leads the human), yields a
single affine inequality per barrier:

    coeffs . u >= rhs

Stacking one row per barrier gives the constraint system the per-step QP
operates on. The pole parameters of each barrier set how aggressively the
closed loop is pushed back toward psi >= 0: the constraint enforced is the
pole polynomial applied to psi, normalized so the highest derivative has unit
coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .behavior import current_idm_accel, drift_term, idm_partials
from .core import SimulationError, VehicleState, WorldState, leader_of


class AssemblyError(SimulationError):
    """A barrier could not be translated into a control constraint."""


# ---------------------------------------------------------------------------
# Barrier catalog
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VelocityUpper:
    car: int
    bound: float


@dataclass(frozen=True)
class VelocityLower:
    car: int
    bound: float


@dataclass(frozen=True)
class GapLower:
    """Keep car `front` at least `margin` ahead of car `back` (positions)."""

    front: int
    back: int
    margin: float


@dataclass(frozen=True)
class AccelLower:
    car: int
    bound: float


@dataclass(frozen=True)
class AccelUpper:
    car: int
    bound: float


BarrierForm = Union[VelocityUpper, VelocityLower, GapLower, AccelLower, AccelUpper]


@dataclass
class BarrierSpec:
    """One influence objective plus its pole parameters.

    poles=None means critically placed unit poles at whatever order the
    assembled ladder turns out to have. Hard barriers are never softened
    when the per-step problem turns out infeasible (use for the robots' own
    collision guards, not for influence objectives).
    """

    form: BarrierForm
    poles: Optional[tuple[float, ...]] = None
    enabled: bool = True
    name: str = ""
    hard: bool = False

    def __post_init__(self):
        if self.poles is not None:
            self.poles = tuple(float(p) for p in self.poles)
            if any(p <= 0.0 for p in self.poles):
                raise ValueError(f"barrier {self.label()}: poles must be > 0")
        if not self.name:
            self.name = _default_name(self.form)

    def label(self) -> str:
        return self.name or _default_name(self.form)


def _default_name(form: BarrierForm) -> str:
    if isinstance(form, VelocityUpper):
        return f"v_upper_{form.car}"
    if isinstance(form, VelocityLower):
        return f"v_lower_{form.car}"
    if isinstance(form, GapLower):
        return f"gap_{form.front}_{form.back}"
    if isinstance(form, AccelLower):
        return f"a_lower_{form.car}"
    return f"a_upper_{form.car}"


def pole_coefficients(poles: Sequence[float]) -> list[float]:
    """Expand prod_i (1 + p_i d/dt) into derivative coefficients.

    Returns [c_0, ..., c_N] with c_0 = 1, so the induced constraint reads
    sum_j c_j psi^(j) >= 0.
    """
    coeffs = [1.0]
    for p in poles:
        if p <= 0.0:
            raise ValueError(f"poles must be > 0, got {p}")
        shifted = [0.0] + [p * c for c in coeffs]
        coeffs = [c + s for c, s in zip(coeffs + [0.0], shifted)]
    return coeffs


def barrier_value(form: BarrierForm, world: WorldState) -> float:
    """Current value of the barrier; >= 0 means the objective is met."""
    if isinstance(form, VelocityUpper):
        return form.bound - world.car(form.car).v
    if isinstance(form, VelocityLower):
        return world.car(form.car).v - form.bound
    if isinstance(form, GapLower):
        return world.car(form.front).p - world.car(form.back).p - form.margin
    if isinstance(form, AccelLower):
        return current_idm_accel(world, form.car) - form.bound
    if isinstance(form, AccelUpper):
        return form.bound - current_idm_accel(world, form.car)
    raise TypeError(f"unknown barrier form {form!r}")


# ---------------------------------------------------------------------------
# Affine expressions in the robot control vector
# ---------------------------------------------------------------------------

@dataclass
class _Affine:
    """const + sum_j coef[j] * u_j, keyed by robot car id."""

    const: float = 0.0
    coef: dict[int, float] = field(default_factory=dict)

    def __sub__(self, other: "_Affine") -> "_Affine":
        coef = dict(self.coef)
        for k, v in other.coef.items():
            coef[k] = coef.get(k, 0.0) - v
        return _Affine(self.const - other.const, coef)

    def scaled_add(self, weight: float, other: "_Affine") -> None:
        self.const = self.const + weight * other.const
        for k, v in other.coef.items():
            self.coef[k] = self.coef.get(k, 0.0) + weight * v

    def has_control(self) -> bool:
        return any(abs(v) > 0.0 for v in self.coef.values())


@dataclass
class ConstraintRow:
    """One assembled inequality coeffs . u >= rhs over the robot controls."""

    name: str
    coeffs: np.ndarray
    rhs: float
    psi: float
    derivs: tuple[float, ...]  # control-free parts of the ladder levels 1..b
    order: int
    alphas: tuple[float, ...]  # normalized coefficients, last entry 1.0
    hard: bool = False


@dataclass
class ConstraintSystem:
    rows: list[ConstraintRow]
    robot_ids: list[int]
    A: np.ndarray
    b: np.ndarray


# ---------------------------------------------------------------------------
# Ladder construction
# ---------------------------------------------------------------------------

def _accel_expr(world: WorldState, car: VehicleState,
                controlled: frozenset[int]) -> _Affine:
    """The car's acceleration right now, as an affine function of u."""
    if car.is_robot and car.id in controlled:
        return _Affine(0.0, {car.id: 1.0})
    if car.is_human:
        return _Affine(current_idm_accel(world, car.id), {})
    if car.is_robot:
        # Robot driven by some other policy this step: treat like a human
        # whose model value is its present acceleration.
        return _Affine(car.a, {})
    return _Affine(0.0, {})  # background: constant velocity


def _accel_rate_expr(world: WorldState, car: VehicleState,
                     controlled: frozenset[int], dt: float) -> _Affine:
    """d(acceleration)/dt of the car, as an affine function of u.

    Robots under QP control use the one-step backward difference of their
    control; a human whose current leader is a controlled robot uses the
    chain-rule expansion of the model acceleration; any other human falls
    back to the backward difference of its model value; background cars
    contribute nothing.
    """
    if car.is_robot and car.id in controlled:
        return _Affine(-car.a / dt, {car.id: 1.0 / dt})
    if car.is_human:
        ahead = leader_of(world, car.id)
        if ahead is not None:
            front = world.car(ahead)
            if front.is_robot and front.id in controlled:
                s = front.p - car.p - world.car_length
                parts = idm_partials(car.v, front.v, s, car.kind.idm)
                f_now = current_idm_accel(world, car.id)
                lam = drift_term(parts, car.v, f_now, front.v)
                return _Affine(lam, {front.id: parts.df_dvL})
        f_now = current_idm_accel(world, car.id)
        return _Affine((f_now - car.a) / dt, {})
    # Background or externally-driven robot: acceleration held constant.
    return _Affine(0.0, {})


def _ladder(spec: BarrierSpec, world: WorldState, dt: float,
            controlled: frozenset[int]) -> list[_Affine]:
    """Levels [psi, psi', ..., psi^(b)] with controls substituted in."""
    form = spec.form
    if isinstance(form, (VelocityUpper, VelocityLower)):
        sign = -1.0 if isinstance(form, VelocityUpper) else 1.0
        car = world.car(form.car)
        levels = [_Affine(barrier_value(form, world), {})]
        if car.is_robot and car.id in controlled:
            levels.append(_Affine(0.0, {car.id: sign}))
            return levels
        if not car.is_human:
            raise AssemblyError(
                f"barrier {spec.label()}: no control can reach the velocity of car {form.car}")
        f_now = current_idm_accel(world, form.car)
        levels.append(_Affine(sign * f_now, {}))
        rate = _accel_rate_expr(world, car, controlled, dt)
        top = _Affine(0.0, {})
        top.scaled_add(sign, rate)
        levels.append(top)
        return levels

    if isinstance(form, GapLower):
        front = world.car(form.front)
        back = world.car(form.back)
        levels = [_Affine(barrier_value(form, world), {}),
                  _Affine(front.v - back.v, {})]
        levels.append(_accel_expr(world, front, controlled)
                      - _accel_expr(world, back, controlled))
        if front.is_human or back.is_human:
            # Differentiate once more so the humans' control channels surface.
            levels.append(_accel_rate_expr(world, front, controlled, dt)
                          - _accel_rate_expr(world, back, controlled, dt))
        return levels

    if isinstance(form, (AccelLower, AccelUpper)):
        sign = 1.0 if isinstance(form, AccelLower) else -1.0
        car = world.car(form.car)
        if not car.is_human:
            raise AssemblyError(
                f"barrier {spec.label()}: acceleration bounds apply to human cars only")
        levels = [_Affine(barrier_value(form, world), {})]
        rate = _accel_rate_expr(world, car, controlled, dt)
        top = _Affine(0.0, {})
        top.scaled_add(sign, rate)
        levels.append(top)
        return levels

    raise TypeError(f"unknown barrier form {form!r}")


def relative_degree(spec: BarrierSpec, world: WorldState,
                    controlled: Optional[Sequence[int]] = None) -> int:
    """Number of derivatives the ladder takes for this barrier in this world."""
    ids = frozenset(controlled) if controlled is not None \
        else frozenset(c.id for c in world.robots())
    return len(_ladder(spec, world, 0.01, ids)) - 1


def assemble_row(spec: BarrierSpec, world: WorldState, dt: float,
                 robot_ids: Optional[Sequence[int]] = None) -> ConstraintRow:
    """Build the affine inequality enforcing one barrier at the current state.

    `robot_ids` fixes the control-vector ordering (and which robots count as
    QP-controlled); it defaults to all robots sorted by id.
    """
    if robot_ids is None:
        robot_ids = sorted(c.id for c in world.robots())
    controlled = frozenset(robot_ids)
    levels = _ladder(spec, world, dt, controlled)
    order = len(levels) - 1
    top = levels[-1]
    if not top.has_control():
        raise AssemblyError(
            f"barrier {spec.label()}: no robot control appears in the ladder")

    poles = spec.poles if spec.poles is not None else (1.0,) * order
    if len(poles) != order:
        raise AssemblyError(
            f"barrier {spec.label()}: {len(poles)} poles given but the ladder "
            f"has relative degree {order}")
    raw = pole_coefficients(poles)
    lead = raw[-1]
    alphas = [c / lead for c in raw]

    g = _Affine(top.const, dict(top.coef))
    for j in range(order - 1, -1, -1):
        g.scaled_add(alphas[j], levels[j])
    coeffs = np.array([g.coef.get(rid, 0.0) for rid in robot_ids])
    return ConstraintRow(
        name=spec.label(),
        coeffs=coeffs,
        rhs=-g.const,
        psi=levels[0].const,
        derivs=tuple(lvl.const for lvl in levels[1:]),
        order=order,
        alphas=tuple(alphas),
        hard=spec.hard,
    )


def assemble_system(specs: Sequence[BarrierSpec], world: WorldState, dt: float,
                    robot_ids: Optional[Sequence[int]] = None) -> ConstraintSystem:
    """Stack the enabled barriers' rows, in input order, into A u >= b."""
    if robot_ids is None:
        robot_ids = sorted(c.id for c in world.robots())
    else:
        robot_ids = list(robot_ids)
    rows = [assemble_row(s, world, dt, robot_ids) for s in specs if s.enabled]
    n = len(robot_ids)
    if rows:
        A = np.vstack([r.coeffs for r in rows])
        b = np.array([r.rhs for r in rows])
    else:
        A = np.zeros((0, n))
        b = np.zeros(0)
    return ConstraintSystem(rows=rows, robot_ids=list(robot_ids), A=A, b=b)
