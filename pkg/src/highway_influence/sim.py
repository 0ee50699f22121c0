"""Discrete-time closed loop.

Each step: evaluate the human driver models, assemble the barrier constraint
system and solve the control QP for the robots, apply per-step control noise,
integrate the double-integrator dynamics with explicit Euler (positions
first, then velocities), execute discrete lane changes, and append to the
trajectory log. Background cars hold their velocity.

Every random draw comes from a per-car stream derived from (seed, purpose,
car id), so trials are reproducible bit-for-bit and adding a car never
perturbs the draws of the others.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .behavior import clamp_human_accel, current_idm_accel, idm_accel, lane_decision
from .cbf import BarrierSpec, assemble_system
from .core import IdmParams, SimulationError, VehicleState, WorldState
from .qp import FAILED, OPTIMAL, QpProblem, QpSolution, solve_qp

_STREAM_CONTROL = 1
_STREAM_PARAMS = 2
_STREAM_WORLD = 3


@dataclass
class NoiseConfig:
    """Standard deviations of the disturbance model.

    Parameter noise (sd_s0, sd_v0, sd_abT) is drawn once per trial when a
    study builds its world; control noise is drawn each step for every human
    (and for background cars too when `background_control` is set).
    """

    sd_s0: float = 0.0
    sd_v0: float = 0.0
    sd_abT: float = 0.0
    sd_control: float = 0.0
    background_control: bool = False

    def __post_init__(self):
        for name in ("sd_s0", "sd_v0", "sd_abT", "sd_control"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"NoiseConfig.{name} must be >= 0")


@dataclass
class SimConfig:
    dt: float = 0.01
    duration: float = 60.0
    seed: int = 0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    incentive_enabled: bool = True
    accel_floor_mult: float = 3.0

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("SimConfig.dt must be > 0")
        if self.duration <= 0.0:
            raise ValueError("SimConfig.duration must be > 0")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))


class SimulationFault(SimulationError):
    """Cars collided (or another step-level contract broke) during a rollout."""

    def __init__(self, message: str, t: float, log: Optional["TrajectoryLog"] = None):
        super().__init__(message)
        self.t = t
        self.log = log


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a (seed, purpose..., id...) tuple."""
    entropy = [int(seed) & 0x7FFFFFFFFFFFFFFF] + [int(k) & 0x7FFFFFFFFFFFFFFF
                                                  for k in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))


class NoiseStreams:
    """Lazily-built per-car control-noise streams."""

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[int, np.random.Generator] = {}

    def control(self, car_id: int) -> np.random.Generator:
        gen = self._streams.get(car_id)
        if gen is None:
            gen = rng_for(self.seed, _STREAM_CONTROL, car_id)
            self._streams[car_id] = gen
        return gen


@dataclass
class StepRecord:
    t: float
    cars: list[tuple]          # (id, kind, lane, p, v, a, u-or-None)
    barriers: list[tuple]      # (name, psi)
    qp_status: Optional[str]
    events: list[tuple]        # (car_id, from_lane, to_lane)


@dataclass
class TrajectoryLog:
    records: list[StepRecord] = field(default_factory=list)

    def lane_change_events(self) -> list[tuple]:
        """(t, car_id, from_lane, to_lane) for every discrete lane change."""
        out = []
        for rec in self.records:
            for car_id, frm, to in rec.events:
                out.append((rec.t, car_id, frm, to))
        return out

    def series(self, car_id: int, what: str) -> list[float]:
        idx = {"lane": 2, "p": 3, "v": 4, "a": 5, "u": 6}[what]
        out = []
        for rec in self.records:
            for row in rec.cars:
                if row[0] == car_id:
                    out.append(row[idx])
                    break
        return out

    def barrier_series(self, name: str) -> list[float]:
        return [psi for rec in self.records
                for bname, psi in rec.barriers if bname == name]

    def write_trajectory_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "car_id", "kind", "lane", "p", "v", "a", "u"])
            for rec in self.records:
                t = _fmt(rec.t)
                for car_id, kind, lane, p, v, a, u in rec.cars:
                    writer.writerow([t, car_id, kind, lane, _fmt(p), _fmt(v),
                                     _fmt(a), "" if u is None else _fmt(u)])

    def write_barrier_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "barrier_name", "psi", "qp_status"])
            for rec in self.records:
                t = _fmt(rec.t)
                for name, psi in rec.barriers:
                    writer.writerow([t, name, _fmt(psi), rec.qp_status or ""])


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def step(world: WorldState, specs: Sequence[BarrierSpec], cfg: SimConfig,
         streams: NoiseStreams, *,
         lane_targets: Optional[dict[int, int]] = None,
         robot_idm: Optional[dict[int, IdmParams]] = None,
         ) -> tuple[WorldState, StepRecord]:
    """Advance the world by one timestep; the input world is not mutated.

    `lane_targets` maps human ids to the lane they are heading for: such a
    driver only attempts changes toward that lane and stays put once there.
    `robot_idm` switches individual robots from QP control to plain IDM
    driving with the given parameters.
    """
    world = world.clone()
    dt = cfg.dt
    noise = cfg.noise
    robot_idm = robot_idm or {}

    # Driver models, evaluated on the pre-step state.
    applied: dict[int, float] = {}
    for car in world.cars:
        if car.is_human:
            raw = current_idm_accel(world, car.id)
            applied[car.id] = clamp_human_accel(raw, car.kind.idm,
                                                cfg.accel_floor_mult)
        elif car.is_robot and car.id in robot_idm:
            applied[car.id] = _robot_idm_accel(world, car, robot_idm[car.id])

    # Constraint assembly and control QP for the remaining robots.
    controlled = sorted(c.id for c in world.robots() if c.id not in robot_idm)
    active = [s for s in specs if s.enabled]
    barriers: list[tuple] = []
    qp_status: Optional[str] = None
    controls: dict[int, float] = {rid: 0.0 for rid in controlled}
    if active:
        system = assemble_system(active, world, dt, controlled)
        barriers = [(row.name, row.psi) for row in system.rows]
        if controlled:
            lo = np.array([world.car(r).kind.limits.a_lo for r in controlled])
            hi = np.array([world.car(r).kind.limits.a_hi for r in controlled])
            # Rows are rescaled to unit normals: the polytope is unchanged,
            # and slack penalties stay comparable across barrier families
            # whose raw coefficients differ by orders of magnitude.
            norms = np.linalg.norm(system.A, axis=1)
            norms[norms == 0.0] = 1.0
            A = system.A / norms[:, None]
            b = system.b / norms
            hard = np.array([row.hard for row in system.rows], dtype=bool)
            sol = solve_qp(QpProblem(A=A, b=b, lo=lo, hi=hi, hard=hard))
            qp_status = sol.status
            if sol.status == FAILED:
                for rid in controlled:  # hold the previous control
                    prev = world.car(rid).a
                    lim = world.car(rid).kind.limits
                    controls[rid] = min(max(prev, lim.a_lo), lim.a_hi)
            else:
                for rid, val in zip(controlled, sol.u):
                    controls[rid] = float(val)
        else:
            qp_status = OPTIMAL

    # Control noise, then integration (positions advance with the old
    # velocities, matching the first-order discretization used everywhere).
    for car in world.cars:
        if car.is_human:
            a = applied[car.id]
            if noise.sd_control > 0.0:
                a += noise.sd_control * streams.control(car.id).standard_normal()
        elif car.is_robot:
            a = controls.get(car.id, applied.get(car.id, 0.0))
        else:
            a = 0.0
            if noise.background_control and noise.sd_control > 0.0:
                a = noise.sd_control * streams.control(car.id).standard_normal()
        car.p += car.v * dt
        v_new = car.v + a * dt
        if car.is_robot:
            lim = car.kind.limits
            v_new = min(max(v_new, lim.v_lo), lim.v_hi)
        else:
            v_new = max(v_new, 0.0)
        car.v = v_new
        car.a = a
        car.lc_cooldown = max(0.0, car.lc_cooldown - dt)
    world.t += dt

    # Discrete lane changes: all decisions come from the same snapshot and
    # are applied together.
    events: list[tuple] = []
    moves: list[tuple[VehicleState, int]] = []
    for car in sorted(world.cars, key=lambda c: c.id):
        if not car.is_human or car.lc_cooldown > 0.0:
            continue
        toward = None
        if lane_targets is not None and car.id in lane_targets:
            target = lane_targets[car.id]
            if target == car.lane:
                continue
            toward = 1 if target > car.lane else -1
        d = lane_decision(world, car.id, cfg.incentive_enabled, toward)
        if d != 0:
            moves.append((car, d))
    for car, d in moves:
        events.append((car.id, car.lane, car.lane + d))
        car.lane += d
        car.lc_cooldown = car.kind.lane_change.cooldown

    pairs = world.collision_pairs()
    if pairs:
        raise SimulationFault(
            f"collision between cars {pairs} at t={world.t:.2f}", world.t)

    record = StepRecord(
        t=world.t,
        cars=[(c.id, _kind_name(c), c.lane, c.p, c.v, c.a,
               c.a if c.is_robot else None) for c in world.cars],
        barriers=barriers,
        qp_status=qp_status,
        events=events,
    )
    return world, record


def run(initial: WorldState, specs: Sequence[BarrierSpec], cfg: SimConfig, *,
        lane_targets: Optional[dict[int, int]] = None,
        robot_idm: Optional[dict[int, IdmParams]] = None,
        ) -> TrajectoryLog:
    """Roll the closed loop for cfg.duration seconds.

    Deterministic given (initial, specs, cfg). On a fault the partial log is
    attached to the raised SimulationFault.
    """
    streams = NoiseStreams(cfg.seed)
    world = initial
    log = TrajectoryLog()
    for _ in range(cfg.steps):
        try:
            world, record = step(world, specs, cfg, streams,
                                 lane_targets=lane_targets,
                                 robot_idm=robot_idm)
        except SimulationFault as fault:
            fault.log = log
            raise
        log.records.append(record)
    return log


def _robot_idm_accel(world: WorldState, car: VehicleState,
                     params: IdmParams) -> float:
    ahead = None
    best = math.inf
    for other in world.cars:
        if other.id != car.id and other.lane == car.lane and other.p > car.p \
                and other.p < best:
            ahead = other
            best = other.p
    if ahead is None:
        raw = idm_accel(car.v, None, None, params)
    else:
        s = ahead.p - car.p - world.car_length
        if s <= 0.0:
            raw = -params.b_max * 3.0
        else:
            raw = idm_accel(car.v, ahead.v, s, params)
    raw = clamp_human_accel(raw, params)
    lim = car.kind.limits
    return min(max(raw, lim.a_lo), lim.a_hi)


def _kind_name(car: VehicleState) -> str:
    if car.is_human:
        return "human"
    if car.is_robot:
        return "robot"
    return "background"
