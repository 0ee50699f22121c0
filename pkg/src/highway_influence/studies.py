"""Scenario catalog and the two quantitative case studies.

The catalog exposes the nine packaged demonstration scenarios. The case
studies are randomized trial harnesses: lane sorting for traffic flow (group
drivers by desired velocity, then have nearby robots walk each driver to its
assigned lane) and tailgating mitigation (one robot regulating the gap,
speed, and acceleration envelope of an aggressive follower). Each trial is
fully determined by its seed; treatment and control arms of a pair share the
seed and therefore the initial conditions and noise.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import config as config_mod
from .behavior import clamp_human_accel, current_idm_accel
from .cbf import AccelLower, AccelUpper, BarrierSpec, GapLower, VelocityUpper
from .core import (
    ControlLimits,
    Human,
    IdmParams,
    LaneChangeParams,
    Robot,
    SimulationError,
    VehicleState,
    WorldState,
    follower_of,
    leader_of,
)
from .sim import (
    NoiseConfig,
    NoiseStreams,
    SimConfig,
    SimulationFault,
    TrajectoryLog,
    rng_for,
    step,
)
from .stats import TTestResult, kmeans_1d, paired_t_test

_STREAM_PARAMS = 2
_STREAM_WORLD = 3

CAR_LENGTH = 5.0


class CaseStudyError(SimulationError):
    """Too many trials faulted for the study result to be trusted."""


@dataclass
class Scenario:
    name: str
    description: str
    world: WorldState
    specs: list[BarrierSpec]
    sim: SimConfig
    lane_targets: dict[int, int]
    success: Optional[config_mod.SuccessSpec]

    def run(self, *, duration: Optional[float] = None, dt: Optional[float] = None,
            seed: Optional[int] = None) -> TrajectoryLog:
        cfg = self.sim
        if duration is not None or dt is not None or seed is not None:
            cfg = replace(cfg,
                          duration=duration if duration is not None else cfg.duration,
                          dt=dt if dt is not None else cfg.dt,
                          seed=seed if seed is not None else cfg.seed)
        from .sim import run as _run
        return _run(self.world, self.specs, cfg, lane_targets=self.lane_targets)


def scenario(name_or_path) -> Scenario:
    pc = config_mod.load_config(name_or_path)
    return Scenario(name=pc.name, description=pc.description, world=pc.world,
                    specs=pc.specs, sim=pc.sim, lane_targets=pc.lane_targets,
                    success=pc.success)


def scenario_catalog() -> list[Scenario]:
    """The nine packaged demonstrations, single-robot through multi-human."""
    return [scenario(name) for name in config_mod.packaged_scenario_names()]


# ---------------------------------------------------------------------------
# Trial outcome record
# ---------------------------------------------------------------------------

@dataclass
class TrialOutcome:
    seed: int
    ok: bool
    success: bool
    metrics: dict[str, float] = field(default_factory=dict)
    note: str = ""


# ---------------------------------------------------------------------------
# Case study 1: traffic flow through lane sorting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrafficFlowSettings:
    lanes: int = 3
    horizon: float = 120.0
    phase_timeout: float = 12.0
    dt: float = 0.01
    robots_per_lane: tuple[int, int] = (1, 3)
    humans_per_lane: tuple[int, int] = (1, 3)
    spacing: tuple[float, float] = (30.0, 50.0)
    v_init: tuple[float, float] = (25.0, 35.0)
    v_desired: tuple[float, float] = (25.0, 40.0)
    dv_th: tuple[float, float] = (2.0, 5.0)
    gap_margin: float = 1.0
    incentive_margin: float = 0.5
    guard_margin: float = 3.0
    noise: NoiseConfig = field(default_factory=lambda: NoiseConfig(
        sd_s0=0.2, sd_v0=2.0, sd_abT=0.1, sd_control=0.2))


def _noisy_idm(base: IdmParams, v0_nominal: float, noise: NoiseConfig,
               rng: np.random.Generator) -> IdmParams:
    """Per-trial parameter perturbation of one driver."""
    s0 = max(0.5, base.s0 + noise.sd_s0 * rng.standard_normal())
    v0 = max(5.0, v0_nominal + noise.sd_v0 * rng.standard_normal())
    a_max = max(0.3, base.a_max + noise.sd_abT * rng.standard_normal())
    b_max = max(0.3, base.b_max + noise.sd_abT * rng.standard_normal())
    T = max(0.2, base.T + noise.sd_abT * rng.standard_normal())
    return IdmParams(a_max=a_max, b_max=b_max, v0=v0, s0=s0, T=T)


def _build_traffic_world(seed: int, s: TrafficFlowSettings,
                         profiles: dict[str, IdmParams]
                         ) -> tuple[WorldState, dict[int, float]]:
    """Random three-lane column of robots and humans; returns nominal desires."""
    rng = rng_for(seed, _STREAM_WORLD)
    normal = profiles["normal"]
    cars: list[VehicleState] = []
    desired: dict[int, float] = {}
    next_id = 1
    for lane in range(1, s.lanes + 1):
        n_robot = int(rng.integers(s.robots_per_lane[0], s.robots_per_lane[1] + 1))
        n_human = int(rng.integers(s.humans_per_lane[0], s.humans_per_lane[1] + 1))
        kinds = ["robot"] * n_robot + ["human"] * n_human
        rng.shuffle(kinds)
        p = 0.0
        for kind in kinds:
            p += float(rng.uniform(*s.spacing)) + CAR_LENGTH
            v = float(rng.uniform(*s.v_init))
            if kind == "robot":
                cars.append(VehicleState(next_id, Robot(ControlLimits()), lane, p, v))
            else:
                v_des = float(rng.uniform(*s.v_desired))
                dv_th = float(rng.uniform(*s.dv_th))
                params = _noisy_idm(normal, v_des, s.noise,
                                    rng_for(seed, _STREAM_PARAMS, next_id))
                # The lane-change space threshold tracks the driver's desired
                # standstill gap; add the car length since thresholds compare
                # positions, not bumper gaps.
                lc = LaneChangeParams(s_min=max(params.s0, 0.5) + CAR_LENGTH,
                                      dv_th=dv_th, cooldown=5.0)
                cars.append(VehicleState(next_id, Human(params, lc), lane, p, v))
                desired[next_id] = v_des
            next_id += 1
    world = WorldState(cars, s.lanes, t=0.0, car_length=CAR_LENGTH)
    for car in world.cars:
        if car.is_human:
            car.a = clamp_human_accel(current_idm_accel(world, car.id),
                                      car.kind.idm)
    return world, desired


def assign_lanes_by_desired_velocity(desired: dict[int, float], lanes: int
                                     ) -> dict[int, int]:
    """Cluster desired velocities into one group per lane; fastest goes leftmost."""
    ids = sorted(desired)
    values = [desired[i] for i in ids]
    k = min(lanes, len(values))
    assign, centroids = kmeans_1d(values, k)
    # Rank clusters by centroid, fastest first; lane 1 is the leftmost lane.
    order = sorted(range(k), key=lambda c: -centroids[c])
    lane_of_cluster = {c: lane for lane, c in enumerate(order, start=1)}
    return {cid: lane_of_cluster[c] for cid, c in zip(ids, assign)}


def _influence_specs(world: WorldState, human_id: int, next_lane: int,
                     s: TrafficFlowSettings) -> list[BarrierSpec]:
    """Merge-slot gap rows, an incentive-creating speed cap, and robot guards."""
    me = world.car(human_id)
    s_min = me.kind.lane_change.s_min
    specs: list[BarrierSpec] = []
    used_robots: list[int] = []

    ahead = leader_of(world, human_id, next_lane)
    while ahead is not None and not world.car(ahead).is_robot:
        ahead = leader_of(world, ahead, next_lane)
    if ahead is not None:
        specs.append(BarrierSpec(GapLower(front=ahead, back=human_id,
                                          margin=s_min + s.gap_margin),
                                 name=f"slot_front_{human_id}"))
        used_robots.append(ahead)

    behind = follower_of(world, human_id, next_lane)
    while behind is not None and not world.car(behind).is_robot:
        behind = follower_of(world, behind, next_lane)
    if behind is not None:
        specs.append(BarrierSpec(GapLower(front=human_id, back=behind,
                                          margin=s_min + s.gap_margin),
                                 name=f"slot_rear_{human_id}"))
        used_robots.append(behind)

    lead = leader_of(world, human_id)
    front_next = leader_of(world, human_id, next_lane)
    if lead is not None and world.car(lead).is_robot:
        if front_next is not None:
            bound = world.car(front_next).v - me.kind.lane_change.dv_th \
                - s.incentive_margin
            bound = max(bound, 5.0)
            specs.append(BarrierSpec(VelocityUpper(car=human_id, bound=bound),
                                     name=f"incentive_{human_id}"))
            used_robots.append(lead)

    # Keep every engaged robot clear of whatever it is following.
    for rid in sorted(set(used_robots)):
        rlead = leader_of(world, rid)
        if rlead is not None:
            specs.append(BarrierSpec(GapLower(front=rlead, back=rid,
                                              margin=CAR_LENGTH + s.guard_margin),
                                     name=f"guard_{rid}"))
    return specs


def traffic_flow_trial(seed: int,
                       settings: Optional[TrafficFlowSettings] = None
                       ) -> TrialOutcome:
    """One randomized lane-sorting trial; metrics at t=0 and at the horizon."""
    s = settings or TrafficFlowSettings()
    profiles = config_mod.driver_profiles()
    world, desired = _build_traffic_world(seed, s, profiles)
    targets = assign_lanes_by_desired_velocity(desired, s.lanes)

    before = _traffic_metrics(world, desired)
    cfg = SimConfig(dt=s.dt, duration=s.horizon, seed=seed, noise=s.noise,
                    incentive_enabled=True)
    streams = NoiseStreams(seed)
    t = 0.0

    def advance(specs, robot_idm, until, stop: Optional[Callable] = None):
        nonlocal world, t
        while t < until - 1e-9:
            world, record = step(world, specs, cfg, streams,
                                 lane_targets=targets, robot_idm=robot_idm)
            t = world.t
            if stop is not None and stop(record):
                return True
        return False

    try:
        for human_id in sorted(targets):
            if world.car(human_id).lane == targets[human_id]:
                continue
            deadline = min(t + s.phase_timeout, s.horizon)
            while world.car(human_id).lane != targets[human_id] and t < deadline - 1e-9:
                lane_now = world.car(human_id).lane
                next_lane = lane_now + (1 if targets[human_id] > lane_now else -1)
                specs = _influence_specs(world, human_id, next_lane, s)
                advance(specs, None, deadline,
                        stop=lambda rec: any(cid == human_id for cid, _, _ in rec.events))
            if t >= s.horizon - 1e-9:
                break

        # Hand every robot over to plain car-following, pacing its lane at the
        # highest desire among the humans now sharing it.
        normal = profiles["normal"]
        robot_idm = {}
        for robot in world.robots():
            lane_desires = [desired[c.id] for c in world.humans()
                            if c.lane == robot.lane]
            v0 = max(lane_desires) if lane_desires else normal.v0
            robot_idm[robot.id] = IdmParams(a_max=normal.a_max, b_max=normal.b_max,
                                            v0=max(v0, 5.0), s0=normal.s0,
                                            T=normal.T)
        advance([], robot_idm, s.horizon)
    except SimulationFault as fault:
        return TrialOutcome(seed=seed, ok=False, success=False,
                            note=f"fault: {fault}")

    after = _traffic_metrics(world, desired)
    success = all(world.car(cid).lane == lane for cid, lane in targets.items())
    return TrialOutcome(seed=seed, ok=True, success=success, metrics={
        "velocity_before": before[0], "velocity_after": after[0],
        "misfit_before": before[1], "misfit_after": after[1],
    })


def _traffic_metrics(world: WorldState, desired: dict[int, float]
                     ) -> tuple[float, float]:
    mean_v = sum(c.v for c in world.cars) / len(world.cars)
    misfit = sum(abs(desired[c.id] - c.v) for c in world.humans()) / len(desired)
    return mean_v, misfit


# ---------------------------------------------------------------------------
# Case study 2: aggressive-follower mitigation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AggressionSettings:
    duration: float = 60.0
    dt: float = 0.01
    gap_target: float = 25.0       # bumper-gap bound imposed on the follower
    gap_floor_min: float = 12.0    # never impose less than this
    v_cap: float = 35.0
    a_floor: float = -2.0
    a_cap: float = 1.4
    guard_margin: float = 2.0
    # Initial clearances (bumper to bumper) of the follower behind the robot
    # and the background car ahead of it; one to three car lengths.
    h_clearance: tuple[float, float] = (CAR_LENGTH, 3.0 * CAR_LENGTH)
    b_clearance: tuple[float, float] = (CAR_LENGTH, 3.0 * CAR_LENGTH)
    v_init: tuple[float, float] = (25.0, 35.0)
    noise: NoiseConfig = field(default_factory=lambda: NoiseConfig(
        sd_s0=0.2, sd_v0=2.0, sd_abT=0.1, sd_control=0.2,
        background_control=True))


ROBOT_ID, HUMAN_ID, BACKGROUND_ID = 1, 2, 3


def _build_aggression_world(seed: int, s: AggressionSettings,
                            profiles: dict[str, IdmParams]) -> WorldState:
    rng = rng_for(seed, _STREAM_WORLD)
    p_h = -(CAR_LENGTH + float(rng.uniform(*s.h_clearance)))
    p_b = CAR_LENGTH + float(rng.uniform(*s.b_clearance))
    v_h = float(rng.uniform(*s.v_init))
    v_r = float(rng.uniform(*s.v_init))
    v_b = float(rng.uniform(*s.v_init))
    params = _noisy_idm(profiles["aggressive"], profiles["aggressive"].v0,
                        s.noise, rng_for(seed, _STREAM_PARAMS, HUMAN_ID))
    from .core import Background
    cars = [
        VehicleState(ROBOT_ID, Robot(ControlLimits()), 1, 0.0, v_r),
        VehicleState(HUMAN_ID,
                     Human(params, LaneChangeParams(s_min=10.0, dv_th=3.0)),
                     1, p_h, v_h),
        VehicleState(BACKGROUND_ID, Background(), 1, p_b, v_b),
    ]
    world = WorldState(cars, lanes=1, t=0.0, car_length=CAR_LENGTH)
    human = world.car(HUMAN_ID)
    human.a = clamp_human_accel(current_idm_accel(world, HUMAN_ID), params)
    return world


def aggression_specs(s: AggressionSettings) -> list[BarrierSpec]:
    """Gap, speed, and acceleration envelope imposed on the follower, plus a
    forward guard so the robot never trades one conflict for another."""
    return [
        BarrierSpec(GapLower(front=ROBOT_ID, back=HUMAN_ID,
                             margin=s.gap_floor + CAR_LENGTH), name="gap_floor"),
        BarrierSpec(VelocityUpper(car=HUMAN_ID, bound=s.v_cap), name="speed_cap"),
        BarrierSpec(AccelLower(car=HUMAN_ID, bound=s.a_floor), name="accel_floor"),
        BarrierSpec(AccelUpper(car=HUMAN_ID, bound=s.a_cap), name="accel_cap"),
        BarrierSpec(GapLower(front=BACKGROUND_ID, back=ROBOT_ID,
                             margin=CAR_LENGTH + s.guard_margin), name="guard"),
    ]


def aggression_trial(seed: int, treatment: bool,
                     settings: Optional[AggressionSettings] = None
                     ) -> TrialOutcome:
    """One tailgating trial.

    Treatment: the robot solves the constrained control problem. Control: the
    robot drives plain normal-parameter car-following. The jerk metric is the
    mean magnitude of the follower's one-step acceleration differences.
    """
    s = settings or AggressionSettings()
    profiles = config_mod.driver_profiles()
    world = _build_aggression_world(seed, s, profiles)
    cfg = SimConfig(dt=s.dt, duration=s.duration, seed=seed, noise=s.noise,
                    incentive_enabled=True)
    specs = aggression_specs(s) if treatment else []
    robot_idm = None if treatment else {ROBOT_ID: profiles["normal"]}
    streams = NoiseStreams(seed)

    accels: list[float] = []
    gap_ok = 0
    v_ok = 0
    tail_steps = 0
    tail_start = s.duration / 2.0
    try:
        for _ in range(cfg.steps):
            world, _rec = step(world, specs, cfg, streams, robot_idm=robot_idm)
            human = world.car(HUMAN_ID)
            accels.append(human.a)
            if world.t >= tail_start:
                tail_steps += 1
                gap_now = world.car(ROBOT_ID).p - human.p - CAR_LENGTH
                if gap_now >= s.gap_floor - 0.5:
                    gap_ok += 1
                if human.v <= s.v_cap + 0.5:
                    v_ok += 1
    except SimulationFault as fault:
        return TrialOutcome(seed=seed, ok=False, success=False,
                            note=f"fault: {fault}")

    diffs = [abs(b - a) for a, b in zip(accels, accels[1:])]
    jerk = sum(diffs) / len(diffs) / s.dt
    metrics = {"mean_abs_jerk": jerk}
    if tail_steps:
        metrics["frac_gap_ok"] = gap_ok / tail_steps
        metrics["frac_v_ok"] = v_ok / tail_steps
    return TrialOutcome(seed=seed, ok=True, success=True, metrics=metrics)


# ---------------------------------------------------------------------------
# Multi-trial harness
# ---------------------------------------------------------------------------

@dataclass
class CaseStudySummary:
    study: str
    trials: int
    faults: int
    seed: int
    tests: list[dict]
    outcomes: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {"study": self.study, "trials": self.trials, "faults": self.faults,
               "seed": self.seed, "tests": self.tests}
        return json.dumps(doc, indent=2, sort_keys=True)


def trial_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed & 0x7FFFFFFFFFFFFFFF,
                                       index]).generate_state(1)[0])


def _traffic_worker(args) -> TrialOutcome:
    seed, settings = args
    return traffic_flow_trial(seed, settings)


def _aggression_worker(args) -> tuple[TrialOutcome, TrialOutcome]:
    seed, settings = args
    return (aggression_trial(seed, True, settings),
            aggression_trial(seed, False, settings))


def run_case_study(which: str, trials: int, seed: int, *, jobs: int = 1,
                   out_dir: Optional[Path] = None,
                   traffic_settings: Optional[TrafficFlowSettings] = None,
                   aggression_settings: Optional[AggressionSettings] = None,
                   ) -> CaseStudySummary:
    """Run `trials` seeded trials of one study and test the paired effects.

    Trials whose simulation faults are excluded from the tests; the study
    errors out when more than 10% fault. With `out_dir` set, a per-trial CSV
    and a summary JSON are written there.
    """
    if which not in ("traffic-flow", "aggression"):
        raise ValueError("which must be 'traffic-flow' or 'aggression'")
    if trials < 2:
        raise ValueError("need at least two trials for a paired test")
    seeds = [trial_seed(seed, i) for i in range(trials)]

    if which == "traffic-flow":
        args = [(s, traffic_settings) for s in seeds]
        results = _map(_traffic_worker, args, jobs)
        good = [r for r in results if r.ok]
        faults = trials - len(good)
        _check_faults(faults, trials)
        vel_after = [r.metrics["velocity_after"] for r in good]
        vel_before = [r.metrics["velocity_before"] for r in good]
        mis_after = [r.metrics["misfit_after"] for r in good]
        mis_before = [r.metrics["misfit_before"] for r in good]
        t_vel = paired_t_test(vel_after, vel_before)
        t_mis = paired_t_test(mis_after, mis_before)
        tests = [
            _test_doc("mean_velocity", vel_before, vel_after, t_vel,
                      "before", "after"),
            _test_doc("desired_velocity_misfit", mis_before, mis_after, t_mis,
                      "before", "after"),
        ]
        outcomes = [{"trial": i, "seed": r.seed, "ok": r.ok, "success": r.success,
                     **r.metrics, "note": r.note}
                    for i, r in enumerate(results)]
        summary = CaseStudySummary("traffic-flow", trials, faults, seed, tests,
                                   outcomes)
    else:
        args = [(s, aggression_settings) for s in seeds]
        results = _map(_aggression_worker, args, jobs)
        pairs = [(tr, co) for tr, co in results if tr.ok and co.ok]
        faults = trials - len(pairs)
        _check_faults(faults, trials)
        jerk_treat = [tr.metrics["mean_abs_jerk"] for tr, _ in pairs]
        jerk_ctrl = [co.metrics["mean_abs_jerk"] for _, co in pairs]
        t_jerk = paired_t_test(jerk_ctrl, jerk_treat)
        tests = [_test_doc("mean_abs_jerk", jerk_treat, jerk_ctrl, t_jerk,
                           "treatment", "control")]
        outcomes = []
        for i, (tr, co) in enumerate(results):
            row = {"trial": i, "seed": seeds[i], "ok": tr.ok and co.ok,
                   "jerk_treatment": tr.metrics.get("mean_abs_jerk"),
                   "jerk_control": co.metrics.get("mean_abs_jerk"),
                   "frac_gap_ok": tr.metrics.get("frac_gap_ok"),
                   "frac_v_ok": tr.metrics.get("frac_v_ok"),
                   "note": (tr.note + " " + co.note).strip()}
            outcomes.append(row)
        summary = CaseStudySummary("aggression", trials, faults, seed, tests,
                                   outcomes)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_trials_csv(out_dir / f"{summary.study}_trials.csv", summary)
        (out_dir / f"{summary.study}_summary.json").write_text(
            summary.to_json() + "\n")
    return summary


def _map(fn, args, jobs):
    if jobs <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, args))


def _check_faults(faults: int, trials: int) -> None:
    if faults > 0.10 * trials:
        raise CaseStudyError(
            f"{faults}/{trials} trials faulted (more than 10%)")


def _test_doc(metric: str, first: list, second: list, res: TTestResult,
              first_name: str, second_name: str) -> dict:
    return {
        "metric": metric,
        f"mean_{first_name}": _mean(first),
        f"mean_{second_name}": _mean(second),
        "t": res.t,
        "df": res.df,
        "p": res.p,
        "n": len(first),
    }


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else math.nan


def _write_trials_csv(path: Path, summary: CaseStudySummary) -> None:
    if not summary.outcomes:
        return
    keys = list(summary.outcomes[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for row in summary.outcomes:
            writer.writerow({k: _csv_cell(row.get(k)) for k in keys})


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.9g}"
    return value
