"""Gait template, cascaded position/velocity controller, joint driver.

Each leg follows a two-phase rotor trajectory: a stance sweep from a low
angle to a high angle at constant normalized speed, then a swing through
the remaining circle back to the start.  Per-leg phase offsets and spin
signs arranged over four legs produce pace, bounding, turning and a
backflip maneuver.  A position P loop cascaded into a velocity PI loop
turns target angles into a drive current, which a saturating motor map
converts to a joint rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .joints import RevoluteJoint, joint_measured_state, rotate_joint
from .springs import SimState, SpringEngine

TWO_PI = 2.0 * np.pi

# leg ordering used for phase offsets and spin signs everywhere
LEG_ORDER = ("FL", "FR", "BL", "BR")

# drive motor: 469 rpm no-load ceiling
MOTOR_MAX_RATE = 469.0 * TWO_PI / 60.0


def wrap_to_pi(angle: float) -> float:
    """Shortest-path wrap into (-pi, pi]."""
    return np.pi - (np.pi - angle) % TWO_PI


@dataclass(frozen=True)
class GaitParams:
    """Rotor gait template.

    theta_low/theta_high bound the stance sweep; stance_ratio is the time
    fraction spent in stance; one full cycle advances the leg by exactly
    2*pi over cycle_period seconds.
    """

    theta_low: float = -0.65
    theta_high: float = 0.65
    stance_ratio: float = 0.42
    cycle_period: float = 1.0
    phase_offsets: tuple[float, float, float, float] = (0.0, 0.0, 0.5, 0.5)
    direction_signs: tuple[int, int, int, int] = (1, -1, 1, -1)

    def __post_init__(self):
        c = self.contact_angle
        if not 0.0 < c < TWO_PI:
            raise ValueError(f"contact angle must be in (0, 2pi), got {c}")
        if not 0.0 < self.stance_ratio < 1.0:
            raise ValueError("stance_ratio must be in (0, 1)")
        if not self.cycle_period > 0.0:
            raise ValueError("cycle_period must be > 0")
        if any(not 0.0 <= o < 1.0 for o in self.phase_offsets):
            raise ValueError("phase offsets must lie in [0, 1)")
        if any(s not in (-1, 1) for s in self.direction_signs):
            raise ValueError("direction signs must be +1 or -1")

    @property
    def contact_angle(self) -> float:
        return self.theta_high - self.theta_low

    @property
    def omega_stance(self) -> float:
        """Normalized stance speed (rad per unit cycle fraction)."""
        return self.contact_angle / self.stance_ratio

    @property
    def omega_swing(self) -> float:
        return (TWO_PI - self.contact_angle) / (1.0 - self.stance_ratio)


@dataclass(frozen=True)
class LegPhase:
    """Normalized cycle time in [0, 1) and its previous value."""

    t_c: float = 0.0
    t_c_prev: float = 0.0


def advance_phase(phase: LegPhase, dt: float, params: GaitParams) -> LegPhase:
    """t_c advances by dt / cycle_period, wrapped modulo 1."""
    if dt < 0.0:
        raise ValueError("dt must be >= 0")
    return LegPhase(t_c=(phase.t_c + dt / params.cycle_period) % 1.0, t_c_prev=phase.t_c)


def gait_target(phase: LegPhase | float, params: GaitParams) -> float:
    """Target rotor angle in [0, 2pi) for the given normalized cycle time.

    Stance for t_c < stance_ratio, swing otherwise; continuous at the
    handoff and across the cycle wrap.
    """
    t_c = phase.t_c if isinstance(phase, LegPhase) else float(phase)
    s = params.stance_ratio
    if t_c < s:
        theta = params.theta_low + params.omega_stance * t_c
    else:
        theta = params.theta_high + params.omega_swing * (t_c - s)
    return theta % TWO_PI


def gait_target_unwrapped(t_c: float, params: GaitParams) -> float:
    """Like gait_target but without the 2pi fold (monotone over one cycle)."""
    s = params.stance_ratio
    if t_c < s:
        return params.theta_low + params.omega_stance * t_c
    return params.theta_high + params.omega_swing * (t_c - s)


@dataclass(frozen=True)
class ControllerGains:
    """Cascade gains: position P into velocity PI with saturation.

    The encoder responds within one control tick, so the discrete velocity
    loop is stable only while current_to_rate * kp_vel stays below 1.
    """

    kp_pos: float = 8.0
    kp_vel: float = 0.25
    ki_vel: float = 40.0
    output_limit: float = 25.0
    integrator_limit: float = 2.0

    def __post_init__(self):
        if min(self.kp_pos, self.kp_vel, self.ki_vel) < 0.0:
            raise ValueError("gains must be >= 0")
        if self.output_limit <= 0.0 or self.integrator_limit <= 0.0:
            raise ValueError("limits must be > 0")


def cascade_control(
    theta_des: float,
    theta_meas: float,
    omega_meas: float,
    gains: ControllerGains,
    integrator_state: float,
    dt: float,
) -> tuple[float, float]:
    """One controller tick; returns (drive current, new integrator state)."""
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    e_theta = wrap_to_pi(theta_des - theta_meas)
    d = gains.kp_pos * e_theta
    e_omega = d - omega_meas
    integrator = integrator_state + e_omega * dt
    integrator = min(max(integrator, -gains.integrator_limit), gains.integrator_limit)
    i_des = gains.kp_vel * e_omega + gains.ki_vel * integrator
    i_des = min(max(i_des, -gains.output_limit), gains.output_limit)
    return i_des, integrator


@dataclass(frozen=True)
class MotorMap:
    """Drive current to commanded joint rate, saturated at the motor ceiling."""

    current_to_rate: float = 2.5
    max_rate: float = MOTOR_MAX_RATE

    def rate(self, i_des: float) -> float:
        return min(max(self.current_to_rate * i_des, -self.max_rate), self.max_rate)


# tuned-in-simulation presets; the layouts (which legs share a phase) are the
# defining property, the numeric template values are tuning defaults
_PRESETS = {
    "pace": dict(
        phase_offsets=(0.0, 0.5, 0.0, 0.5),
        direction_signs=(1, -1, 1, -1),
    ),
    "bounding": dict(
        phase_offsets=(0.0, 0.0, 0.5, 0.5),
        direction_signs=(1, -1, 1, -1),
    ),
    "turn_left": dict(
        phase_offsets=(0.0, 0.0, 0.0, 0.0),
        direction_signs=(1, 1, 1, 1),
    ),
    "turn_right": dict(
        phase_offsets=(0.0, 0.0, 0.0, 0.0),
        direction_signs=(-1, -1, -1, -1),
    ),
    "backflip": dict(
        theta_low=-1.0,
        theta_high=1.0,
        stance_ratio=0.5,
        cycle_period=0.4,
        phase_offsets=(0.0, 0.0, 0.3, 0.3),
        direction_signs=(1, -1, 1, -1),
    ),
}


def gait_preset(name: str) -> GaitParams:
    """Named gait: pace, bounding, turn_left, turn_right, backflip."""
    try:
        overrides = _PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown gait preset {name!r}; choose from {sorted(_PRESETS)}"
        ) from None
    return GaitParams(**overrides)


class GaitDriver:
    """Closed-loop driver binding the gait template to the joint kernel.

    At every control tick each leg's target angle feeds the cascade
    controller against the joint encoder; the drive current maps to a
    commanded rate which is subdivided over the physics substeps as
    incremental joint rotations.
    """

    def __init__(
        self,
        joints: dict[str, RevoluteJoint],
        params: GaitParams,
        gains: ControllerGains,
        motor: MotorMap | None = None,
        control_dt: float = 1.0e-3,
        joint_update_divisor: int = 1,
    ):
        if set(joints) != set(LEG_ORDER):
            raise ValueError(f"joints must be keyed by {LEG_ORDER}")
        if joint_update_divisor < 1:
            raise ValueError("joint_update_divisor must be >= 1")
        self.joints = joints
        self.params = params
        self.gains = gains
        self.motor = motor if motor is not None else MotorMap()
        self.control_dt = float(control_dt)
        self.joint_update_divisor = int(joint_update_divisor)
        self.master_phase = LegPhase()
        self.integrators = {leg: 0.0 for leg in LEG_ORDER}
        self.commanded_rates = {leg: 0.0 for leg in LEG_ORDER}

    def leg_phase(self, leg: str) -> LegPhase:
        off = self.params.phase_offsets[LEG_ORDER.index(leg)]
        return LegPhase(
            t_c=(self.master_phase.t_c + off) % 1.0,
            t_c_prev=(self.master_phase.t_c_prev + off) % 1.0,
        )

    def control_tick(self, state: SimState):
        """Advance the phase one control period and refresh commanded rates."""
        self.master_phase = advance_phase(self.master_phase, self.control_dt, self.params)
        for k, leg in enumerate(LEG_ORDER):
            sign = self.params.direction_signs[k]
            theta_des = sign * gait_target(self.leg_phase(leg), self.params)
            joint = self.joints[leg]
            theta_meas, omega_meas = joint_measured_state(joint, state)
            i_des, self.integrators[leg] = cascade_control(
                theta_des,
                theta_meas,
                omega_meas,
                self.gains,
                self.integrators[leg],
                self.control_dt,
            )
            self.commanded_rates[leg] = self.motor.rate(i_des)

    def run(
        self,
        state: SimState,
        engine: SpringEngine,
        duration: float,
        on_sample=None,
        sample_every: int = 0,
        stop_when=None,
    ):
        """Drive the coupled system for `duration` seconds of simulated time.

        The control period must be an integer multiple of the physics dt.
        ``on_sample(state)`` fires every ``sample_every`` physics steps;
        ``stop_when(state)`` is checked at every control tick.
        """
        n_sub = round(self.control_dt / state.dt)
        if abs(n_sub * state.dt - self.control_dt) > 1e-12:
            raise ValueError("control_dt must be an integer multiple of the physics dt")
        n_ticks = round(duration / self.control_dt)
        div = self.joint_update_divisor
        for _ in range(n_ticks):
            self.control_tick(state)
            for sub in range(n_sub):
                if (sub + 1) % div == 0:
                    for k, leg in enumerate(LEG_ORDER):
                        delta = self.commanded_rates[leg] * state.dt * div
                        if delta != 0.0:
                            rotate_joint(state, self.joints[leg], delta)
                engine.step()
                if (
                    on_sample is not None
                    and sample_every
                    and state.step_count % sample_every == 0
                ):
                    on_sample(state)
            if stop_when is not None and stop_when(state):
                return


def drive_joints(
    state: SimState,
    engine: SpringEngine,
    joints: dict[str, RevoluteJoint],
    params: GaitParams,
    gains: ControllerGains,
    duration: float,
    control_dt: float = 1.0e-3,
    motor: MotorMap | None = None,
    **run_kwargs,
) -> GaitDriver:
    """Convenience wrapper: build a GaitDriver and run it for `duration`."""
    driver = GaitDriver(joints, params, gains, motor=motor, control_dt=control_dt)
    driver.run(state, engine, duration, **run_kwargs)
    return driver
