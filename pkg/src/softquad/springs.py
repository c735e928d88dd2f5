"""Deterministic mass-spring core.

Particles connected by linear springs with axial damping, integrated with
semi-implicit Euler at a fixed timestep.  Ground contact is a one-sided
penalty force with capped Coulomb friction.  Force evaluation is two-pass
(per-spring buffer, then an ordered per-mass gather), which makes every
step bit-identical across runs and across worker counts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange, set_num_threads
from numba import config as _numba_config

DEFAULT_DT = 5.0e-5
DEGENERATE_LENGTH_EPS = 1.0e-9
GRAVITY_DEFAULT = (0.0, 0.0, -9.81)


class SimulationError(RuntimeError):
    """Base class for failures raised by the simulation core."""


class DegenerateSpringError(SimulationError):
    """A spring with nonzero rest length collapsed below the length epsilon."""

    def __init__(self, spring_index: int):
        self.spring_index = spring_index
        super().__init__(
            f"spring {spring_index}: endpoints closer than {DEGENERATE_LENGTH_EPS} m "
            "with nonzero rest length; force direction undefined"
        )


class NonFiniteStateError(SimulationError):
    """A mass acquired a NaN/Inf position or velocity during a step."""

    def __init__(self, mass_index: int, step_count: int):
        self.mass_index = mass_index
        self.step_count = step_count
        super().__init__(
            f"non-finite position/velocity at mass {mass_index} after step {step_count}"
        )


@dataclass
class MassPoint:
    """Value view of one particle: position/velocity in m, m/s; mass in kg."""

    position: np.ndarray
    velocity: np.ndarray
    mass: float
    force_accum: np.ndarray
    fixed: bool = False

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        self.force_accum = np.asarray(self.force_accum, dtype=float).reshape(3)
        if not (np.isfinite(self.mass) and self.mass > 0.0):
            raise ValueError(f"mass must be positive and finite, got {self.mass}")


@dataclass
class SpringElement:
    """Linear spring between two mass indices.

    Force magnitude is stiffness*(length - rest_length) plus damping times the
    relative axial velocity, applied along the current axis, equal and
    opposite on the endpoints.
    """

    endpoint_a: int
    endpoint_b: int
    rest_length: float
    stiffness: float
    damping: float = 0.0

    def __post_init__(self):
        if self.endpoint_a == self.endpoint_b:
            raise ValueError("spring endpoints must differ")
        if self.rest_length < 0.0:
            raise ValueError("rest_length must be >= 0")
        if not self.stiffness > 0.0:
            raise ValueError("stiffness must be > 0")
        if self.damping < 0.0:
            raise ValueError("damping must be >= 0")


@dataclass
class ContactModel:
    """Flat-ground penalty contact with capped Coulomb friction.

    Normal force: normal_stiffness*penetration - normal_damping*v_z, clamped
    to >= 0, applied only below ground_height.  Tangential force opposes the
    horizontal velocity with magnitude min(mu*normal, m*|v_t|/dt).
    """

    ground_height: float = 0.0
    normal_stiffness: float = 2.0e4
    normal_damping: float = 10.0
    friction_coefficient: float = 0.8

    def __post_init__(self):
        if self.normal_stiffness < 0.0 or self.normal_damping < 0.0:
            raise ValueError("contact stiffness/damping must be >= 0")
        if self.friction_coefficient < 0.0:
            raise ValueError("friction_coefficient must be >= 0")


class SimState:
    """Whole simulation state: particle arrays, spring arrays, environment.

    Topology is append-only; positions, velocities and spring rest lengths
    may be mutated in place between steps.  ``sim_time`` is defined as
    ``step_count * dt`` exactly (dt is constant for the life of the state).
    """

    def __init__(
        self,
        dt: float = DEFAULT_DT,
        gravity=GRAVITY_DEFAULT,
        contact: ContactModel | None = None,
        global_damping: float = 0.0,
    ):
        if not dt > 0.0:
            raise ValueError("dt must be > 0")
        if global_damping < 0.0:
            raise ValueError("global_damping must be >= 0")
        self.dt = float(dt)
        self.gravity = np.asarray(gravity, dtype=float).reshape(3)
        self.contact = contact
        self.global_damping = float(global_damping)
        self.step_count = 0

        self.positions = np.zeros((0, 3))
        self.velocities = np.zeros((0, 3))
        self.masses_kg = np.zeros(0)
        self.fixed = np.zeros(0, dtype=bool)
        self.force_accum = np.zeros((0, 3))
        # instrumentation hook: constant per-mass external load, zero by default
        self.external_forces = np.zeros((0, 3))

        self.spring_a = np.zeros(0, dtype=np.int64)
        self.spring_b = np.zeros(0, dtype=np.int64)
        self.rest_length = np.zeros(0)
        self.stiffness = np.zeros(0)
        self.spring_damping = np.zeros(0)

        self.topology_version = 0
        self._engine_cache: dict[int, SpringEngine] = {}

    # ------------------------------------------------------------------
    # construction

    @property
    def n_masses(self) -> int:
        return self.positions.shape[0]

    @property
    def n_springs(self) -> int:
        return self.spring_a.shape[0]

    @property
    def sim_time(self) -> float:
        return self.step_count * self.dt

    def add_masses(self, positions, masses, velocities=None, fixed=None) -> np.ndarray:
        """Append a batch of particles; returns their indices."""
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        n = positions.shape[0]
        masses = np.broadcast_to(np.asarray(masses, dtype=float), (n,)).copy()
        if velocities is None:
            velocities = np.zeros((n, 3))
        else:
            velocities = np.atleast_2d(np.asarray(velocities, dtype=float)).copy()
        if fixed is None:
            fixed = np.zeros(n, dtype=bool)
        else:
            fixed = np.broadcast_to(np.asarray(fixed, dtype=bool), (n,)).copy()
        if not np.all(np.isfinite(positions)) or not np.all(np.isfinite(velocities)):
            raise ValueError("positions/velocities must be finite")
        if not np.all(np.isfinite(masses)) or np.any(masses <= 0.0):
            raise ValueError("masses must be positive and finite")
        start = self.n_masses
        self.positions = np.concatenate([self.positions, positions])
        self.velocities = np.concatenate([self.velocities, velocities])
        self.masses_kg = np.concatenate([self.masses_kg, masses])
        self.fixed = np.concatenate([self.fixed, fixed])
        self.force_accum = np.concatenate([self.force_accum, np.zeros((n, 3))])
        self.external_forces = np.concatenate([self.external_forces, np.zeros((n, 3))])
        self._invalidate()
        return np.arange(start, start + n, dtype=np.int64)

    def add_mass(self, position, mass, velocity=None, fixed=False) -> int:
        vel = None if velocity is None else [velocity]
        return int(self.add_masses([position], [mass], vel, [fixed])[0])

    def add_springs(
        self, a, b, stiffness, damping=0.0, rest_length=None
    ) -> np.ndarray:
        """Append a batch of springs; rest lengths default to current distances."""
        a = np.atleast_1d(np.asarray(a, dtype=np.int64))
        b = np.atleast_1d(np.asarray(b, dtype=np.int64))
        if a.shape != b.shape:
            raise ValueError("endpoint index arrays must match")
        if np.any(a == b):
            raise ValueError("spring endpoints must differ")
        n_m = self.n_masses
        if np.any(a < 0) or np.any(b < 0) or np.any(a >= n_m) or np.any(b >= n_m):
            raise ValueError("spring endpoint index out of range")
        n = a.shape[0]
        stiffness = np.broadcast_to(np.asarray(stiffness, dtype=float), (n,)).copy()
        damping = np.broadcast_to(np.asarray(damping, dtype=float), (n,)).copy()
        if np.any(stiffness <= 0.0):
            raise ValueError("stiffness must be > 0")
        if np.any(damping < 0.0):
            raise ValueError("damping must be >= 0")
        if rest_length is None:
            rest_length = np.linalg.norm(self.positions[b] - self.positions[a], axis=1)
        else:
            rest_length = np.broadcast_to(
                np.asarray(rest_length, dtype=float), (n,)
            ).copy()
            if np.any(rest_length < 0.0):
                raise ValueError("rest_length must be >= 0")
        start = self.n_springs
        self.spring_a = np.concatenate([self.spring_a, a])
        self.spring_b = np.concatenate([self.spring_b, b])
        self.rest_length = np.concatenate([self.rest_length, rest_length])
        self.stiffness = np.concatenate([self.stiffness, stiffness])
        self.spring_damping = np.concatenate([self.spring_damping, damping])
        self._invalidate()
        return np.arange(start, start + n, dtype=np.int64)

    def add_spring(self, a, b, stiffness, damping=0.0, rest_length=None) -> int:
        rl = None if rest_length is None else [rest_length]
        return int(self.add_springs([a], [b], [stiffness], [damping], rl)[0])

    def mass_point(self, i: int) -> MassPoint:
        return MassPoint(
            position=self.positions[i].copy(),
            velocity=self.velocities[i].copy(),
            mass=float(self.masses_kg[i]),
            force_accum=self.force_accum[i].copy(),
            fixed=bool(self.fixed[i]),
        )

    def spring_element(self, j: int) -> SpringElement:
        return SpringElement(
            endpoint_a=int(self.spring_a[j]),
            endpoint_b=int(self.spring_b[j]),
            rest_length=float(self.rest_length[j]),
            stiffness=float(self.stiffness[j]),
            damping=float(self.spring_damping[j]),
        )

    def clone(self) -> "SimState":
        out = SimState(self.dt, self.gravity.copy(), self.contact, self.global_damping)
        out.step_count = self.step_count
        for name in (
            "positions",
            "velocities",
            "masses_kg",
            "fixed",
            "force_accum",
            "external_forces",
            "spring_a",
            "spring_b",
            "rest_length",
            "stiffness",
            "spring_damping",
        ):
            setattr(out, name, getattr(self, name).copy())
        return out

    def _invalidate(self):
        self.topology_version += 1
        self._engine_cache.clear()

    def engine(self, workers: int = 1) -> "SpringEngine":
        """Cached stepper for the current topology."""
        eng = self._engine_cache.get(workers)
        if eng is None or eng.topology_version != self.topology_version:
            eng = SpringEngine(self, workers=workers)
            self._engine_cache[workers] = eng
        return eng


# ----------------------------------------------------------------------
# force evaluation


def _spring_forces_slice(state: SimState, lo: int, hi: int, out: np.ndarray) -> int:
    """Fill out[lo:hi] with the force on endpoint_a of each spring.

    Returns the index of the first degenerate spring in the slice, or -1.
    """
    a = state.spring_a[lo:hi]
    b = state.spring_b[lo:hi]
    d = state.positions[b] - state.positions[a]
    # explicit column sums: fixed left-to-right association, matching the
    # compiled kernels bit for bit (einsum would associate differently)
    length = np.sqrt((d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) + d[:, 2] * d[:, 2])
    tiny = length < DEGENERATE_LENGTH_EPS
    any_tiny = bool(np.any(tiny))
    if any_tiny:
        bad = tiny & (state.rest_length[lo:hi] > 0.0)
        if np.any(bad):
            return lo + int(np.argmax(bad))
        inv_len = np.zeros_like(length)
        np.divide(1.0, length, out=inv_len, where=~tiny)
    else:
        inv_len = 1.0 / length
    v_rel = state.velocities[b] - state.velocities[a]
    axial_rate = (
        (v_rel[:, 0] * d[:, 0] + v_rel[:, 1] * d[:, 1]) + v_rel[:, 2] * d[:, 2]
    ) * inv_len
    f = state.stiffness[lo:hi] * (length - state.rest_length[lo:hi])
    f += state.spring_damping[lo:hi] * axial_rate
    out[lo:hi] = (f * inv_len)[:, None] * d
    if any_tiny:
        out[lo:hi][tiny] = 0.0
    return -1


def _contact_forces_slice(state: SimState, lo: int, hi: int, out: np.ndarray):
    """Fill out (shape (hi-lo, 3)) with ground contact forces for masses lo:hi."""
    out[:] = 0.0
    c = state.contact
    if c is None:
        return
    z = state.positions[lo:hi, 2]
    pen = c.ground_height - z
    below = pen > 0.0
    if not np.any(below):
        return
    vz = state.velocities[lo:hi, 2]
    fn = np.where(
        below,
        np.maximum(c.normal_stiffness * pen - c.normal_damping * vz, 0.0),
        0.0,
    )
    vt = state.velocities[lo:hi, :2]
    speed = np.sqrt(vt[:, 0] * vt[:, 0] + vt[:, 1] * vt[:, 1])
    stop_force = state.masses_kg[lo:hi] * speed / state.dt
    ft_mag = np.minimum(c.friction_coefficient * fn, stop_force)
    moving = speed > 0.0
    scale = np.zeros_like(speed)
    np.divide(ft_mag, speed, out=scale, where=moving)
    out[:, :2] = -scale[:, None] * vt
    out[:, 2] = fn


def compute_spring_forces(state: SimState) -> np.ndarray:
    """Per-spring force buffer: row j is the force exerted on endpoint_a[j].

    Endpoint_b receives the negation.  Raises DegenerateSpringError for a
    collapsed spring with nonzero rest length.
    """
    out = np.zeros((state.n_springs, 3))
    if state.n_springs:
        bad = _spring_forces_slice(state, 0, state.n_springs, out)
        if bad >= 0:
            raise DegenerateSpringError(bad)
    return out


def compute_contact_forces(state: SimState) -> np.ndarray:
    """Per-mass ground contact force; exactly zero at or above ground height."""
    out = np.zeros((state.n_masses, 3))
    if state.n_masses:
        _contact_forces_slice(state, 0, state.n_masses, out)
    return out


def reference_step(state: SimState) -> SimState:
    """Plain-numpy twin of one engine step, kept as the semantic definition.

    Gathers per-spring contributions into masses sequentially in ascending
    spring-index order (np.add.at), then applies the same gravity, external
    load, contact and semi-implicit update as the compiled kernels.  The
    engine must reproduce this bit for bit.
    """
    spring_forces = compute_spring_forces(state)
    force = np.zeros((state.n_masses, 3))
    if state.n_springs:
        mass_ids = np.concatenate([state.spring_a, state.spring_b])
        spring_ids = np.concatenate(
            [np.arange(state.n_springs), np.arange(state.n_springs)]
        )
        signs = np.concatenate([np.ones(state.n_springs), -np.ones(state.n_springs)])
        order = np.lexsort((spring_ids, mass_ids))
        np.add.at(
            force,
            mass_ids[order],
            spring_forces[spring_ids[order]] * signs[order][:, None],
        )
    force += state.gravity[None, :] * state.masses_kg[:, None]
    force += state.external_forces
    cbuf = np.zeros((state.n_masses, 3))
    _contact_forces_slice(state, 0, state.n_masses, cbuf)
    force += cbuf
    state.force_accum[:] = force

    v = state.velocities + (force / state.masses_kg[:, None]) * state.dt
    if state.global_damping:
        v *= 1.0 - state.global_damping * state.dt
    v[state.fixed] = 0.0
    state.velocities[:] = v
    state.positions += v * state.dt
    state.step_count += 1
    if not (np.isfinite(state.positions).all() and np.isfinite(state.velocities).all()):
        finite = np.isfinite(state.positions).all(axis=1) & np.isfinite(
            state.velocities
        ).all(axis=1)
        raise NonFiniteStateError(int(np.argmin(finite)), state.step_count)
    return state


@njit(cache=True)
def _spring_kernel(pos, vel, sa, sb, rest, stiff, damp, sbuf, bad):
    for j in range(sa.shape[0]):
        a = sa[j]
        b = sb[j]
        dx = pos[b, 0] - pos[a, 0]
        dy = pos[b, 1] - pos[a, 1]
        dz = pos[b, 2] - pos[a, 2]
        length = np.sqrt((dx * dx + dy * dy) + dz * dz)
        if length < 1.0e-9:
            if rest[j] > 0.0:
                bad[j] = 1
            sbuf[j, 0] = 0.0
            sbuf[j, 1] = 0.0
            sbuf[j, 2] = 0.0
            continue
        inv = 1.0 / length
        vx = vel[b, 0] - vel[a, 0]
        vy = vel[b, 1] - vel[a, 1]
        vz = vel[b, 2] - vel[a, 2]
        axial = ((vx * dx + vy * dy) + vz * dz) * inv
        f = stiff[j] * (length - rest[j])
        f += damp[j] * axial
        s = f * inv
        sbuf[j, 0] = s * dx
        sbuf[j, 1] = s * dy
        sbuf[j, 2] = s * dz


@njit(cache=True, parallel=True)
def _spring_kernel_par(pos, vel, sa, sb, rest, stiff, damp, sbuf, bad):
    for j in prange(sa.shape[0]):
        a = sa[j]
        b = sb[j]
        dx = pos[b, 0] - pos[a, 0]
        dy = pos[b, 1] - pos[a, 1]
        dz = pos[b, 2] - pos[a, 2]
        length = np.sqrt((dx * dx + dy * dy) + dz * dz)
        if length < 1.0e-9:
            if rest[j] > 0.0:
                bad[j] = 1
            sbuf[j, 0] = 0.0
            sbuf[j, 1] = 0.0
            sbuf[j, 2] = 0.0
            continue
        inv = 1.0 / length
        vx = vel[b, 0] - vel[a, 0]
        vy = vel[b, 1] - vel[a, 1]
        vz = vel[b, 2] - vel[a, 2]
        axial = ((vx * dx + vy * dy) + vz * dz) * inv
        f = stiff[j] * (length - rest[j])
        f += damp[j] * axial
        s = f * inv
        sbuf[j, 0] = s * dx
        sbuf[j, 1] = s * dy
        sbuf[j, 2] = s * dz


@njit(cache=True)
def _integrate_kernel(
    pos, vel, mass, fixed, ext, f_accum, sbuf,
    g_spring, g_sign, g_off,
    gx, gy, gz, dt, global_damping,
    contact_on, ground, kn, cn, mu, nonfinite,
):
    for i in range(mass.shape[0]):
        fx = 0.0
        fy = 0.0
        fz = 0.0
        for q in range(g_off[i], g_off[i + 1]):
            j = g_spring[q]
            sg = g_sign[q]
            fx += sg * sbuf[j, 0]
            fy += sg * sbuf[j, 1]
            fz += sg * sbuf[j, 2]
        m = mass[i]
        fx += gx * m
        fy += gy * m
        fz += gz * m
        fx += ext[i, 0]
        fy += ext[i, 1]
        fz += ext[i, 2]
        if contact_on:
            pen = ground - pos[i, 2]
            if pen > 0.0:
                fn = kn * pen - cn * vel[i, 2]
                if fn < 0.0:
                    fn = 0.0
                vtx = vel[i, 0]
                vty = vel[i, 1]
                speed = np.sqrt(vtx * vtx + vty * vty)
                if speed > 0.0:
                    ft = mu * fn
                    stop = m * speed / dt
                    if stop < ft:
                        ft = stop
                    sc = ft / speed
                    fx -= sc * vtx
                    fy -= sc * vty
                fz += fn
        f_accum[i, 0] = fx
        f_accum[i, 1] = fy
        f_accum[i, 2] = fz
        if fixed[i]:
            vx = 0.0
            vy = 0.0
            vz = 0.0
        else:
            vx = vel[i, 0] + (fx / m) * dt
            vy = vel[i, 1] + (fy / m) * dt
            vz = vel[i, 2] + (fz / m) * dt
            if global_damping != 0.0:
                fac = 1.0 - global_damping * dt
                vx *= fac
                vy *= fac
                vz *= fac
        vel[i, 0] = vx
        vel[i, 1] = vy
        vel[i, 2] = vz
        pos[i, 0] += vx * dt
        pos[i, 1] += vy * dt
        pos[i, 2] += vz * dt
        ok = (
            np.isfinite(pos[i, 0])
            and np.isfinite(pos[i, 1])
            and np.isfinite(pos[i, 2])
            and np.isfinite(vx)
            and np.isfinite(vy)
            and np.isfinite(vz)
        )
        if not ok:
            nonfinite[i] = 1


@njit(cache=True, parallel=True)
def _integrate_kernel_par(
    pos, vel, mass, fixed, ext, f_accum, sbuf,
    g_spring, g_sign, g_off,
    gx, gy, gz, dt, global_damping,
    contact_on, ground, kn, cn, mu, nonfinite,
):
    for i in prange(mass.shape[0]):
        fx = 0.0
        fy = 0.0
        fz = 0.0
        for q in range(g_off[i], g_off[i + 1]):
            j = g_spring[q]
            sg = g_sign[q]
            fx += sg * sbuf[j, 0]
            fy += sg * sbuf[j, 1]
            fz += sg * sbuf[j, 2]
        m = mass[i]
        fx += gx * m
        fy += gy * m
        fz += gz * m
        fx += ext[i, 0]
        fy += ext[i, 1]
        fz += ext[i, 2]
        if contact_on:
            pen = ground - pos[i, 2]
            if pen > 0.0:
                fn = kn * pen - cn * vel[i, 2]
                if fn < 0.0:
                    fn = 0.0
                vtx = vel[i, 0]
                vty = vel[i, 1]
                speed = np.sqrt(vtx * vtx + vty * vty)
                if speed > 0.0:
                    ft = mu * fn
                    stop = m * speed / dt
                    if stop < ft:
                        ft = stop
                    sc = ft / speed
                    fx -= sc * vtx
                    fy -= sc * vty
                fz += fn
        f_accum[i, 0] = fx
        f_accum[i, 1] = fy
        f_accum[i, 2] = fz
        if fixed[i]:
            vx = 0.0
            vy = 0.0
            vz = 0.0
        else:
            vx = vel[i, 0] + (fx / m) * dt
            vy = vel[i, 1] + (fy / m) * dt
            vz = vel[i, 2] + (fz / m) * dt
            if global_damping != 0.0:
                fac = 1.0 - global_damping * dt
                vx *= fac
                vy *= fac
                vz *= fac
        vel[i, 0] = vx
        vel[i, 1] = vy
        vel[i, 2] = vz
        pos[i, 0] += vx * dt
        pos[i, 1] += vy * dt
        pos[i, 2] += vz * dt
        ok = (
            np.isfinite(pos[i, 0])
            and np.isfinite(pos[i, 1])
            and np.isfinite(pos[i, 2])
            and np.isfinite(vx)
            and np.isfinite(vy)
            and np.isfinite(vz)
        )
        if not ok:
            nonfinite[i] = 1


class SpringEngine:
    """Fixed-timestep stepper bound to one SimState.

    Precomputes the spring->mass gather (sorted by mass, ascending spring
    index within each mass) and steps through compiled kernels.  Every
    per-spring and per-mass result depends only on that element's inputs
    and its own ordered gather, so the outcome is bit-identical across
    runs and across worker counts; ``workers`` only sets how many threads
    share the element ranges.
    """

    def __init__(self, state: SimState, workers: int = 1):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.state = state
        self.workers = int(workers)
        self.topology_version = state.topology_version
        n_m, n_s = state.n_masses, state.n_springs

        mass_ids = np.concatenate([state.spring_a, state.spring_b])
        spring_ids = np.concatenate(
            [np.arange(n_s, dtype=np.int64), np.arange(n_s, dtype=np.int64)]
        )
        signs = np.concatenate([np.ones(n_s), -np.ones(n_s)])
        order = np.lexsort((spring_ids, mass_ids))
        self._gather_spring = np.ascontiguousarray(spring_ids[order])
        self._gather_sign = np.ascontiguousarray(signs[order])
        self._gather_offsets = np.searchsorted(
            mass_ids[order], np.arange(n_m + 1), side="left"
        ).astype(np.int64)

        self._spring_buf = np.zeros((n_s, 3))
        self._bad = np.zeros(n_s, dtype=np.uint8)
        self._nonfinite = np.zeros(n_m, dtype=np.uint8)

    def step(self):
        """Advance one timestep; raises on degenerate springs or non-finite state."""
        s = self.state
        if s.topology_version != self.topology_version:
            raise SimulationError("state topology changed; rebuild the engine")
        c = s.contact
        contact_on = c is not None
        ground = c.ground_height if contact_on else 0.0
        kn = c.normal_stiffness if contact_on else 0.0
        cn = c.normal_damping if contact_on else 0.0
        mu = c.friction_coefficient if contact_on else 0.0

        parallel = self.workers > 1
        if parallel:
            set_num_threads(min(self.workers, _numba_config.NUMBA_NUM_THREADS))
        spring_fn = _spring_kernel_par if parallel else _spring_kernel
        integrate_fn = _integrate_kernel_par if parallel else _integrate_kernel

        if s.n_springs:
            spring_fn(
                s.positions, s.velocities, s.spring_a, s.spring_b,
                s.rest_length, s.stiffness, s.spring_damping,
                self._spring_buf, self._bad,
            )
            if self._bad.any():
                raise DegenerateSpringError(int(np.argmax(self._bad)))
        integrate_fn(
            s.positions, s.velocities, s.masses_kg, s.fixed,
            s.external_forces, s.force_accum, self._spring_buf,
            self._gather_spring, self._gather_sign, self._gather_offsets,
            s.gravity[0], s.gravity[1], s.gravity[2], s.dt, s.global_damping,
            contact_on, ground, kn, cn, mu, self._nonfinite,
        )
        s.step_count += 1
        if self._nonfinite.any():
            raise NonFiniteStateError(int(np.argmax(self._nonfinite)), s.step_count)

    def run(self, n_steps: int, sample_every: int = 0, on_sample=None):
        """Run n_steps; optionally call on_sample(state) every sample_every steps."""
        for k in range(n_steps):
            self.step()
            if on_sample is not None and sample_every and (k + 1) % sample_every == 0:
                on_sample(self.state)


def accumulate_and_integrate(state: SimState, workers: int = 1) -> SimState:
    """One timestep: gather spring forces, add gravity/contact, semi-implicit update.

    Per-mass force is the sum of incident spring contributions in ascending
    spring-index order, plus gravity*mass and contact force.  Then
    v += (F/m)*dt and x += v*dt; fixed masses never move.
    """
    state.engine(workers).step()
    return state


def step_state(state: SimState, n_steps: int = 1, workers: int = 1) -> SimState:
    eng = state.engine(workers)
    for _ in range(n_steps):
        eng.step()
    return state


# ----------------------------------------------------------------------
# observables


def total_momentum(state: SimState) -> np.ndarray:
    return (state.masses_kg[:, None] * state.velocities).sum(axis=0)


def kinetic_energy(state: SimState) -> float:
    v2 = np.einsum("ij,ij->i", state.velocities, state.velocities)
    return 0.5 * float(np.dot(state.masses_kg, v2))


def spring_energy(state: SimState) -> float:
    d = state.positions[state.spring_b] - state.positions[state.spring_a]
    length = np.sqrt(np.einsum("ij,ij->i", d, d))
    return 0.5 * float(np.dot(state.stiffness, (length - state.rest_length) ** 2))


def gravity_energy(state: SimState) -> float:
    # potential relative to the origin plane, -m g . x per mass
    return -float(np.dot(state.masses_kg, state.positions @ state.gravity))


def mechanical_energy(state: SimState) -> float:
    return kinetic_energy(state) + spring_energy(state) + gravity_energy(state)


def center_of_mass(state: SimState) -> np.ndarray:
    return (state.masses_kg[:, None] * state.positions).sum(axis=0) / state.masses_kg.sum()


# ----------------------------------------------------------------------
# throughput


@dataclass
class ThroughputReport:
    n_masses: int
    n_springs: int
    n_steps: int
    spring_evaluations: int
    wall_time_s: float
    springs_per_second: float
    steps_per_second: float
    real_time_factor: float
    dt: float
    workers: int = 1

    def lines(self) -> list[str]:
        return [
            f"masses:             {self.n_masses}",
            f"springs:            {self.n_springs}",
            f"steps:              {self.n_steps}",
            f"spring evaluations: {self.spring_evaluations}",
            f"wall time:          {self.wall_time_s:.6g} s",
            f"springs/s:          {self.springs_per_second:.6g}",
            f"steps/s:            {self.steps_per_second:.6g}",
            f"real-time factor:   {self.real_time_factor:.6g} (dt = {self.dt:g} s)",
            f"workers:            {self.workers}",
        ]


def throughput_benchmark(
    state: SimState, n_steps: int, workers: int = 1
) -> ThroughputReport:
    """Time n_steps and report spring-evaluations/s, steps/s and real-time factor.

    The evaluation count is exactly n_springs * n_steps.  The state is
    advanced by the benchmark.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    eng = state.engine(workers)
    t0 = time.perf_counter()
    for _ in range(n_steps):
        eng.step()
    wall = time.perf_counter() - t0
    evals = state.n_springs * n_steps
    return ThroughputReport(
        n_masses=state.n_masses,
        n_springs=state.n_springs,
        n_steps=n_steps,
        spring_evaluations=evals,
        wall_time_s=wall,
        springs_per_second=evals / wall if wall > 0 else float("inf"),
        steps_per_second=n_steps / wall if wall > 0 else float("inf"),
        real_time_factor=(n_steps * state.dt) / wall if wall > 0 else float("inf"),
        dt=state.dt,
        workers=workers,
    )
