"""Parametric soft quadruped assembly.

Builds a lattice robot into one SimState: a hollow box shell body with
lumped interior masses (motors, battery pack) pinned to the shell, four
frustum legs hanging from motor-driven revolute joints, and the joint
axes yaw-tilted symmetrically by the leg angle alpha.  Leg labels follow
FL, FR, BL, BR.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .gait import LEG_ORDER
from .joints import RevoluteJoint, create_joint
from .sampling import (
    Frustum,
    HollowBox,
    HollowFrustum,
    Pose,
    SampledPart,
    component_count,
    neighbor_pairs,
    poisson_sample,
)
from .springs import DEFAULT_DT, ContactModel, GRAVITY_DEFAULT, SimState


class BuildError(RuntimeError):
    pass


@dataclass(frozen=True)
class RobotSpec:
    """Default dimensions and masses of the quadruped model (SI units)."""

    body_length: float = 0.360
    body_width: float = 0.214
    body_height: float = 0.100
    total_mass: float = 3.21
    leg_step_length: float = 0.158  # frustum length shoulder -> tip
    leg_tip_diameter: float = 0.048
    leg_shoulder_diameter: float = 0.064
    leg_mass: float = 0.080
    leg_hollow: bool = True
    leg_inner_diameter_tip: float = 0.030
    leg_inner_diameter_shoulder: float = 0.046
    leg_angle_alpha: float = np.deg2rad(10.0)
    # placement/lumped-interior details (not uniquely determined by the
    # outer dimensions; exposed for tuning)
    leg_x_offset: float = 0.140
    leg_lateral_gap: float = 0.006
    motor_lump_mass: float = 0.386
    core_lump_mass: float = 0.350

    def __post_init__(self):
        lengths = (
            self.body_length,
            self.body_width,
            self.body_height,
            self.leg_step_length,
            self.leg_tip_diameter,
            self.leg_shoulder_diameter,
        )
        if any(v <= 0.0 for v in lengths):
            raise ValueError("all dimensions must be > 0")
        if self.leg_hollow:
            if not (
                0.0 < self.leg_inner_diameter_tip < self.leg_tip_diameter
                and 0.0 < self.leg_inner_diameter_shoulder < self.leg_shoulder_diameter
            ):
                raise ValueError("inner leg diameters must be positive and < outer")
        if not 0.0 <= self.leg_angle_alpha <= np.pi / 2.0:
            raise ValueError("leg_angle_alpha must be in [0, pi/2]")
        if self.interior_mass + 4.0 * self.leg_mass >= self.total_mass:
            raise ValueError("interior + leg masses exceed the total mass budget")

    @property
    def interior_mass(self) -> float:
        return 4.0 * self.motor_lump_mass + self.core_lump_mass

    @property
    def body_budget(self) -> float:
        """Mass available to the shell, anchors and lumps combined."""
        return self.total_mass - 4.0 * self.leg_mass


@dataclass(frozen=True)
class SamplingParams:
    sample_radius: float = 0.022
    leg_radius_factor: float = 0.75  # legs are thin-walled, sample them finer
    connect_factor: float = 1.8
    # thin-walled legs need longer-range springs for cross-section bracing,
    # otherwise the shell crumples like an unbraced membrane cone
    leg_connect_factor: float = 2.6
    seed: int = 42

    @property
    def leg_radius(self) -> float:
        return self.leg_radius_factor * self.sample_radius


@dataclass(frozen=True)
class LatticeParams:
    stiffness: float = 3000.0
    damping: float = 2.0
    interior_stiffness_factor: float = 6.0
    interior_links: int = 8
    wall_factor: float = 1.5  # shell wall = max(0.010, wall_factor * sample_radius)


@dataclass(frozen=True)
class JointParams:
    anchor_stiffness_factor: float = 8.0
    proxy_stiffness_factor: float = 5.0
    n_proxy: int = 16
    selection_pad_factor: float = 1.5  # added to shoulder radius, in sample radii
    anchor_mass: float = 0.02
    split: str = "mass_weighted"  # "equal" or "mass_weighted"
    update_divisor: int = 1

    def __post_init__(self):
        if self.split not in ("equal", "mass_weighted"):
            raise ValueError("split must be 'equal' or 'mass_weighted'")


@dataclass
class RobotRig:
    """A built robot: the state plus everything needed to drive and observe it."""

    state: SimState
    spec: RobotSpec
    joints: dict[str, RevoluteJoint]
    body_indices: np.ndarray
    lump_indices: np.ndarray
    leg_indices: dict[str, np.ndarray]
    ref_up: tuple[int, int, int]
    ref_heading: tuple[int, int]
    leg_tip_indices: dict[str, np.ndarray]

    @property
    def labels(self) -> tuple[str, ...]:
        return LEG_ORDER

    def up_vector(self, state: SimState | None = None) -> np.ndarray:
        """Body up proxy: unit normal of the reference shell triangle."""
        s = state if state is not None else self.state
        a, b, c = (s.positions[i] for i in self.ref_up)
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n)
        return n / norm if norm > 0 else np.array([0.0, 0.0, 1.0])

    def heading(self, state: SimState | None = None) -> np.ndarray:
        """Horizontal unit vector from the back to the front reference mass."""
        s = state if state is not None else self.state
        front, back = self.ref_heading
        d = s.positions[front] - s.positions[back]
        d[2] = 0.0
        norm = np.linalg.norm(d)
        return d / norm if norm > 0 else np.array([1.0, 0.0, 0.0])

    def heading_angle(self, state: SimState | None = None) -> float:
        h = self.heading(state)
        return float(np.arctan2(h[1], h[0]))

    def foot_heights(self, state: SimState | None = None) -> np.ndarray:
        s = state if state is not None else self.state
        return np.array(
            [s.positions[self.leg_tip_indices[leg], 2].min() for leg in LEG_ORDER]
        )


def leg_shape(spec: RobotSpec, pose: Pose) -> Frustum:
    """Leg solid: frustum from shoulder (base) to tip, hollow by default."""
    base_r = spec.leg_shoulder_diameter / 2.0
    tip_r = spec.leg_tip_diameter / 2.0
    if spec.leg_hollow:
        return HollowFrustum(
            base_radius=base_r,
            tip_radius=tip_r,
            base_inner_radius=spec.leg_inner_diameter_shoulder / 2.0,
            tip_inner_radius=spec.leg_inner_diameter_tip / 2.0,
            length=spec.leg_step_length,
            pose=pose,
        )
    return Frustum(
        base_radius=base_r, tip_radius=tip_r, length=spec.leg_step_length, pose=pose
    )


def leg_axis_direction(spec: RobotSpec, sx: int, sy: int) -> np.ndarray:
    """Outward joint axis unit vector for the leg in quadrant (sx, sy).

    At alpha = 0 every axis is parallel to the lateral (y) axis; alpha
    yaw-tilts the axes symmetrically so the four outward ends form an X
    in top view (front axes swept backward, back axes swept forward).
    """
    a = spec.leg_angle_alpha
    return np.array([-sx * np.sin(a), sy * np.cos(a), 0.0])


def _add_part_springs(
    state: SimState,
    indices: np.ndarray,
    points: np.ndarray,
    connect_radius: float,
    lattice: LatticeParams,
    label: str,
):
    pairs = neighbor_pairs(points, connect_radius)
    n_comp = component_count(points.shape[0], pairs)
    if n_comp > 1:
        raise BuildError(
            f"part '{label}': spring graph has {n_comp} components; increase the "
            "connect factor or reduce the sample radius"
        )
    state.add_springs(
        indices[pairs[:, 0]], indices[pairs[:, 1]], lattice.stiffness, lattice.damping
    )


def build_robot(
    spec: RobotSpec,
    sampling: SamplingParams | None = None,
    lattice: LatticeParams | None = None,
    joint_params: JointParams | None = None,
    dt: float = DEFAULT_DT,
    gravity=GRAVITY_DEFAULT,
    contact: ContactModel | None = None,
    global_damping: float = 0.0,
    ground_clearance: float = 0.002,
) -> RobotRig:
    """Sample, connect and couple the whole robot; deterministic given the seed."""
    sampling = sampling if sampling is not None else SamplingParams()
    lattice = lattice if lattice is not None else LatticeParams()
    joint_params = joint_params if joint_params is not None else JointParams()
    r_s = sampling.sample_radius
    connect_radius = sampling.connect_factor * r_s

    seeds = np.random.SeedSequence(sampling.seed).spawn(9)
    seed_ints = [s.generate_state(1)[0] for s in seeds]

    state = SimState(
        dt=dt, gravity=gravity, contact=contact, global_damping=global_damping
    )

    # --- body shell ----------------------------------------------------
    wall = max(0.010, lattice.wall_factor * r_s)
    body_solid = HollowBox(
        size=(spec.body_length, spec.body_width, spec.body_height), wall=wall
    )
    body_part = poisson_sample(body_solid, r_s, seed_ints[0])
    n_shell = body_part.n_points
    if n_shell < 100:
        raise BuildError(f"part 'body': only {n_shell} masses (need >= 100)")

    shell_mass_total = (
        spec.body_budget - spec.interior_mass - 8.0 * joint_params.anchor_mass
    )
    if shell_mass_total <= 0.0:
        raise BuildError("mass budget: shell mass would be non-positive")
    body_part.part_mass = shell_mass_total
    body_indices = state.add_masses(body_part.points, body_part.point_mass)
    _add_part_springs(
        state, body_indices, body_part.points, connect_radius, lattice, "body"
    )

    # --- interior lumps pinned to the shell ------------------------------
    half_w = spec.body_width / 2.0
    lump_positions = [
        (sx * spec.leg_x_offset, sy * (half_w - wall - 0.02), 0.0)
        for sx in (1, -1)
        for sy in (1, -1)
    ]
    lump_positions.append((0.0, 0.0, -spec.body_height / 2.0 + wall + 0.015))
    lump_masses = [spec.motor_lump_mass] * 4 + [spec.core_lump_mass]
    lump_indices = state.add_masses(np.array(lump_positions), np.array(lump_masses))

    tree = cKDTree(body_part.points)
    k_int = min(lattice.interior_links, n_shell)
    _, near = tree.query(np.array(lump_positions), k=k_int)
    for li, row in zip(lump_indices, np.atleast_2d(near)):
        state.add_springs(
            np.full(k_int, li),
            body_indices[row],
            lattice.interior_stiffness_factor * lattice.stiffness,
            lattice.damping,
        )

    # --- legs + joints ---------------------------------------------------
    quadrant = {"FL": (1, 1), "FR": (1, -1), "BL": (-1, 1), "BR": (-1, -1)}
    shoulder_r = spec.leg_shoulder_diameter / 2.0
    selection_radius = shoulder_r + joint_params.selection_pad_factor * r_s
    if joint_params.split == "equal":
        split_a = 0.5
    else:
        body_side_mass = spec.body_budget - 8.0 * joint_params.anchor_mass
        split_a = spec.leg_mass / (body_side_mass + spec.leg_mass)

    joints: dict[str, RevoluteJoint] = {}
    leg_indices: dict[str, np.ndarray] = {}
    leg_tip_indices: dict[str, np.ndarray] = {}
    for k, leg in enumerate(LEG_ORDER):
        sx, sy = quadrant[leg]
        u = leg_axis_direction(spec, sx, sy)
        p_mount = np.array([sx * spec.leg_x_offset, sy * (half_w - wall / 2.0), 0.0])
        out_dist = wall / 2.0 + spec.leg_lateral_gap + shoulder_r
        p_shoulder = p_mount + u * out_dist
        p_in = p_mount - u * (wall / 2.0 + 0.004)
        p_out = p_shoulder + u * 0.012

        pose = Pose.from_z_axis((0.0, 0.0, -1.0), p_shoulder)
        solid = leg_shape(spec, pose)
        part = poisson_sample(
            solid, sampling.leg_radius, seed_ints[1 + k], part_mass=spec.leg_mass
        )
        if part.n_points < 30:
            raise BuildError(
                f"part 'leg {leg}': only {part.n_points} masses (need >= 30); "
                "reduce the sample radius"
            )
        idx = state.add_masses(part.points, part.point_mass)
        _add_part_springs(
            state,
            idx,
            part.points,
            sampling.leg_connect_factor * sampling.leg_radius,
            lattice,
            f"leg {leg}",
        )
        leg_indices[leg] = idx
        # tip = lowest 15% of the leg when hanging straight down
        z = part.points[:, 2]
        tip_cut = z.min() + 0.15 * (z.max() - z.min())
        leg_tip_indices[leg] = idx[z <= tip_cut]

        joints[leg] = create_joint(
            state,
            body_indices,
            idx,
            p_in,
            p_out,
            selection_radius,
            joint_params.n_proxy,
            seed_ints[5 + k],
            anchor_stiffness=joint_params.anchor_stiffness_factor * lattice.stiffness,
            proxy_stiffness=joint_params.proxy_stiffness_factor * lattice.stiffness,
            anchor_damping=lattice.damping,
            anchor_mass=joint_params.anchor_mass,
            split_a=split_a,
            part_labels=("body", f"leg {leg}"),
        )

    # --- orientation / heading references --------------------------------
    top = spec.body_height / 2.0
    ref_targets = np.array(
        [
            [0.30 * spec.body_length, 0.0, top],
            [-0.30 * spec.body_length, 0.25 * spec.body_width, top],
            [-0.30 * spec.body_length, -0.25 * spec.body_width, top],
        ]
    )
    _, ref_up = tree.query(ref_targets)
    ref_up = tuple(int(body_indices[i]) for i in ref_up)
    a, b, c = (state.positions[i] for i in ref_up)
    if np.cross(b - a, c - a)[2] < 0.0:
        ref_up = (ref_up[0], ref_up[2], ref_up[1])

    head_targets = np.array(
        [[0.45 * spec.body_length, 0.0, 0.0], [-0.45 * spec.body_length, 0.0, 0.0]]
    )
    _, ref_heading = tree.query(head_targets)
    ref_heading = tuple(int(body_indices[i]) for i in ref_heading)

    # --- rest the assembly just above the ground --------------------------
    ground = contact.ground_height if contact is not None else 0.0
    dz = ground + ground_clearance - state.positions[:, 2].min()
    state.positions[:, 2] += dz

    total = float(state.masses_kg.sum())
    if abs(total - spec.total_mass) > 1e-6:
        raise BuildError(
            f"mass budget mismatch: lattice carries {total!r} kg, spec says "
            f"{spec.total_mass!r} kg"
        )

    return RobotRig(
        state=state,
        spec=spec,
        joints=joints,
        body_indices=body_indices,
        lump_indices=lump_indices,
        leg_indices=leg_indices,
        ref_up=ref_up,
        ref_heading=ref_heading,
        leg_tip_indices=leg_tip_indices,
    )


def leg_tip_deflection(
    spec: RobotSpec,
    sampling: SamplingParams | None = None,
    lattice: LatticeParams | None = None,
    load_force: float = 2.0,
    settle_time: float = 0.4,
    dt: float = DEFAULT_DT,
) -> float:
    """Static bend test: clamp the shoulder, push the tip sideways, measure sag.

    Returns the mean lateral tip displacement (m) under the given load,
    gravity off.  Used by the hollow-vs-solid comparison.
    """
    sampling = sampling if sampling is not None else SamplingParams()
    lattice = lattice if lattice is not None else LatticeParams()
    r_s = sampling.leg_radius

    pose = Pose.from_z_axis((0.0, 0.0, -1.0), (0.0, 0.0, 0.0))
    solid = leg_shape(spec, pose)
    part = poisson_sample(solid, r_s, sampling.seed, part_mass=spec.leg_mass)
    state = SimState(dt=dt, gravity=(0.0, 0.0, 0.0), global_damping=5.0)
    idx = state.add_masses(part.points, part.point_mass)
    _add_part_springs(
        state, idx, part.points, sampling.leg_connect_factor * r_s, lattice, "leg"
    )

    z = part.points[:, 2]
    shoulder = idx[z >= z.max() - 1.5 * r_s]
    tip = idx[z <= z.min() + 1.5 * r_s]
    if shoulder.size == 0 or tip.size == 0:
        raise BuildError("leg sample too coarse for the bend test")
    state.fixed[shoulder] = True
    state.external_forces[tip, 0] = load_force / tip.size

    start_x = state.positions[tip, 0].mean()
    eng = state.engine()
    for _ in range(round(settle_time / dt)):
        eng.step()
    return float(state.positions[tip, 0].mean() - start_x)
