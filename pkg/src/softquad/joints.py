"""Revolute joint kernel for particle lattices.

A joint couples two sampled parts about an axis segment: vertices of each
part inside a selection cylinder are tied to two axis anchor masses by
stiff springs, randomized cross-part proxy springs provide joint friction
(their rest lengths are reset at every rotation update), and commanded
motion is realized by rotating the two vertex sets in opposite directions
about the current anchor axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .springs import SimState

ROTATION_CAP = np.pi / 8.0


class JointError(RuntimeError):
    pass


@dataclass
class RevoluteJoint:
    """Kinematic revolute coupling between two vertex sets.

    ``angle`` is the accumulated commanded joint angle (unwrapped);
    ``angle_wrapped`` folds it into [0, 2pi).  ``split_a`` is the fraction
    of each commanded increment applied to side_a (side_b receives the
    remainder with opposite sign).
    """

    axis_anchor_a: int
    axis_anchor_b: int
    side_a_vertices: np.ndarray
    side_b_vertices: np.ndarray
    proxy_springs: np.ndarray
    anchor_springs: np.ndarray
    split_a: float = 0.5
    angle: float = 0.0
    angle_rate: float = 0.0
    _rate_time: float = 0.0
    _pending_delta: float = 0.0

    @property
    def angle_wrapped(self) -> float:
        return self.angle % (2.0 * np.pi)


def rotate_indices(state: SimState, indices: np.ndarray, pivot, axis_unit, angle: float):
    """Rodrigues rotation of selected mass positions about a pivot and unit axis."""
    if len(indices) == 0 or angle == 0.0:
        return
    u = np.asarray(axis_unit, dtype=float)
    rel = state.positions[indices] - pivot
    c, s = np.cos(angle), np.sin(angle)
    rotated = (
        rel * c
        + np.cross(np.broadcast_to(u, rel.shape), rel) * s
        + np.outer(rel @ u, u) * (1.0 - c)
    )
    state.positions[indices] = pivot + rotated


def select_near_axis(
    positions: np.ndarray,
    candidates: np.ndarray,
    p0: np.ndarray,
    p1: np.ndarray,
    radius: float,
    axial_pad: float = 0.0,
) -> np.ndarray:
    """Candidate indices inside a cylinder of given radius about segment p0-p1."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    if length <= 0.0:
        raise JointError("joint axis segment has zero length")
    u = axis / length
    rel = positions[candidates] - p0
    t = rel @ u
    radial = rel - np.outer(t, u)
    r = np.sqrt(np.einsum("ij,ij->i", radial, radial))
    mask = (r <= radius) & (t >= -axial_pad) & (t <= length + axial_pad)
    return np.asarray(candidates)[mask]


def create_joint(
    state: SimState,
    side_a_candidates: np.ndarray,
    side_b_candidates: np.ndarray,
    axis_p0,
    axis_p1,
    selection_radius: float,
    n_proxy: int,
    seed: int,
    *,
    anchor_stiffness: float,
    proxy_stiffness: float,
    anchor_damping: float = 0.0,
    anchor_mass: float = 1.0e-3,
    split_a: float = 0.5,
    part_labels: tuple[str, str] = ("side_a", "side_b"),
) -> RevoluteJoint:
    """Build the joint: axis anchors, anchor springs, seeded proxy springs.

    Two new anchor masses are placed at the axis segment endpoints.  Every
    selected vertex is connected to both anchors (so it can only move on its
    circle about the axis).  Proxy springs connect uniformly random
    cross-side pairs, sampled without replacement; they carry no axial
    damping so a rest-length reset leaves them exactly force-free.
    """
    if n_proxy < 1:
        raise ValueError("n_proxy must be >= 1")
    if not 0.0 <= split_a <= 1.0:
        raise ValueError("split_a must be in [0, 1]")
    axis_p0 = np.asarray(axis_p0, dtype=float)
    axis_p1 = np.asarray(axis_p1, dtype=float)

    side_a = select_near_axis(
        state.positions, side_a_candidates, axis_p0, axis_p1, selection_radius
    )
    side_b = select_near_axis(
        state.positions, side_b_candidates, axis_p0, axis_p1, selection_radius
    )
    for label, sel in zip(part_labels, (side_a, side_b)):
        if sel.shape[0] < 3:
            raise JointError(
                f"part '{label}': only {sel.shape[0]} vertices inside the joint "
                f"selection volume (need >= 3)"
            )
    if np.intersect1d(side_a, side_b).size:
        raise JointError("side_a and side_b vertex sets overlap")

    anchor_a = state.add_mass(axis_p0, anchor_mass)
    anchor_b = state.add_mass(axis_p1, anchor_mass)

    selected = np.concatenate([side_a, side_b])
    ends = np.concatenate([selected, selected])
    anchors = np.concatenate(
        [np.full(selected.shape[0], anchor_a), np.full(selected.shape[0], anchor_b)]
    )
    anchor_idx = state.add_springs(
        ends, anchors, anchor_stiffness, anchor_damping
    )

    n_pairs = side_a.shape[0] * side_b.shape[0]
    if n_proxy > n_pairs:
        raise JointError(
            f"n_proxy={n_proxy} exceeds the {n_pairs} available cross-side pairs"
        )
    rng = np.random.default_rng(seed)
    flat = rng.choice(n_pairs, size=n_proxy, replace=False)
    pa = side_a[flat // side_b.shape[0]]
    pb = side_b[flat % side_b.shape[0]]
    proxy_idx = state.add_springs(pa, pb, proxy_stiffness, 0.0)

    return RevoluteJoint(
        axis_anchor_a=anchor_a,
        axis_anchor_b=anchor_b,
        side_a_vertices=side_a,
        side_b_vertices=side_b,
        proxy_springs=proxy_idx,
        anchor_springs=anchor_idx,
        split_a=float(split_a),
        _rate_time=state.sim_time,
    )


def rotate_joint(state: SimState, joint: RevoluteJoint, delta_angle: float):
    """Advance the joint by delta_angle (rad), capped at pi/8 per call.

    side_a rotates by +split_a*delta, side_b by -(1-split_a)*delta about the
    current anchor axis; afterwards every proxy spring's rest length is
    reset to its current endpoint distance.
    """
    if abs(delta_angle) > ROTATION_CAP * (1.0 + 1e-12):
        raise JointError(
            f"delta_angle {delta_angle:g} exceeds the per-call cap {ROTATION_CAP:g}; "
            "subdivide the commanded motion"
        )
    p0 = state.positions[joint.axis_anchor_a]
    p1 = state.positions[joint.axis_anchor_b]
    axis = p1 - p0
    norm = np.linalg.norm(axis)
    if norm <= 0.0:
        raise JointError("joint axis collapsed: anchors coincide")
    u = axis / norm

    rotate_indices(state, joint.side_a_vertices, p0, u, joint.split_a * delta_angle)
    rotate_indices(
        state, joint.side_b_vertices, p0, u, -(1.0 - joint.split_a) * delta_angle
    )

    joint.angle += delta_angle
    now = state.sim_time
    if now > joint._rate_time:
        joint.angle_rate = (joint._pending_delta + delta_angle) / (
            now - joint._rate_time
        )
        joint._pending_delta = 0.0
        joint._rate_time = now
    else:
        joint._pending_delta += delta_angle

    # rest-length reset: the friction proxy becomes force-free right now
    idx = joint.proxy_springs
    d = state.positions[state.spring_b[idx]] - state.positions[state.spring_a[idx]]
    state.rest_length[idx] = np.sqrt(np.einsum("ij,ij->i", d, d))


def joint_measured_state(joint: RevoluteJoint, state: SimState) -> tuple[float, float]:
    """Encoder view: unwrapped commanded angle and the last realized rate."""
    return joint.angle, joint.angle_rate


def proxy_spring_energy(state: SimState, joint: RevoluteJoint) -> float:
    idx = joint.proxy_springs
    d = state.positions[state.spring_b[idx]] - state.positions[state.spring_a[idx]]
    length = np.sqrt(np.einsum("ij,ij->i", d, d))
    return 0.5 * float(
        np.dot(state.stiffness[idx], (length - state.rest_length[idx]) ** 2)
    )
