"""Deterministic planar articulated-chain simulator.

Generalized coordinates are ``[x, z, pitch, q_1..q_n]``: a floating base
link (the torso, origin at the pelvis) plus ``n`` revolute joints, one per
child link. Pitch follows the right-hand rule about the lateral axis with x
forward and z up, so a link's local frame maps to world by
``R(phi) = [[cos, sin], [-sin, cos]]`` and world gravity ``(0, -1)`` reads
``(sin(pitch), -cos(pitch))`` in the body frame.

Forward dynamics project per-link Newton-Euler equations through point
Jacobians (Kane's form), which for a planar tree gives the exact mass matrix
and velocity-product terms in closed form. Ground contact is a penalty
spring-damper at link endpoints with a Coulomb friction cap; contact
spring/damper forces are treated linearly-implicitly inside a
semi-implicit Euler step so the stiff ground stays stable at 200 Hz.

All state arrays carry a leading batch axis internally; single states are
accepted and returned unbatched.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

GRAVITY = 9.81


class SimError(FloatingPointError):
    """Non-finite simulator state."""


@dataclass
class RobotModel:
    """Planar tree of rigid rods. Link 0 is the floating base."""

    link_names: tuple[str, ...] = ("torso", "thigh_l", "shank_l", "thigh_r", "shank_r")
    parents: tuple[int, ...] = (-1, 0, 1, 0, 3)
    # joint location on the parent, in the parent's local frame
    attach: tuple[tuple[float, float], ...] = ((0.0, 0.0), (0.0, 0.0), (0.0, -0.4), (0.0, 0.0), (0.0, -0.4))
    # link axis endpoint in the link's own frame (rod from origin to here)
    tips: tuple[tuple[float, float], ...] = ((0.0, 0.5), (0.0, -0.4), (0.0, -0.4), (0.0, -0.4), (0.0, -0.4))
    link_masses: tuple[float, ...] = (10.0, 3.0, 2.0, 3.0, 2.0)
    joint_names: tuple[str, ...] = ("hip_l", "knee_l", "hip_r", "knee_r")
    joint_lower: tuple[float, ...] = (-2.4, 0.0, -2.4, 0.0)
    joint_upper: tuple[float, ...] = (1.0, 2.6, 1.0, 2.6)
    torque_limits: tuple[float, ...] = (150.0, 150.0, 150.0, 150.0)
    kp: tuple[float, ...] = (300.0, 300.0, 300.0, 300.0)
    kd: tuple[float, ...] = (6.0, 6.0, 6.0, 6.0)
    q0: tuple[float, ...] = (-0.3408, 0.3, 0.0408, 0.3)
    # keypoints: (name, link index, local offset)
    keypoints: tuple[tuple[str, int, tuple[float, float]], ...] = (
        ("pelvis", 0, (0.0, 0.0)),
        ("head", 0, (0.0, 0.5)),
        ("knee_l", 1, (0.0, -0.4)),
        ("foot_l", 2, (0.0, -0.4)),
        ("knee_r", 3, (0.0, -0.4)),
        ("foot_r", 4, (0.0, -0.4)),
    )
    foot_links: tuple[int, ...] = (2, 4)
    head_keypoints: tuple[int, ...] = (0, 1)
    contact_stiffness: float = 2.0e5
    contact_damping: float = 3.0e3
    friction_coef: float = 0.8
    friction_damping: float = 1.0e4
    nominal_mass: float = 20.0
    nominal_height: float = 0.78

    def __post_init__(self):
        for name in ("attach", "tips"):
            setattr(self, name, tuple(tuple(float(v) for v in a) for a in getattr(self, name)))
        self.keypoints = tuple((str(n), int(i), tuple(float(v) for v in off)) for n, i, off in self.keypoints)
        for name in ("link_names", "parents", "link_masses", "joint_names", "joint_lower", "joint_upper",
                     "torque_limits", "kp", "kd", "q0", "foot_links", "head_keypoints"):
            setattr(self, name, tuple(getattr(self, name)))
        nl, nj = len(self.parents), len(self.parents) - 1
        if self.parents[0] != -1 or any(not 0 <= p < i for i, p in enumerate(self.parents[1:], 1)):
            raise ValueError("link 0 must be the root and parents must precede children")
        for name in ("attach", "tips", "link_masses", "link_names"):
            if len(getattr(self, name)) != nl:
                raise ValueError(f"{name} needs one entry per link")
        for name in ("joint_names", "joint_lower", "joint_upper", "torque_limits", "kp", "kd", "q0"):
            if len(getattr(self, name)) != nj:
                raise ValueError(f"{name} needs one entry per joint")
        if min(self.link_masses) <= 0 or min(self.torque_limits) <= 0:
            raise ValueError("masses and torque limits must be positive")
        if min(np.hypot(*np.array(self.tips).T)) <= 0:
            raise ValueError("link lengths must be positive")
        if min(self.kp) < 0 or min(self.kd) < 0:
            raise ValueError("PD gains must be >= 0")
        if any(lo >= hi for lo, hi in zip(self.joint_lower, self.joint_upper)):
            raise ValueError("joint lower limit must be below upper limit")
        if len(self.keypoints) < 2:
            raise ValueError("need at least a foot-like and a head-like keypoint")

    # derived constants, recomputed cheaply on demand
    @property
    def n_links(self) -> int:
        return len(self.parents)

    @property
    def n_joints(self) -> int:
        return len(self.parents) - 1

    @property
    def ndof(self) -> int:
        return 3 + self.n_joints

    @property
    def total_mass(self) -> float:
        return float(sum(self.link_masses))

    @property
    def link_lengths(self) -> np.ndarray:
        return np.hypot(*np.array(self.tips).T)

    @property
    def inertias(self) -> np.ndarray:
        return np.array(self.link_masses) * self.link_lengths**2 / 12.0

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.joint_lower)

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.joint_upper)

    @property
    def leg_length(self) -> float:
        return float(self.link_lengths[1] + self.link_lengths[2])

    @property
    def standing_height(self) -> float:
        """Pelvis height with ``q0`` upright and the lowest point on the ground."""
        st = default_state(self, height=0.0)
        return float(-point_positions(self, st, contact_points(self))[..., 1].min())

    @property
    def assist_scale(self) -> float:
        return self.total_mass / self.nominal_mass

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "RobotModel":
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class SimState:
    """Planar robot state; arrays may carry a leading batch axis."""

    base_pos: np.ndarray  # (..., 2) world x, z of the base origin (pelvis)
    base_pitch: np.ndarray  # (...)
    base_vel: np.ndarray  # (..., 2) world-frame linear velocity
    base_ang_vel: np.ndarray  # (...)
    q: np.ndarray  # (..., n_joints)
    qd: np.ndarray  # (..., n_joints)
    contacts: np.ndarray  # (..., n_links) bool
    time: np.ndarray  # (...)

    @property
    def batched(self) -> bool:
        return self.q.ndim == 2

    def copy(self) -> "SimState":
        return SimState(**{k: np.array(v, copy=True) for k, v in self.__dict__.items()})

    def as_batch(self) -> "SimState":
        if self.batched:
            return self
        return SimState(**{k: np.asarray(v)[None] for k, v in self.__dict__.items()})

    def unbatch(self) -> "SimState":
        return SimState(**{k: np.asarray(v)[0] for k, v in self.__dict__.items()})

    def index(self, idx) -> "SimState":
        return SimState(**{k: np.asarray(v)[idx] for k, v in self.__dict__.items()})

    def assign(self, idx, other: "SimState") -> None:
        for k, v in self.__dict__.items():
            v[idx] = getattr(other, k)

    def check_finite(self) -> None:
        for k, v in self.__dict__.items():
            if k != "contacts" and not np.isfinite(v).all():
                raise SimError(f"non-finite simulator state in {k}")

    @property
    def body_vel(self) -> np.ndarray:
        """Base linear velocity expressed in the body frame."""
        return world_to_body(self.base_vel, self.base_pitch)


@dataclass
class ExternalForce:
    target: str | int  # "base" or a link index
    force: tuple[float, float]
    duration: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.force).all() or not math.isfinite(self.duration):
            raise ValueError("external force must be finite")
        if self.duration < 0:
            raise ValueError("duration must be >= 0")


# frames and kinematics ------------------------------------------------------------

def rot(phi: np.ndarray) -> np.ndarray:
    """Local-to-world rotation(s), shape (..., 2, 2)."""
    c, s = np.cos(phi), np.sin(phi)
    return np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -2)


def world_to_body(v: np.ndarray, pitch: np.ndarray) -> np.ndarray:
    return np.einsum("...ji,...j->...i", rot(pitch), v)


def body_to_world(v: np.ndarray, pitch: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", rot(pitch), v)


def projected_gravity(base_pitch) -> np.ndarray:
    """World gravity direction (0, -1) seen in the body frame."""
    th = np.asarray(base_pitch, dtype=np.float64)
    return np.stack([np.sin(th), -np.cos(th)], -1)


def _perp(v: np.ndarray) -> np.ndarray:
    # derivative of a world vector attached to a link w.r.t. that link's angle
    return np.stack([v[..., 1], -v[..., 0]], -1)


def default_state(model: RobotModel, height: float | None = None, batch: int | None = None) -> SimState:
    """Upright at ``q0``, at rest, lowest point on the ground unless ``height`` given."""
    shape = () if batch is None else (batch,)
    st = SimState(
        base_pos=np.zeros(shape + (2,)),
        base_pitch=np.zeros(shape),
        base_vel=np.zeros(shape + (2,)),
        base_ang_vel=np.zeros(shape),
        q=np.broadcast_to(np.array(model.q0), shape + (model.n_joints,)).copy(),
        qd=np.zeros(shape + (model.n_joints,)),
        contacts=np.zeros(shape + (model.n_links,), dtype=bool),
        time=np.zeros(shape),
    )
    if height is None:
        low = point_positions(model, st, contact_points(model))[..., 1].min(axis=-1)
        st.base_pos[..., 1] = -low
    else:
        st.base_pos[..., 1] = height
    return st


def contact_points(model: RobotModel) -> list[tuple[int, tuple[float, float]]]:
    """Link endpoints that can touch the ground; shared joints listed once."""
    pts = [(0, (0.0, 0.0))]
    for i in range(model.n_links):
        pts.append((i, model.tips[i]))
    return pts


def keypoint_spec(model: RobotModel) -> list[tuple[int, tuple[float, float]]]:
    return [(link, off) for _, link, off in model.keypoints]


def joint_points(model: RobotModel) -> list[tuple[int, tuple[float, float]]]:
    """Actuated joint locations, as points on each joint's child link."""
    return [(i, (0.0, 0.0)) for i in range(1, model.n_links)]


class _Kin:
    """Per-link angles and origins for a batch of configurations."""

    def __init__(self, model: RobotModel, base_pos, base_pitch, q):
        self.model = model
        nl = model.n_links
        self.phi = [None] * nl
        self.origin = [None] * nl
        self.R = [None] * nl
        self.phi[0] = base_pitch
        self.origin[0] = base_pos
        self.R[0] = rot(base_pitch)
        for i in range(1, nl):
            p = model.parents[i]
            self.phi[i] = self.phi[p] + q[..., i - 1]
            self.R[i] = rot(self.phi[i])
            self.origin[i] = self.origin[p] + self.R[p] @ np.array(model.attach[i])
        # chain[i]: links from root to i inclusive
        self.chain = []
        for i in range(nl):
            c, k = [], i
            while k >= 0:
                c.append(k)
                k = model.parents[k]
            self.chain.append(c[::-1])

    def point(self, link: int, offset) -> np.ndarray:
        return self.origin[link] + self.R[link] @ np.asarray(offset, dtype=np.float64)

    def jacobian(self, link: int, P: np.ndarray) -> np.ndarray:
        """dP/d(coords) for point P rigidly attached to ``link``: (..., 2, ndof)."""
        model = self.model
        J = np.zeros(P.shape[:-1] + (2, model.ndof))
        J[..., 0, 0] = 1.0
        J[..., 1, 1] = 1.0
        J[..., :, 2] = _perp(P - self.origin[0])
        for k in self.chain[link][1:]:
            J[..., :, 3 + k - 1] = _perp(P - self.origin[k])
        return J

    def angle_coeffs(self, link: int) -> np.ndarray:
        a = np.zeros(self.model.ndof)
        a[2] = 1.0
        for k in self.chain[link][1:]:
            a[3 + k - 1] = 1.0
        return a

    def centripetal(self, link: int, P: np.ndarray, phid: list[np.ndarray]) -> np.ndarray:
        """Acceleration of P at zero generalized acceleration."""
        acc = np.zeros_like(P)
        chain = self.chain[link]
        for j, k in enumerate(chain):
            end = P if j == len(chain) - 1 else self.origin[chain[j + 1]]
            w = end - self.origin[k]
            acc = acc - (phid[k] ** 2)[..., None] * w
        return acc


def _gen_vel(state: SimState) -> np.ndarray:
    return np.concatenate([state.base_vel, state.base_ang_vel[..., None], state.qd], axis=-1)


def _link_rates(model: RobotModel, state: SimState) -> list[np.ndarray]:
    rates = [None] * model.n_links
    rates[0] = state.base_ang_vel
    for i in range(1, model.n_links):
        rates[i] = rates[model.parents[i]] + state.qd[..., i - 1]
    return rates


def point_positions(model: RobotModel, state: SimState, points) -> np.ndarray:
    kin = _Kin(model, state.base_pos, state.base_pitch, state.q)
    return np.stack([kin.point(link, off) for link, off in points], axis=-2)


def point_velocities(model: RobotModel, state: SimState, points) -> np.ndarray:
    kin = _Kin(model, state.base_pos, state.base_pitch, state.q)
    v = _gen_vel(state)
    out = []
    for link, off in points:
        P = kin.point(link, off)
        out.append(np.einsum("...ij,...j->...i", kin.jacobian(link, P), v))
    return np.stack(out, axis=-2)


def keypoint_positions(model: RobotModel, state: SimState) -> np.ndarray:
    return point_positions(model, state, keypoint_spec(model))


def keypoint_velocities(model: RobotModel, state: SimState) -> np.ndarray:
    return point_velocities(model, state, keypoint_spec(model))


def fk_config(model: RobotModel, base_pos, base_pitch, q, points) -> np.ndarray:
    """Point positions straight from a configuration (no SimState needed)."""
    kin = _Kin(model, np.asarray(base_pos, float), np.asarray(base_pitch, float), np.asarray(q, float))
    return np.stack([kin.point(link, off) for link, off in points], axis=-2)


def com_position(model: RobotModel, state: SimState) -> np.ndarray:
    kin = _Kin(model, state.base_pos, state.base_pitch, state.q)
    m = np.array(model.link_masses)
    pts = np.stack([kin.point(i, np.array(model.tips[i]) / 2) for i in range(model.n_links)], axis=-2)
    return (pts * m[:, None]).sum(-2) / m.sum()


def energy(model: RobotModel, state: SimState) -> np.ndarray:
    """Kinetic plus gravitational potential energy (J)."""
    kin = _Kin(model, state.base_pos, state.base_pitch, state.q)
    v = _gen_vel(state)
    rates = _link_rates(model, state)
    total = 0.0
    for i in range(model.n_links):
        P = kin.point(i, np.array(model.tips[i]) / 2)
        vc = np.einsum("...ij,...j->...i", kin.jacobian(i, P), v)
        m = model.link_masses[i]
        total = total + 0.5 * m * (vc**2).sum(-1) + 0.5 * model.inertias[i] * rates[i] ** 2 + m * GRAVITY * P[..., 1]
    return total


# control laws ------------------------------------------------------------------------

def pd_torque(model: RobotModel, q_tar, q, qd) -> np.ndarray:
    """Joint PD law ``kp (q_tar - q) - kd qd`` clamped to the torque limits."""
    q_tar, q, qd = (np.asarray(a, dtype=np.float64) for a in (q_tar, q, qd))
    nj = model.n_joints
    if q_tar.shape[-1] != nj or q.shape[-1] != nj or qd.shape[-1] != nj:
        raise ValueError(f"expected {nj} joints, got {q_tar.shape}, {q.shape}, {qd.shape}")
    tau = np.array(model.kp) * (q_tar - q) - np.array(model.kd) * qd
    lim = np.array(model.torque_limits)
    return np.clip(tau, -lim, lim)


def residual_setpoint(model: RobotModel, q_ref, action) -> np.ndarray:
    """PD target = reference joint positions + residual action, clamped to limits."""
    q_ref, action = np.asarray(q_ref, dtype=np.float64), np.asarray(action, dtype=np.float64)
    if q_ref.shape[-1] != action.shape[-1]:
        raise ValueError(f"reference has {q_ref.shape[-1]} joints, action has {action.shape[-1]}")
    return np.clip(q_ref + action, model.lower, model.upper)


def apply_assist(state: SimState, magnitude) -> ExternalForce | np.ndarray:
    """Upward pull on the base for the current control step.

    Scalar magnitude returns an :class:`ExternalForce`; an array of
    magnitudes returns the batched (B, 2) force vectors.
    """
    mag = np.asarray(magnitude, dtype=np.float64)
    if (mag < 0).any():
        raise ValueError("assist magnitude must be >= 0")
    if mag.ndim == 0:
        return ExternalForce("base", (0.0, float(mag)), 0.0)
    return np.stack([np.zeros_like(mag), mag], -1)


def _force_array(model: RobotModel, forces, batch: int) -> np.ndarray:
    out = np.zeros((batch, model.n_links, 2))
    if forces is None:
        return out
    if isinstance(forces, np.ndarray):
        return out + forces.reshape((-1, model.n_links, 2) if forces.ndim >= 2 else (1, model.n_links, 2))
    for f in forces:
        link = 0 if f.target == "base" else int(f.target)
        out[:, link] += np.asarray(f.force, dtype=np.float64)
    return out


# integration ---------------------------------------------------------------------------

def step(model: RobotModel, state: SimState, torques, external_forces=None, dt: float = 0.005) -> SimState:
    """Advance one physics step.

    ``external_forces`` is None, a sequence of :class:`ExternalForce`, or an
    array (B, n_links, 2) of world forces applied at each link origin.
    """
    return step_with_forces(model, state, torques, external_forces, dt)[0]


def step_with_forces(model: RobotModel, state: SimState, torques, external_forces=None,
                     dt: float = 0.005) -> tuple[SimState, np.ndarray]:
    """:func:`step`, also returning the normal force at each contact point."""
    if not 0.0 < dt <= 0.02:
        raise ValueError(f"dt must be in (0, 0.02], got {dt}")
    single = not state.batched
    st = state.as_batch()
    B = st.q.shape[0]
    tau = np.asarray(torques, dtype=np.float64).reshape(B, model.n_joints)
    lim = np.array(model.torque_limits)
    if (np.abs(tau) > lim * (1 + 1e-9)).any():
        raise ValueError("torques exceed limits")
    fext = _force_array(model, external_forces, B)

    nd = model.ndof
    kin = _Kin(model, st.base_pos, st.base_pitch, st.q)
    v = _gen_vel(st)
    rates = _link_rates(model, st)

    M = np.zeros((B, nd, nd))
    Q = np.zeros((B, nd))
    Q[:, 3:] = tau
    g = np.array([0.0, -GRAVITY])
    for i in range(model.n_links):
        m = model.link_masses[i]
        P = kin.point(i, np.array(model.tips[i]) / 2)
        J = kin.jacobian(i, P)
        a = kin.angle_coeffs(i)
        M += m * np.einsum("bki,bkj->bij", J, J) + model.inertias[i] * np.outer(a, a)
        acc0 = kin.centripetal(i, P, rates)
        Q += np.einsum("bki,bk->bi", J, m * (g - acc0))
        if fext[:, i].any():
            Jo = kin.jacobian(i, kin.origin[i])
            Q += np.einsum("bki,bk->bi", Jo, fext[:, i])

    # contacts: implicit spring-damper normal, implicit viscous tangent capped by friction
    cpts = contact_points(model)
    Pc = np.stack([kin.point(l, o) for l, o in cpts], 1)  # (B, C, 2)
    Jc = np.stack([kin.jacobian(l, Pc[:, c]) for c, (l, o) in enumerate(cpts)], 1)  # (B, C, 2, nd)
    pen = -Pc[..., 1]
    k, c_n, mu, c_t = model.contact_stiffness, model.contact_damping, model.friction_coef, model.friction_damping
    c_eff = c_n + k * dt
    Jn, Jt = Jc[..., 1, :], Jc[..., 0, :]
    active = pen > 0
    sliding = np.zeros_like(active)
    # sliding contacts get a fixed Coulomb force from the previous pass's normal
    # force; coupling it to vn inside the solve makes the system non-symmetric
    # and can blow up
    slide_force = np.zeros(pen.shape)
    Mv = np.einsum("bij,bj->bi", M, v)
    for _ in range(4):
        act = active.astype(float)
        stick = act * (~sliding)
        slide = act * sliding
        A = M + dt * (
            np.einsum("bc,bci,bcj->bij", act * c_eff, Jn, Jn)
            + np.einsum("bc,bci,bcj->bij", stick * c_t, Jt, Jt)
        )
        rhs = Mv + dt * (
            Q
            + np.einsum("bc,bci->bi", act * k * pen, Jn)
            + np.einsum("bc,bci->bi", slide * slide_force, Jt)
        )
        v_new = np.linalg.solve(A, rhs[..., None])[..., 0]
        vn = np.einsum("bci,bi->bc", Jn, v_new)
        vt = np.einsum("bci,bi->bc", Jt, v_new)
        fn = act * (k * pen - c_eff * vn)
        ft = np.where(sliding, slide_force, -c_t * vt) * act
        new_active = active & (fn > 0)
        over = new_active & ~sliding & (np.abs(ft) > mu * fn)
        cap = mu * np.maximum(fn, 0.0)
        settled = np.abs(np.where(sliding & new_active, np.abs(slide_force) - cap, 0.0)).max() <= 1e-6 * (1 + cap.max())
        if (new_active == active).all() and not over.any() and settled:
            break
        slide_force = np.where(over, np.sign(ft) * cap, np.where(sliding, np.sign(slide_force) * cap, 0.0))
        sliding = (sliding | over) & new_active
        active = new_active
    fn = np.maximum(fn, 0.0)
    v_new = _limit_impulse(model, M, st.q, v_new, dt)

    new = SimState(
        base_pos=st.base_pos + dt * v_new[:, 0:2],
        base_pitch=st.base_pitch + dt * v_new[:, 2],
        base_vel=v_new[:, 0:2].copy(),
        base_ang_vel=v_new[:, 2].copy(),
        q=st.q + dt * v_new[:, 3:],
        qd=v_new[:, 3:].copy(),
        contacts=np.zeros((B, model.n_links), dtype=bool),
        time=st.time + dt,
    )
    new.q = np.clip(new.q, model.lower, model.upper)
    touching = fn > 0
    for c, (link, _) in enumerate(cpts):
        new.contacts[:, link] |= touching[:, c]
    new.check_finite()
    if single:
        return new.unbatch(), fn[0]
    return new, fn


def _limit_impulse(model: RobotModel, M: np.ndarray, q: np.ndarray, v: np.ndarray, dt: float) -> np.ndarray:
    """Stop joints that would cross a limit with a plastic impulse.

    The impulse acts only along the blocked joint axes and is sized through the
    mass matrix, so the rest of the chain reacts consistently and kinetic
    energy can only decrease (zeroing the joint rate alone could add energy).
    """
    qd = v[:, 3:]
    q_next = q + dt * qd
    blocked = ((q_next < model.lower) & (qd < 0)) | ((q_next > model.upper) & (qd > 0))
    if not blocked.any():
        return v
    v = v.copy()
    for b in np.flatnonzero(blocked.any(axis=1)):
        idx = 3 + np.flatnonzero(blocked[b])
        Minv_E = np.linalg.solve(M[b], np.eye(M.shape[1])[:, idx])
        lam = np.linalg.solve(Minv_E[idx], v[b, idx])
        v[b] -= Minv_E @ lam
        v[b, idx] = 0.0
    return v


def simulate(model: RobotModel, state: SimState, q_tar, substeps: int, dt: float, external_forces=None) -> SimState:
    """Hold a PD setpoint for ``substeps`` physics steps, recomputing torque each step."""
    for _ in range(substeps):
        tau = pd_torque(model, q_tar, state.q, state.qd)
        state = step(model, state, tau, external_forces, dt)
    return state


# debugging output ----------------------------------------------------------------------

def dump_trajectory_csv(path, model: RobotModel, states: Sequence[SimState]) -> None:
    header = ["time", "base_x", "base_z", "base_pitch"]
    header += [f"q_{n}" for n in model.joint_names] + [f"qd_{n}" for n in model.joint_names]
    header += [f"contact_{n}" for n in model.link_names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in states:
            w.writerow(
                [repr(float(s.time)), repr(float(s.base_pos[0])), repr(float(s.base_pos[1])), repr(float(s.base_pitch))]
                + [repr(float(v)) for v in s.q]
                + [repr(float(v)) for v in s.qd]
                + [int(b) for b in s.contacts]
            )


__all__ = [
    "GRAVITY",
    "RobotModel",
    "SimState",
    "ExternalForce",
    "SimError",
    "projected_gravity",
    "pd_torque",
    "residual_setpoint",
    "apply_assist",
    "step",
    "simulate",
    "default_state",
    "energy",
    "keypoint_positions",
    "keypoint_velocities",
    "point_positions",
    "point_velocities",
    "joint_points",
    "keypoint_spec",
    "contact_points",
    "fk_config",
    "com_position",
    "world_to_body",
    "body_to_world",
    "dump_trajectory_csv",
    "step_with_forces",
]
