"""Closed-form physics of the five benchmark mechanical systems.

Each system is specified by its Hamiltonian in generalized coordinates.
The module provides the energy, the exact Hamilton's-equations vector
field (hand-derived), initial-condition samplers, and the projection to
Cartesian particle coordinates used by the trajectory models.

All functions are pure; arrays are float64 throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# n-body separations below this abort the trajectory
COLLISION_EPS = 1e-6


class CollisionError(ValueError):
    """Two bodies approached within COLLISION_EPS."""


class SystemKind(str, enum.Enum):
    MASS_SPRING = "mass_spring"
    PENDULUM = "pendulum"
    DOUBLE_PENDULUM = "double_pendulum"
    TWO_BODY = "two_body"
    THREE_BODY = "three_body"


# canonical ordering, also the one-hot layout of condition vectors
SYSTEM_ORDER = (
    SystemKind.MASS_SPRING,
    SystemKind.PENDULUM,
    SystemKind.DOUBLE_PENDULUM,
    SystemKind.TWO_BODY,
    SystemKind.THREE_BODY,
)

_PHASE_DIM = {
    SystemKind.MASS_SPRING: 1,
    SystemKind.PENDULUM: 1,
    SystemKind.DOUBLE_PENDULUM: 2,
    SystemKind.TWO_BODY: 4,
    SystemKind.THREE_BODY: 6,
}

_PARTICLES = {
    SystemKind.MASS_SPRING: 1,
    SystemKind.PENDULUM: 1,
    SystemKind.DOUBLE_PENDULUM: 2,
    SystemKind.TWO_BODY: 2,
    SystemKind.THREE_BODY: 3,
}


def phase_dim(kind: SystemKind) -> int:
    """Number of generalized coordinates (momenta have the same count)."""
    return _PHASE_DIM[kind]


def particle_count(kind: SystemKind) -> int:
    return _PARTICLES[kind]


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters; fields a system does not use keep their defaults."""

    m: float = 1.0
    k: float = 2.0
    L: float = 1.0
    g: float = 3.0
    G: float = 1.0
    c: float = 0.0

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError("mass must be positive")
        if self.L <= 0:
            raise ValueError("length must be positive")


def default_params(kind: SystemKind) -> SystemParams:
    if kind in (SystemKind.MASS_SPRING, SystemKind.PENDULUM):
        return SystemParams(m=0.5)
    return SystemParams(m=1.0)


@dataclass
class PhaseState:
    """Generalized positions and momenta of one system configuration."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.q.shape != self.p.shape:
            raise ValueError("q and p must have equal length")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p))):
            raise ValueError("phase state entries must be finite")

    def flat(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_flat(cls, y: np.ndarray) -> "PhaseState":
        y = np.asarray(y, dtype=np.float64)
        d = y.shape[-1] // 2
        return cls(y[..., :d], y[..., d:])


@dataclass
class CartesianFrame:
    """Particle positions of one frame; inactive slots are zero when padded."""

    positions: np.ndarray  # (n_active, 2)

    @property
    def n_active(self) -> int:
        return self.positions.shape[0]

    def padded(self, d_out: int) -> np.ndarray:
        out = np.zeros((d_out, 2))
        out[: self.n_active] = self.positions
        return out


def _pair_distances(q: np.ndarray, n: int) -> list[np.ndarray]:
    """Pairwise separation norms for q shaped (..., 2n)."""
    pts = q.reshape(q.shape[:-1] + (n, 2))
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            out.append(np.linalg.norm(pts[..., i, :] - pts[..., j, :], axis=-1))
    return out


def _check_collisions(q: np.ndarray, n: int):
    for r in _pair_distances(q, n):
        if np.any(r < COLLISION_EPS):
            raise CollisionError("bodies closer than collision threshold")


# ---------------------------------------------------------------------------
# energies


def hamiltonian(kind: SystemKind, params: SystemParams, q: np.ndarray, p: np.ndarray):
    """Total energy; broadcasts over leading axes of (..., d) inputs."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    m, k, L, g, G = params.m, params.k, params.L, params.g, params.G
    if kind is SystemKind.MASS_SPRING:
        return p[..., 0] ** 2 / (2 * m) + 0.5 * k * q[..., 0] ** 2
    if kind is SystemKind.PENDULUM:
        return p[..., 0] ** 2 / (2 * m * L**2) + m * g * L * (1 - np.cos(q[..., 0]))
    if kind is SystemKind.DOUBLE_PENDULUM:
        th1, th2 = q[..., 0], q[..., 1]
        p1, p2 = p[..., 0], p[..., 1]
        delta = th1 - th2
        num = p1**2 + 2 * p2**2 - 2 * p1 * p2 * np.cos(delta)
        den = 2 * m * L**2 * (1 + np.sin(delta) ** 2)
        return num / den + m * g * L * (3 - 2 * np.cos(th1) - np.cos(th2))
    if kind in (SystemKind.TWO_BODY, SystemKind.THREE_BODY):
        n = particle_count(kind)
        _check_collisions(q, n)
        kinetic = np.sum(p**2, axis=-1) / (2 * m)
        potential = 0.0
        for r in _pair_distances(q, n):
            potential = potential - G * m * m / r
        return kinetic + potential
    raise ValueError(f"unknown system kind {kind!r}")


def hamiltonian_tensor(kind: SystemKind, params: SystemParams, q: Tensor, p: Tensor) -> Tensor:
    """Energy as an autodiff graph; q, p shaped (batch, d); returns (batch, 1).

    Same expressions as :func:`hamiltonian`, written in tape primitives so
    input gradients are available. Used to cross-check the hand-derived
    vector field and to drive symplectic rollouts of the exact physics.
    """
    m, k, L, g, G = params.m, params.k, params.L, params.g, params.G
    if kind is SystemKind.MASS_SPRING:
        return ad.tsum(p * p, axis=1, keepdims=True) * (1.0 / (2 * m)) + ad.tsum(
            q * q, axis=1, keepdims=True
        ) * (0.5 * k)
    if kind is SystemKind.PENDULUM:
        kinetic = ad.tsum(p * p, axis=1, keepdims=True) * (1.0 / (2 * m * L**2))
        potential = ad.tsum(1.0 - ad.tcos(q), axis=1, keepdims=True) * (m * g * L)
        return kinetic + potential
    if kind is SystemKind.DOUBLE_PENDULUM:
        th1 = ad.narrow(q, 1, 0, 1)
        th2 = ad.narrow(q, 1, 1, 1)
        p1 = ad.narrow(p, 1, 0, 1)
        p2 = ad.narrow(p, 1, 1, 1)
        delta = th1 - th2
        num = p1 * p1 + 2.0 * (p2 * p2) - 2.0 * (p1 * p2 * ad.tcos(delta))
        sd = ad.tsin(delta)
        den = (1.0 + sd * sd) * (2 * m * L**2)
        pot = (3.0 - 2.0 * ad.tcos(th1) - ad.tcos(th2)) * (m * g * L)
        return num / den + pot
    if kind in (SystemKind.TWO_BODY, SystemKind.THREE_BODY):
        n = particle_count(kind)
        kinetic = ad.tsum(p * p, axis=1, keepdims=True) * (1.0 / (2 * m))
        total = kinetic
        for i in range(n):
            for j in range(i + 1, n):
                di = ad.narrow(q, 1, 2 * i, 2) - ad.narrow(q, 1, 2 * j, 2)
                r = ad.tsqrt(ad.tsum(di * di, axis=1, keepdims=True))
                total = total - (G * m * m) / r
        return total
    raise ValueError(f"unknown system kind {kind!r}")


# ---------------------------------------------------------------------------
# exact vector fields (hand-derived Hamilton's equations)


def analytic_vector_field(kind: SystemKind, params: SystemParams, q: np.ndarray, p: np.ndarray):
    """(dq/dt, dp/dt); broadcasts over leading axes of (..., d) inputs."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    m, k, L, g, G = params.m, params.k, params.L, params.g, params.G
    if kind is SystemKind.MASS_SPRING:
        return p / m, -k * q
    if kind is SystemKind.PENDULUM:
        return p / (m * L**2), -m * g * L * np.sin(q)
    if kind is SystemKind.DOUBLE_PENDULUM:
        th1, th2 = q[..., 0], q[..., 1]
        p1, p2 = p[..., 0], p[..., 1]
        delta = th1 - th2
        cosd, sind = np.cos(delta), np.sin(delta)
        den = m * L**2 * (1 + sind**2)
        dth1 = (p1 - p2 * cosd) / den
        dth2 = (2 * p2 - p1 * cosd) / den
        num = p1**2 + 2 * p2**2 - 2 * p1 * p2 * cosd
        c1 = p1 * p2 * sind / den
        c2 = num * sind * cosd / (den * (1 + sind**2))
        dp1 = -2 * m * g * L * np.sin(th1) - c1 + c2
        dp2 = -m * g * L * np.sin(th2) + c1 - c2
        return np.stack([dth1, dth2], axis=-1), np.stack([dp1, dp2], axis=-1)
    if kind in (SystemKind.TWO_BODY, SystemKind.THREE_BODY):
        n = particle_count(kind)
        _check_collisions(q, n)
        pts = q.reshape(q.shape[:-1] + (n, 2))
        force = np.zeros_like(pts)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                diff = pts[..., j, :] - pts[..., i, :]
                r = np.linalg.norm(diff, axis=-1, keepdims=True)
                force[..., i, :] += G * m * m * diff / r**3
        return p / m, force.reshape(q.shape)
    raise ValueError(f"unknown system kind {kind!r}")


# ---------------------------------------------------------------------------
# initial-condition samplers

# phase-space radius bounds of the 1-DOF systems (per bob for the double
# pendulum); n-body bounds are orbital radii in position space
RADIUS_BOUNDS = {
    SystemKind.MASS_SPRING: (0.1, 1.0),
    SystemKind.PENDULUM: (1.3, 2.3),
    SystemKind.DOUBLE_PENDULUM: (0.5, 1.3),
    SystemKind.TWO_BODY: (0.5, 1.5),
    SystemKind.THREE_BODY: (0.9, 1.2),
}

VELOCITY_NOISE = 0.1


def _annulus_point(rng: np.random.Generator, lo: float, hi: float):
    """Uniform radius in [lo, hi], uniform angle."""
    r = rng.uniform(lo, hi)
    phi = rng.uniform(0.0, 2 * np.pi)
    return r * np.cos(phi), r * np.sin(phi)


def sample_initial_condition(
    kind: SystemKind, params: SystemParams, rng: np.random.Generator
) -> PhaseState:
    """Draw one initial phase state per the per-system conventions."""
    lo, hi = RADIUS_BOUNDS[kind]
    m, G = params.m, params.G
    if kind in (SystemKind.MASS_SPRING, SystemKind.PENDULUM):
        qv, pv = _annulus_point(rng, lo, hi)
        return PhaseState(np.array([qv]), np.array([pv]))
    if kind is SystemKind.DOUBLE_PENDULUM:
        q1, p1 = _annulus_point(rng, lo, hi)
        q2, p2 = _annulus_point(rng, lo, hi)
        return PhaseState(np.array([q1, q2]), np.array([p1, p2]))
    if kind is SystemKind.TWO_BODY:
        r = rng.uniform(lo, hi)
        phi = rng.uniform(0.0, 2 * np.pi)
        pos1 = r * np.array([np.cos(phi), np.sin(phi)])
        # circular-orbit speed about the shared center of mass
        speed = np.sqrt(G * m / (4 * r))
        vel1 = speed * np.array([-np.sin(phi), np.cos(phi)])
        # common speed factor keeps total momentum exactly zero
        scale = 1.0 + VELOCITY_NOISE * rng.uniform(-1.0, 1.0)
        vel1 *= scale
        q = np.concatenate([pos1, -pos1])
        p = m * np.concatenate([vel1, -vel1])
        return PhaseState(q, p)
    if kind is SystemKind.THREE_BODY:
        r = rng.uniform(lo, hi)
        phi0 = rng.uniform(0.0, 2 * np.pi)
        angles = phi0 + np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
        pos = r * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        # net pull on each body in an equilateral triangle is G m^2/(sqrt(3) r^2)
        omega = np.sqrt(G * m / (np.sqrt(3) * r**3))
        vel = omega * r * np.stack([-np.sin(angles), np.cos(angles)], axis=1)
        vel += VELOCITY_NOISE * rng.uniform(-1.0, 1.0, size=vel.shape)
        vel -= vel.mean(axis=0)  # keep the center of mass fixed
        return PhaseState(pos.reshape(-1), (m * vel).reshape(-1))
    raise ValueError(f"unknown system kind {kind!r}")


# ---------------------------------------------------------------------------
# Cartesian projection


def cartesian_positions(kind: SystemKind, params: SystemParams, q: np.ndarray) -> np.ndarray:
    """Particle positions (..., n_active, 2) from generalized coordinates (..., d)."""
    q = np.asarray(q, dtype=np.float64)
    L = params.L
    if kind is SystemKind.MASS_SPRING:
        x = q[..., 0]
        return np.stack([x, np.zeros_like(x)], axis=-1)[..., None, :]
    if kind is SystemKind.PENDULUM:
        th = q[..., 0]
        return np.stack([L * np.sin(th), -L * np.cos(th)], axis=-1)[..., None, :]
    if kind is SystemKind.DOUBLE_PENDULUM:
        th1, th2 = q[..., 0], q[..., 1]
        bob1 = np.stack([L * np.sin(th1), -L * np.cos(th1)], axis=-1)
        bob2 = bob1 + np.stack([L * np.sin(th2), -L * np.cos(th2)], axis=-1)
        return np.stack([bob1, bob2], axis=-2)
    if kind in (SystemKind.TWO_BODY, SystemKind.THREE_BODY):
        n = particle_count(kind)
        return q.reshape(q.shape[:-1] + (n, 2))
    raise ValueError(f"unknown system kind {kind!r}")


def to_cartesian(kind: SystemKind, params: SystemParams, state: PhaseState) -> CartesianFrame:
    return CartesianFrame(cartesian_positions(kind, params, state.q))
