"""Quantitative checks on Cartesian trajectories, real or generated.

Trajectory MSE follows the reconstruct-and-resimulate protocol: take the
first generated frame as the initial position, estimate the initial
velocity by forward difference of the first two frames, map both to a
phase-space state, integrate the known dynamics with RK45, and score the
mean squared error over frames and active coordinates.

Energy drift rebuilds momenta from positions by central differences
(one-sided at the ends) and reports the percent deviation of the
reconstructed energy from its initial value.

The reduction oracles check the two analytic consequences of symmetry
used to ground the latent-dimension claims: planar two-body motion obeys
a one-dimensional radial ODE in the effective potential, and equilateral
three-body motion stays homographic, obeying a reduced radial equation.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .integrators import IntegrationError, IntegratorConfig, rk45_integrate
from .systems import (
    CollisionError,
    PhaseState,
    SystemKind,
    SystemParams,
    analytic_vector_field,
    cartesian_positions,
    hamiltonian,
    particle_count,
    phase_dim,
)

# relative deviation from a rod-length circle beyond which we warn while
# projecting angles out of generated frames
PROJECTION_WARN_TOL = 1e-3


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Plain mean squared difference; zero on self, symmetric in arguments."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


# ---------------------------------------------------------------------------
# position-only reconstruction of generalized coordinates and momenta


def _angle_from_bob(x: np.ndarray, y: np.ndarray, length: float, what: str) -> np.ndarray:
    radius = np.hypot(x, y)
    if np.max(np.abs(radius - length)) > PROJECTION_WARN_TOL * length:
        warnings.warn(f"{what} off the radius-{length} circle; projecting")
    return np.arctan2(x, -y)


def reconstruct_coords(kind: SystemKind, params: SystemParams, frames: np.ndarray) -> np.ndarray:
    """Generalized coordinates (T, d) from Cartesian frames (T, >= 2n).

    Pendulum angles come from atan2, which projects off-circle points back
    onto the constraint; a warning flags material deviations.
    """
    frames = np.asarray(frames, dtype=np.float64)
    n = particle_count(kind)
    if frames.ndim != 2 or frames.shape[1] < 2 * n:
        raise ValueError(f"need at least {2 * n} coordinate columns for {kind.value}")
    if kind is SystemKind.MASS_SPRING:
        return frames[:, 0:1].copy()
    if kind is SystemKind.PENDULUM:
        theta = _angle_from_bob(frames[:, 0], frames[:, 1], params.L, "pendulum bob")
        return np.unwrap(theta)[:, None]
    if kind is SystemKind.DOUBLE_PENDULUM:
        theta1 = _angle_from_bob(frames[:, 0], frames[:, 1], params.L, "upper bob")
        relx = frames[:, 2] - frames[:, 0]
        rely = frames[:, 3] - frames[:, 1]
        theta2 = _angle_from_bob(relx, rely, params.L, "lower bob")
        return np.stack([np.unwrap(theta1), np.unwrap(theta2)], axis=1)
    return frames[:, : 2 * n].copy()


def central_difference(series: np.ndarray, dt: float) -> np.ndarray:
    """d/dt of a (T, d) series: central interior, one-sided endpoints.

    Endpoints use the three-point one-sided stencil so the whole series
    stays second-order accurate; a first-order endpoint would dominate
    the reconstructed-energy error by an order of magnitude.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.shape[0] < 3:
        raise ValueError("need at least 3 frames for central differences")
    out = np.empty_like(series)
    out[1:-1] = (series[2:] - series[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * series[0] + 4.0 * series[1] - series[2]) / (2.0 * dt)
    out[-1] = (3.0 * series[-1] - 4.0 * series[-2] + series[-3]) / (2.0 * dt)
    return out


def momenta_from_velocities(
    kind: SystemKind, params: SystemParams, coords: np.ndarray, velocities: np.ndarray
) -> np.ndarray:
    """Invert the Legendre map q, qdot -> p, rowwise over frames."""
    m, L = params.m, params.L
    if kind is SystemKind.MASS_SPRING:
        return m * velocities
    if kind is SystemKind.PENDULUM:
        return m * L**2 * velocities
    if kind is SystemKind.DOUBLE_PENDULUM:
        delta = coords[:, 0] - coords[:, 1]
        cosd = np.cos(delta)
        p1 = m * L**2 * (2.0 * velocities[:, 0] + velocities[:, 1] * cosd)
        p2 = m * L**2 * (velocities[:, 1] + velocities[:, 0] * cosd)
        return np.stack([p1, p2], axis=1)
    return m * velocities


# ---------------------------------------------------------------------------
# Table-style trajectory MSE


def reconstruct_initial_state(
    kind: SystemKind, params: SystemParams, frames: np.ndarray, dt: float
) -> PhaseState:
    """Phase state from the first frame plus a forward-difference velocity."""
    coords = reconstruct_coords(kind, params, frames[:2])
    v0 = (coords[1] - coords[0]) / dt
    p0 = momenta_from_velocities(kind, params, coords[:1], v0[None, :])[0]
    return PhaseState(coords[0].copy(), p0)


def trajectory_mse(
    frames: np.ndarray, kind: SystemKind, params: SystemParams, dt: float
) -> float:
    """Mean squared error against a resimulation seeded from the trajectory."""
    frames = np.asarray(frames, dtype=np.float64)
    if not np.all(np.isfinite(frames)):
        raise ValueError("non-finite frames")
    state0 = reconstruct_initial_state(kind, params, frames, dt)
    config = IntegratorConfig(dt=dt, frames=frames.shape[0])
    field_fn = lambda q, p: analytic_vector_field(kind, params, q, p)
    states = rk45_integrate(field_fn, state0, config)
    ref = np.stack(
        [cartesian_positions(kind, params, s.q).reshape(-1) for s in states]
    )
    width = 2 * particle_count(kind)
    return mse(frames[:, :width], ref)


# ---------------------------------------------------------------------------
# energy drift


@dataclass
class DriftResult:
    series: np.ndarray  # percent drift per frame (or absolute when flagged)
    absolute: bool = False  # |E_0| ~ 0, percent undefined

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.series)))


def energy_drift(
    frames: np.ndarray, kind: SystemKind, params: SystemParams, dt: float
) -> DriftResult:
    """Percent energy deviation along a position-only trajectory."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[0] < 3:
        raise ValueError("energy drift needs at least 3 frames")
    coords = reconstruct_coords(kind, params, frames)
    velocities = central_difference(coords, dt)
    momenta = momenta_from_velocities(kind, params, coords, velocities)
    energies = hamiltonian(kind, params, coords, momenta)
    e0 = energies[0]
    if abs(e0) < 1e-12:
        return DriftResult(series=energies - e0, absolute=True)
    return DriftResult(series=100.0 * (energies - e0) / abs(e0))


# ---------------------------------------------------------------------------
# two-body radial reduction oracle


@dataclass
class RadialOracleInputs:
    """Reduced one-body quantities estimated from relative-frame data."""

    mu: float
    energy: float
    angular_momentum: float
    gravity: float  # G * m1 * m2, the coefficient of -1/r in V(r)
    l_variation: float  # max relative deviation of L across interior frames

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("reduced mass must be positive")

    def v_eff(self, r: np.ndarray) -> np.ndarray:
        return self.angular_momentum**2 / (2.0 * self.mu * r**2) - self.gravity / r


def radial_oracle_inputs(
    frames: np.ndarray, params: SystemParams, dt: float
) -> tuple[RadialOracleInputs, np.ndarray, np.ndarray]:
    """(inputs, r series, rdot series) for the two-body relative problem."""
    frames = np.asarray(frames, dtype=np.float64)
    rel = frames[:, 0:2] - frames[:, 2:4]
    vel = central_difference(rel, dt)
    r = np.hypot(rel[:, 0], rel[:, 1])
    if np.min(r) < 1e-6:
        raise CollisionError("near-collision frames in two-body trajectory")
    mu = params.m / 2.0
    grav = params.G * params.m**2
    l_series = mu * (rel[:, 0] * vel[:, 1] - rel[:, 1] * vel[:, 0])
    e_series = 0.5 * mu * np.sum(vel**2, axis=1) - grav / r
    interior = slice(1, -1)
    l_mean = float(np.mean(l_series[interior]))
    e_mean = float(np.mean(e_series[interior]))
    l_var = float(np.max(np.abs(l_series[interior] - l_mean)) / max(abs(l_mean), 1e-15))
    inputs = RadialOracleInputs(
        mu=mu, energy=e_mean, angular_momentum=l_mean, gravity=grav, l_variation=l_var
    )
    rdot = central_difference(r[:, None], dt)[:, 0]
    return inputs, r, rdot


def two_body_radial_residual(
    frames: np.ndarray, params: SystemParams, dt: float
) -> tuple[np.ndarray, RadialOracleInputs]:
    """|rdot^2 - (2/mu)(E - V_eff(r))| on interior frames.

    Endpoint frames only have one-sided difference estimates, an order
    less accurate than the rest, so the residual series excludes them.
    """
    inputs, r, rdot = radial_oracle_inputs(frames, params, dt)
    interior = slice(1, -1)
    rhs = (2.0 / inputs.mu) * (inputs.energy - inputs.v_eff(r[interior]))
    residual = np.abs(rdot[interior] ** 2 - rhs)
    return residual, inputs


# ---------------------------------------------------------------------------
# three-body homographic oracle


@dataclass
class HomographicResult:
    homographic: bool
    shape_deviation: np.ndarray  # (max side - min side)/mean side per frame
    residual: np.ndarray | None = None  # reduced radial ODE residual, interior frames

    @property
    def max_shape_deviation(self) -> float:
        return float(np.max(self.shape_deviation))


# triangles whose side spread exceeds this are not meaningfully equilateral,
# so the reduced radial ODE does not apply
SHAPE_DEVIATION_LIMIT = 0.10


def three_body_homographic_residual(
    frames: np.ndarray, params: SystemParams, dt: float
) -> HomographicResult:
    """Check the reduced radial equation r'' = -mu_eff/r^2 + h^2/r^3.

    r is the mean distance from the centroid, h = r^2 * (angular rate of
    body 1 about the centroid), and mu_eff = G m / sqrt(3) for the
    equilateral configuration. Trajectories whose triangle loses
    equilaterality beyond 10% get a shape-deviation report instead.
    """
    frames = np.asarray(frames, dtype=np.float64)
    pos = frames[:, :6].reshape(-1, 3, 2)
    centroid = pos.mean(axis=1, keepdims=True)
    rel = pos - centroid
    radii = np.linalg.norm(rel, axis=2)  # (T, 3)

    sides = np.stack(
        [
            np.linalg.norm(pos[:, 0] - pos[:, 1], axis=1),
            np.linalg.norm(pos[:, 1] - pos[:, 2], axis=1),
            np.linalg.norm(pos[:, 0] - pos[:, 2], axis=1),
        ],
        axis=1,
    )
    deviation = (sides.max(axis=1) - sides.min(axis=1)) / sides.mean(axis=1)
    if np.max(deviation) > SHAPE_DEVIATION_LIMIT:
        return HomographicResult(homographic=False, shape_deviation=deviation)

    r = radii.mean(axis=1)
    phi = np.unwrap(np.arctan2(rel[:, 0, 1], rel[:, 0, 0]))
    phidot = central_difference(phi[:, None], dt)[:, 0]
    interior = slice(1, -1)
    h = float(np.mean((r**2 * phidot)[interior]))
    rddot = (r[2:] - 2.0 * r[1:-1] + r[:-2]) / dt**2
    mu_eff = params.G * params.m / np.sqrt(3.0)
    rhs = -mu_eff / r[interior] ** 2 + h**2 / r[interior] ** 3
    return HomographicResult(
        homographic=True, shape_deviation=deviation, residual=np.abs(rddot - rhs)
    )


# ---------------------------------------------------------------------------
# batch scoring and the report object


@dataclass
class EvalReport:
    system: str
    n_trajectories: int
    n_failed: int
    mse_values: list[float] = field(default_factory=list)
    drift_max_abs: list[float] = field(default_factory=list)
    drift_gate_pct: float = 5.0
    radial_residual_max: float | None = None
    angular_momentum_variation: float | None = None
    max_shape_deviation: float | None = None
    homographic_residual_max: float | None = None

    @property
    def mse_mean(self) -> float | None:
        return float(np.mean(self.mse_values)) if self.mse_values else None

    @property
    def frac_drift_within_gate(self) -> float:
        if not self.drift_max_abs:
            return 0.0
        hits = sum(1 for d in self.drift_max_abs if d <= self.drift_gate_pct)
        return hits / self.n_trajectories

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "n_trajectories": self.n_trajectories,
            "n_failed": self.n_failed,
            "mse_mean": self.mse_mean,
            "drift_gate_pct": self.drift_gate_pct,
            "frac_drift_within_gate": self.frac_drift_within_gate,
            "drift_max_abs": self.drift_max_abs,
            "mse_values": self.mse_values,
            "radial_residual_max": self.radial_residual_max,
            "angular_momentum_variation": self.angular_momentum_variation,
            "max_shape_deviation": self.max_shape_deviation,
            "homographic_residual_max": self.homographic_residual_max,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def evaluate_batch(
    frames: np.ndarray,
    kind: SystemKind,
    params: SystemParams,
    dt: float,
    drift_gate_pct: float = 5.0,
    with_mse: bool = True,
) -> EvalReport:
    """Score generated trajectories; NaN or unphysical ones count as failures."""
    frames = np.asarray(frames, dtype=np.float64)
    report = EvalReport(
        system=kind.value,
        n_trajectories=frames.shape[0],
        n_failed=0,
        drift_gate_pct=drift_gate_pct,
    )
    for traj in frames:
        try:
            if not np.all(np.isfinite(traj)):
                raise ValueError("non-finite frames")
            drift = energy_drift(traj, kind, params, dt)
            if with_mse:
                report.mse_values.append(trajectory_mse(traj, kind, params, dt))
            report.drift_max_abs.append(drift.max_abs)
        except (ValueError, CollisionError, IntegrationError):
            report.n_failed += 1

    if kind is SystemKind.TWO_BODY:
        residuals, inputs = [], []
        for traj in frames[: min(len(frames), 32)]:
            try:
                res, inp = two_body_radial_residual(traj, params, dt)
                residuals.append(np.max(res))
                inputs.append(inp.l_variation)
            except (ValueError, CollisionError):
                pass
        if residuals:
            report.radial_residual_max = float(np.max(residuals))
            report.angular_momentum_variation = float(np.max(inputs))
    if kind is SystemKind.THREE_BODY:
        shape, resid = [], []
        for traj in frames[: min(len(frames), 32)]:
            try:
                out = three_body_homographic_residual(traj, params, dt)
                shape.append(out.max_shape_deviation)
                if out.residual is not None:
                    resid.append(float(np.max(out.residual)))
            except (ValueError, CollisionError):
                pass
        if shape:
            report.max_shape_deviation = float(np.max(shape))
        if resid:
            report.homographic_residual_max = float(np.max(resid))
    return report


def write_report_table(reports: list[EvalReport], path):
    """One CSV row per system, mirroring a results-table layout."""
    cols = (
        "system,n_trajectories,n_failed,mse_mean,"
        "frac_drift_within_gate,drift_gate_pct"
    )
    with open(path, "w") as fh:
        fh.write(cols + "\n")
        for r in reports:
            mse_txt = "" if r.mse_mean is None else f"{r.mse_mean:.17g}"
            fh.write(
                f"{r.system},{r.n_trajectories},{r.n_failed},{mse_txt},"
                f"{r.frac_drift_within_gate:.17g},{r.drift_gate_pct:.17g}\n"
            )
