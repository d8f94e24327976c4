"""Time integration.

Adaptive RK45 (scipy) produces ground-truth trajectories; a symplectic
kick-drift-kick leapfrog drives Hamiltonian rollouts; explicit Euler
exists as the drift baseline the leapfrog is contrasted against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .systems import PhaseState


class IntegrationError(RuntimeError):
    """The integrator failed to reach the end of the time span."""


@dataclass
class IntegratorConfig:
    dt: float = 0.05
    frames: int = 30
    rtol: float = 1e-9
    atol: float = 1e-9
    substeps: int = 1  # leapfrog substeps per output frame

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.frames < 2:
            raise ValueError("need at least two frames")
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")


def rk45_integrate(field, state0: PhaseState, config: IntegratorConfig) -> list[PhaseState]:
    """Integrate dq/dt, dp/dt = field(q, p) and sample on the frame grid."""
    d = state0.q.shape[0]

    def rhs(t, y):
        dq, dp = field(y[:d], y[d:])
        return np.concatenate([dq, dp])

    t_grid = np.arange(config.frames) * config.dt
    sol = solve_ivp(
        rhs,
        (0.0, t_grid[-1]),
        state0.flat(),
        method="RK45",
        t_eval=t_grid,
        rtol=config.rtol,
        atol=config.atol,
    )
    if not sol.success:
        raise IntegrationError(f"RK45 failed: {sol.message}")
    return [PhaseState(sol.y[:d, i], sol.y[d:, i]) for i in range(config.frames)]


def leapfrog_step(dT_dp, dV_dq, state: PhaseState, dt: float) -> PhaseState:
    """One kick-drift-kick step for separable H = T(p) + V(q)."""
    p_half = state.p - 0.5 * dt * dV_dq(state.q)
    q_new = state.q + dt * dT_dp(p_half)
    p_new = p_half - 0.5 * dt * dV_dq(q_new)
    return PhaseState(q_new, p_new)


def leapfrog_rollout(dT_dp, dV_dq, state0: PhaseState, n_steps: int, dt: float) -> list[PhaseState]:
    states = [state0]
    for _ in range(n_steps):
        states.append(leapfrog_step(dT_dp, dV_dq, states[-1], dt))
    return states


def euler_step(field, state: PhaseState, dt: float) -> PhaseState:
    dq, dp = field(state.q, state.p)
    return PhaseState(state.q + dt * dq, state.p + dt * dp)


def euler_rollout(field, state0: PhaseState, n_steps: int, dt: float) -> list[PhaseState]:
    states = [state0]
    for _ in range(n_steps):
        states.append(euler_step(field, states[-1], dt))
    return states
