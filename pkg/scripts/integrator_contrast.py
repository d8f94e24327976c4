"""Energy behavior of leapfrog vs forward Euler on the harmonic oscillator:
leapfrog stays bounded for arbitrarily long runs, Euler grows without bound.
"""

import argparse
import sys

import numpy as np

from phasegan.integrators import euler_rollout, leapfrog_rollout
from phasegan.systems import (
    PhaseState,
    SystemKind,
    analytic_vector_field,
    default_params,
    hamiltonian,
)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=10_000)
    ap.add_argument("--dt", type=float, default=0.05)
    args = ap.parse_args()

    kind = SystemKind.MASS_SPRING
    params = default_params(kind)
    state0 = PhaseState(np.array([1.0]), np.array([0.0]))
    field = lambda q, p: analytic_vector_field(kind, params, q, p)
    dT_dp = lambda p: p / params.m
    dV_dq = lambda q: params.k * q
    e0 = hamiltonian(kind, params, state0.q, state0.p)

    runs = [
        ("leapfrog", lambda: leapfrog_rollout(dT_dp, dV_dq, state0, args.steps, args.dt)),
        ("euler", lambda: euler_rollout(field, state0, args.steps, args.dt)),
    ]
    for name, rollout in runs:
        states = rollout()
        energies = np.array([hamiltonian(kind, params, s.q, s.p) for s in states])
        rel = np.abs(energies - e0) / abs(e0)
        print(f"{name:9s} max |dE/E0| over {args.steps} steps: {rel.max():.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
