"""Supervised Hamiltonian-network baseline: fit H on sampled phase-space
states per system, then score symplectic rollouts against reference
integration from matched initial conditions.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from phasegan.autodiff import save_checkpoint
from phasegan.hnn import HnnTrainConfig, make_hnn, make_training_states, rollout_mse, train_hnn
from phasegan.systems import SystemKind, default_params, phase_dim


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/hnn")
    ap.add_argument("--systems", default="mass_spring,pendulum")
    ap.add_argument("--steps", type=int, default=4000)
    ap.add_argument("--n-traj", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.systems.split(","):
        kind = SystemKind(name.strip())
        params = default_params(kind)
        rng = np.random.default_rng(args.seed)
        model = make_hnn(phase_dim(kind), cond_dim=0, rng=rng)
        data = make_training_states(kind, params, args.n_traj, args.seed)
        config = HnnTrainConfig(
            steps=args.steps,
            seed=args.seed,
            log_path=str(out / f"log_{kind.value}.csv"),
        )
        history = train_hnn(model, data, config)
        save_checkpoint(out / f"hnn_{kind.value}.json", {"hnn": model.net},
                        extra={"system": kind.value})
        mse = rollout_mse(model, kind, params, n_traj=32, seed=args.seed + 1)
        print(
            f"{kind.value}: final loss {history[-1][1]:.5f}, "
            f"rollout mse {mse:.5f} over 32 held-out trajectories",
            flush=True,
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
