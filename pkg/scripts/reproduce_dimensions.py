"""Dimension-discovery experiment: train the adversarial model per system
over several seeds and report the momentum-activity headline dimension.

Expected outcome at defaults: two_body concentrates on 1 latent coordinate,
double_pendulum and three_body on 2, in most seeds. Each run trains from
scratch; with the desk preset below a system takes tens of minutes per seed
on one core.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from phasegan.dataset import condition_vector, generate_dataset, load_dataset, DatasetSpec
from phasegan.gan import GanConfig, train_spsgan
from phasegan.symmetry import analyze_model
from phasegan.systems import SystemKind, default_params

DESK = dict(
    lr=5e-5,
    init_q_coupling=0.05,
    batch_size=64,
    hnn_hidden=64,
    f_hidden=64,
    g_hidden=96,
    d_hidden=32,
)


def run_system(kind: SystemKind, seeds, epochs: int, count: int, out: Path) -> list[int]:
    data_dir = out / f"data_{kind.value}"
    if not (data_dir / "manifest.json").exists():
        generate_dataset(DatasetSpec(counts={kind: count}, seed=3), data_dir)
    records, manifest = load_dataset(data_dir)
    cond = condition_vector(kind, default_params(kind), manifest["param_ranges"])
    dims = []
    for seed in seeds:
        config = GanConfig(
            epochs=epochs,
            seed=seed,
            log_path=str(out / f"log_{kind.value}_s{seed}.csv"),
            checkpoint_path=str(out / f"bundle_{kind.value}_s{seed}.json"),
            **DESK,
        )
        result = train_spsgan(records, manifest["param_ranges"], config)
        report = analyze_model(result.models, config, cond, n_samples=256, seed=seed)
        (out / f"dims_{kind.value}_s{seed}.json").write_text(report.to_json() + "\n")
        acts = np.sort(report.activities)[::-1]
        print(
            f"{kind.value} seed {seed}: headline {report.headline_dimension}, "
            f"top activities {np.array2string(acts[:4], precision=4)}",
            flush=True,
        )
        dims.append(report.headline_dimension)
    return dims


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/dimensions")
    ap.add_argument("--systems", default="two_body,double_pendulum,three_body")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--epochs", type=int, default=12000)
    ap.add_argument("--count", type=int, default=2048, help="trajectories per system")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in args.seeds.split(",")]
    table = {}
    for name in args.systems.split(","):
        kind = SystemKind(name.strip())
        table[kind.value] = run_system(kind, seeds, args.epochs, args.count, out)
    print(json.dumps(table, indent=1))
    (out / "headline_dimensions.json").write_text(json.dumps(table, indent=1) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
