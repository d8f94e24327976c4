"""Trajectory dataset generation, persistence, and batching.

A dataset is a directory holding ``manifest.json`` plus one flat binary
file per system with float64 frames in row-major
[trajectory][frame][particle][coordinate] order. Frames are Cartesian
particle coordinates padded with zeros to a common particle budget
``d_out``; a per-particle binary mask marks the active slots.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .integrators import IntegrationError, IntegratorConfig, rk45_integrate
from .systems import (
    SYSTEM_ORDER,
    CollisionError,
    PhaseState,
    SystemKind,
    SystemParams,
    analytic_vector_field,
    cartesian_positions,
    default_params,
    hamiltonian,
    particle_count,
    sample_initial_condition,
)

DATASET_FORMAT = "phasegan-dataset"
DATASET_VERSION = 1
D_OUT_DEFAULT = 10
ENERGY_GATE = 1e-5  # per-trajectory relative energy conservation
MAX_RETRIES = 20

# normalized parameter block of the condition vector, in this order
PARAM_FIELDS = ("m", "k", "L", "g", "G")


class GenerationError(RuntimeError):
    """A trajectory could not be produced within the retry budget."""


class DatasetError(RuntimeError):
    """Dataset files are missing, corrupted, or incompatible."""


@dataclass
class DatasetSpec:
    """What to generate: trajectory counts per system and sampling ranges."""

    counts: dict[SystemKind, int]
    seed: int = 0
    dt: float = 0.05
    frames: int = 30
    d_out: int = D_OUT_DEFAULT
    # optional per-field uniform ranges; fields not listed use the defaults
    vary: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.counts:
            raise ValueError("spec must request at least one system")
        for f in self.vary:
            if f not in PARAM_FIELDS:
                raise ValueError(f"unknown parameter field {f!r}")


@dataclass
class TrajectoryRecord:
    kind: SystemKind
    params: SystemParams
    dt: float
    frames: np.ndarray  # (T, 2*d_out), per-frame layout x1,y1,...,x_dout,y_dout
    mask: np.ndarray  # (d_out,) binary, 1 = active particle
    seed: int

    @property
    def d_out(self) -> int:
        return self.mask.shape[0]


def _sample_params(kind: SystemKind, spec: DatasetSpec, rng: np.random.Generator) -> SystemParams:
    params = default_params(kind)
    if spec.vary:
        draws = {f: rng.uniform(*spec.vary[f]) for f in PARAM_FIELDS if f in spec.vary}
        params = replace(params, **draws)
    return params


def _record_rng(seed: int, kind: SystemKind, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, SYSTEM_ORDER.index(kind), index])


def _generate_one(
    kind: SystemKind, spec: DatasetSpec, index: int
) -> tuple[SystemParams, np.ndarray]:
    """One energy-gated trajectory; returns (params, cartesian (T, n, 2))."""
    rng = _record_rng(spec.seed, kind, index)
    config = IntegratorConfig(dt=spec.dt, frames=spec.frames)
    for _ in range(MAX_RETRIES):
        params = _sample_params(kind, spec, rng)
        state0 = sample_initial_condition(kind, params, rng)
        field_fn = lambda q, p: analytic_vector_field(kind, params, q, p)
        try:
            states = rk45_integrate(field_fn, state0, config)
        except (CollisionError, IntegrationError):
            continue
        qs = np.stack([s.q for s in states])
        ps = np.stack([s.p for s in states])
        try:
            energies = hamiltonian(kind, params, qs, ps)
        except CollisionError:
            continue
        e0 = energies[0]
        if np.max(np.abs(energies - e0)) / max(abs(e0), 1e-12) > ENERGY_GATE:
            continue
        return params, cartesian_positions(kind, params, qs)
    raise GenerationError(f"{kind.value} trajectory {index}: retry budget exhausted")


def _params_row(params: SystemParams) -> list[float]:
    return [getattr(params, f) for f in PARAM_FIELDS]


def _mask_for(kind: SystemKind, d_out: int) -> np.ndarray:
    mask = np.zeros(d_out)
    mask[: particle_count(kind)] = 1.0
    return mask


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def generate_dataset(spec: DatasetSpec, out_dir) -> dict:
    """Generate all requested trajectories and persist them; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    systems = {}
    all_param_rows = []
    for kind in SYSTEM_ORDER:
        count = spec.counts.get(kind, 0)
        if count <= 0:
            continue
        array = np.zeros((count, spec.frames, spec.d_out, 2))
        param_rows = []
        n = particle_count(kind)
        for i in range(count):
            params, cart = _generate_one(kind, spec, i)
            array[i, :, :n, :] = cart
            param_rows.append(_params_row(params))
        fname = f"{kind.value}.bin"
        path = out_dir / fname
        path.write_bytes(np.ascontiguousarray(array, dtype="<f8").tobytes())
        systems[kind.value] = {
            "count": count,
            "file": fname,
            "sha256": _sha256(path),
            "params": param_rows,
        }
        all_param_rows.extend(param_rows)
    rows = np.asarray(all_param_rows)
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "seed": spec.seed,
        "dt": spec.dt,
        "frames": spec.frames,
        "d_out": spec.d_out,
        "param_ranges": {
            f: [float(rows[:, j].min()), float(rows[:, j].max())]
            for j, f in enumerate(PARAM_FIELDS)
        },
        "systems": systems,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return manifest


def load_dataset(path) -> tuple[list[TrajectoryRecord], dict]:
    """Load all records; validates format, version, and checksums."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"no manifest found in {path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != DATASET_FORMAT:
        raise DatasetError(f"{manifest_path}: not a dataset manifest")
    if manifest.get("version") != DATASET_VERSION:
        raise DatasetError(f"unsupported dataset version {manifest.get('version')}")
    d_out = manifest["d_out"]
    frames = manifest["frames"]
    records = []
    for kind_name, entry in manifest["systems"].items():
        kind = SystemKind(kind_name)
        bin_path = path / entry["file"]
        if not bin_path.exists():
            raise DatasetError(f"missing data file {bin_path}")
        if _sha256(bin_path) != entry["sha256"]:
            raise DatasetError(f"checksum mismatch for {bin_path}")
        array = np.frombuffer(bin_path.read_bytes(), dtype="<f8").astype(np.float64)
        array = array.reshape(entry["count"], frames, d_out, 2)
        mask = _mask_for(kind, d_out)
        for i in range(entry["count"]):
            row = entry["params"][i]
            params = SystemParams(**dict(zip(PARAM_FIELDS, row)))
            records.append(
                TrajectoryRecord(
                    kind=kind,
                    params=params,
                    dt=manifest["dt"],
                    frames=array[i].reshape(frames, 2 * d_out).copy(),
                    mask=mask.copy(),
                    seed=i,
                )
            )
    return records, manifest


# ---------------------------------------------------------------------------
# conditioning and batching


def condition_vector(kind: SystemKind, params: SystemParams, param_ranges: dict) -> np.ndarray:
    """One-hot system label ++ min-max normalized parameters (constant -> 0.5)."""
    onehot = np.zeros(len(SYSTEM_ORDER))
    onehot[SYSTEM_ORDER.index(kind)] = 1.0
    norm = np.empty(len(PARAM_FIELDS))
    for j, f in enumerate(PARAM_FIELDS):
        lo, hi = param_ranges[f]
        v = getattr(params, f)
        norm[j] = 0.5 if hi == lo else (v - lo) / (hi - lo)
    return np.concatenate([onehot, norm])


def condition_dim() -> int:
    return len(SYSTEM_ORDER) + len(PARAM_FIELDS)


@dataclass
class Batch:
    frames: np.ndarray  # (B, T, 2*d_out)
    mask: np.ndarray  # (B, d_out)
    cond: np.ndarray  # (B, condition_dim)


def minibatch_iterator(records, batch_size: int, seed: int, param_ranges: dict, epochs=None):
    """Shuffled epochs of disjoint batches; the trailing partial batch is dropped."""
    if batch_size > len(records):
        raise ValueError("batch size exceeds record count")
    conds = np.stack([condition_vector(r.kind, r.params, param_ranges) for r in records])
    frames = np.stack([r.frames for r in records])
    masks = np.stack([r.mask for r in records])
    rng = np.random.default_rng(seed)
    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng.permutation(len(records))
        for start in range(0, len(records) - batch_size + 1, batch_size):
            idx = order[start : start + batch_size]
            yield Batch(frames[idx], masks[idx], conds[idx])
        epoch += 1


# ---------------------------------------------------------------------------
# CSV export


def export_csv(record: TrajectoryRecord, path):
    """Human-readable dump of one record, header ``t,x1,y1,...,x10,y10``."""
    d_out = record.d_out
    cols = ["t"]
    for i in range(1, d_out + 1):
        cols += [f"x{i}", f"y{i}"]
    lines = [",".join(cols)]
    for t in range(record.frames.shape[0]):
        vals = [t * record.dt] + list(record.frames[t])
        lines.append(",".join(f"{v:.17g}" for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")
