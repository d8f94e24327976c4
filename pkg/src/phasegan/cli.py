"""Command-line pipeline around the library: simulate single trajectories,
build datasets, train models, generate, evaluate, and analyze dimensions.

Configuration is flat ``section.key = value`` text; command-line overrides
(``gan.lr=1e-3``) win over the config file, which wins over defaults. Every
command echoes its effective configuration to a provenance file next to its
outputs; ``rerun <provenance.json>`` replays the command bit-identically.

Exit codes: 0 success, 2 usage error, 3 missing upstream artifact,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import NonFiniteError, save_checkpoint
from .dataset import (
    DatasetSpec,
    GenerationError,
    TrajectoryRecord,
    condition_vector,
    export_csv,
    generate_dataset,
    load_dataset,
)
from .evaluation import evaluate_batch, write_report_table
from .gan import GanConfig, generate_batch, load_gan_bundle, train_spsgan
from .hnn import HnnTrainConfig, make_hnn, make_training_states, rollout_mse, train_hnn
from .integrators import IntegrationError, IntegratorConfig, rk45_integrate
from .symmetry import analyze_model, export_latent_csv
from .systems import (
    CollisionError,
    PhaseState,
    SystemKind,
    analytic_vector_field,
    cartesian_positions,
    default_params,
    hamiltonian,
    particle_count,
    phase_dim,
    sample_initial_condition,
)

EXIT_USAGE = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_NUMERICAL = 4

OUTPUT_ROOT_ENV = "PHASEGAN_OUT"


class UsageError(ValueError):
    pass


class ArtifactError(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# flat configuration: defaults, file, overrides


def _dataclass_defaults(prefix: str, cls, skip=()) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        default = f.default
        if default is dataclasses.MISSING:
            continue
        out[f"{prefix}.{f.name}"] = default
    return out


def _build_defaults() -> dict:
    cfg = {
        "simulate.system": "pendulum",
        "simulate.dt": 0.05,
        "simulate.frames": 30,
        "simulate.seed": 0,
        "simulate.q0": "sample",  # comma-separated floats, or "sample"
        "simulate.p0": "sample",
        "simulate.m": None,  # None -> system default
        "simulate.k": None,
        "simulate.L": None,
        "simulate.g": None,
        "simulate.G": None,
        "dataset.systems": "all",  # comma list of kinds, or "all"
        "dataset.count": 256,  # trajectories per system
        "dataset.seed": 0,
        "dataset.dt": 0.05,
        "dataset.frames": 30,
        "dataset.d_out": 10,
        "dataset.vary": "",  # "m:0.5:1.5;g:2:4"
        "hnn.system": "mass_spring",
        "hnn.n_traj": 64,
        "hnn.hidden": 100,
        "generate.system": "pendulum",
        "generate.n": 256,
        "generate.seed": 0,
        "eval.system": "pendulum",
        "eval.n": 256,
        "eval.seed": 0,
        "eval.drift_gate_pct": 5.0,
        "eval.with_mse": True,
        "analyze.system": "two_body",
        "analyze.n_samples": 256,
        "analyze.seed": 0,
        "analyze.variance_threshold": 0.95,
        "analyze.activity_threshold": None,  # None -> relative 5% of max
        "analyze.export_latents": False,
    }
    cfg.update(_dataclass_defaults("hnn", HnnTrainConfig, skip=("log_path",)))
    cfg.update(
        _dataclass_defaults(
            "gan", GanConfig, skip=("log_path", "checkpoint_path")
        )
    )
    return cfg


DEFAULTS = _build_defaults()

# keys whose None default still needs a numeric type when set
_OPTIONAL_TYPES = {
    "gan.d_lr": float,
    "gan.eps_m_dim": int,
    "analyze.activity_threshold": float,
    "simulate.m": float,
    "simulate.k": float,
    "simulate.L": float,
    "simulate.g": float,
    "simulate.G": float,
}


def _coerce(key: str, raw: str):
    if key not in DEFAULTS:
        raise UsageError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    target = _OPTIONAL_TYPES.get(key, type(default))
    raw = raw.strip()
    if key in _OPTIONAL_TYPES and raw.lower() in ("none", "null", "auto"):
        return None
    if target is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    if target is int:
        try:
            return int(raw)
        except ValueError as err:
            raise UsageError(f"{key}: expected an integer, got {raw!r}") from err
    if target is float:
        try:
            return float(raw)
        except ValueError as err:
            raise UsageError(f"{key}: expected a number, got {raw!r}") from err
    return raw


def load_config_file(path) -> dict:
    """Flat key = value lines; # starts a comment; blank lines ignored."""
    out = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = body.split("=", 1)
        out[key.strip()] = _coerce(key.strip(), raw)
    return out


def effective_config(config_path, overrides: list[str]) -> dict:
    cfg = dict(DEFAULTS)
    if config_path:
        if not Path(config_path).exists():
            raise ArtifactError(f"config file not found: {config_path}")
        cfg.update(load_config_file(config_path))
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        cfg[key.strip()] = _coerce(key.strip(), raw)
    return cfg


def parse_kind(name: str) -> SystemKind:
    try:
        return SystemKind(name)
    except ValueError as err:
        kinds = ", ".join(k.value for k in SystemKind)
        raise UsageError(f"unknown system {name!r}; choose from: {kinds}") from err


def _params_for(cfg: dict, section: str, kind: SystemKind):
    params = default_params(kind)
    changes = {}
    for field in ("m", "k", "L", "g", "G"):
        v = cfg.get(f"{section}.{field}")
        if v is not None:
            changes[field] = v
    return dataclasses.replace(params, **changes) if changes else params


# ---------------------------------------------------------------------------
# provenance


def write_provenance(out: Path, command: str, cfg: dict, args: dict) -> Path:
    doc = {
        "command": command,
        "out": str(out),
        "config": cfg,
        "args": args,
        "version": __version__,
    }
    path = out / f"{command.replace('-', '_')}_provenance.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: dict, args, out: Path) -> int:
    kind = parse_kind(args.system or cfg["simulate.system"])
    params = _params_for(cfg, "simulate", kind)
    d = phase_dim(kind)
    if args.theta0 is not None:
        if kind is not SystemKind.PENDULUM:
            raise UsageError("--theta0 applies to the pendulum only")
        q0, p0 = np.array([args.theta0]), np.zeros(1)
    elif cfg["simulate.q0"] != "sample":
        q0 = np.array([float(v) for v in cfg["simulate.q0"].split(",")])
        p0 = (
            np.zeros(d)
            if cfg["simulate.p0"] == "sample"
            else np.array([float(v) for v in cfg["simulate.p0"].split(",")])
        )
        if q0.shape != (d,) or p0.shape != (d,):
            raise UsageError(f"{kind.value} needs {d} q and p components")
    else:
        rng = np.random.default_rng(cfg["simulate.seed"])
        state = sample_initial_condition(kind, params, rng)
        q0, p0 = state.q, state.p
    config = IntegratorConfig(dt=cfg["simulate.dt"], frames=cfg["simulate.frames"])
    field = lambda q, p: analytic_vector_field(kind, params, q, p)
    states = rk45_integrate(field, PhaseState(q0, p0), config)
    n = particle_count(kind)
    frames = np.stack(
        [cartesian_positions(kind, params, s.q).reshape(-1) for s in states]
    )
    record = TrajectoryRecord(
        kind=kind,
        params=params,
        dt=config.dt,
        frames=frames,
        mask=np.ones(n),
        seed=cfg["simulate.seed"],
    )
    path = out / f"simulate_{kind.value}.csv"
    export_csv(record, path)
    energies = np.array([hamiltonian(kind, params, s.q, s.p) for s in states])
    denom = abs(energies[0]) if abs(energies[0]) > 1e-12 else 1.0
    drift = (energies[-1] - energies[0]) / denom
    print(f"wrote {path}")
    print(f"final relative energy drift: {drift:.3e}")
    write_provenance(out, "simulate", cfg, {"system": kind.value, "theta0": args.theta0})
    return 0


def cmd_dataset(cfg: dict, args, out: Path) -> int:
    names = cfg["dataset.systems"]
    kinds = (
        list(SystemKind)
        if names == "all"
        else [parse_kind(n.strip()) for n in names.split(",")]
    )
    vary = {}
    if cfg["dataset.vary"]:
        for clause in cfg["dataset.vary"].split(";"):
            field, lo, hi = clause.split(":")
            vary[field.strip()] = (float(lo), float(hi))
    spec = DatasetSpec(
        counts={k: cfg["dataset.count"] for k in kinds},
        seed=cfg["dataset.seed"],
        dt=cfg["dataset.dt"],
        frames=cfg["dataset.frames"],
        d_out=cfg["dataset.d_out"],
        vary=vary,
    )
    target = out / "dataset"
    target.mkdir(parents=True, exist_ok=True)
    manifest = generate_dataset(spec, target)
    total = sum(v["count"] for v in manifest["systems"].values())
    print(f"wrote {target}/manifest.json ({total} trajectories)")
    write_provenance(out, "dataset", cfg, {})
    return 0


def cmd_train_hnn(cfg: dict, args, out: Path) -> int:
    kind = parse_kind(cfg["hnn.system"])
    params = default_params(kind)
    rng = np.random.default_rng(cfg["hnn.seed"])
    model = make_hnn(phase_dim(kind), cond_dim=0, rng=rng, hidden=cfg["hnn.hidden"])
    data = make_training_states(kind, params, cfg["hnn.n_traj"], cfg["hnn.seed"])
    config = HnnTrainConfig(
        steps=cfg["hnn.steps"],
        batch_size=cfg["hnn.batch_size"],
        lr=cfg["hnn.lr"],
        beta1=cfg["hnn.beta1"],
        beta2=cfg["hnn.beta2"],
        seed=cfg["hnn.seed"],
        snapshot_every=cfg["hnn.snapshot_every"],
        log_path=str(out / f"hnn_{kind.value}_log.csv"),
    )
    history = train_hnn(model, data, config)
    path = out / f"hnn_{kind.value}.json"
    save_checkpoint(
        path,
        {"hnn": model.net},
        extra={
            "system": kind.value,
            "d": model.d,
            "cond_dim": model.cond_dim,
            "params": dataclasses.asdict(params),
            "train_config": dataclasses.asdict(config),
        },
    )
    mse = rollout_mse(model, kind, params, n_traj=16, seed=cfg["hnn.seed"] + 1)
    print(f"wrote {path}")
    print(f"final loss: {history[-1][1]:.6f}" if history else "no training steps")
    print(f"rollout mse over 16 held-out trajectories: {mse:.6f}")
    write_provenance(out, "train-hnn", cfg, {})
    return 0


def _gan_config(cfg: dict, out: Path, lam: float | None = None, tag: str = "") -> GanConfig:
    kwargs = {}
    for f in dataclasses.fields(GanConfig):
        key = f"gan.{f.name}"
        if key in cfg:
            kwargs[f.name] = cfg[key]
    if lam is not None:
        kwargs["lambda_cyclic"] = lam
    kwargs["log_path"] = str(out / f"gan_log{tag}.csv")
    kwargs["checkpoint_path"] = str(out / f"gan_bundle{tag}.json")
    return GanConfig(**kwargs)


def cmd_train_gan(cfg: dict, args, out: Path) -> int:
    data_dir = Path(args.data) if args.data else out / "dataset"
    if not (data_dir / "manifest.json").exists():
        raise ArtifactError(f"dataset manifest not found: {data_dir}/manifest.json")
    records, manifest = load_dataset(data_dir)
    lambdas = (
        [float(v) for v in args.sweep_lambda.split(",")]
        if args.sweep_lambda
        else [None]
    )
    for lam in lambdas:
        tag = "" if lam is None else f"_lam{lam:g}"
        config = _gan_config(cfg, out, lam, tag)
        result = train_spsgan(records, manifest["param_ranges"], config)
        last = result.history[-1] if result.history else None
        status = f"aborted at step {result.aborted_at}" if result.aborted_at else "done"
        print(f"wrote {config.checkpoint_path} ({status})")
        if last:
            print(
                f"final d_loss {last['d_loss']:.4f}, g_loss {last['g_loss']:.4f}, "
                f"cyclic {last['cyclic']:.4f}"
            )
    write_provenance(
        out, "train-gan", cfg,
        {"data": str(data_dir), "sweep_lambda": args.sweep_lambda},
    )
    return 0


def _load_bundle(args, out: Path):
    path = Path(args.bundle) if args.bundle else out / "gan_bundle.json"
    if not path.exists():
        raise ArtifactError(f"checkpoint not found: {path}")
    return load_gan_bundle(path), path


def _condition_and_mask(kind: SystemKind, extra: dict, config: GanConfig):
    params = default_params(kind)
    cond = condition_vector(kind, params, extra["param_ranges"])
    mask = np.zeros(config.d_out)
    mask[: particle_count(kind)] = 1.0
    return params, cond, mask


def cmd_generate(cfg: dict, args, out: Path) -> int:
    (models, config, extra), bundle_path = _load_bundle(args, out)
    kind = parse_kind(args.system or cfg["generate.system"])
    params, cond, mask = _condition_and_mask(kind, extra, config)
    n = cfg["generate.n"]
    batch = generate_batch(
        models, np.tile(cond, (n, 1)), mask[None, :], config, seed=cfg["generate.seed"]
    )
    path = out / f"generated_{kind.value}.npz"
    np.savez(
        path,
        frames=batch.frames,
        qs=batch.qs,
        ps=batch.ps,
        pdots=batch.pdots,
        cond=cond,
        mask=mask,
    )
    print(f"wrote {path} (frames shape {batch.frames.shape})")
    write_provenance(
        out, "generate", cfg, {"bundle": str(bundle_path), "system": kind.value}
    )
    return 0


def cmd_eval(cfg: dict, args, out: Path) -> int:
    (models, config, extra), bundle_path = _load_bundle(args, out)
    kind = parse_kind(args.system or cfg["eval.system"])
    params, cond, mask = _condition_and_mask(kind, extra, config)
    if args.frames:
        if not Path(args.frames).exists():
            raise ArtifactError(f"trajectory file not found: {args.frames}")
        frames = np.load(args.frames)["frames"]
    else:
        n = cfg["eval.n"]
        frames = generate_batch(
            models, np.tile(cond, (n, 1)), mask[None, :], config, seed=cfg["eval.seed"]
        ).frames
    report = evaluate_batch(
        frames,
        kind,
        params,
        config.dt,
        drift_gate_pct=cfg["eval.drift_gate_pct"],
        with_mse=cfg["eval.with_mse"],
    )
    json_path = out / f"eval_{kind.value}.json"
    json_path.write_text(report.to_json() + "\n")
    write_report_table([report], out / "eval_table.csv")
    print(f"wrote {json_path}")
    mse_txt = "n/a" if report.mse_mean is None else f"{report.mse_mean:.6f}"
    print(
        f"{kind.value}: mse {mse_txt}, "
        f"{100 * report.frac_drift_within_gate:.1f}% of {report.n_trajectories} "
        f"within {report.drift_gate_pct:g}% drift, {report.n_failed} failed"
    )
    write_provenance(
        out, "eval", cfg,
        {"bundle": str(bundle_path), "system": kind.value, "frames": args.frames},
    )
    return 0


def cmd_analyze(cfg: dict, args, out: Path) -> int:
    (models, config, extra), bundle_path = _load_bundle(args, out)
    kind = parse_kind(args.system or cfg["analyze.system"])
    _, cond, _ = _condition_and_mask(kind, extra, config)
    report = analyze_model(
        models,
        config,
        cond,
        n_samples=cfg["analyze.n_samples"],
        seed=cfg["analyze.seed"],
        variance_threshold=cfg["analyze.variance_threshold"],
        activity_threshold=cfg["analyze.activity_threshold"],
    )
    path = out / f"dimension_report_{kind.value}.json"
    path.write_text(report.to_json() + "\n")
    print(f"wrote {path}")
    print(
        f"{kind.value}: headline dimension {report.headline_dimension}, "
        f"PCA dimension {report.pca_dim} at {report.variance_threshold:.0%} variance"
    )
    if cfg["analyze.export_latents"]:
        csv_path = out / f"latents_{kind.value}.csv"
        export_latent_csv(
            models, config, cond, cfg["analyze.n_samples"], csv_path,
            seed=cfg["analyze.seed"],
        )
        print(f"wrote {csv_path}")
    write_provenance(
        out, "analyze", cfg, {"bundle": str(bundle_path), "system": kind.value}
    )
    return 0


HANDLERS = {
    "simulate": cmd_simulate,
    "dataset": cmd_dataset,
    "train-hnn": cmd_train_hnn,
    "train-gan": cmd_train_gan,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
}


def cmd_rerun(args) -> int:
    path = Path(args.provenance)
    if not path.exists():
        raise ArtifactError(f"provenance file not found: {path}")
    doc = json.loads(path.read_text())
    command = doc["command"]
    if command not in HANDLERS:
        raise UsageError(f"provenance names unknown command {command!r}")
    out = Path(doc["out"])
    out.mkdir(parents=True, exist_ok=True)
    replay = argparse.Namespace(
        system=doc["args"].get("system"),
        theta0=doc["args"].get("theta0"),
        data=doc["args"].get("data"),
        sweep_lambda=doc["args"].get("sweep_lambda"),
        bundle=doc["args"].get("bundle"),
        frames=doc["args"].get("frames"),
    )
    return HANDLERS[command](doc["config"], replay, out)


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phasegan",
        description="Trajectory simulation, dataset building, adversarial "
        "training with Hamiltonian latent dynamics, and dimension analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument(
            "--out",
            help=f"output directory (default ${OUTPUT_ROOT_ENV} or ./runs)",
        )
        p.add_argument(
            "overrides",
            nargs="*",
            metavar="key=value",
            help="config overrides, e.g. gan.lr=1e-3",
        )

    p = sub.add_parser("simulate", help="integrate one trajectory to CSV")
    p.add_argument("system", nargs="?", help="one of the five system names")
    p.add_argument("--theta0", type=float, help="pendulum initial angle (rad)")
    common(p)

    p = sub.add_parser("dataset", help="generate a trajectory dataset")
    common(p)

    p = sub.add_parser("train-hnn", help="supervised Hamiltonian network")
    common(p)

    p = sub.add_parser("train-gan", help="adversarial trajectory generator")
    p.add_argument("--data", help="dataset directory (default <out>/dataset)")
    p.add_argument(
        "--sweep-lambda",
        help="comma list of cyclic-penalty weights to train in sequence",
    )
    common(p)

    p = sub.add_parser("generate", help="sample trajectories from a bundle")
    p.add_argument("--bundle", help="checkpoint path (default <out>/gan_bundle.json)")
    p.add_argument("--system", help="system to condition on")
    common(p)

    p = sub.add_parser("eval", help="score generated trajectories")
    p.add_argument("--bundle", help="checkpoint path (default <out>/gan_bundle.json)")
    p.add_argument("--system", help="system to condition on")
    p.add_argument("--frames", help="pre-generated .npz instead of sampling")
    common(p)

    p = sub.add_parser("analyze", help="latent dimension report")
    p.add_argument("--bundle", help="checkpoint path (default <out>/gan_bundle.json)")
    p.add_argument("--system", help="system to condition on")
    common(p)

    p = sub.add_parser("rerun", help="replay a command from its provenance file")
    p.add_argument("provenance", help="path to a *_provenance.json file")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        # key=value tokens may be interleaved with flags; argparse's positional
        # chunking would otherwise reject ones that follow an optional.
        args, extra = parser.parse_known_args(argv)
        unknown = [t for t in extra if "=" not in t or t.startswith("-")]
        if unknown:
            parser.error(f"unrecognized arguments: {' '.join(unknown)}")
        if hasattr(args, "overrides"):
            args.overrides.extend(extra)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        if args.command == "rerun":
            return cmd_rerun(args)
        cfg = effective_config(args.config, args.overrides)
        out = Path(
            args.out or os.environ.get(OUTPUT_ROOT_ENV) or "runs"
        )
        out.mkdir(parents=True, exist_ok=True)
        if not hasattr(args, "system"):
            args.system = None
        return HANDLERS[args.command](cfg, args, out)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ArtifactError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except (NonFiniteError, IntegrationError, CollisionError, GenerationError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
