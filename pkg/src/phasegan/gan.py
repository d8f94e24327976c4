"""Sequence GAN over particle trajectories with symplectic latent dynamics.

Generator, in three learned pieces: a configuration-space map turns motion
noise plus the condition vector into an initial latent phase point
z_0 = (q_0, p_0); a latent Hamiltonian rolls z forward with the generalized
leapfrog; a frame decoder maps each [z_t, content noise] to padded Cartesian
coordinates, masked down to the active particle slots. The discriminator is
a GRU over frames with the condition appended to every frame input and a
linear head producing one real/fake logit.

The cyclic penalty prices the time variation of each latent momentum.
Coordinates the data does not need settle into conserved momenta, so counting
the momenta that still move estimates the configuration-space dimension
(see the symmetry module).
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import (
    AdamState,
    MlpParams,
    NonFiniteError,
    Tape,
    Tensor,
    adam_step,
    forward_mlp,
    init_mlp,
    param_grad,
    variable,
)
from .dataset import condition_dim, minibatch_iterator
from .hnn import HnnModel, Rollout, hnn_energy, make_hnn, symplectic_rollout


@dataclass
class GanConfig:
    """Hyperparameters; defaults follow the full-scale training recipe."""

    d_lat: int = 20  # latent DOF count; latent phase space is 2*d_lat
    d_cont: int = 50  # content-noise width
    d_out: int = 10  # particle slots in the padded output
    horizon: int = 30  # frames per trajectory
    dt: float = 0.05
    substeps: int = 1  # latent integrator steps per frame
    eps_m_dim: int | None = None  # motion-noise width; None means 2*d_lat
    lambda_cyclic: float = 0.1
    # initial q-sensitivity of the latent Hamiltonian; small values start
    # every latent momentum near conservation, so training recruits moving
    # momenta from the data instead of pruning twenty active ones down
    init_q_coupling: float = 0.05
    lr: float = 5e-5
    d_lr: float | None = None  # discriminator rate; None means shared lr
    d_every: int = 1  # run a discriminator step every k-th iteration
    beta1: float = 0.3
    beta2: float = 0.999
    epochs: int = 50000  # one epoch = one generator iteration
    batch_size: int = 128
    seed: int = 0
    f_hidden: int = 100
    hnn_hidden: int = 100
    g_hidden: int = 512
    d_hidden: int = 64
    log_path: str | None = None
    checkpoint_path: str | None = None
    checkpoint_every: int = 0  # 0 disables intermediate checkpoints

    def __post_init__(self):
        if self.lambda_cyclic < 0:
            raise ValueError("lambda_cyclic must be nonnegative")
        if self.init_q_coupling < 0:
            raise ValueError("init_q_coupling must be nonnegative")
        if self.d_lat < 1 or self.d_out < 1 or self.d_cont < 0:
            raise ValueError("latent/output/content dimensions must be positive")
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2 frames")
        if self.dt <= 0 or self.substeps < 1:
            raise ValueError("invalid integrator settings")
        if self.eps_m_dim is not None and self.eps_m_dim < 1:
            raise ValueError("eps_m_dim must be positive when given")
        if self.epochs < 0 or self.batch_size < 1 or self.d_every < 1:
            raise ValueError("invalid training settings")

    @property
    def motion_dim(self) -> int:
        return 2 * self.d_lat if self.eps_m_dim is None else self.eps_m_dim


# ---------------------------------------------------------------------------
# GRU discriminator

# mode-collapse watchdog: discriminator loss this low for this many
# consecutive iterations means the generator has stopped competing
WATCHDOG_THRESHOLD = 1e-4
WATCHDOG_PATIENCE = 500


@dataclass
class GruParams:
    """Gated recurrent cell plus a linear logit head over the last state."""

    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_u: Tensor
    u_u: Tensor
    b_u: Tensor
    w_c: Tensor
    u_c: Tensor
    b_c: Tensor
    head_w: Tensor
    head_b: Tensor

    @property
    def in_dim(self) -> int:
        return self.w_r.data.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_r.data.shape[1]

    def parameters(self, prefix: str = "disc") -> dict[str, Tensor]:
        names = (
            "w_r", "u_r", "b_r", "w_u", "u_u", "b_u",
            "w_c", "u_c", "b_c", "head_w", "head_b",
        )
        return {f"{prefix}.{n}": getattr(self, n) for n in names}


def init_gru(in_dim: int, hidden: int, rng: np.random.Generator) -> GruParams:
    def glorot(n_in, n_out):
        scale = np.sqrt(2.0 / (n_in + n_out))
        return variable(rng.normal(0.0, scale, size=(n_in, n_out)))

    def zeros(n):
        return variable(np.zeros(n))

    return GruParams(
        w_r=glorot(in_dim, hidden), u_r=glorot(hidden, hidden), b_r=zeros(hidden),
        w_u=glorot(in_dim, hidden), u_u=glorot(hidden, hidden), b_u=zeros(hidden),
        w_c=glorot(in_dim, hidden), u_c=glorot(hidden, hidden), b_c=zeros(hidden),
        head_w=glorot(hidden, 1), head_b=zeros(1),
    )


def gru_to_dict(gru: GruParams) -> dict:
    doc = {"kind": "gru"}
    for name, t in gru.parameters("g").items():
        doc[name[2:]] = ad._encode_array(t.data)
    return doc


def gru_from_dict(doc: dict) -> GruParams:
    fields = {k: variable(ad._decode_array(v)) for k, v in doc.items() if k != "kind"}
    return GruParams(**fields)


ad.register_checkpoint_kind(GruParams, "gru", gru_to_dict, gru_from_dict)


def gru_forward(gru: GruParams, frames: list[Tensor]) -> Tensor:
    """Run the cell over a frame sequence; returns (B, 1) logits."""
    if not frames:
        raise ValueError("empty frame sequence")
    batch = frames[0].data.shape[0]
    h = Tensor(np.zeros((batch, gru.hidden)))
    for x in frames:
        if x.data.shape[1] != gru.in_dim:
            raise ValueError(
                f"frame width {x.data.shape[1]} does not match cell input {gru.in_dim}"
            )
        r = ad.sigmoid(ad.matmul(x, gru.w_r) + ad.matmul(h, gru.u_r) + gru.b_r)
        u = ad.sigmoid(ad.matmul(x, gru.w_u) + ad.matmul(h, gru.u_u) + gru.b_u)
        c = ad.tanh(ad.matmul(x, gru.w_c) + ad.matmul(r * h, gru.u_c) + gru.b_c)
        h = u * h + (ad.constant(1.0) - u) * c
    return ad.matmul(h, gru.head_w) + gru.head_b


def discriminate(gru: GruParams, frames: list[Tensor], cond: np.ndarray) -> Tensor:
    """Logits for a trajectory batch; the condition rides along on every frame."""
    cond = np.asarray(cond, dtype=np.float64)
    cond_t = Tensor(cond)
    inputs = [ad.concat([x, cond_t], axis=1) for x in frames]
    return gru_forward(gru, inputs)


# ---------------------------------------------------------------------------
# generator assembly


@dataclass
class GanModels:
    config_map: MlpParams  # (eps_m ++ cond) -> z_0
    hnn: HnnModel  # latent Hamiltonian, conditioned
    decoder: MlpParams  # (z_t ++ eps_c) -> padded frame
    disc: GruParams

    def generator_parameters(self) -> dict[str, Tensor]:
        return {
            **self.config_map.parameters("f"),
            **self.hnn.parameters("hnn"),
            **self.decoder.parameters("dec"),
        }

    def discriminator_parameters(self) -> dict[str, Tensor]:
        return self.disc.parameters("disc")


def make_gan_models(config: GanConfig, rng: np.random.Generator) -> GanModels:
    cdim = condition_dim()
    config_map = init_mlp(
        [config.motion_dim + cdim, config.f_hidden, 2 * config.d_lat],
        ["relu", "identity"],
        rng,
    )
    hnn = make_hnn(
        config.d_lat,
        cdim,
        rng,
        hidden=config.hnn_hidden,
        q_coupling=config.init_q_coupling,
    )
    decoder = init_mlp(
        [2 * config.d_lat + config.d_cont, config.g_hidden, 2 * config.d_out],
        ["softplus", "identity"],
        rng,
    )
    disc = init_gru(2 * config.d_out + cdim, config.d_hidden, rng)
    return GanModels(config_map=config_map, hnn=hnn, decoder=decoder, disc=disc)


@dataclass
class LatentSample:
    """One generator pass up to (but not including) the frame decoder."""

    rollout: Rollout
    eps_c: Tensor  # (B, d_cont), constant across frames

    @property
    def frames(self) -> int:
        return self.rollout.frames


def sample_latent_trajectory(
    models: GanModels,
    cond: np.ndarray,
    rng: np.random.Generator,
    config: GanConfig,
) -> LatentSample:
    """Draw noise and roll the latent Hamiltonian over the frame horizon.

    Must run under an active tape. Raises NonFiniteError if the rollout
    leaves the finite range (diverging H gradients).
    """
    cond = np.asarray(cond, dtype=np.float64)
    batch = cond.shape[0]
    eps_m = rng.standard_normal((batch, config.motion_dim))
    eps_c = rng.standard_normal((batch, config.d_cont))
    z0 = forward_mlp(models.config_map, Tensor(np.concatenate([eps_m, cond], axis=1)))
    q0 = ad.narrow(z0, 1, 0, config.d_lat)
    p0 = ad.narrow(z0, 1, config.d_lat, config.d_lat)
    cond_t = Tensor(cond)
    h_fn = lambda q, p: hnn_energy(models.hnn, q, p, cond_t)
    n_steps = (config.horizon - 1) * config.substeps
    roll = symplectic_rollout(h_fn, q0, p0, n_steps, config.dt / config.substeps)
    if roll.truncated:
        raise NonFiniteError("latent rollout diverged")
    if config.substeps > 1:
        s = config.substeps
        roll = Rollout(
            qs=roll.qs[::s],
            ps=roll.ps[::s],
            pdots=roll.pdots[::s],
        )
    return LatentSample(rollout=roll, eps_c=Tensor(eps_c))


def expand_mask(mask: np.ndarray) -> np.ndarray:
    """Per-particle mask (B, d_out) -> per-coordinate mask (B, 2*d_out)."""
    return np.repeat(np.asarray(mask, dtype=np.float64), 2, axis=1)


def decode_frames(
    decoder: MlpParams, latent: LatentSample, mask: np.ndarray, d_out: int
) -> list[Tensor]:
    """Per-frame Cartesian coordinates; padding slots come out exactly zero."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape[1] != d_out:
        raise ValueError(f"mask width {mask.shape[1]} does not match d_out {d_out}")
    mask_t = Tensor(expand_mask(mask))
    frames = []
    for q, p in zip(latent.rollout.qs, latent.rollout.ps):
        z = ad.concat([q, p, latent.eps_c], axis=1)
        frames.append(forward_mlp(decoder, z) * mask_t)
    return frames


def generate_trajectory(
    models: GanModels,
    cond: np.ndarray,
    mask: np.ndarray,
    rng: np.random.Generator,
    config: GanConfig,
) -> tuple[list[Tensor], LatentSample]:
    """Full generator pass; returns masked frames and the latent sample."""
    latent = sample_latent_trajectory(models, cond, rng, config)
    frames = decode_frames(models.decoder, latent, mask, config.d_out)
    return frames, latent


# ---------------------------------------------------------------------------
# losses


def cyclic_loss(pdots: list[Tensor], lam: float) -> Tensor:
    """lam * mean over frames and batch of the L1 norm of the latent pdot.

    Zero exactly when every momentum derivative vanishes; the absolute
    value uses subgradient zero at kinks, so conserved momenta stop
    contributing outright rather than chattering.
    """
    if not pdots:
        raise ValueError("empty pdot sequence")
    stacked = ad.concat(pdots, axis=0)
    per_row = ad.tsum(ad.tabs(stacked), axis=1, keepdims=True)
    return ad.constant(float(lam)) * ad.mean(per_row)


def gan_losses(
    logits_real: Tensor, logits_fake: Tensor, cyclic: Tensor
) -> tuple[Tensor, Tensor]:
    """(d_loss, g_loss): saturating-safe BCE in logit form.

    D pushes real logits up and fake logits down; G uses the
    non-saturating objective plus the cyclic penalty.
    """
    d_loss = ad.mean(ad.softplus(-logits_real)) + ad.mean(ad.softplus(logits_fake))
    g_loss = ad.mean(ad.softplus(-logits_fake)) + cyclic
    return d_loss, g_loss


def _frames_to_tensors(frames: np.ndarray) -> list[Tensor]:
    """(B, T, w) array -> list of T constant (B, w) tensors."""
    return [Tensor(np.ascontiguousarray(frames[:, t, :])) for t in range(frames.shape[1])]


def _detach_frames(frames: list[Tensor]) -> list[Tensor]:
    return [Tensor(t.data) for t in frames]


def _mean_abs_pdot(pdots: list[Tensor]) -> np.ndarray:
    """Per-coordinate mean |pdot| over batch and frames, shape (d_lat,)."""
    return np.mean(np.abs(np.stack([t.data for t in pdots])), axis=(0, 1))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class GanTrainResult:
    models: GanModels
    history: list[dict] = field(default_factory=list)
    watchdog_tripped: bool = False
    aborted_at: int | None = None  # step index if non-finite gradients stopped the run


def _history_row(step, d_loss, g_loss, cyc, mean_pdot) -> dict:
    return {
        "step": step,
        "d_loss": float(d_loss),
        "g_loss": float(g_loss),
        "cyclic": float(cyc),
        "mean_pdot": np.asarray(mean_pdot, dtype=np.float64),
    }


def _write_gan_log(path, history, d_lat):
    cols = ",".join(f"mean_pdot_{i + 1}" for i in range(d_lat))
    with open(path, "w") as fh:
        fh.write(f"step,d_loss,g_loss,cyclic,{cols}\n")
        for row in history:
            tail = ",".join(f"{v:.17g}" for v in row["mean_pdot"])
            fh.write(
                f"{row['step']},{row['d_loss']:.17g},{row['g_loss']:.17g},"
                f"{row['cyclic']:.17g},{tail}\n"
            )


def save_gan_bundle(path, models: GanModels, config: GanConfig, extra: dict | None = None):
    doc = {"config": dataclasses.asdict(config), **(extra or {})}
    ad.save_checkpoint(
        path,
        {
            "config_map": models.config_map,
            "hnn": models.hnn.net,
            "decoder": models.decoder,
            "disc": models.disc,
        },
        extra=doc,
    )


def load_gan_bundle(path) -> tuple[GanModels, GanConfig, dict]:
    nets, extra = ad.load_checkpoint(path)
    config = GanConfig(**extra["config"])
    models = GanModels(
        config_map=nets["config_map"],
        hnn=HnnModel(net=nets["hnn"], d=config.d_lat, cond_dim=condition_dim()),
        decoder=nets["decoder"],
        disc=nets["disc"],
    )
    return models, config, extra


def train_spsgan(records, param_ranges: dict, config: GanConfig) -> GanTrainResult:
    """Alternating adversarial training, one D step then one G step per epoch.

    Deterministic for a fixed config and dataset: one master generator
    seeds model init, the batch stream, and every noise draw. Trips a
    warning (and keeps going) if the discriminator loss pins near zero,
    the usual mode-collapse signature.
    """
    rng = np.random.default_rng(config.seed)
    models = make_gan_models(config, rng)
    batches = minibatch_iterator(
        records, config.batch_size, int(rng.integers(2**63)), param_ranges
    )
    gen_params = models.generator_parameters()
    disc_params = models.discriminator_parameters()
    adam_g = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    adam_d = AdamState(
        lr=config.lr if config.d_lr is None else config.d_lr,
        beta1=config.beta1,
        beta2=config.beta2,
    )
    result = GanTrainResult(models=models)
    low_d_streak = 0

    for step in range(config.epochs):
        batch = next(batches)
        try:
            with Tape() as gen_tape:
                gen_tape.register(gen_params)
                fake, latent = generate_trajectory(
                    models, batch.cond, batch.mask, rng, config
                )
                cyc = cyclic_loss(latent.rollout.pdots, config.lambda_cyclic)

                # discriminator step on detached fakes under a nested tape
                with Tape() as disc_tape:
                    disc_tape.register(disc_params)
                    logits_real = discriminate(
                        models.disc, _frames_to_tensors(batch.frames), batch.cond
                    )
                    logits_fake_d = discriminate(
                        models.disc, _detach_frames(fake), batch.cond
                    )
                    d_loss, _ = gan_losses(logits_real, logits_fake_d, cyc)
                    if step % config.d_every == 0:
                        d_grads = param_grad(disc_tape, d_loss)
                if step % config.d_every == 0:
                    adam_step(adam_d, disc_params, d_grads)

                # generator step against the updated discriminator
                logits_fake = discriminate(models.disc, fake, batch.cond)
                _, g_loss = gan_losses(logits_real, logits_fake, cyc)
                g_grads = param_grad(gen_tape, g_loss)
            adam_step(adam_g, gen_params, g_grads)
        except NonFiniteError as err:
            warnings.warn(f"training aborted at step {step}: {err}")
            result.aborted_at = step
            break
        except KeyboardInterrupt:
            # leave a usable final checkpoint instead of dying mid-run
            warnings.warn(f"interrupted at step {step}; saving final state")
            result.aborted_at = step
            break

        result.history.append(
            _history_row(
                step,
                d_loss.data.item(),
                g_loss.data.item(),
                cyc.data.item(),
                _mean_abs_pdot(latent.rollout.pdots),
            )
        )
        if d_loss.data.item() < WATCHDOG_THRESHOLD:
            low_d_streak += 1
            if low_d_streak == WATCHDOG_PATIENCE:
                result.watchdog_tripped = True
                warnings.warn(
                    f"discriminator loss below {WATCHDOG_THRESHOLD} for "
                    f"{WATCHDOG_PATIENCE} consecutive steps at step {step}; "
                    "likely mode collapse"
                )
        else:
            low_d_streak = 0

        if (
            config.checkpoint_path
            and config.checkpoint_every
            and (step + 1) % config.checkpoint_every == 0
        ):
            save_gan_bundle(
                config.checkpoint_path,
                models,
                config,
                extra=_bundle_extra(rng, param_ranges, step + 1),
            )

    if config.log_path:
        _write_gan_log(config.log_path, result.history, config.d_lat)
    if config.checkpoint_path:
        save_gan_bundle(
            config.checkpoint_path,
            models,
            config,
            extra=_bundle_extra(rng, param_ranges, len(result.history)),
        )
    return result


def _bundle_extra(rng: np.random.Generator, param_ranges: dict, step: int) -> dict:
    return {
        "rng_state": rng.bit_generator.state,
        "param_ranges": {k: list(v) for k, v in param_ranges.items()},
        "step": step,
    }


# ---------------------------------------------------------------------------
# inference


@dataclass
class GeneratedBatch:
    frames: np.ndarray  # (B, T, 2*d_out)
    qs: np.ndarray  # (T, B, d_lat)
    ps: np.ndarray  # (T, B, d_lat)
    pdots: np.ndarray  # (T-1, B, d_lat)


def generate_batch(
    models: GanModels,
    cond: np.ndarray,
    mask: np.ndarray,
    config: GanConfig,
    seed: int,
    chunk: int = 64,
) -> GeneratedBatch:
    """Sample trajectories outside any training tape, in memory-bounded chunks."""
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    mask = np.atleast_2d(np.asarray(mask, dtype=np.float64))
    if mask.shape[0] == 1 and cond.shape[0] > 1:
        mask = np.repeat(mask, cond.shape[0], axis=0)
    rng = np.random.default_rng(seed)
    frames_out, qs_out, ps_out, pdots_out = [], [], [], []
    for lo in range(0, cond.shape[0], chunk):
        sl = slice(lo, lo + chunk)
        with Tape():
            fake, latent = generate_trajectory(models, cond[sl], mask[sl], rng, config)
        frames_out.append(np.stack([t.data for t in fake], axis=1))
        q, p = latent.rollout.stacked()
        qs_out.append(q)
        ps_out.append(p)
        pdots_out.append(np.stack([t.data for t in latent.rollout.pdots]))
    return GeneratedBatch(
        frames=np.concatenate(frames_out, axis=0),
        qs=np.concatenate(qs_out, axis=1),
        ps=np.concatenate(ps_out, axis=1),
        pdots=np.concatenate(pdots_out, axis=1),
    )
