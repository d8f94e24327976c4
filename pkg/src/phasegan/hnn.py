"""Learned Hamiltonians.

A single MLP maps (q, p, condition) to a scalar energy. Hamilton's
equations on that energy give a vector field whose input gradients come
from the autodiff tape, so vector field, rollouts, and training losses
are all differentiable with respect to the network parameters.

The symplectic rollout here is shared by the supervised baseline and
the GAN's latent motion model: a kick-drift-kick step on the joint
network, with each partial derivative evaluated at frozen values of the
other argument (the scheme stays explicit and time-reversible for
separable energies, and keeps drift bounded for the near-separable
ones that training produces).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, MlpParams, Tape, Tensor, forward_mlp, init_mlp
from .integrators import IntegratorConfig, rk45_integrate
from .systems import (
    PhaseState,
    SystemKind,
    SystemParams,
    analytic_vector_field,
    sample_initial_condition,
)

HIDDEN_DEFAULT = 100


@dataclass
class HnnModel:
    """Scalar energy network over (q, p, condition)."""

    net: MlpParams
    d: int
    cond_dim: int = 0

    def parameters(self, prefix: str = "hnn"):
        return self.net.parameters(prefix)


def make_hnn(
    d: int,
    cond_dim: int,
    rng: np.random.Generator,
    hidden: int = HIDDEN_DEFAULT,
    q_coupling: float = 1.0,
) -> HnnModel:
    # tanh keeps input gradients smooth; piecewise-linear activations make
    # dH/dz piecewise constant, which freezes the momenta dynamics
    net = init_mlp([2 * d + cond_dim, hidden, 1], ["tanh", "identity"], rng)
    # q_coupling < 1 shrinks the first-layer rows reading q, so the energy
    # starts nearly independent of position and every momentum begins close
    # to conserved; at exactly 0 the initial dynamics are pure drift
    if q_coupling != 1.0:
        net.weights[0].data[:d, :] *= q_coupling
    return HnnModel(net=net, d=d, cond_dim=cond_dim)


def hnn_energy(model: HnnModel, q: Tensor, p: Tensor, cond: Tensor | None = None) -> Tensor:
    """Energy per batch row, shape (B, 1)."""
    parts = [q, p]
    if model.cond_dim:
        if cond is None:
            raise ValueError("model is conditional; condition required")
        parts.append(cond)
    return forward_mlp(model.net, ad.concat(parts, axis=1))


def _energy_grads(h_fn, q: Tensor, p: Tensor):
    """(dH/dq, dH/dp) with graph so results stay differentiable."""
    q.requires_grad = True
    p.requires_grad = True
    h = ad.tsum(h_fn(q, p))
    return ad.grad(h, [q, p], create_graph=True)


def hnn_vector_field(model: HnnModel, q: np.ndarray, p: np.ndarray, cond: np.ndarray | None = None):
    """(dq/dt, dp/dt) as plain arrays; accepts (d,) or (B, d) inputs."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q2 = q.reshape(1, -1) if single else q
    p2 = np.asarray(p, dtype=np.float64).reshape(q2.shape)
    if q2.shape[1] != model.d:
        raise ValueError(f"state dim {q2.shape[1]} does not match model dim {model.d}")
    cond_t = None
    if model.cond_dim:
        cond_t = ad.Tensor(np.asarray(cond, dtype=np.float64).reshape(q2.shape[0], -1))
    with Tape():
        qt, pt = ad.variable(q2), ad.variable(p2)
        gq, gp = _energy_grads(lambda a, b: hnn_energy(model, a, b, cond_t), qt, pt)
    dq, dp = gp.data, -gq.data
    if single:
        return dq[0], dp[0]
    return dq, dp


def hnn_loss(
    model: HnnModel,
    q: Tensor,
    p: Tensor,
    dq_target: Tensor,
    dp_target: Tensor,
    cond: Tensor | None = None,
) -> Tensor:
    """Mean per-sample L2 norm of both Hamilton's-equations residuals."""
    gq, gp = _energy_grads(lambda a, b: hnn_energy(model, a, b, cond), q, p)
    rq = gp - dq_target
    rp = gq + dp_target
    nq = ad.tsqrt(ad.tsum(rq * rq, axis=1, keepdims=True))
    np_ = ad.tsqrt(ad.tsum(rp * rp, axis=1, keepdims=True))
    return ad.mean(nq) + ad.mean(np_)


# ---------------------------------------------------------------------------
# symplectic rollout of a joint learned Hamiltonian


@dataclass
class Rollout:
    """Latent trajectory plus the per-step momentum derivatives.

    qs/ps have length ``frames``; pdots has length ``frames - 1`` and holds
    -dH/dq evaluated at each pre-step state (the cyclic-loss ingredient).
    """

    qs: list[Tensor]
    ps: list[Tensor]
    pdots: list[Tensor]
    truncated: bool = False

    @property
    def frames(self) -> int:
        return len(self.qs)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """(frames, B, d) numpy views of positions and momenta."""
        return (
            np.stack([t.data for t in self.qs]),
            np.stack([t.data for t in self.ps]),
        )


# fixed-point solve settings for the implicit substeps
_FP_TOL = 1e-12
_FP_MAX_ITERS = 50


def symplectic_rollout(h_fn, q0: Tensor, p0: Tensor, n_steps: int, dt: float) -> Rollout:
    """Generalized leapfrog rollout of ``h_fn(q, p) -> (B,1)``; differentiable.

    Must run under an active tape. The scheme composes two adjoint
    symplectic-Euler half steps, so it is symplectic for a joint
    (non-separable) Hamiltonian and collapses to plain kick-drift-kick
    when H separates:

        p_half = p  - dt/2 * dH/dq(q,  p_half)            (implicit kick)
        q_new  = q  + dt/2 * [dH/dp(q, p_half) + dH/dp(q_new, p_half)]
        p_new  = p_half - dt/2 * dH/dq(q_new, p_half)     (explicit kick)

    The implicit relations are solved by fixed-point iteration, unrolled
    on the tape so gradients flow through the solves.
    """
    qs, ps, pdots = [q0], [p0], []
    q, p = q0, p0
    half = 0.5 * dt
    for _ in range(n_steps):
        # iterate p_half; the first pass evaluates dH/dq at (q, p), which is
        # exactly the -pdot the cyclic loss needs at this frame
        x = p
        first_gq = None
        for _ in range(_FP_MAX_ITERS):
            gq, _ = _energy_grads(h_fn, q, x)
            if first_gq is None:
                first_gq = gq
            x_next = p - gq * half
            delta = np.max(np.abs(x_next.data - x.data)) if x.data.size else 0.0
            x = x_next
            if delta < _FP_TOL:
                break
        p_half = x
        pdots.append(-first_gq)
        _, gp_old = _energy_grads(h_fn, q, p_half)
        y = q
        for _ in range(_FP_MAX_ITERS):
            _, gp_new = _energy_grads(h_fn, y, p_half)
            y_next = q + (gp_old + gp_new) * half
            delta = np.max(np.abs(y_next.data - y.data)) if y.data.size else 0.0
            y = y_next
            if delta < _FP_TOL:
                break
        q_new = y
        gq2, _ = _energy_grads(h_fn, q_new, p_half)
        p_new = p_half - gq2 * half
        if not (np.all(np.isfinite(q_new.data)) and np.all(np.isfinite(p_new.data))):
            return Rollout(qs, ps, pdots[:-1], truncated=True)
        q, p = q_new, p_new
        qs.append(q)
        ps.append(p)
    return Rollout(qs, ps, pdots)


def model_rollout(
    model: HnnModel,
    state0: PhaseState,
    cond: np.ndarray | None,
    config: IntegratorConfig,
) -> list[PhaseState]:
    """Inference rollout of one phase state on the frame grid."""
    cond_t = None
    if model.cond_dim:
        cond_t = ad.Tensor(np.asarray(cond, dtype=np.float64).reshape(1, -1))
    with Tape():
        q0 = ad.variable(state0.q.reshape(1, -1))
        p0 = ad.variable(state0.p.reshape(1, -1))
        h_fn = lambda a, b: hnn_energy(model, a, b, cond_t)
        steps_per_frame = config.substeps
        states = [state0]
        q, p = q0, p0
        for _ in range(config.frames - 1):
            for _ in range(steps_per_frame):
                roll = symplectic_rollout(h_fn, q, p, 1, config.dt / steps_per_frame)
                q, p = roll.qs[-1], roll.ps[-1]
                if roll.truncated:
                    return states
            states.append(PhaseState(q.data[0].copy(), p.data[0].copy()))
    return states


# ---------------------------------------------------------------------------
# supervised training on analytic derivative targets


@dataclass
class TrainingStates:
    q: np.ndarray
    p: np.ndarray
    dq: np.ndarray
    dp: np.ndarray


def make_training_states(
    kind: SystemKind,
    params: SystemParams,
    n_traj: int,
    seed: int,
    config: IntegratorConfig | None = None,
) -> TrainingStates:
    """States along RK45 trajectories with analytic derivative targets."""
    config = config or IntegratorConfig()
    rng = np.random.default_rng(seed)
    field_fn = lambda q, p: analytic_vector_field(kind, params, q, p)
    qs, ps = [], []
    for _ in range(n_traj):
        state0 = sample_initial_condition(kind, params, rng)
        for s in rk45_integrate(field_fn, state0, config):
            qs.append(s.q)
            ps.append(s.p)
    q = np.stack(qs)
    p = np.stack(ps)
    dq, dp = analytic_vector_field(kind, params, q, p)
    return TrainingStates(q=q, p=p, dq=dq, dp=dp)


@dataclass
class HnnTrainConfig:
    steps: int = 2000
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    snapshot_every: int = 200
    log_path: str | None = None


def train_hnn(
    model: HnnModel, data: TrainingStates, config: HnnTrainConfig
) -> list[tuple[int, float]]:
    """Adam training on Hamilton's-equations residuals; model updated in place.

    On a NaN loss or gradient the run aborts and the parameters roll back
    to the last snapshot. Returns the (step, loss) history.
    """
    history: list[tuple[int, float]] = []
    if config.steps <= 0:
        _write_log(config.log_path, history)
        return history
    rng = np.random.default_rng(config.seed)
    n = data.q.shape[0]
    batch = min(config.batch_size, n)
    adam = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    params = model.parameters()
    snapshot = {k: v.data.copy() for k, v in params.items()}
    for step in range(config.steps):
        idx = rng.choice(n, size=batch, replace=False)
        try:
            with Tape() as tape:
                tape.register(params)
                loss = hnn_loss(
                    model,
                    Tensor(data.q[idx]),
                    Tensor(data.p[idx]),
                    Tensor(data.dq[idx]),
                    Tensor(data.dp[idx]),
                )
                if not np.isfinite(loss.data):
                    raise ad.NonFiniteError("loss is not finite")
                grads = ad.param_grad(tape, loss)
            ad.adam_step(adam, params, grads)
        except ad.NonFiniteError:
            for k, v in params.items():
                v.data = snapshot[k].copy()
            break
        history.append((step, float(loss.data)))
        if (step + 1) % config.snapshot_every == 0:
            snapshot = {k: v.data.copy() for k, v in params.items()}
    _write_log(config.log_path, history)
    return history


def _write_log(path, history):
    if path is None:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        writer.writerows(history)


def rollout_mse(
    model: HnnModel,
    kind: SystemKind,
    params: SystemParams,
    n_traj: int,
    seed: int,
    config: IntegratorConfig | None = None,
) -> float:
    """Mean squared phase-space error of model rollouts vs RK45 ground truth."""
    config = config or IntegratorConfig()
    rng = np.random.default_rng(seed)
    field_fn = lambda q, p: analytic_vector_field(kind, params, q, p)
    errs = []
    for _ in range(n_traj):
        state0 = sample_initial_condition(kind, params, rng)
        truth = rk45_integrate(field_fn, state0, config)
        pred = model_rollout(model, state0, None, config)
        frames = min(len(truth), len(pred))
        t = np.stack([s.flat() for s in truth[:frames]])
        m = np.stack([s.flat() for s in pred[:frames]])
        errs.append(np.mean((t - m) ** 2))
    return float(np.mean(errs))
