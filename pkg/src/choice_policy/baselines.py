"""Comparison policies: behaviour cloning, proposal-selection ablations, and a
small DDPM-style iterative denoiser standing in for diffusion policies."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .numerics import (
    MlpParams,
    ShapeError,
    TrainingError,
    as_tensor,
    init_mlp,
    make_rng,
    mlp_backward,
    mlp_forward,
    mlp_trace,
)
from .policy import (
    FitConfig,
    FitLog,
    NormalizationStats,
    PolicyConfig,
    ProposalSet,
    _check_batch,
    _check_obs,
    encoder_dims,
    reshape_proposals,
    run_training,
    select_winner,
)

# ---------------------------------------------------------------------------
# behaviour cloning


@dataclass
class BcModel:
    config: PolicyConfig  # n_proposals is ignored; the head emits one chunk
    encoder: MlpParams
    action_head: MlpParams
    norm: NormalizationStats | None = None

    kind = "bc"

    def __post_init__(self):
        c = self.config
        if self.encoder.in_dim != c.obs_dim or self.action_head.out_dim != c.chunk_size:
            raise ShapeError("BC network dims do not match config")

    def parameters(self) -> dict[str, np.ndarray]:
        # same key for the head as the Choice model so logs line up
        return {**self.encoder.arrays("encoder."), **self.action_head.arrays("proposal_head.")}

    def mlps(self) -> dict[str, MlpParams]:
        return {"encoder": self.encoder, "action_head": self.action_head}


def init_bc_model(config: PolicyConfig, seed: int) -> BcModel:
    c = config
    return BcModel(
        c,
        init_mlp(encoder_dims(c), make_rng(seed, "encoder")),
        init_mlp([c.feature_dim, c.head_hidden_dim, c.chunk_size], make_rng(seed, "proposal_head")),
    )


def bc_loss(model: BcModel, obs, gt, with_grads: bool = False):
    """Chunk MSE and (optionally) its gradients: ``(loss, grads | None)``."""
    c = model.config
    obs, gt = _check_batch(c, obs, gt)
    n, t, a = obs.shape[0], c.horizon, c.action_dim
    enc_trace = mlp_trace(model.encoder, obs)
    feat = enc_trace[-1]
    head_trace = mlp_trace(model.action_head, feat)
    pred = reshape_proposals(head_trace[-1], 1, t, a)
    diff = pred - gt[:, None]
    losses = (diff**2).mean(axis=(2, 3))
    if not np.all(np.isfinite(losses)):
        raise TrainingError("non-finite BC loss")
    loss = float(losses[:, 0].mean())
    if not with_grads:
        return loss, None
    d_pred = 2.0 * diff[:, 0] / (n * t * a)
    g_head, d_feat = mlp_backward(model.action_head, feat, d_pred.reshape(n, -1), head_trace)
    g_enc, _ = mlp_backward(model.encoder, obs, d_feat, enc_trace)
    return loss, {**g_enc.arrays("encoder."), **g_head.arrays("proposal_head.")}


def bc_fit(model: BcModel, obs, gt, cfg: FitConfig | None = None) -> FitLog:
    cfg = cfg or FitConfig()
    obs, gt = _check_batch(model.config, obs, gt)

    def loss_fn(xb, yb):
        loss, grads = bc_loss(model, xb, yb, with_grads=True)
        return loss, loss, 0.0, grads

    return run_training(model.parameters(), loss_fn, obs, gt, cfg)


def bc_infer(model: BcModel, obs) -> np.ndarray:
    c = model.config
    obs = _check_obs(c, obs)
    if obs.ndim != 1:
        raise ShapeError("bc_infer takes a single observation")
    flat = mlp_forward(model.action_head, mlp_forward(model.encoder, obs))
    return flat.reshape(c.horizon, c.action_dim)


# ---------------------------------------------------------------------------
# selection strategies


@dataclass(frozen=True)
class SelectionStrategy:
    kind: str = "score"  # score | random | mean | single
    index: int | None = None

    KINDS = ("score", "random", "mean", "single")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown selection strategy {self.kind!r}")
        if self.kind == "single" and (self.index is None or self.index < 0):
            raise ValueError("single strategy needs a non-negative index")

    @classmethod
    def parse(cls, text: str) -> "SelectionStrategy":
        """``score``, ``random``, ``mean`` or ``single:<k>``."""
        if text.startswith("single"):
            _, _, idx = text.partition(":")
            if not idx.strip().isdigit():
                raise ValueError(f"bad single strategy {text!r}; expected single:<k>")
            return cls("single", int(idx))
        return cls(text)

    def __str__(self) -> str:
        return f"single:{self.index}" if self.kind == "single" else self.kind


def choose(proposals: ProposalSet, strategy: SelectionStrategy, rng: np.random.Generator | None = None):
    """Pick a chunk; returns ``(chunk, head_index)`` with index -1 for ``mean``."""
    k = proposals.k
    if strategy.kind == "score":
        i = select_winner(proposals.scores)
        return proposals.proposals[i], i
    if strategy.kind == "random":
        if rng is None:
            raise ValueError("random selection needs an rng")
        i = int(rng.integers(k))
        return proposals.proposals[i], i
    if strategy.kind == "mean":
        return proposals.proposals.mean(axis=0), -1
    if strategy.index >= k:
        raise ValueError(f"single head index {strategy.index} out of range for K={k}")
    return proposals.proposals[strategy.index], strategy.index


def select_with_strategy(proposals: ProposalSet, strategy: SelectionStrategy, rng=None) -> np.ndarray:
    return choose(proposals, strategy, rng)[0]


def ablation_strategies(k: int) -> list[SelectionStrategy]:
    return [SelectionStrategy("score"), SelectionStrategy("random"), SelectionStrategy("mean")] + [
        SelectionStrategy("single", i) for i in range(k)
    ]


# ---------------------------------------------------------------------------
# iterative denoiser


@dataclass(frozen=True)
class DenoiserConfig:
    obs_dim: int
    action_dim: int
    horizon: int = 8
    hidden_dim: int = 64
    feature_dim: int = 64
    head_hidden_dim: int = 64
    steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.2
    embed_dim: int = 16

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise ValueError("need 0 < beta_start <= beta_end < 1")

    @property
    def chunk_size(self) -> int:
        return self.horizon * self.action_dim

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    @classmethod
    def linear(cls, steps: int, beta_start: float, beta_end: float) -> "NoiseSchedule":
        if steps == 1:
            return cls(np.array([beta_end]))
        return cls(np.linspace(beta_start, beta_end, steps))

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def __len__(self) -> int:
        return len(self.betas)


def step_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer step(s) ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(1000.0) * np.arange(half) / max(half, 1))
    ang = t[:, None] * freqs[None]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if emb.shape[1] < dim:
        emb = np.pad(emb, ((0, 0), (0, dim - emb.shape[1])))
    return emb


def reverse_process(schedule: NoiseSchedule, eps_fn, shape, rng: np.random.Generator, x_init=None) -> np.ndarray:
    """Ancestral DDPM sampling.

    ``eps_fn(x, t)`` predicts the noise in ``x`` at step ``t``. No noise is
    added on the final step.
    """
    betas, alphas, abar = schedule.betas, schedule.alphas, schedule.alpha_bars
    x = rng.standard_normal(shape) if x_init is None else np.array(x_init, dtype=np.float64)
    for t in range(len(schedule) - 1, -1, -1):
        eps = eps_fn(x, t)
        x = (x - betas[t] / np.sqrt(1.0 - abar[t]) * eps) / np.sqrt(alphas[t])
        if t > 0:
            var = betas[t] * (1.0 - abar[t - 1]) / (1.0 - abar[t])
            x = x + np.sqrt(var) * rng.standard_normal(shape)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("denoiser produced a non-finite sample")
    return x


@dataclass
class DenoiserModel:
    config: DenoiserConfig
    encoder: MlpParams
    noise_net: MlpParams
    norm: NormalizationStats | None = None

    kind = "denoiser"

    def __post_init__(self):
        c = self.config
        if self.encoder.in_dim != c.obs_dim or self.encoder.out_dim != c.feature_dim:
            raise ShapeError("denoiser encoder dims do not match config")
        if self.noise_net.in_dim != c.feature_dim + c.chunk_size + c.embed_dim or self.noise_net.out_dim != c.chunk_size:
            raise ShapeError("noise net dims do not match config")

    @property
    def schedule(self) -> NoiseSchedule:
        c = self.config
        return NoiseSchedule.linear(c.steps, c.beta_start, c.beta_end)

    def parameters(self) -> dict[str, np.ndarray]:
        return {**self.encoder.arrays("encoder."), **self.noise_net.arrays("noise_net.")}

    def mlps(self) -> dict[str, MlpParams]:
        return {"encoder": self.encoder, "noise_net": self.noise_net}


def init_denoiser_model(config: DenoiserConfig, seed: int) -> DenoiserModel:
    c = config
    enc = [c.obs_dim, c.hidden_dim, c.hidden_dim, c.feature_dim]
    net = [c.feature_dim + c.chunk_size + c.embed_dim, c.head_hidden_dim, c.head_hidden_dim, c.chunk_size]
    return DenoiserModel(c, init_mlp(enc, make_rng(seed, "encoder")), init_mlp(net, make_rng(seed, "noise_net")))


def denoiser_loss(model: DenoiserModel, obs, gt, rng: np.random.Generator, with_grads: bool = False):
    """Epsilon-prediction loss at uniformly drawn steps: ``(loss, grads | None)``."""
    c = model.config
    obs = as_tensor(obs, 2, "obs")
    gt = as_tensor(gt, 3, "gt")
    if obs.shape[1] != c.obs_dim or gt.shape[1:] != (c.horizon, c.action_dim) or gt.shape[0] != obs.shape[0]:
        raise ShapeError(f"obs {obs.shape} / gt {gt.shape} incompatible with denoiser config")
    n = obs.shape[0]
    x0 = gt.reshape(n, -1)
    abar = model.schedule.alpha_bars
    steps = rng.integers(0, c.steps, size=n)
    eps = rng.standard_normal(x0.shape)
    xt = np.sqrt(abar[steps])[:, None] * x0 + np.sqrt(1.0 - abar[steps])[:, None] * eps

    enc_trace = mlp_trace(model.encoder, obs)
    feat = enc_trace[-1]
    inp = np.concatenate([feat, xt, step_embedding(steps, c.embed_dim)], axis=1)
    net_trace = mlp_trace(model.noise_net, inp)
    diff = net_trace[-1] - eps
    loss = float((diff**2).mean())
    if not np.isfinite(loss):
        raise TrainingError("non-finite denoiser loss")
    if not with_grads:
        return loss, None
    g_net, d_inp = mlp_backward(model.noise_net, inp, 2.0 * diff / diff.size, net_trace)
    g_enc, _ = mlp_backward(model.encoder, obs, d_inp[:, : c.feature_dim], enc_trace)
    return loss, {**g_enc.arrays("encoder."), **g_net.arrays("noise_net.")}


def denoiser_fit(model: DenoiserModel, obs, gt, cfg: FitConfig | None = None) -> FitLog:
    cfg = cfg or FitConfig()
    obs = as_tensor(obs, 2, "obs")
    gt = as_tensor(gt, 3, "gt")
    noise_rng = make_rng(cfg.seed, "diffusion_noise")

    def loss_fn(xb, yb):
        loss, grads = denoiser_loss(model, xb, yb, noise_rng, with_grads=True)
        return loss, loss, 0.0, grads

    return run_training(model.parameters(), loss_fn, obs, gt, cfg)


def denoiser_sample(model: DenoiserModel, obs, rng: np.random.Generator) -> np.ndarray:
    """One chunk from S sequential noise-net evaluations."""
    c = model.config
    obs = as_tensor(obs, 1, "obs")
    if obs.shape[0] != c.obs_dim:
        raise ShapeError(f"obs dim {obs.shape[0]} != {c.obs_dim}")
    feat = mlp_forward(model.encoder, obs)
    embeds = step_embedding(np.arange(c.steps), c.embed_dim)

    def eps_fn(x, t):
        return mlp_forward(model.noise_net, np.concatenate([feat, x, embeds[t]]))

    x = reverse_process(model.schedule, eps_fn, (c.chunk_size,), rng)
    return x.reshape(c.horizon, c.action_dim)
