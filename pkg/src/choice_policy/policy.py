"""Choice Policy: K action-chunk proposals plus a learned score per proposal.

Training is winner-takes-all: only the proposal closest to the demonstrated
chunk gets an action gradient, while the score head regresses every
proposal's MSE (with the MSE treated as a constant target). At inference the
proposal with the lowest predicted MSE is executed.

All functions here work in normalised observation/action space; the
:class:`NormalizationStats` attached to a model converts to and from raw
units.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import (
    AdamState,
    MlpParams,
    ShapeError,
    TrainingError,
    adam_step,
    as_tensor,
    init_mlp,
    make_rng,
    mlp_backward,
    mlp_forward,
    mlp_trace,
)


@dataclass(frozen=True)
class PolicyConfig:
    obs_dim: int
    action_dim: int
    horizon: int = 8
    n_proposals: int = 5
    hidden_dim: int = 64
    feature_dim: int = 64
    head_hidden_dim: int = 64

    def __post_init__(self):
        for name in ("obs_dim", "action_dim", "horizon", "n_proposals", "hidden_dim", "feature_dim", "head_hidden_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def chunk_size(self) -> int:
        return self.horizon * self.action_dim

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class NormalizationStats:
    """Per-dimension z-score statistics (std floored at 1e-6)."""

    obs_mean: np.ndarray
    obs_std: np.ndarray
    act_mean: np.ndarray
    act_std: np.ndarray

    STD_FLOOR = 1e-6

    @classmethod
    def identity(cls, obs_dim: int, action_dim: int) -> "NormalizationStats":
        return cls(np.zeros(obs_dim), np.ones(obs_dim), np.zeros(action_dim), np.ones(action_dim))

    @classmethod
    def fit(cls, obs: np.ndarray, chunks: np.ndarray) -> "NormalizationStats":
        obs = as_tensor(obs, 2, "obs")
        chunks = as_tensor(chunks, 3, "chunks")
        acts = chunks.reshape(-1, chunks.shape[-1])
        return cls(
            obs.mean(axis=0),
            np.maximum(obs.std(axis=0), cls.STD_FLOOR),
            acts.mean(axis=0),
            np.maximum(acts.std(axis=0), cls.STD_FLOOR),
        )

    def normalize_obs(self, obs):
        return (np.asarray(obs, dtype=np.float64) - self.obs_mean) / self.obs_std

    def normalize_chunk(self, chunk):
        return (np.asarray(chunk, dtype=np.float64) - self.act_mean) / self.act_std

    def denormalize_chunk(self, chunk):
        return np.asarray(chunk, dtype=np.float64) * self.act_std + self.act_mean

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("obs_mean", "obs_std", "act_mean", "act_std")}

    @classmethod
    def from_dict(cls, d) -> "NormalizationStats":
        return cls(*(np.array(d[k], dtype=np.float64) for k in ("obs_mean", "obs_std", "act_mean", "act_std")))


@dataclass
class ProposalSet:
    proposals: np.ndarray  # (K, T, A)
    scores: np.ndarray  # (K,)

    def __post_init__(self):
        if self.proposals.ndim != 3 or self.scores.shape != (self.proposals.shape[0],):
            raise ShapeError(f"proposals {self.proposals.shape} / scores {self.scores.shape} inconsistent")
        if self.proposals.shape[0] < 1:
            raise ShapeError("need at least one proposal")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    @property
    def k(self) -> int:
        return self.proposals.shape[0]


@dataclass
class ChoicePolicyModel:
    config: PolicyConfig
    encoder: MlpParams
    proposal_head: MlpParams
    score_head: MlpParams
    norm: NormalizationStats | None = None

    kind = "choice"

    def __post_init__(self):
        c = self.config
        if self.encoder.in_dim != c.obs_dim or self.encoder.out_dim != c.feature_dim:
            raise ShapeError("encoder dims do not match config")
        if self.proposal_head.in_dim != c.feature_dim or self.proposal_head.out_dim != c.n_proposals * c.chunk_size:
            raise ShapeError("proposal head dims do not match config")
        if self.score_head.in_dim != c.feature_dim or self.score_head.out_dim != c.n_proposals:
            raise ShapeError("score head dims do not match config")

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            **self.encoder.arrays("encoder."),
            **self.proposal_head.arrays("proposal_head."),
            **self.score_head.arrays("score_head."),
        }

    def mlps(self) -> dict[str, MlpParams]:
        return {"encoder": self.encoder, "proposal_head": self.proposal_head, "score_head": self.score_head}


def encoder_dims(config: PolicyConfig) -> list[int]:
    return [config.obs_dim, config.hidden_dim, config.hidden_dim, config.feature_dim]


def init_choice_model(config: PolicyConfig, seed: int) -> ChoicePolicyModel:
    """Fresh model; each network draws from its own named rng stream.

    Separate streams mean a K=1 model shares its encoder and action-head
    initialisation with a behaviour-cloning model built from the same seed.
    """
    c = config
    return ChoicePolicyModel(
        c,
        init_mlp(encoder_dims(c), make_rng(seed, "encoder")),
        init_mlp([c.feature_dim, c.head_hidden_dim, c.n_proposals * c.chunk_size], make_rng(seed, "proposal_head")),
        init_mlp([c.feature_dim, c.head_hidden_dim, c.n_proposals], make_rng(seed, "score_head")),
    )


def reshape_proposals(flat: np.ndarray, k: int, horizon: int, action_dim: int) -> np.ndarray:
    """(..., K*T*A) -> (..., K, T, A); element (k, t, a) is flat[((k*T)+t)*A + a]."""
    if flat.shape[-1] != k * horizon * action_dim:
        raise ShapeError(f"head output size {flat.shape[-1]} != {k}*{horizon}*{action_dim}")
    return flat.reshape(flat.shape[:-1] + (k, horizon, action_dim))


def _check_obs(config: PolicyConfig, obs) -> np.ndarray:
    obs = as_tensor(obs, name="obs")
    if obs.ndim not in (1, 2) or obs.shape[-1] != config.obs_dim:
        raise ShapeError(f"obs shape {obs.shape} incompatible with obs_dim {config.obs_dim}")
    if not np.all(np.isfinite(obs)):
        raise ValueError("obs must be finite")
    return obs


def propose(model: ChoicePolicyModel, obs) -> ProposalSet:
    """K proposals and scores for one (normalised) observation; one forward pass."""
    c = model.config
    obs = _check_obs(c, obs)
    if obs.ndim != 1:
        raise ShapeError("propose takes a single observation; use propose_batch")
    feat = mlp_forward(model.encoder, obs)
    flat = mlp_forward(model.proposal_head, feat)
    scores = mlp_forward(model.score_head, feat)
    return ProposalSet(reshape_proposals(flat, c.n_proposals, c.horizon, c.action_dim), scores)


def propose_batch(model: ChoicePolicyModel, obs) -> tuple[np.ndarray, np.ndarray]:
    c = model.config
    obs = as_tensor(_check_obs(c, obs), 2, "obs")
    feat = mlp_forward(model.encoder, obs)
    flat = mlp_forward(model.proposal_head, feat)
    return reshape_proposals(flat, c.n_proposals, c.horizon, c.action_dim), mlp_forward(model.score_head, feat)


def per_proposal_loss(proposals, gt) -> np.ndarray:
    """Mean squared error of every proposal against ``gt`` over all T*|A| entries."""
    if isinstance(proposals, ProposalSet):
        proposals = proposals.proposals
    proposals = as_tensor(proposals, 3, "proposals")
    gt = as_tensor(gt, 2, "gt")
    if proposals.shape[1:] != gt.shape:
        raise ShapeError(f"proposal chunk shape {proposals.shape[1:]} != gt shape {gt.shape}")
    return ((proposals - gt[None]) ** 2).mean(axis=(1, 2))


def select_winner(losses) -> int:
    """Index of the smallest loss; ties go to the lowest index."""
    losses = as_tensor(losses, 1, "losses")
    if losses.size == 0:
        raise ValueError("cannot select from an empty loss vector")
    if not np.all(np.isfinite(losses)):
        raise ValueError("losses must be finite")
    return int(np.argmin(losses))


def score_loss_value(scores, losses) -> float:
    scores = as_tensor(scores, name="scores")
    losses = as_tensor(losses, name="losses")
    if scores.shape != losses.shape:
        raise ShapeError(f"scores {scores.shape} vs losses {losses.shape}")
    return float(((scores - losses) ** 2).mean())


def infer(model: ChoicePolicyModel, obs) -> np.ndarray:
    ps = propose(model, obs)
    return ps.proposals[select_winner(ps.scores)]


def infer_with_index(model: ChoicePolicyModel, obs) -> tuple[np.ndarray, int, ProposalSet]:
    ps = propose(model, obs)
    k = select_winner(ps.scores)
    return ps.proposals[k], k, ps


# ---------------------------------------------------------------------------
# training


@dataclass
class LossResult:
    total: float
    action_loss: float
    score_loss: float
    winners: np.ndarray  # (N,) winning proposal per sample
    per_proposal: np.ndarray  # (N, K)
    grads: dict[str, np.ndarray] | None = None


def _check_batch(config: PolicyConfig, obs, gt) -> tuple[np.ndarray, np.ndarray]:
    obs = _check_obs(config, obs)
    gt = as_tensor(gt, name="gt")
    if obs.ndim == 1:
        obs = obs[None]
        gt = gt[None]
    if gt.shape != (obs.shape[0], config.horizon, config.action_dim):
        raise ShapeError(f"gt shape {gt.shape} != ({obs.shape[0]}, {config.horizon}, {config.action_dim})")
    return obs, gt


def training_loss(
    model: ChoicePolicyModel,
    obs,
    gt,
    with_grads: bool = False,
    score_grad_to_encoder: bool = False,
) -> LossResult:
    """Winner-takes-all action loss plus score regression, batch-averaged.

    Gradients reach only the winning proposal's slice of the proposal head.
    The per-proposal losses enter the score term as constants, so the score
    term never pushes on the proposals. By default the score term also stops
    at the shared encoder; ``score_grad_to_encoder=True`` lets it through.
    """
    c = model.config
    obs, gt = _check_batch(c, obs, gt)
    n = obs.shape[0]
    k, t, a = c.n_proposals, c.horizon, c.action_dim

    enc_trace = mlp_trace(model.encoder, obs)
    feat = enc_trace[-1]
    prop_trace = mlp_trace(model.proposal_head, feat)
    score_trace = mlp_trace(model.score_head, feat)
    props = reshape_proposals(prop_trace[-1], k, t, a)
    scores = score_trace[-1]

    diff = props - gt[:, None]
    losses = (diff**2).mean(axis=(2, 3))
    if not (np.all(np.isfinite(losses)) and np.all(np.isfinite(scores))):
        raise TrainingError("non-finite proposal loss or score")
    rows = np.arange(n)
    winners = np.argmin(losses, axis=1)
    action_loss = float(losses[rows, winners].mean())
    score_loss = float(((scores - losses) ** 2).mean())
    result = LossResult(action_loss + score_loss, action_loss, score_loss, winners, losses)
    if not with_grads:
        return result

    d_props = np.zeros_like(props)
    d_props[rows, winners] = 2.0 * diff[rows, winners] / (n * t * a)
    d_scores = 2.0 * (scores - losses) / (n * k)

    g_prop, d_feat = mlp_backward(model.proposal_head, feat, d_props.reshape(n, -1), prop_trace)
    g_score, d_feat_score = mlp_backward(model.score_head, feat, d_scores, score_trace)
    if score_grad_to_encoder:
        d_feat = d_feat + d_feat_score
    g_enc, _ = mlp_backward(model.encoder, obs, d_feat, enc_trace)
    result.grads = {
        **g_enc.arrays("encoder."),
        **g_prop.arrays("proposal_head."),
        **g_score.arrays("score_head."),
    }
    return result


@dataclass
class FitConfig:
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    lr: float = 1e-3
    score_grad_to_encoder: bool = False
    grad_clip: float | None = None  # global L2 norm


@dataclass
class FitLog:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_action_loss: list[float] = field(default_factory=list)
    epoch_score_loss: list[float] = field(default_factory=list)
    step_action_loss: list[float] = field(default_factory=list)


def run_training(params: dict[str, np.ndarray], loss_fn, obs: np.ndarray, gt: np.ndarray, cfg: FitConfig) -> FitLog:
    """Mini-batch Adam loop shared by every model kind.

    ``loss_fn(obs_batch, gt_batch)`` returns ``(total, action_loss, score_loss,
    grads)``; ``params`` are updated in place. Batches follow a per-epoch
    permutation drawn from the ``(seed, "shuffle")`` stream.
    """
    n = obs.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    if cfg.epochs < 1 or cfg.batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")
    rng = make_rng(cfg.seed, "shuffle")
    opt = AdamState(lr=cfg.lr)
    log = FitLog()
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        tot = act = sc = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            total, action_loss, score_loss, grads = loss_fn(obs[idx], gt[idx])
            if not np.isfinite(total):
                raise TrainingError("non-finite training loss")
            if cfg.grad_clip is not None:
                norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
                if norm > cfg.grad_clip:
                    grads = {k: g * (cfg.grad_clip / norm) for k, g in grads.items()}
            adam_step(opt, params, grads)
            frac = len(idx) / n
            tot += total * frac
            act += action_loss * frac
            sc += score_loss * frac
            log.step_action_loss.append(action_loss)
        log.epoch_loss.append(tot)
        log.epoch_action_loss.append(act)
        log.epoch_score_loss.append(sc)
    return log


def fit(model: ChoicePolicyModel, obs, gt, cfg: FitConfig | None = None) -> FitLog:
    """Train ``model`` in place on normalised (obs, chunk) pairs."""
    cfg = cfg or FitConfig()
    obs, gt = _check_batch(model.config, obs, gt)

    def loss_fn(xb, yb):
        r = training_loss(model, xb, yb, with_grads=True, score_grad_to_encoder=cfg.score_grad_to_encoder)
        return r.total, r.action_loss, r.score_loss, r.grads

    return run_training(model.parameters(), loss_fn, obs, gt, cfg)
