"""Closed-loop agents wrapping trained models (and the scripted oracle) for rollouts."""

from __future__ import annotations

import numpy as np

from .baselines import BcModel, DenoiserModel, SelectionStrategy, bc_infer, choose, denoiser_sample
from .envs import Env, EnvState
from .policy import ChoicePolicyModel, NormalizationStats, propose


class ModelAgent:
    """Executes the first ``stride`` actions of each predicted chunk, then re-plans.

    ``stride`` defaults to the full chunk horizon; ``stride=1`` re-plans at
    every control step and executes only the first action.
    """

    def __init__(self, model, strategy: SelectionStrategy | str = "score", stride: int | None = None):
        stride = model.config.horizon if stride is None else int(stride)
        if not 1 <= stride <= model.config.horizon:
            raise ValueError(f"stride must be in [1, {model.config.horizon}]")
        self.model = model
        self.strategy = SelectionStrategy.parse(strategy) if isinstance(strategy, str) else strategy
        self.stride = stride
        self.norm: NormalizationStats = model.norm or NormalizationStats.identity(
            model.config.obs_dim, model.config.action_dim)
        self._queue: list[np.ndarray] = []
        self._head = -1

    def reset(self, env: Env, state: EnvState, rng) -> None:
        if env.obs_dim != self.model.config.obs_dim or env.action_dim != self.model.config.action_dim:
            raise ValueError(
                f"model dims (obs {self.model.config.obs_dim}, act {self.model.config.action_dim}) "
                f"do not match task {env.name} (obs {env.obs_dim}, act {env.action_dim})")
        self._queue = []

    def predict(self, obs: np.ndarray, rng) -> tuple[np.ndarray, int]:
        """Normalised obs -> (normalised chunk, head index)."""
        m = self.model
        if isinstance(m, ChoicePolicyModel):
            return choose(propose(m, obs), self.strategy, rng)
        if isinstance(m, BcModel):
            return bc_infer(m, obs), -1
        if isinstance(m, DenoiserModel):
            return denoiser_sample(m, obs, rng), -1
        raise TypeError(f"unsupported model type {type(m).__name__}")

    def act(self, env: Env, state: EnvState, rng) -> tuple[np.ndarray, int]:
        if not self._queue:
            obs = self.norm.normalize_obs(env.observe(state))
            chunk, self._head = self.predict(obs, rng)
            chunk = self.norm.denormalize_chunk(chunk)
            self._queue = list(chunk[: self.stride])
        return self._queue.pop(0), self._head


class ScriptedAgent:
    """The demonstrator run closed-loop, noise-free, with a mode drawn per episode."""

    def __init__(self, mode: int | None = None):
        self.fixed_mode = mode
        self.mode = mode or 0

    def reset(self, env: Env, state: EnvState, rng) -> None:
        self.mode = self.fixed_mode if self.fixed_mode is not None else int(rng.integers(env.spec.modes))

    def act(self, env: Env, state: EnvState, rng) -> tuple[np.ndarray, int]:
        return env.expert_action(state, self.mode, None), -1


class ZeroAgent:
    def act(self, env: Env, state: EnvState, rng) -> tuple[np.ndarray, int]:
        return env.hold_action, -1
