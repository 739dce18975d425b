"""Dense MLP math with exact analytic gradients, Adam, and seeded rng streams.

Tensors are plain ``float64`` numpy arrays. Every public function checks
shapes explicitly and raises :class:`ShapeError` rather than broadcasting.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np


class ShapeError(ValueError):
    """Raised when an input's shape is inconsistent with the operation."""


class TrainingError(RuntimeError):
    """Raised when a non-finite value shows up during optimisation."""


def as_tensor(x, ndim: int | None = None, name: str = "input") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# random streams


def _stream_key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def make_rng(seed: int, *stream: int | str) -> np.random.Generator:
    """Independent generator for ``(seed, *stream)``.

    Different stream keys give statistically independent generators, so a
    run can hand out one stream per component or per episode without the
    draws of one consumer shifting another's.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_stream_key(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


def split_rngs(seed: int, n: int, *stream: int | str) -> list[np.random.Generator]:
    return [make_rng(seed, *stream, i) for i in range(n)]


# ---------------------------------------------------------------------------
# MLP


@dataclass
class MlpParams:
    """Fully connected ReLU network; the last layer is affine only.

    ``weights[i]`` has shape ``(layer_dims[i + 1], layer_dims[i])``.
    """

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2 or any(d < 1 for d in self.layer_dims):
            raise ShapeError(f"bad layer_dims {self.layer_dims}")
        n = len(self.layer_dims) - 1
        if len(self.weights) != n or len(self.biases) != n:
            raise ShapeError("weights/biases count does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape != expect or b.shape != (expect[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape}, expected {expect}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def num_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]))

    def arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}w{i}"] = w
            out[f"{prefix}b{i}"] = b
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(list(self.layer_dims), [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @classmethod
    def zeros(cls, layer_dims: list[int]) -> "MlpParams":
        dims = list(layer_dims)
        return cls(
            dims,
            [np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])],
            [np.zeros(o) for o in dims[1:]],
        )

    def to_dict(self) -> dict:
        return {
            "layer_dims": self.layer_dims,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MlpParams":
        return cls(
            list(d["layer_dims"]),
            [np.array(w, dtype=np.float64).reshape(o, i) for w, i, o in
             zip(d["weights"], d["layer_dims"][:-1], d["layer_dims"][1:])],
            [np.array(b, dtype=np.float64).reshape(-1) for b in d["biases"]],
        )


def init_mlp(layer_dims: Iterable[int], rng: np.random.Generator) -> MlpParams:
    """Uniform init in +-sqrt(1/fan_in) for weights and biases."""
    dims = [int(d) for d in layer_dims]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(dims, weights, biases)


def _check_input(params: MlpParams, x: np.ndarray, name: str = "input") -> np.ndarray:
    x = as_tensor(x, name=name)
    if x.ndim not in (1, 2):
        raise ShapeError(f"{name}: expected 1-d or 2-d array, got shape {x.shape}")
    if x.shape[-1] != params.in_dim:
        raise ShapeError(f"{name}: last dim {x.shape[-1]} != network input dim {params.in_dim}")
    return x


def mlp_trace(params: MlpParams, x: np.ndarray) -> list[np.ndarray]:
    """Forward pass keeping every layer's output (post-activation).

    ``trace[0]`` is the input and ``trace[-1]`` the network output. Hidden
    entries are post-ReLU.
    """
    x = _check_input(params, x)
    acts = [x]
    h = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    return mlp_trace(params, x)[-1]


def mlp_backward(
    params: MlpParams,
    x: np.ndarray,
    output_grad: np.ndarray,
    trace: list[np.ndarray] | None = None,
) -> tuple[MlpParams, np.ndarray]:
    """Gradients of ``sum(output * output_grad)`` w.r.t. parameters and input.

    Pass the ``trace`` from :func:`mlp_trace` to skip the recomputation. The
    ReLU subgradient at exactly 0 is taken to be 0.
    """
    if trace is None:
        trace = mlp_trace(params, x)
    else:
        _check_input(params, trace[0])
    g = as_tensor(output_grad, name="output_grad")
    if g.shape != trace[-1].shape:
        raise ShapeError(f"output_grad shape {g.shape} != output shape {trace[-1].shape}")

    batched = g.ndim == 2
    n = params.n_layers
    w_grads: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    b_grads: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        h_in = trace[i]
        if batched:
            w_grads[i] = g.T @ h_in
            b_grads[i] = g.sum(axis=0)
        else:
            w_grads[i] = np.outer(g, h_in)
            b_grads[i] = g.copy()
        g = g @ params.weights[i]
        if i > 0:
            # post-ReLU activation > 0 exactly where the pre-activation was > 0
            g = g * (h_in > 0.0)
    return MlpParams(list(params.layer_dims), w_grads, b_grads), g


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    """Adam hyper-parameters plus first/second moment accumulators."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if set(params) != set(grads):
        raise ShapeError(f"parameter/gradient keys differ: {sorted(set(params) ^ set(grads))}")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
    if not state.m:
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
    elif set(state.m) != set(params):
        raise ShapeError("optimizer state does not match parameters")

    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# persistence


def _fmt(x: float) -> str:
    if not np.isfinite(x):
        raise ValueError(f"cannot serialise non-finite value {x!r}")
    return format(float(x), ".17g")


def dumps_reals(obj) -> str:
    """JSON text with every float written at 17 significant digits."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {dumps_reals(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps_reals(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return dumps_reals(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(obj)
    return json.dumps(obj)


def config_hash(obj) -> str:
    """Short stable digest of a JSON-serialisable configuration."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_mlp(path: str | Path, params: MlpParams, config: Mapping | None = None) -> None:
    doc = {"config": dict(config or {}), "mlp": params.to_dict()}
    Path(path).write_text(dumps_reals(doc) + "\n")


def load_mlp(path: str | Path) -> tuple[MlpParams, dict]:
    doc = json.loads(Path(path).read_text())
    return MlpParams.from_dict(doc["mlp"]), doc["config"]
