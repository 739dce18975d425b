"""Model checkpoints: one JSON document holding kind, config, normalisation
stats and every network, guarded by a schema tag and a config hash."""

from __future__ import annotations

import json
from pathlib import Path

from .baselines import BcModel, DenoiserConfig, DenoiserModel
from .numerics import MlpParams, config_hash, dumps_reals
from .policy import ChoicePolicyModel, NormalizationStats, PolicyConfig

CHECKPOINT_SCHEMA = "choice-policy-checkpoint/1"

_KINDS = {
    "choice": (ChoicePolicyModel, PolicyConfig, ("encoder", "proposal_head", "score_head")),
    "bc": (BcModel, PolicyConfig, ("encoder", "action_head")),
    "denoiser": (DenoiserModel, DenoiserConfig, ("encoder", "noise_net")),
}


class CheckpointError(ValueError):
    pass


def model_hash(kind: str, config) -> str:
    return config_hash({"kind": kind, "config": config.to_dict()})


def save_model(path: str | Path, model, meta: dict | None = None) -> str:
    """Write ``model`` to ``path``; returns the config hash stored in the file."""
    if model.kind not in _KINDS:
        raise CheckpointError(f"unknown model kind {model.kind!r}")
    h = model_hash(model.kind, model.config)
    doc = {
        "schema": CHECKPOINT_SCHEMA,
        "config_hash": h,
        "kind": model.kind,
        "config": model.config.to_dict(),
        "norm": model.norm.to_dict() if model.norm is not None else None,
        "networks": {name: p.to_dict() for name, p in model.mlps().items()},
        "meta": meta or {},
    }
    Path(path).write_text(dumps_reals(doc) + "\n")
    return h


def load_model(path: str | Path):
    """Inverse of :func:`save_model`; returns ``(model, meta)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: cannot read checkpoint ({e})") from e
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise CheckpointError(f"{path}: unsupported schema {doc.get('schema')!r}")
    kind = doc.get("kind")
    if kind not in _KINDS:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    cls, cfg_cls, nets = _KINDS[kind]
    config = cfg_cls(**doc["config"])
    if model_hash(kind, config) != doc.get("config_hash"):
        raise CheckpointError(f"{path}: config hash mismatch; file was edited or is corrupt")
    norm = NormalizationStats.from_dict(doc["norm"]) if doc.get("norm") else None
    try:
        model = cls(config, *(MlpParams.from_dict(doc["networks"][n]) for n in nets), norm=norm)
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: networks do not match config ({e})") from e
    return model, doc.get("meta", {})
