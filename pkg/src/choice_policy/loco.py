"""Deployment-time observation pipeline for the low-level locomotion controller.

One frame is 49 values::

    [0]      sin(phase)            [1]      cos(phase)
    [2]      move*v_x * (1.2 if v_x >= 0 else 0.6)
    [3]      -move*v_y * 0.3       [4]      -move*yaw_rate * 0.3
    [5:17]   q_leg - q_leg_default [17:29]  dq_leg * 0.1
    [29:41]  previous action       [41:44]  base angular velocity
    [44:47]  roll, pitch, yaw      [47]     0.8 (bias)
    [48]     1 - move (stand flag)

Every entry is clipped to +-18, and the policy input is the last 30 frames
concatenated oldest first (1470 values).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import dumps_reals

FRAME_DIM = 49
HISTORY_LEN = 30
CLIP = 18.0
BIAS = 0.8
N_LEG = 12

FORWARD_SCALE_POS = 1.2
FORWARD_SCALE_NEG = 0.6
LATERAL_SCALE = 0.3
YAW_SCALE = 0.3
JOINT_VEL_SCALE = 0.1

SLICES = {
    "phase": slice(0, 2),
    "command": slice(2, 5),
    "q_leg": slice(5, 17),
    "dq_leg": slice(17, 29),
    "last_action": slice(29, 41),
    "ang_vel": slice(41, 44),
    "euler": slice(44, 47),
    "bias": slice(47, 48),
    "stand": slice(48, 49),
}


@dataclass(frozen=True)
class LocoCommand:
    v_x: float = 0.0
    v_y: float = 0.0
    yaw_rate: float = 0.0
    move: int = 1

    def __post_init__(self):
        if self.move not in (0, 1):
            raise ValueError("move must be 0 or 1")


STAND_COMMAND = LocoCommand(0.0, 0.0, 0.0, 0)


@dataclass(frozen=True)
class RobotReadout:
    phase: float
    q_leg: np.ndarray
    q_leg_default: np.ndarray
    dq_leg: np.ndarray
    last_action: np.ndarray
    ang_vel: np.ndarray
    euler: np.ndarray  # roll, pitch, yaw

    def __post_init__(self):
        for name, n in (("q_leg", N_LEG), ("q_leg_default", N_LEG), ("dq_leg", N_LEG),
                        ("last_action", N_LEG), ("ang_vel", 3), ("euler", 3)):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (n,):
                raise ValueError(f"{name} must have length {n}, got shape {v.shape}")
            object.__setattr__(self, name, v)


def assemble_frame(cmd: LocoCommand, readout: RobotReadout) -> np.ndarray:
    frame = np.empty(FRAME_DIM)
    frame[0] = np.sin(readout.phase)
    frame[1] = np.cos(readout.phase)
    fwd_scale = FORWARD_SCALE_POS if cmd.v_x >= 0 else FORWARD_SCALE_NEG
    frame[2] = cmd.move * cmd.v_x * fwd_scale
    frame[3] = -cmd.move * cmd.v_y * LATERAL_SCALE
    frame[4] = -cmd.move * cmd.yaw_rate * YAW_SCALE
    frame[SLICES["q_leg"]] = readout.q_leg - readout.q_leg_default
    frame[SLICES["dq_leg"]] = readout.dq_leg * JOINT_VEL_SCALE
    frame[SLICES["last_action"]] = readout.last_action
    frame[SLICES["ang_vel"]] = readout.ang_vel
    frame[SLICES["euler"]] = readout.euler
    frame[47] = BIAS
    frame[48] = 1 - cmd.move
    # +0.0 turns the -0.0 left by gated commands into +0.0
    return np.clip(frame, -CLIP, CLIP) + 0.0


class HistoryBuffer:
    """Fixed ring of the last 30 frames, zero-filled until it has seen 30."""

    def __init__(self, length: int = HISTORY_LEN, frame_dim: int = FRAME_DIM):
        self.length = length
        self.frame_dim = frame_dim
        self._frames: deque[np.ndarray] = deque((np.zeros(frame_dim) for _ in range(length)), maxlen=length)
        self.count = 0

    def push(self, frame) -> None:
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != (self.frame_dim,):
            raise ValueError(f"frame must have length {self.frame_dim}")
        self._frames.append(frame.copy())
        self.count += 1

    def flatten(self) -> np.ndarray:
        return np.concatenate(list(self._frames))


def push_and_flatten(buffer: HistoryBuffer, frame) -> np.ndarray:
    buffer.push(frame)
    return buffer.flatten()


@dataclass(frozen=True)
class CommandRanges:
    v_x: tuple[float, float] = (-0.5, 1.0)
    v_y: tuple[float, float] = (-0.3, 0.3)
    yaw_rate: tuple[float, float] = (-0.5, 0.5)


def sample_training_command(rng: np.random.Generator, ranges: CommandRanges = CommandRanges(),
                            stand_probability: float = 0.1) -> LocoCommand:
    """Stand with probability ``stand_probability``, else a uniform walking command."""
    if rng.random() < stand_probability:
        return STAND_COMMAND
    return LocoCommand(float(rng.uniform(*ranges.v_x)), float(rng.uniform(*ranges.v_y)),
                       float(rng.uniform(*ranges.yaw_rate)), 1)


@dataclass
class GaitClock:
    period: float = 0.7

    def phase(self, t: float) -> float:
        return 2.0 * np.pi * ((t / self.period) % 1.0)


# ---------------------------------------------------------------------------
# golden vectors


def readout_to_dict(r: RobotReadout) -> dict:
    return {"phase": r.phase, "q_leg": r.q_leg, "q_leg_default": r.q_leg_default, "dq_leg": r.dq_leg,
            "last_action": r.last_action, "ang_vel": r.ang_vel, "euler": r.euler}


def write_golden(path: str | Path, cases: list[tuple[LocoCommand, RobotReadout, np.ndarray]]) -> None:
    lines = [json.dumps({"schema": "choice-policy-loco-golden/1", "cases": len(cases)})]
    for cmd, readout, expected in cases:
        lines.append(dumps_reals({
            "command": {"v_x": float(cmd.v_x), "v_y": float(cmd.v_y), "yaw_rate": float(cmd.yaw_rate), "move": cmd.move},
            "readout": readout_to_dict(readout),
            "expected": np.asarray(expected, dtype=np.float64),
        }))
    Path(path).write_text("\n".join(lines) + "\n")


def run_conformance(path: str | Path) -> list[tuple[int, list[int]]]:
    """Bit-exact comparison of every golden case; returns ``(case, bad indices)`` failures."""
    lines = Path(path).read_text().splitlines()
    failures = []
    for i, line in enumerate(lines[1:]):
        d = json.loads(line)
        cmd = LocoCommand(**d["command"])
        r = d["readout"]
        readout = RobotReadout(r["phase"], *(np.array(r[k]) for k in
                               ("q_leg", "q_leg_default", "dq_leg", "last_action", "ang_vel", "euler")))
        got = assemble_frame(cmd, readout)
        exp = np.array(d["expected"], dtype=np.float64)
        bad = [j for j in range(FRAME_DIM) if got[j].tobytes() != exp[j].tobytes()]
        if bad:
            failures.append((i, bad))
    return failures
