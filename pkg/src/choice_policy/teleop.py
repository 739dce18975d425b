"""Teleoperation control math: head gaze toward a hand, clutched arm targets,
grouped-finger grasp mapping, and the controller mode state machine.

Everything is a pure function of its inputs; there is no device I/O here.
Quaternions are scalar-last ``(x, y, z, w)``, matching scipy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
from scipy.spatial.transform import Rotation

ARMS = ("left", "right")


@dataclass(frozen=True)
class Pose:
    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 1.0)

    def __post_init__(self):
        p = tuple(float(v) for v in self.position)
        q = tuple(float(v) for v in self.orientation)
        if len(p) != 3 or len(q) != 4:
            raise ValueError("pose needs a 3-vector position and a 4-vector quaternion")
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError(f"orientation quaternion is not unit length: |q| = {np.linalg.norm(q)!r}")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        q = Rotation.from_matrix(m[:3, :3]).as_quat()
        return cls(tuple(m[:3, 3]), tuple(q / np.linalg.norm(q)))

    @property
    def rotation(self) -> Rotation:
        return Rotation.from_quat(self.orientation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.position
        return m

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` in this pose's frame."""
        r = self.rotation
        pos = np.asarray(self.position) + r.apply(other.position)
        q = (r * other.rotation).as_quat()
        return Pose(tuple(pos), tuple(q / np.linalg.norm(q)))

    def inverse(self) -> "Pose":
        r_inv = self.rotation.inv()
        q = r_inv.as_quat()
        return Pose(tuple(-r_inv.apply(self.position)), tuple(q / np.linalg.norm(q)))

    def to_list(self) -> list[float]:
        return [*self.position, *self.orientation]

    @classmethod
    def from_list(cls, v) -> "Pose":
        return cls(tuple(v[:3]), tuple(v[3:7]))


IDENTITY = Pose((0.0, 0.0, 0.0))


# ---------------------------------------------------------------------------
# hand-eye coordination


@dataclass(frozen=True)
class GazeLimits:
    yaw: tuple[float, float] = (-np.pi, np.pi)
    pitch: tuple[float, float] = (-np.pi / 2, np.pi / 2)


@dataclass(frozen=True)
class GazeCommand:
    yaw: float
    pitch: float
    roll: float = 0.0
    clipped: bool = False


def gaze_from_hand(p_hand, p_head, limits: GazeLimits | None = None) -> GazeCommand:
    """Yaw/pitch that point the head from ``p_head`` at ``p_hand`` (robot base frame).

    Yaw is the azimuth of the head-to-hand vector in the xy-plane; pitch is its
    elevation, positive when looking down. Both are clipped to ``limits``.
    """
    limits = limits or GazeLimits()
    r = np.asarray(p_hand, dtype=np.float64) - np.asarray(p_head, dtype=np.float64)
    if r.shape != (3,):
        raise ValueError("hand and head positions must be 3-vectors")
    if not np.any(r):
        raise ValueError("hand and head positions coincide; gaze direction undefined")
    yaw = float(np.arctan2(r[1], r[0]))
    pitch = float(np.arctan2(-r[2], np.hypot(r[0], r[1])))
    yaw_c = float(np.clip(yaw, *limits.yaw))
    pitch_c = float(np.clip(pitch, *limits.pitch))
    return GazeCommand(yaw_c, pitch_c, 0.0, clipped=(yaw_c != yaw or pitch_c != pitch))


# ---------------------------------------------------------------------------
# grasp mapping


@dataclass(frozen=True)
class HandRange:
    finger_open: float = 0.0
    finger_closed: float = 1.7
    thumb_open: float = 0.0
    thumb_closed: float = 1.2


@dataclass(frozen=True)
class HandCommand:
    grip: float
    thumb: float
    finger_targets: tuple[float, float, float, float, float]  # 4 grouped fingers, then thumb
    clamped: bool = False


def hand_from_inputs(grip: float, thumb: float, hand: HandRange = HandRange()) -> HandCommand:
    """Grip drives the four non-thumb fingers together; the thumb input drives the thumb."""
    g = float(np.clip(grip, 0.0, 1.0))
    t = float(np.clip(thumb, 0.0, 1.0))
    finger = hand.finger_open + g * (hand.finger_closed - hand.finger_open)
    thumb_q = hand.thumb_open + t * (hand.thumb_closed - hand.thumb_open)
    return HandCommand(g, t, (finger, finger, finger, finger, thumb_q), clamped=(g != grip or t != thumb))


# ---------------------------------------------------------------------------
# mode state machine and clutched arm tracking


@dataclass(frozen=True)
class TeleopEvent:
    kind: str
    t: float = 0.0
    arm: str | None = None
    controller: Pose | None = None
    ee: Pose | None = None
    value: tuple[float, ...] = ()

    KINDS = ("joystick_press", "joystick_move", "joystick_release", "trigger_press", "trigger_release",
             "track_left", "track_right", "grip")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown teleop event {self.kind!r}")
        if self.arm is not None and self.arm not in ARMS:
            raise ValueError(f"unknown arm {self.arm!r}")


@dataclass(frozen=True)
class TeleopMode:
    mode: str = "manipulation"  # or "locomotion"
    tracking: str = "off"  # off | left | right
    anchors: dict = field(default_factory=dict)  # arm -> (controller Pose, ee Pose)
    move: int = 0
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)  # v_x, v_y, yaw rate
    grip: float = 0.0
    thumb: float = 0.0

    def engaged(self, arm: str) -> bool:
        return arm in self.anchors


STAND = {"move": 0, "velocity": (0.0, 0.0, 0.0)}


def mode_transition(state: TeleopMode, event: TeleopEvent) -> TeleopMode:
    """Deterministic transition; events that make no sense in a state are no-ops.

    * joystick press toggles manipulation/locomotion (leaving locomotion stands)
    * joystick motion sets the walking command in locomotion, the thumb otherwise
    * joystick release in locomotion falls back to the stand command
    * trigger press engages an arm and captures fresh anchors; release drops them
    * track_left/right point the head at that hand; pressing again turns it off
    """
    k = event.kind
    if k == "joystick_press":
        if state.mode == "manipulation":
            return replace(state, mode="locomotion")
        return replace(state, mode="manipulation", **STAND)
    if k == "joystick_move":
        if state.mode == "locomotion":
            v = tuple(float(x) for x in (tuple(event.value) + (0.0, 0.0, 0.0))[:3])
            return replace(state, move=1, velocity=v)
        if event.value:
            return replace(state, thumb=float(np.clip(event.value[0], 0.0, 1.0)))
        return state
    if k == "joystick_release":
        return replace(state, **STAND) if state.mode == "locomotion" else state
    if k == "grip":
        return replace(state, grip=float(np.clip(event.value[0], 0.0, 1.0))) if event.value else state
    if k == "trigger_press":
        if event.arm is None or event.controller is None or event.ee is None or state.engaged(event.arm):
            return state
        return replace(state, anchors={**state.anchors, event.arm: (event.controller, event.ee)})
    if k == "trigger_release":
        if event.arm is None or not state.engaged(event.arm):
            return state
        return replace(state, anchors={a: v for a, v in state.anchors.items() if a != event.arm})
    side = "left" if k == "track_left" else "right"
    return replace(state, tracking="off" if state.tracking == side else side)


def anchored_ee_target(state: TeleopMode, arm: str, controller_now: Pose, frame: Pose = IDENTITY) -> Pose:
    """End-effector target from the controller's motion since the trigger was pressed.

    The relative controller transform ``ctrl_anchor^-1 * ctrl_now`` is mapped
    into the robot frame through ``frame`` (controller-to-robot rotation) and
    applied to the end-effector anchor.
    """
    if not state.engaged(arm):
        raise ValueError(f"{arm} arm is not engaged")
    ctrl_anchor, ee_anchor = state.anchors[arm]
    delta = ctrl_anchor.inverse().compose(controller_now)
    if frame != IDENTITY:
        delta = frame.compose(delta).compose(frame.inverse())
    return ee_anchor.compose(delta)


def head_target(state: TeleopMode, hand_positions: dict[str, np.ndarray], p_head, limits: GazeLimits | None = None):
    """Gaze command for the tracked hand, or ``None`` when tracking is off."""
    if state.tracking == "off":
        return None
    return gaze_from_hand(hand_positions[state.tracking], p_head, limits)


# ---------------------------------------------------------------------------
# event log replay


def event_to_line(ev: TeleopEvent) -> str:
    d: dict = {"t": ev.t, "event": ev.kind}
    if ev.arm is not None:
        d["arm"] = ev.arm
    if ev.controller is not None:
        d["controller"] = ev.controller.to_list()
    if ev.ee is not None:
        d["ee"] = ev.ee.to_list()
    if ev.value:
        d["value"] = list(ev.value)
    return json.dumps(d)


def event_from_line(line: str) -> TeleopEvent:
    d = json.loads(line)
    return TeleopEvent(
        d["event"], float(d.get("t", 0.0)), d.get("arm"),
        Pose.from_list(d["controller"]) if "controller" in d else None,
        Pose.from_list(d["ee"]) if "ee" in d else None,
        tuple(d.get("value", ())),
    )


def replay(lines: Iterable[str], state: TeleopMode | None = None) -> TeleopMode:
    """Apply a line-delimited event log in timestamp order (stable for ties)."""
    events = [event_from_line(l) for l in lines if l.strip()]
    events.sort(key=lambda e: e.t)
    state = state or TeleopMode()
    for ev in events:
        state = mode_transition(state, ev)
    return state
