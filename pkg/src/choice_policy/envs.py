"""Synthetic multimodal point-mass tasks with scripted demonstrators.

* ``fork``   - go around a disk obstacle on either side to reach a goal.
* ``phased`` - reach an object (two routes), grasp it, carry it past a second
  obstacle (two routes) and insert it into a narrow slot.
* ``wipe``   - turn to face an eraser, pick it up with the arm, walk to a
  board around a table (two routes) and wipe the board (two directions).

Environments are pure: ``step`` returns a new state and never mutates.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .numerics import config_hash, dumps_reals, make_rng

DATASET_SCHEMA = "choice-policy-dataset/1"


class GenerationError(RuntimeError):
    """A scripted demonstration failed its own success predicate."""


def segment_hits_circle(p0, p1, center, radius) -> bool:
    """True if the closed segment p0-p1 comes strictly closer than ``radius`` to ``center``."""
    p0, p1, c = (np.asarray(v, dtype=np.float64) for v in (p0, p1, center))
    d = p1 - p0
    dd = float(d @ d)
    s = 0.0 if dd == 0.0 else float(np.clip((c - p0) @ d / dd, 0.0, 1.0))
    closest = p0 + s * d
    return float(np.linalg.norm(closest - c)) < radius


def _toward(pos: np.ndarray, path: list[np.ndarray], speed: float) -> np.ndarray:
    """Displacement of length <= speed along the polyline ``pos -> path``."""
    here = pos.copy()
    budget = speed
    for wp in path:
        seg = wp - here
        dist = float(np.linalg.norm(seg))
        if dist <= budget:
            here = wp.copy()
            budget -= dist
            continue
        here = here + seg / dist * budget
        budget = 0.0
        break
    return here - pos


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    modes: int
    separation: float
    horizon_cap: int
    max_step: float
    noise_frac: float = 0.02
    start_jitter: float = 0.01

    def __post_init__(self):
        if self.modes < 2:
            raise ValueError("multimodal tasks need at least two modes")
        if self.separation <= 0:
            raise ValueError("mode separation must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EnvState:
    agent: tuple[float, float]
    obj: tuple[float, float] = (0.0, 0.0)
    grasped: bool = False
    base: tuple[float, float] = (0.0, 0.0)
    heading: float = 0.0
    phase: int = 0
    t: int = 0
    collided: bool = False
    looked: bool = False
    coverage: tuple[bool, ...] = ()
    stages: frozenset = frozenset()

    def vec(self, name: str) -> np.ndarray:
        return np.array(getattr(self, name), dtype=np.float64)


def _pt(v) -> tuple[float, float]:
    return (float(v[0]), float(v[1]))


class Env:
    name = "base"
    phases: tuple[str, ...] = ()
    stages: tuple[str, ...] = ()
    obs_dim = 0
    action_dim = 0

    def __init__(self, spec: TaskSpec):
        self.spec = spec

    # subclasses implement these
    def reset(self, rng: np.random.Generator) -> EnvState:
        raise NotImplementedError

    def observe(self, s: EnvState) -> np.ndarray:
        raise NotImplementedError

    def step(self, s: EnvState, action) -> EnvState:
        raise NotImplementedError

    def expert_action(self, s: EnvState, mode: int, rng: np.random.Generator | None) -> np.ndarray:
        raise NotImplementedError

    def is_success(self, s: EnvState) -> bool:
        raise NotImplementedError

    @property
    def hold_action(self) -> np.ndarray:
        return np.zeros(self.action_dim)

    def phase_name(self, s: EnvState) -> str:
        return self.phases[s.phase]

    def is_terminal(self, s: EnvState) -> bool:
        return s.collided or self.is_success(s)

    def _noise(self, rng, n: int) -> np.ndarray:
        if rng is None:
            return np.zeros(n)
        b = self.spec.noise_frac * self.spec.max_step
        return rng.uniform(-b, b, size=n)

    def _clip_motion(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64)
        if not np.all(np.isfinite(d)):
            d = np.zeros_like(d)
        n = float(np.linalg.norm(d))
        if n > self.spec.max_step:
            d = d * (self.spec.max_step / n)
        return d


# ---------------------------------------------------------------------------


class ForkWorld(Env):
    """Reach (1, 0) from near the origin, passing a disk at (0.5, 0) above or below.

    Demonstrations run straight to the fork point (0.2, 0) and only there
    split towards the waypoint (0.5, +-separation/2) of their mode.
    """

    name = "fork"
    phases = ("approach", "commit", "arrive")
    stages = ("commit", "arrive")
    obs_dim = 2
    action_dim = 2

    start = np.array([0.0, 0.0])
    fork_point = np.array([0.2, 0.0])
    goal = np.array([1.0, 0.0])
    goal_radius = 0.05
    obstacle = np.array([0.5, 0.0])
    obstacle_radius = 0.15
    commit_offset = 0.1
    bounds = (np.array([-0.5, -1.0]), np.array([1.5, 1.0]))

    def __init__(self, spec: TaskSpec | None = None):
        super().__init__(spec or TaskSpec("fork", modes=2, separation=0.6, horizon_cap=40, max_step=0.075))

    def waypoint(self, mode: int) -> np.ndarray:
        side = 1.0 if mode % 2 == 0 else -1.0
        return np.array([0.5, side * self.spec.separation / 2])

    def reset(self, rng):
        j = self.spec.start_jitter
        return EnvState(agent=_pt(self.start + rng.uniform(-j, j, size=2)))

    def observe(self, s):
        return s.vec("agent")

    def _phase_of(self, agent) -> int:
        if np.linalg.norm(agent - self.goal) <= self.goal_radius:
            return 2
        if abs(agent[1]) >= self.commit_offset:
            return 1
        return 0

    def step(self, s, action):
        if self.is_terminal(s):
            return replace(s, t=s.t + 1)
        p0 = s.vec("agent")
        p1 = np.clip(p0 + self._clip_motion(action), *self.bounds)
        collided = segment_hits_circle(p0, p1, self.obstacle, self.obstacle_radius)
        if collided:
            p1 = p0
        phase = max(s.phase, self._phase_of(p1))
        stages = s.stages | {self.stages[i - 1] for i in range(1, phase + 1)}
        return replace(s, agent=_pt(p1), phase=phase, t=s.t + 1, collided=collided, stages=frozenset(stages))

    def expert_action(self, s, mode, rng):
        p = s.vec("agent")
        wp = self.waypoint(mode)
        if s.phase == 0 and p[0] < self.fork_point[0]:
            path = [self.fork_point, wp, self.goal]
        elif p[0] < wp[0]:
            path = [wp, self.goal]
        else:
            path = [self.goal]
        return _toward(p, path, self.spec.max_step) + self._noise(rng, 2)

    def lateral_crossing(self, start, chunk) -> float:
        """Lateral offset where the path ``start + cumsum(chunk)`` crosses the obstacle's x.

        The two demonstration modes cross at +-separation/2, so this puts a
        predicted chunk on the same axis as the mode separation. Paths that
        never reach the obstacle plane report their final lateral offset.
        """
        pts = np.vstack([np.asarray(start, dtype=np.float64), start + np.cumsum(chunk[:, :2], axis=0)])
        x0 = self.obstacle[0]
        for a, b in zip(pts[:-1], pts[1:]):
            if a[0] <= x0 <= b[0] and b[0] > a[0]:
                w = (x0 - a[0]) / (b[0] - a[0])
                return float(a[1] + w * (b[1] - a[1]))
        return float(pts[-1, 1])

    def is_success(self, s):
        return not s.collided and bool(np.linalg.norm(s.vec("agent") - self.goal) <= self.goal_radius)


# ---------------------------------------------------------------------------


class PhasedWorld(Env):
    """Reach, grasp, transfer and insert, with two routes in reach and transfer.

    Mode ``m`` uses reach side ``m % 2`` and transfer side ``m // 2``.
    Action: ``[dx, dy, grasp]``; grasp > 0.5 closes the gripper when the agent
    is within ``grasp_tolerance`` of the object.
    """

    name = "phased"
    phases = ("reach", "grasp", "transfer", "insert")
    stages = ("grasp", "transfer", "insert")
    obs_dim = 5
    action_dim = 3

    start = np.array([0.0, 0.0])
    object_home = np.array([0.5, 0.0])
    object_jitter = 0.03
    obstacles = (np.array([0.25, 0.0]), np.array([0.75, 0.0]))
    obstacle_radius = 0.1
    route_dy = 0.2
    grasp_radius = 0.06
    grasp_tolerance = 0.02
    fine_speed = 0.02
    slot_entry = np.array([0.95, 0.0])
    slot = np.array([1.05, 0.0])
    slot_radius = 0.02
    insert_x = 0.9
    slot_half_width = 0.04
    bounds = (np.array([-0.5, -1.0]), np.array([1.5, 1.0]))

    def __init__(self, spec: TaskSpec | None = None):
        super().__init__(spec or TaskSpec("phased", modes=4, separation=0.4, horizon_cap=80, max_step=0.05))

    def reach_waypoint(self, mode: int) -> np.ndarray:
        side = 1.0 if mode % 2 == 0 else -1.0
        return np.array([0.25, side * self.spec.separation / 2])

    def transfer_waypoint(self, mode: int) -> np.ndarray:
        side = 1.0 if (mode // 2) % 2 == 0 else -1.0
        return np.array([0.75, side * self.spec.separation / 2])

    def reset(self, rng):
        j = self.spec.start_jitter
        agent = self.start + rng.uniform(-j, j, size=2)
        obj = self.object_home + rng.uniform(-self.object_jitter, self.object_jitter, size=2)
        return EnvState(agent=_pt(agent), obj=_pt(obj))

    def observe(self, s):
        return np.array([*s.agent, *s.obj, float(s.grasped)])

    def _phase_of(self, agent, obj, grasped) -> int:
        if grasped:
            return 3 if agent[0] >= self.insert_x else 2
        return 1 if np.linalg.norm(agent - obj) <= self.grasp_radius else 0

    def step(self, s, action):
        if self.is_terminal(s):
            return replace(s, t=s.t + 1)
        action = np.asarray(action, dtype=np.float64)
        p0 = s.vec("agent")
        p1 = np.clip(p0 + self._clip_motion(action[:2]), *self.bounds)
        collided = any(segment_hits_circle(p0, p1, c, self.obstacle_radius) for c in self.obstacles)
        if p1[0] >= self.slot_entry[0] and abs(p1[1]) > self.slot_half_width:
            collided = True  # slot walls
        if collided:
            p1 = p0
        grasped = s.grasped
        obj = s.vec("obj")
        if not grasped and action[2] > 0.5 and np.linalg.norm(p1 - obj) <= self.grasp_tolerance:
            grasped = True
        if grasped:
            obj = p1
        phase = max(s.phase, self._phase_of(p1, obj, grasped))
        stages = set(s.stages)
        if grasped:
            stages.add("grasp")
        if phase >= 3:
            stages.add("transfer")
        nxt = replace(s, agent=_pt(p1), obj=_pt(obj), grasped=grasped, phase=phase, t=s.t + 1, collided=collided)
        if self.is_success(nxt):
            stages.add("insert")
        return replace(nxt, stages=frozenset(stages))

    def expert_action(self, s, mode, rng):
        p = s.vec("agent")
        noise = self._noise(rng, 2)
        if not s.grasped:
            obj = s.vec("obj")
            dist = float(np.linalg.norm(obj - p))
            if dist <= self.grasp_radius:
                move = _toward(p, [obj], self.fine_speed)
                close = float(np.linalg.norm(p + move - obj) <= self.grasp_tolerance / 2)
                return np.array([*(move + noise * (1 - close)), close])
            wp = self.reach_waypoint(mode)
            path = [wp, obj] if p[0] < wp[0] else [obj]
            move = _toward(p, path, self.spec.max_step)
            if np.linalg.norm(p + move - obj) <= self.grasp_radius:
                # stop at the edge of the grasp zone; alignment happens next
                move = _toward(p, path, max(0.0, dist - self.grasp_radius + 1e-3))
            return np.array([*(move + noise), 0.0])
        if p[0] < self.insert_x:
            wp = self.transfer_waypoint(mode)
            path = [wp, self.slot_entry] if p[0] < wp[0] else [self.slot_entry]
            move = _toward(p, path, self.spec.max_step)
            return np.array([*(move + noise), 0.0])
        path = [self.slot_entry, self.slot] if p[0] < self.slot_entry[0] else [self.slot]
        move = _toward(p, path, self.fine_speed)
        return np.array([*(move + noise * 0.25), 0.0])

    def is_success(self, s):
        return (not s.collided and s.grasped
                and bool(np.linalg.norm(s.vec("obj") - self.slot) <= self.slot_radius))


# ---------------------------------------------------------------------------


class WipeWorld(Env):
    """Loco-manipulation: look, pick up, walk, wipe.

    Action: ``[arm_dx, arm_dy, grasp, v_x, v_y, yaw_rate, move]``. Base
    velocities and yaw rate are integrated over ``dt`` only when move > 0.5;
    the arm offset is relative to the base and bounded by ``arm_reach``.
    Mode ``m`` uses walking route ``m % 2`` and wipe direction ``m // 2``.
    """

    name = "wipe"
    phases = ("look", "pickup", "walk", "wipe")
    stages = ("look", "pickup", "walk", "wipe")
    obs_dim = 12
    action_dim = 7

    dt = 0.1
    max_velocity = 1.0
    max_yaw_rate = 1.0
    arm_reach = 0.6
    look_tolerance = 0.05
    eraser_home = np.array([0.3, 0.4])
    eraser_jitter = 0.03
    grasp_tolerance = 0.02
    table = np.array([0.9, 0.0])
    table_radius = 0.2
    board_x = 1.8
    board_y = (-0.2, 0.2)
    board_bins = 8
    board_tolerance = 0.02
    stand_spot = np.array([1.5, 0.0])
    spot_tolerance = 0.05
    stand_probability = 0.1
    bounds = (np.array([-0.5, -1.5]), np.array([2.5, 1.5]))

    def __init__(self, spec: TaskSpec | None = None):
        super().__init__(spec or TaskSpec("wipe", modes=4, separation=0.8, horizon_cap=120, max_step=0.05))

    def route_waypoint(self, mode: int) -> np.ndarray:
        side = 1.0 if mode % 2 == 0 else -1.0
        return np.array([self.table[0], side * self.spec.separation / 2])

    def wipe_ends(self, mode: int) -> tuple[float, float]:
        lo, hi = self.board_y
        return (hi, lo) if (mode // 2) % 2 == 0 else (lo, hi)

    def reset(self, rng):
        j = self.spec.start_jitter
        base = rng.uniform(-j, j, size=2)
        eraser = self.eraser_home + rng.uniform(-self.eraser_jitter, self.eraser_jitter, size=2)
        return EnvState(agent=_pt(base), obj=_pt(eraser), base=_pt(base), heading=0.0,
                        coverage=(False,) * self.board_bins)

    def _bearing(self, s) -> float:
        d = s.vec("obj") - s.vec("base")
        return float(np.arctan2(d[1], d[0]))

    def observe(self, s):
        arm = s.vec("agent") - s.vec("base")
        cov = s.coverage
        return np.array([*s.base, np.sin(s.heading), np.cos(s.heading), *arm, *s.obj,
                         float(s.grasped), float(s.looked), float(cov[0]), float(cov[-1])])

    def _bin(self, y: float) -> int:
        lo, hi = self.board_y
        return int(np.clip((y - lo) / (hi - lo) * self.board_bins, 0, self.board_bins - 1))

    def _phase_of(self, s) -> int:
        if not s.looked:
            return 0
        if not s.grasped:
            return 1
        if np.linalg.norm(s.vec("base") - self.stand_spot) > self.spot_tolerance:
            return 2
        return 3

    def step(self, s, action):
        if self.is_terminal(s):
            return replace(s, t=s.t + 1)
        a = np.asarray(action, dtype=np.float64)
        a = np.where(np.isfinite(a), a, 0.0)
        move = a[6] > 0.5
        base0 = s.vec("base")
        arm_off = s.vec("agent") - base0
        heading = s.heading
        base1 = base0
        collided = False
        if move:
            vel = np.clip(a[3:5], -self.max_velocity, self.max_velocity)
            base1 = np.clip(base0 + vel * self.dt, *self.bounds)
            heading = heading + float(np.clip(a[5], -self.max_yaw_rate, self.max_yaw_rate)) * self.dt
            collided = segment_hits_circle(base0, base1, self.table, self.table_radius)
            if collided:
                base1 = base0
        arm_off = arm_off + self._clip_motion(a[:2])
        r = float(np.linalg.norm(arm_off))
        if r > self.arm_reach:
            arm_off *= self.arm_reach / r
        hand = base1 + arm_off
        grasped = s.grasped
        obj = s.vec("obj")
        if not grasped and a[2] > 0.5 and np.linalg.norm(hand - obj) <= self.grasp_tolerance:
            grasped = True
        if grasped:
            obj = hand
        looked = s.looked or abs(np.angle(np.exp(1j * (self._bearing(s) - heading)))) <= self.look_tolerance
        coverage = list(s.coverage)
        if grasped and hand[0] >= self.board_x - self.board_tolerance and self.board_y[0] <= hand[1] <= self.board_y[1]:
            coverage[self._bin(hand[1])] = True
        nxt = replace(s, agent=_pt(hand), obj=_pt(obj), base=_pt(base1), heading=heading, grasped=grasped,
                      looked=looked, coverage=tuple(coverage), t=s.t + 1, collided=collided)
        phase = max(s.phase, self._phase_of(nxt))
        stages = set(s.stages)
        for i in range(phase):
            stages.add(self.stages[i])
        if self.is_success(nxt):
            stages.add("wipe")
        return replace(nxt, phase=phase, stages=frozenset(stages))

    def expert_action(self, s, mode, rng):
        act = np.zeros(self.action_dim)
        base = s.vec("base")
        hand = s.vec("agent")
        arm = hand - base
        noise = self._noise(rng, 2)
        if not s.looked:
            err = float(np.angle(np.exp(1j * (self._bearing(s) - s.heading))))
            act[5] = np.clip(err / self.dt, -self.max_yaw_rate, self.max_yaw_rate)
            act[6] = 1.0
            return act
        if not s.grasped:
            obj = s.vec("obj")
            move = _toward(hand, [obj], self.spec.max_step)
            act[:2] = move + noise
            if np.linalg.norm(hand + move - obj) <= self.grasp_tolerance / 2:
                act[:2] = move
                act[2] = 1.0
            return act
        if np.linalg.norm(base - self.stand_spot) > self.spot_tolerance:
            if rng is not None and rng.random() < self.stand_probability:
                return act  # sampled stand command
            wp = self.route_waypoint(mode)
            path = [wp, self.stand_spot] if base[0] < wp[0] else [self.stand_spot]
            step = _toward(base, path, self.max_velocity * self.dt)
            act[3:5] = step / self.dt + noise / self.dt
            act[6] = 1.0
            # bring the arm in front of the body while walking
            act[:2] = _toward(arm, [np.array([0.3, 0.0])], self.spec.max_step)
            return act
        first, last = self.wipe_ends(mode)
        reach_x = self.board_x - base[0]
        start_bin = self._bin(first)
        target_y = first if not s.coverage[start_bin] else last
        tgt = np.array([reach_x, target_y - base[1]])
        act[:2] = _toward(arm, [tgt], self.spec.max_step) + noise * 0.25
        return act

    def is_success(self, s):
        return not s.collided and all(s.coverage) and len(s.coverage) > 0


ENVS = {"fork": ForkWorld, "phased": PhasedWorld, "wipe": WipeWorld}


def make_env(kind: str | TaskSpec) -> Env:
    if isinstance(kind, TaskSpec):
        return ENVS[kind.kind](kind)
    if kind not in ENVS:
        raise ValueError(f"unknown task {kind!r}; choose from {sorted(ENVS)}")
    return ENVS[kind]()


# ---------------------------------------------------------------------------
# demonstrations


@dataclass
class EpisodeRecord:
    episode: int
    mode: int
    seed: int
    observations: np.ndarray  # (L, obs_dim)
    actions: np.ndarray  # (L, action_dim)
    phases: list[str]

    def __len__(self) -> int:
        return len(self.actions)


def scripted_demonstrator(env: Env, mode: int, rng: np.random.Generator, episode: int = 0, seed: int = 0) -> EpisodeRecord:
    if not 0 <= mode < env.spec.modes:
        raise ValueError(f"mode {mode} out of range for {env.spec.modes} modes")
    s = env.reset(rng)
    obs, acts, phases = [], [], []
    for _ in range(env.spec.horizon_cap):
        a = env.expert_action(s, mode, rng)
        obs.append(env.observe(s))
        acts.append(a)
        phases.append(env.phase_name(s))
        s = env.step(s, a)
        if env.is_terminal(s):
            break
    if not env.is_success(s):
        raise GenerationError(f"{env.name} demo (episode {episode}, mode {mode}) did not succeed")
    return EpisodeRecord(episode, mode, seed, np.array(obs), np.array(acts), phases)


def generate_dataset(env: Env, n_episodes: int, seed: int) -> list[EpisodeRecord]:
    """Demonstrations with uniformly drawn modes; episode ``e`` uses stream ``(seed, "episode", e)``."""
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    out = []
    for e in range(n_episodes):
        rng = make_rng(seed, "episode", e)
        mode = int(rng.integers(env.spec.modes))
        out.append(scripted_demonstrator(env, mode, rng, episode=e, seed=seed))
    return out


def build_chunks(episodes: Iterable[EpisodeRecord], horizon: int, hold_action: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(obs, chunk) training pairs; chunks running past the end are padded with ``hold_action``."""
    xs, ys = [], []
    for ep in episodes:
        n = len(ep)
        padded = np.vstack([ep.actions, np.tile(hold_action, (horizon, 1))])
        for t in range(n):
            xs.append(ep.observations[t])
            ys.append(padded[t:t + horizon])
    return np.array(xs), np.array(ys)


def dataset_hash(task: dict, seed: int, episodes: int) -> str:
    return config_hash({"task": task, "seed": seed, "episodes": episodes})


def save_dataset(path: str | Path, env: Env, episodes: list[EpisodeRecord], seed: int) -> None:
    task = env.spec.to_dict()
    header = {"schema": DATASET_SCHEMA, "config_hash": dataset_hash(task, seed, len(episodes)), "seed": seed,
              "episodes": len(episodes), "task": task}
    lines = [json.dumps(header, sort_keys=True)]
    for ep in episodes:
        for t in range(len(ep)):
            rec = {"episode": ep.episode, "t": t, "phase": ep.phases[t],
                   "obs": ep.observations[t], "action": ep.actions[t], "mode": ep.mode}
            lines.append(dumps_reals(rec))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path) -> tuple[dict, list[EpisodeRecord]]:
    text = Path(path).read_text().splitlines()
    if not text:
        raise ValueError(f"{path}: empty dataset file")
    header = json.loads(text[0])
    if header.get("schema") != DATASET_SCHEMA:
        raise ValueError(f"{path}: unsupported schema {header.get('schema')!r}")
    if header.get("config_hash") != dataset_hash(header["task"], header["seed"], header["episodes"]):
        raise ValueError(f"{path}: config hash does not match header contents")
    rows: dict[int, list[dict]] = {}
    for line in text[1:]:
        if line.strip():
            rec = json.loads(line)
            rows.setdefault(rec["episode"], []).append(rec)
    episodes = []
    for e in sorted(rows):
        recs = sorted(rows[e], key=lambda r: r["t"])
        episodes.append(EpisodeRecord(
            e, recs[0]["mode"], header["seed"],
            np.array([r["obs"] for r in recs], dtype=np.float64),
            np.array([r["action"] for r in recs], dtype=np.float64),
            [r["phase"] for r in recs],
        ))
    if len(episodes) != header["episodes"]:
        raise ValueError(f"{path}: header says {header['episodes']} episodes, found {len(episodes)}")
    return header, episodes


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class RolloutResult:
    success: bool
    reason: str
    steps: int
    heads: list[int] = field(default_factory=list)
    phases: list[str] = field(default_factory=list)
    stages: dict[str, bool] = field(default_factory=dict)
    trajectory: list[EnvState] = field(default_factory=list)


def rollout(env: Env, agent, rng: np.random.Generator, max_steps: int | None = None) -> RolloutResult:
    """Closed-loop episode.

    ``agent.act(env, state, rng)`` returns ``(action, head_index)``; the head
    index (or -1) is logged per step together with the phase it was taken in.
    """
    max_steps = max_steps or env.spec.horizon_cap
    s = env.reset(rng)
    if hasattr(agent, "reset"):
        agent.reset(env, s, rng)
    traj = [s]
    heads, phases = [], []
    for _ in range(max_steps):
        action, head = agent.act(env, s, rng)
        heads.append(int(head))
        phases.append(env.phase_name(s))
        s = env.step(s, action)
        traj.append(s)
        if env.is_terminal(s):
            break
    if env.is_success(s):
        reason = "success"
    elif s.collided:
        reason = "collision"
    else:
        reason = "timeout"
    stages = {name: name in s.stages for name in env.stages}
    return RolloutResult(env.is_success(s), reason, len(heads), heads, phases, stages, traj)
