"""First-person micro environment with a software raycast renderer.

Two scenarios share one engine. Rooms are empty axis-aligned rectangles, so
each screen column's wall hit comes from a closed-form ray/box intersection
instead of a grid march. Entities (monster, medkits) render as distance
scaled billboards over the walls.

Basic shooting: the agent stands at the center of the longer wall and can
strafe left/right or shoot; a stationary monster waits along the opposite
wall. One hit kills. Rewards: -1 per decision, +100 for the kill; the
episode ends on the kill or after 300 frames.

Health gathering: the agent spawns at a random spot of an open room whose
floor drains health every tick; medkits heal and respawn elsewhere when
collected. Actions are turn left/right and move forward. Rewards: +1 per
surviving decision, +5 per medkit; the episode ends at zero health or after
2100 frames.

A decision repeats its action for ``skip_count`` engine ticks; rewards
accumulate across the repeated ticks and the returned frame is the render
after the last executed tick.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .pgmio import to_u8, write_pgm

FRAME_SIZE = 84
N_ACTIONS = 3

# basic shooting action indices
MOVE_LEFT, MOVE_RIGHT, SHOOT = 0, 1, 2
# health gathering action indices
TURN_LEFT, TURN_RIGHT, FORWARD = 0, 1, 2


class Scenario(str, Enum):
    BASIC = "basic"
    HEALTH = "health"


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario
    room_w: float
    room_h: float
    move_speed: float = 0.25          # world units per tick
    turn_rate: float = 0.1            # radians per tick
    skip_count: int = 4
    fov: float = math.pi / 2
    frame_limit: int = 300
    # basic shooting
    aim_tolerance: float = 0.05       # radians beyond the monster's angular extent
    monster_radius: float = 0.45
    monster_wall_gap: float = 0.6
    monster_margin: float = 1.0       # clearance from the side walls
    agent_wall_gap: float = 0.75
    # health gathering
    decay_per_tick: float = 0.4
    heal_amount: float = 25.0
    medkit_count: int = 8
    pickup_radius: float = 0.5
    spawn_margin: float = 1.0
    agent_clearance: float = 1.0      # medkits never spawn this close to the agent

    def __post_init__(self):
        if self.room_w <= 0 or self.room_h <= 0:
            raise ValueError("degenerate room dimensions")
        if self.skip_count < 1:
            raise ValueError("skip_count must be at least 1")
        if self.frame_limit < 1:
            raise ValueError("frame limit must be positive")


def basic_config(**overrides) -> ScenarioConfig:
    cfg = dict(scenario=Scenario.BASIC, room_w=10.0, room_h=6.0, frame_limit=300)
    cfg.update(overrides)
    return ScenarioConfig(**cfg)


def health_config(**overrides) -> ScenarioConfig:
    cfg = dict(scenario=Scenario.HEALTH, room_w=16.0, room_h=16.0, frame_limit=2100)
    cfg.update(overrides)
    return ScenarioConfig(**cfg)


def config_for(scenario, **overrides) -> ScenarioConfig:
    scenario = Scenario(scenario)
    return basic_config(**overrides) if scenario == Scenario.BASIC \
        else health_config(**overrides)


@dataclass
class WorldState:
    config: ScenarioConfig
    rng: np.random.Generator
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    tick: int = 0
    done: bool = False
    done_reason: str = ""
    # basic shooting
    monster_x: float = 0.0
    monster_y: float = 0.0
    monster_alive: bool = False
    # health gathering
    health: float = 100.0
    medkits: list = field(default_factory=list)


@dataclass
class StepResult:
    frame: np.ndarray
    reward: float
    done: bool
    info: dict


def _spawn_medkit(cfg, rng, agent_x, agent_y):
    m = cfg.spawn_margin
    while True:
        mx = rng.uniform(m, cfg.room_w - m)
        my = rng.uniform(m, cfg.room_h - m)
        if math.hypot(mx - agent_x, my - agent_y) > cfg.agent_clearance:
            return [mx, my]


def reset(config: ScenarioConfig, seed):
    """Fresh episode state plus its first rendered frame.

    ``seed`` may be an int (reproducible state) or a Generator to continue an
    existing stream across episodes.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    state = WorldState(config=config, rng=rng)
    if config.scenario == Scenario.BASIC:
        # the room's longer wall is y=0 (room_w >= room_h by default)
        state.x = config.room_w / 2.0
        state.y = config.agent_wall_gap
        state.heading = math.pi / 2.0
        state.monster_x = float(rng.uniform(config.monster_margin,
                                            config.room_w - config.monster_margin))
        state.monster_y = config.room_h - config.monster_wall_gap
        state.monster_alive = True
    else:
        m = config.spawn_margin + 0.5
        state.x = float(rng.uniform(m, config.room_w - m))
        state.y = float(rng.uniform(m, config.room_h - m))
        state.heading = float(rng.uniform(0.0, 2.0 * math.pi))
        state.health = 100.0
        state.medkits = [_spawn_medkit(config, rng, state.x, state.y)
                         for _ in range(config.medkit_count)]
    return state, render(state)


def _monster_angular_window(state):
    cfg = state.config
    dx = state.monster_x - state.x
    dy = state.monster_y - state.y
    dist = math.hypot(dx, dy)
    delta = _wrap_angle(math.atan2(dy, dx) - state.heading)
    return abs(delta), cfg.aim_tolerance + math.atan2(cfg.monster_radius, dist)


def _wrap_angle(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def shot_hits(state) -> bool:
    """A shot connects when the facing ray passes within the aim tolerance of
    the monster's body."""
    if not state.monster_alive:
        return False
    off, window = _monster_angular_window(state)
    return off <= window


def step(state: WorldState, action: int) -> StepResult:
    if state.done:
        raise ValueError("step() called on a finished episode")
    if not 0 <= int(action) < N_ACTIONS:
        raise ValueError(f"invalid action index {action}")
    cfg = state.config
    reward = 0.0
    info = {"ticks": 0}
    if cfg.scenario == Scenario.BASIC:
        reward -= 1.0  # per-decision action cost
        info["kill"] = False
        for _ in range(cfg.skip_count):
            state.tick += 1
            info["ticks"] += 1
            if action == MOVE_LEFT:
                state.x = max(cfg.agent_wall_gap, state.x - cfg.move_speed)
            elif action == MOVE_RIGHT:
                state.x = min(cfg.room_w - cfg.agent_wall_gap, state.x + cfg.move_speed)
            elif shot_hits(state):
                reward += 100.0
                state.monster_alive = False
                state.done = True
                state.done_reason = "kill"
                info["kill"] = True
            if not state.done and state.tick >= cfg.frame_limit:
                state.done = True
                state.done_reason = "frame_limit"
            if state.done:
                break
    else:
        info["medkits"] = 0
        died = False
        for _ in range(cfg.skip_count):
            state.tick += 1
            info["ticks"] += 1
            if action == TURN_LEFT:
                state.heading = _wrap_angle(state.heading + cfg.turn_rate)
            elif action == TURN_RIGHT:
                state.heading = _wrap_angle(state.heading - cfg.turn_rate)
            else:
                nx = state.x + math.cos(state.heading) * cfg.move_speed
                ny = state.y + math.sin(state.heading) * cfg.move_speed
                gap = 0.4
                state.x = min(max(nx, gap), cfg.room_w - gap)
                state.y = min(max(ny, gap), cfg.room_h - gap)
            for kit in state.medkits:
                if math.hypot(kit[0] - state.x, kit[1] - state.y) <= cfg.pickup_radius:
                    reward += 5.0
                    info["medkits"] += 1
                    state.health = min(100.0, state.health + cfg.heal_amount)
                    kit[:] = _spawn_medkit(cfg, state.rng, state.x, state.y)
            state.health -= cfg.decay_per_tick
            if state.health <= 0.0:
                state.health = 0.0
                state.done = True
                state.done_reason = "dead"
                died = True
            elif state.tick >= cfg.frame_limit:
                state.done = True
                state.done_reason = "frame_limit"
            if state.done:
                break
        if not died:
            reward += 1.0  # survived the decision
        info["health"] = state.health
    return StepResult(frame=render(state), reward=reward, done=state.done, info=info)


# ---------------------------------------------------------------------------
# rendering

_PIX = np.arange(FRAME_SIZE, dtype=np.float64)
# pixel centers, written so that negation symmetry is exact in floats
_CAM_BASE = (2.0 * _PIX - (FRAME_SIZE - 1.0)) / FRAME_SIZE
_ROWS = _PIX[:, None]

_WALL_BASE_X = 0.50
_WALL_BASE_Y = 0.62
_WALL_FADE = 0.18
_MONSTER_BODY = 0.95
_MONSTER_BAND = 0.40
_MEDKIT_BODY = 0.78
_MEDKIT_STRIPE = 0.95


def _focal(cfg):
    return (FRAME_SIZE / 2.0) / math.tan(cfg.fov / 2.0)


def _dir(heading):
    """Unit view direction with sub-ulp components snapped to exact zero, so
    axis-aligned headings render with exact mirror symmetry."""
    dx, dy = math.cos(heading), math.sin(heading)
    if abs(dx) < 1e-12:
        dx = 0.0
    if abs(dy) < 1e-12:
        dy = 0.0
    return dx, dy


def render(state: WorldState) -> np.ndarray:
    """84x84 grayscale frame in [0,1], deterministic in the state."""
    cfg = state.config
    tanf = math.tan(cfg.fov / 2.0)
    cam = _CAM_BASE * tanf
    dx, dy = _dir(state.heading)
    plx, ply = dy, -dx  # right of the view direction maps to screen right
    rx = dx + plx * cam
    ry = dy + ply * cam

    with np.errstate(divide="ignore"):
        tx = np.where(rx > 1e-12, (cfg.room_w - state.x) / rx,
                      np.where(rx < -1e-12, -state.x / rx, np.inf))
        ty = np.where(ry > 1e-12, (cfg.room_h - state.y) / ry,
                      np.where(ry < -1e-12, -state.y / ry, np.inf))
    t = np.minimum(tx, ty)
    base = np.where(tx < ty, _WALL_BASE_X, _WALL_BASE_Y)
    shade = base / (1.0 + _WALL_FADE * t)

    focal = _focal(cfg)
    span = focal * 0.5 / t            # wall covers world heights 0..1, camera at 0.5
    top = FRAME_SIZE / 2.0 - span
    bottom = FRAME_SIZE / 2.0 + span

    horizon = FRAME_SIZE / 2.0 - 0.5
    ceil_v = 0.26 - 0.16 * _PIX / horizon
    floor_v = 0.12 + 0.26 * (_PIX - FRAME_SIZE / 2.0) / horizon
    bg = np.where(_PIX < FRAME_SIZE / 2.0, ceil_v, floor_v)

    frame = np.where((_ROWS >= top) & (_ROWS < bottom), shade, bg[:, None])

    if cfg.scenario == Scenario.BASIC:
        if state.monster_alive:
            _draw_monster(frame, state, focal)
    else:
        order = sorted(state.medkits,
                       key=lambda k: -((k[0] - state.x) ** 2 + (k[1] - state.y) ** 2))
        for kit in order:
            _draw_medkit(frame, state, kit, focal)
    return np.clip(frame, 0.0, 1.0).astype(np.float32)


def _project(state, ex, ey, focal):
    """Forward distance, center column and px-per-world-unit of a point."""
    dx, dy = _dir(state.heading)
    relx, rely = ex - state.x, ey - state.y
    f = relx * dx + rely * dy
    if f < 0.05:
        return None
    lat = relx * dy - rely * dx
    col = FRAME_SIZE / 2.0 + (lat / f) * focal - 0.5
    return f, col, focal / f


def _billboard_rect(state, ex, ey, radius, z_lo, z_hi, focal):
    proj = _project(state, ex, ey, focal)
    if proj is None:
        return None
    f, col, scale = proj
    half_w = radius * scale
    c0 = int(math.ceil(col - half_w))
    c1 = int(math.floor(col + half_w)) + 1
    r0 = int(round(FRAME_SIZE / 2.0 + (0.5 - z_hi) * scale))
    r1 = int(round(FRAME_SIZE / 2.0 + (0.5 - z_lo) * scale))
    c0, c1 = max(c0, 0), min(c1, FRAME_SIZE)
    r0, r1 = max(r0, 0), min(r1, FRAME_SIZE)
    if c0 >= c1 or r0 >= r1:
        return None
    return r0, r1, c0, c1


def _draw_monster(frame, state, focal):
    rect = _billboard_rect(state, state.monster_x, state.monster_y,
                           state.config.monster_radius, 0.1, 0.8, focal)
    if rect is None:
        return
    r0, r1, c0, c1 = rect
    frame[r0:r1, c0:c1] = _MONSTER_BODY
    band = r1 - max(1, (r1 - r0) // 4)
    frame[band:r1, c0:c1] = _MONSTER_BAND


def _draw_medkit(frame, state, kit, focal):
    rect = _billboard_rect(state, kit[0], kit[1], 0.3, 0.0, 0.3, focal)
    if rect is None:
        return
    r0, r1, c0, c1 = rect
    frame[r0:r1, c0:c1] = _MEDKIT_BODY
    stripe = r0 + max(1, (r1 - r0) // 3)
    frame[r0:stripe, c0:c1] = _MEDKIT_STRIPE


def monster_screen_rect(state: WorldState):
    """Screen-space bounding rows/cols of the monster billboard, or None."""
    if state.config.scenario != Scenario.BASIC or not state.monster_alive:
        return None
    return _billboard_rect(state, state.monster_x, state.monster_y,
                           state.config.monster_radius, 0.1, 0.8,
                           _focal(state.config))


# ---------------------------------------------------------------------------
# convenience wrapper and debugging recorder

class MicroEnv:
    """Owns one episode stream: reset() starts the next seeded episode."""

    def __init__(self, config: ScenarioConfig, seed):
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.state = None

    def reset(self):
        self.state, frame = reset(self.config, self.rng)
        return frame

    def step(self, action):
        return step(self.state, action)

    @property
    def done(self):
        return self.state is None or self.state.done


class EpisodeRecorder:
    """Writes each decision's frame as PGM plus a CSV of (tick, action,
    reward, done) for debugging."""

    def __init__(self, directory):
        self.directory = str(directory)
        os.makedirs(self.directory, exist_ok=True)
        self._csv_path = os.path.join(self.directory, "episode.csv")
        self._rows = []
        self._idx = 0

    def record(self, tick, action, reward, done, frame):
        write_pgm(os.path.join(self.directory, f"{self._idx:05d}.pgm"),
                  to_u8(frame, 0.0, 1.0))
        self._rows.append((tick, int(action), float(reward), bool(done)))
        self._idx += 1

    def close(self):
        with open(self._csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tick", "action", "reward", "done"])
            writer.writerows(self._rows)
