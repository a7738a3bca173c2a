"""Asynchronous advantage actor-critic training.

N workers each own a private environment. Per iteration a worker snapshots
the shared parameters, collects an on-policy rollout of up to ``t_max``
decisions, computes the loss gradients against its snapshot, clips the global
norm and applies one atomic Adam update to the shared parameters.

Sharing discipline: snapshot-read and gradient-apply each hold one lock, so
every update is whole-gradient atomic and every snapshot is consistent (a
single point in the update sequence, never a torn mixture). Multi-worker
runs place the parameters and optimizer moments in shared memory and fork
one process per worker; episode rows travel back over a queue that is fed
under the same lock, keeping the log's frame column non-decreasing. With a
single worker the loop runs inline on the calling thread and is
bit-reproducible; in that mode the log's wall-clock column is written as 0.0
so repeated runs produce identical files.
"""
from __future__ import annotations

import multiprocessing as mp
import queue as queue_mod
import sys
import threading
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import net, nn
from .checkpoint import save_checkpoint
from .env import MicroEnv, Scenario, config_for
from .net import LstmState, NetworkSpec, Rollout, RolloutStep, Variant
from .preprocess import DropConfig, apply_drop, make_observation

LOG_HEADER = "wall_s,env_frames,worker,episode_reward"


@dataclass
class TrainConfig:
    scenario: Scenario = Scenario.BASIC
    variant: Variant = Variant.DUAL
    workers: int = 8
    total_frames: int = 5_000_000
    t_max: int = 20
    gamma: float = 0.99
    entropy_weight: float = 0.01
    value_coeff: float = 0.5
    lr: float = 1e-4
    grad_clip: float = 40.0
    seed: int = 0
    checkpoint_path: str = "checkpoint.dva"
    log_path: str = "train_log.csv"
    checkpoint_interval: int = 0        # env frames between periodic saves, 0 = final only
    n_actions: int = 3
    train_drop: DropConfig = None       # optional training-time drops (off by default)
    env_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scenario = Scenario(self.scenario)
        self.variant = Variant(self.variant)
        if self.workers < 1:
            raise ValueError("need at least one worker")
        if self.total_frames < 0:
            raise ValueError("frame budget must be non-negative")

    def network_spec(self):
        return NetworkSpec(self.variant, n_actions=self.n_actions)

    def scenario_config(self):
        return config_for(self.scenario, **self.env_overrides)

    def echo(self):
        d = asdict(self)
        d["train_drop"] = None if self.train_drop is None else asdict(self.train_drop)
        return d


class TrainLogger:
    def __init__(self, path, deterministic_time):
        self.path = path
        self.deterministic_time = deterministic_time
        self.t0 = time.monotonic()
        self.episodes = 0
        self._fh = open(path, "w") if path else None
        if self._fh:
            self._fh.write(LOG_HEADER + "\n")
            self._fh.flush()

    def write_episode(self, env_frames, worker, reward, wall=None):
        self.episodes += 1
        if self._fh is None:
            return
        if self.deterministic_time:
            wall = 0.0
        elif wall is None:
            wall = time.monotonic() - self.t0
        self._fh.write(f"{wall:.3f},{env_frames},{worker},{reward!r}\n")
        self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


class SharedParams:
    """In-process shared state: parameters, optimizer state and counters."""

    def __init__(self, params, lr, logger=None):
        self.lock = threading.Lock()
        self.params = params
        self.adam = nn.AdamState.zeros(params)
        self.lr = lr
        self.updates = 0
        self.env_frames = 0
        self.rejected = 0
        self.logger = logger
        self._scratch = np.empty_like(params.flat)

    def snapshot(self, into=None):
        with self.lock:
            if into is None:
                return self.params.copy()
            into.copy_from(self.params)
            return into

    def apply_gradients(self, grads):
        """One atomic Adam update; non-finite gradients are rejected and counted."""
        if not np.all(np.isfinite(grads.flat)):  # checked outside the lock
            with self.lock:
                self.rejected += 1
            return False
        with self.lock:
            nn.adam_update(self.params, grads, self.adam, lr=self.lr,
                           scratch=self._scratch, check=False)
            self.updates += 1
            return True

    def frames(self):
        with self.lock:
            return self.env_frames

    def finish_rollout(self, ticks, worker_id, episode_reward=None):
        with self.lock:
            self.env_frames += ticks
            if episode_reward is not None and self.logger is not None:
                self.logger.write_episode(self.env_frames, worker_id, episode_reward)

    def counters(self):
        with self.lock:
            return self.env_frames, self.updates, self.rejected

    def state_copy(self):
        with self.lock:
            adam = nn.AdamState(m=self.adam.m.copy(), v=self.adam.v.copy(),
                                t=self.adam.t)
            return self.params.copy(), adam, self.env_frames, self.updates, self.rejected


class ProcShared:
    """Process-backed twin of :class:`SharedParams` over shared memory."""

    def __init__(self, params, lr, ctx):
        self._shapes = params.shapes()
        n = params.size
        self._raw_p = mp.RawArray("f", n)
        self._raw_m = mp.RawArray("f", n)
        self._raw_v = mp.RawArray("f", n)
        self.lock = ctx.Lock()
        self._counts = mp.RawArray("q", 3)  # env_frames, updates, rejected (lock-guarded)
        self.queue = ctx.Queue()
        self.lr = lr
        self._attach()
        self.params.flat[...] = params.flat

    def _attach(self):
        flat = np.frombuffer(self._raw_p, dtype=np.float32)
        self.params = nn.ParamSet(self._shapes, dtype=np.float32, flat=flat)
        self._m = np.frombuffer(self._raw_m, dtype=np.float32)
        self._v = np.frombuffer(self._raw_v, dtype=np.float32)
        self._counts_np = np.frombuffer(self._counts, dtype=np.int64)
        self._scratch = np.empty_like(flat)

    def __getstate__(self):
        d = self.__dict__.copy()
        for k in ("params", "_m", "_v", "_counts_np", "_scratch"):
            d.pop(k, None)
        return d

    def __setstate__(self, d):
        self.__dict__.update(d)
        self._attach()

    def snapshot(self, into=None):
        with self.lock:
            if into is None:
                return self.params.copy()
            into.copy_from(self.params)
            return into

    def apply_gradients(self, grads):
        if not np.all(np.isfinite(grads.flat)):  # checked outside the lock
            with self.lock:
                self._counts_np[2] += 1
            return False
        with self.lock:
            adam = nn.AdamState(m=self._m, v=self._v, t=int(self._counts_np[1]))
            nn.adam_update(self.params, grads, adam, lr=self.lr,
                           scratch=self._scratch, check=False)
            self._counts_np[1] = adam.t
            return True

    def frames(self):
        with self.lock:
            return int(self._counts_np[0])

    def finish_rollout(self, ticks, worker_id, episode_reward=None):
        with self.lock:
            self._counts_np[0] += ticks
            if episode_reward is not None:
                # enqueued under the lock so rows arrive in frame order
                self.queue.put(("episode", int(self._counts_np[0]), worker_id,
                                episode_reward))

    def counters(self):
        with self.lock:
            c = self._counts_np
            return int(c[0]), int(c[1]), int(c[2])

    def state_copy(self):
        with self.lock:
            adam = nn.AdamState(m=self._m.copy(), v=self._v.copy(),
                                t=int(self._counts_np[1]))
            return (self.params.copy(), adam, int(self._counts_np[0]),
                    int(self._counts_np[1]), int(self._counts_np[2]))


def collect_rollout(env: MicroEnv, params, spec, state: LstmState, obs, t_max, rng,
                    drop=None, drop_rng=None):
    """Sample up to ``t_max`` on-policy decisions from the worker's env.

    Returns ``(rollout, caches, state, obs, ticks)``: the forward caches for
    gradient reuse, the recurrent state and observation to carry forward, and
    the engine ticks consumed. ``rollout.terminal`` tells the caller to reset.
    """
    initial = state.copy()
    steps, caches = [], []
    ticks = 0
    terminal = False
    for _ in range(t_max):
        pv, state, cache = net.forward_cached(params, spec, obs, state)
        action = net.sample_action(rng, pv.policy)
        result = env.step(action)
        ticks += result.info["ticks"]
        steps.append(RolloutStep(obs=obs, action=action, reward=result.reward,
                                 value=pv.value))
        caches.append(cache)
        if result.done:
            terminal = True
            obs = None
            break
        obs = make_observation(result.frame, spec.variant)
        if drop is not None and drop.active:
            obs = apply_drop(obs, drop, drop_rng)
    if terminal:
        bootstrap = 0.0
    else:
        pv, _ = net.forward(params, spec, obs, state)
        bootstrap = pv.value
    rollout = Rollout(steps=steps, initial_state=initial,
                      bootstrap_value=bootstrap, terminal=terminal)
    return rollout, caches, state, obs, ticks


class _Worker:
    """One worker's loop state; works against either shared-state backend."""

    def __init__(self, worker_id, config: TrainConfig, shared):
        self.id = worker_id
        self.config = config
        self.shared = shared
        self.spec = config.network_spec()
        base = config.seed + worker_id
        self.action_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=base, spawn_key=(0,)))
        self.drop_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=base, spawn_key=(2,)))
        self.env = MicroEnv(config.scenario_config(),
                            seed=np.random.SeedSequence(entropy=base, spawn_key=(1,)))
        self.episodes = 0
        self.restarts = 0
        self._snapshot_buf = shared.snapshot()
        self._begin_episode()

    def _begin_episode(self):
        frame = self.env.reset()
        self.obs = make_observation(frame, self.config.variant)
        if self.config.train_drop is not None and self.config.train_drop.active:
            self.obs = apply_drop(self.obs, self.config.train_drop, self.drop_rng)
        self.lstm = LstmState.zeros(self.spec.lstm_units)
        self.episode_reward = 0.0

    def run(self):
        cfg = self.config
        while self.shared.frames() < cfg.total_frames:
            snapshot = self.shared.snapshot(into=self._snapshot_buf)
            rollout, caches, self.lstm, self.obs, ticks = collect_rollout(
                self.env, snapshot, self.spec, self.lstm, self.obs, cfg.t_max,
                self.action_rng, cfg.train_drop, self.drop_rng)
            self.episode_reward += sum(s.reward for s in rollout.steps)
            try:
                _, grads = net.a3c_loss_and_grads(
                    rollout, snapshot, self.spec, cfg.gamma,
                    entropy_weight=cfg.entropy_weight, value_coeff=cfg.value_coeff,
                    caches=caches)
            except FloatingPointError:
                self.restarts += 1
                print(f"worker {self.id}: non-finite loss, restarting episode",
                      file=sys.stderr)
                self.shared.finish_rollout(ticks, self.id)
                self._begin_episode()
                continue
            nn.clip_global_norm(grads, cfg.grad_clip)
            self.shared.apply_gradients(grads)
            done_reward = self.episode_reward if rollout.terminal else None
            self.shared.finish_rollout(ticks, self.id, done_reward)
            if rollout.terminal:
                self.episodes += 1
                self._begin_episode()


def _worker_main(worker_id, config, shared):
    try:
        worker = _Worker(worker_id, config, shared)
        worker.run()
        shared.queue.put(("done", worker_id, worker.episodes, worker.restarts))
    except Exception as exc:  # surfaced by the parent
        shared.queue.put(("error", worker_id, repr(exc), 0))


@dataclass
class TrainResult:
    env_frames: int
    updates: int
    episodes: int
    rejected_updates: int
    episode_restarts: int
    wall_s: float
    checkpoint_path: str
    log_path: str


def train(config: TrainConfig) -> TrainResult:
    """Run A3C to the env-frame budget; writes checkpoint and episode log."""
    t_start = time.monotonic()
    spec = config.network_spec()
    params = net.build_network(spec, seed=config.seed)
    logger = TrainLogger(config.log_path, deterministic_time=config.workers == 1)

    meta_base = {
        "variant": config.variant.value,
        "scenario": config.scenario.value,
        "n_actions": config.n_actions,
        "config": config.echo(),
    }

    def save(shared, path):
        snap, adam, frames, updates, rejected = shared.state_copy()
        meta = dict(meta_base, env_frames=frames, updates=updates, rejected=rejected)
        save_checkpoint(path, snap, adam, meta)

    episodes = 0
    restarts = 0
    if config.workers == 1 or config.total_frames == 0:
        shared = SharedParams(params, lr=config.lr, logger=logger)
        if config.total_frames > 0:
            worker = _Worker(0, config, shared)
            worker.run()
            episodes, restarts = worker.episodes, worker.restarts
        save(shared, config.checkpoint_path)
    else:
        ctx = mp.get_context("fork")
        shared = ProcShared(params, lr=config.lr, ctx=ctx)
        procs = [ctx.Process(target=_worker_main, args=(i, config, shared),
                             name=f"worker-{i}") for i in range(config.workers)]
        for p in procs:
            p.start()
        pending = len(procs)
        last_saved = 0
        errors = []
        # queue feeder threads may reorder rows across processes; buffer and
        # sort by the frame counter taken under the lock
        rows = []

        def handle(msg):
            nonlocal pending, episodes, restarts
            kind = msg[0]
            if kind == "episode":
                rows.append((msg[1], msg[2], msg[3], time.monotonic() - logger.t0))
            elif kind == "done":
                pending -= 1
                episodes += msg[2]
                restarts += msg[3]
            elif kind == "error":
                pending -= 1
                errors.append(f"worker {msg[1]}: {msg[2]}")

        while pending > 0:
            try:
                handle(shared.queue.get(timeout=2.0))
            except queue_mod.Empty:
                if not any(p.is_alive() for p in procs):
                    break
            if config.checkpoint_interval:
                mark = shared.frames() // config.checkpoint_interval
                if mark > last_saved:
                    last_saved = mark
                    save(shared, config.checkpoint_path)
        for p in procs:
            p.join()
        while True:
            try:
                handle(shared.queue.get_nowait())
            except queue_mod.Empty:
                break
        rows.sort(key=lambda r: r[0])
        for frames_at, worker_id, reward, wall in rows:
            logger.write_episode(frames_at, worker_id, reward, wall=wall)
        if errors:
            raise RuntimeError("; ".join(errors))
        save(shared, config.checkpoint_path)

    logger.close()
    frames, updates, rejected = shared.counters()
    return TrainResult(
        env_frames=frames,
        updates=updates,
        episodes=episodes,
        rejected_updates=rejected,
        episode_restarts=restarts,
        wall_s=time.monotonic() - t_start,
        checkpoint_path=config.checkpoint_path,
        log_path=config.log_path,
    )


def load_log(path):
    """Episode log as a dict of numpy columns plus the trailing-100 mean."""
    rows = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding=None)
    rows = np.atleast_1d(rows)
    rewards = rows["episode_reward"].astype(np.float64)
    return {
        "wall_s": rows["wall_s"].astype(np.float64),
        "env_frames": rows["env_frames"].astype(np.int64),
        "worker": rows["worker"].astype(np.int64),
        "episode_reward": rewards,
        "trailing_mean": trailing_mean(rewards, 100),
    }


def trailing_mean(values, window=100):
    """Mean of the last ``window`` values at each index (shorter at the start)."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    csum = np.cumsum(values)
    for i in range(len(values)):
        lo = max(0, i + 1 - window)
        total = csum[i] - (csum[lo - 1] if lo > 0 else 0.0)
        out[i] = total / (i + 1 - lo)
    return out
