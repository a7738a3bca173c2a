"""Checkpoint scoring, normalized-score baselines and robustness grids.

The normalized score maps a random policy's average to 0 and the trained
agent's undropped average to 1:

    s_p = (s_a - s_min) / (s_max - s_min)

A robustness grid evaluates the trained agent under every combination of
per-view drop probabilities. Episode seeds are shared across cells (and the
drop draws reuse one uniform stream per episode), so cells differ only
through the drops themselves.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import net
from .env import MicroEnv, config_for
from .net import LstmState, NetworkSpec, Variant
from .preprocess import DropConfig, apply_drop, make_observation

GRID_CSV_HEADER = ["p_generic", "p_center", "mean", "std", "n", "s_p"]
BASELINE_CSV_HEADER = ["quantity", "value", "n"]


@dataclass(frozen=True)
class ScoreStats:
    mean: float
    std: float
    n: int
    min: float
    max: float

    @classmethod
    def from_scores(cls, scores):
        scores = np.asarray(scores, dtype=np.float64)
        if scores.size < 1:
            raise ValueError("need at least one episode")
        std = float(scores.std(ddof=1)) if scores.size > 1 else 0.0
        return cls(mean=float(scores.mean()), std=std, n=int(scores.size),
                   min=float(scores.min()), max=float(scores.max()))

    @property
    def stderr(self):
        return self.std / np.sqrt(self.n)


def _episode_seeds(seed, episode):
    env_ss = np.random.SeedSequence(entropy=seed, spawn_key=(episode, 0))
    act_ss = np.random.SeedSequence(entropy=seed, spawn_key=(episode, 1))
    drop_ss = np.random.SeedSequence(entropy=seed, spawn_key=(episode, 2))
    return env_ss, act_ss, drop_ss


def run_policy_episode(params, spec, scenario_cfg, env_ss, act_ss, drop_ss,
                       drop=None, greedy=False):
    """One seeded episode under the policy; returns (score, decisions)."""
    env = MicroEnv(scenario_cfg, seed=env_ss)
    rng = np.random.default_rng(act_ss)
    drop_rng = np.random.default_rng(drop_ss)
    obs = make_observation(env.reset(), spec.variant)
    state = LstmState.zeros(spec.lstm_units)
    total = 0.0
    decisions = 0
    while not env.done:
        if drop is not None and drop.active:
            obs = apply_drop(obs, drop, drop_rng)
        pv, state = net.forward(params, spec, obs, state)
        if greedy:
            action = int(np.argmax(pv.policy))
        else:
            action = net.sample_action(rng, pv.policy)
        result = env.step(action)
        total += result.reward
        decisions += 1
        if not result.done:
            obs = make_observation(result.frame, spec.variant)
    return total, decisions


def evaluate(params, spec: NetworkSpec, scenario, drop: DropConfig = None,
             episodes=100, seed=0, greedy=False, env_overrides=None,
             collect_lengths=False):
    """Score statistics over seeded episodes, sampling from the policy
    (argmax when ``greedy``)."""
    if episodes < 1:
        raise ValueError("need at least one episode")
    scenario_cfg = config_for(scenario, **(env_overrides or {}))
    scores, lengths = [], []
    for ep in range(episodes):
        env_ss, act_ss, drop_ss = _episode_seeds(seed, ep)
        score, decisions = run_policy_episode(params, spec, scenario_cfg,
                                              env_ss, act_ss, drop_ss,
                                              drop=drop, greedy=greedy)
        scores.append(score)
        lengths.append(decisions)
    stats = ScoreStats.from_scores(scores)
    if collect_lengths:
        return stats, np.asarray(lengths)
    return stats


def estimate_baselines(scenario, episodes=100, seed=0, env_overrides=None) -> ScoreStats:
    """Mean score of a uniform-random policy: the untrained floor s_min."""
    if episodes < 1:
        raise ValueError("need at least one episode")
    scenario_cfg = config_for(scenario, **(env_overrides or {}))
    scores = []
    for ep in range(episodes):
        env_ss, act_ss, _ = _episode_seeds(seed, ep)
        env = MicroEnv(scenario_cfg, seed=env_ss)
        rng = np.random.default_rng(act_ss)
        env.reset()
        total = 0.0
        while not env.done:
            total += env.step(int(rng.integers(3))).reward
        scores.append(total)
    return ScoreStats.from_scores(scores)


def score_percentage(s_a, s_min, s_max) -> float:
    """Normalized score; not clamped, small excursions outside [0,1] are
    reported as measured."""
    if not s_max > s_min:
        raise ValueError(f"s_max ({s_max}) must exceed s_min ({s_min})")
    return (s_a - s_min) / (s_max - s_min)


@dataclass(frozen=True)
class GridCell:
    p_generic: float
    p_center: float  # None for one-stream variants
    stats: ScoreStats
    s_p: float


@dataclass
class RobustnessGrid:
    variant: Variant
    p_values: list
    cells: list
    s_min: float
    s_max: float

    def cell(self, p_generic, p_center=None):
        for c in self.cells:
            if c.p_generic == p_generic and c.p_center == p_center:
                return c
        raise KeyError((p_generic, p_center))

    def s_p_matrix(self):
        """(len(p), len(p)) matrix indexed [i_generic, j_center], or a 1-D
        row for one-stream variants."""
        if self.variant != Variant.DUAL:
            return np.array([self.cell(p).s_p for p in self.p_values])
        m = np.empty((len(self.p_values), len(self.p_values)))
        for i, pg in enumerate(self.p_values):
            for j, pc in enumerate(self.p_values):
                m[i, j] = self.cell(pg, pc).s_p
        return m

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(GRID_CSV_HEADER)
            for c in self.cells:
                pc = "" if c.p_center is None else repr(float(c.p_center))
                writer.writerow([repr(float(c.p_generic)), pc,
                                 repr(c.stats.mean), repr(c.stats.std),
                                 c.stats.n, repr(c.s_p)])


def robustness_grid(params, spec: NetworkSpec, scenario, p_values=None,
                    episodes=100, seed=0, greedy=False, env_overrides=None,
                    s_min=None, s_max=None) -> RobustnessGrid:
    """Evaluate every drop-probability combination and normalize scores.

    By default ``s_min`` comes from a uniform-random-policy baseline over the
    same episode count and ``s_max`` is the measured zero-drop cell, which
    therefore sits at exactly 1.0.
    """
    p_values = [0.0, 0.2, 0.5, 0.8, 1.0] if p_values is None else list(p_values)
    if not p_values or any(not 0.0 <= p <= 1.0 for p in p_values):
        raise ValueError("p_values must be non-empty, each within [0, 1]")
    if s_min is None:
        s_min = estimate_baselines(scenario, episodes=episodes, seed=seed,
                                   env_overrides=env_overrides).mean

    dual = spec.variant == Variant.DUAL
    combos = [(pg, pc) for pc in p_values for pg in p_values] if dual \
        else [(pm, None) for pm in p_values]
    measured = {}
    for pg, pc in combos:
        drop = DropConfig(p_generic=pg, p_center=pc or 0.0)
        measured[(pg, pc)] = evaluate(params, spec, scenario, drop=drop,
                                      episodes=episodes, seed=seed, greedy=greedy,
                                      env_overrides=env_overrides)
    if s_max is None:
        zero = (0.0, 0.0) if dual else (0.0, None)
        if zero in measured:
            s_max = measured[zero].mean
        else:
            s_max = evaluate(params, spec, scenario,
                             drop=DropConfig(), episodes=episodes, seed=seed,
                             greedy=greedy, env_overrides=env_overrides).mean
    cells = [GridCell(pg, pc, stats, score_percentage(stats.mean, s_min, s_max))
             for (pg, pc), stats in measured.items()]
    return RobustnessGrid(variant=spec.variant, p_values=p_values, cells=cells,
                          s_min=float(s_min), s_max=float(s_max))


def write_baselines_csv(path, s_min_stats: ScoreStats, s_max_stats: ScoreStats = None):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BASELINE_CSV_HEADER)
        writer.writerow(["s_min", repr(s_min_stats.mean), s_min_stats.n])
        if s_max_stats is not None:
            writer.writerow(["s_max", repr(s_max_stats.mean), s_max_stats.n])
