"""Frame-to-observation conversion and per-view Bernoulli frame drops.

An 84x84 frame either feeds the network whole (single view) or is split into
a 42x42 mean-pooled generic view and a 42x42 exact center crop.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net import Variant

FRAME_SIZE = 84
VIEW_SIZE = 42
CENTER_OFFSET = 21  # crop covers rows/cols 21..62 inclusive


@dataclass(frozen=True)
class Observation:
    """View-variant network input; ``views`` is ordered per the net's streams."""

    variant: Variant
    views: tuple

    @classmethod
    def single(cls, frame):
        return cls(Variant.SINGLE, (frame,))

    @classmethod
    def dual(cls, generic, center):
        return cls(Variant.DUAL, (generic, center))

    @classmethod
    def generic_only(cls, view):
        return cls(Variant.GENERIC_ONLY, (view,))

    @property
    def generic(self):
        if self.variant == Variant.SINGLE:
            raise AttributeError("single-view observation has no generic view")
        return self.views[0]

    @property
    def center(self):
        if self.variant != Variant.DUAL:
            raise AttributeError("only dual observations carry a center view")
        return self.views[1]


@dataclass(frozen=True)
class DropConfig:
    """Per-view drop probabilities; one-stream variants are governed by
    ``p_generic`` (alias ``p_main``)."""

    p_generic: float = 0.0
    p_center: float = 0.0

    def __post_init__(self):
        for p in (self.p_generic, self.p_center):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"drop probability {p} outside [0, 1]")

    @property
    def p_main(self):
        return self.p_generic

    @property
    def active(self):
        return self.p_generic > 0.0 or self.p_center > 0.0


def _require_frame(frame):
    frame = np.asarray(frame)
    if frame.shape != (FRAME_SIZE, FRAME_SIZE):
        raise ValueError(f"expected {FRAME_SIZE}x{FRAME_SIZE} frame, got {frame.shape}")
    return frame


def make_generic(frame):
    """42x42 low-resolution view: non-overlapping 2x2 mean pooling."""
    frame = _require_frame(frame)
    return frame.reshape(VIEW_SIZE, 2, VIEW_SIZE, 2).mean(axis=(1, 3))


def make_center(frame):
    """42x42 high-resolution view: exact copy of the frame center."""
    frame = _require_frame(frame)
    lo, hi = CENTER_OFFSET, CENTER_OFFSET + VIEW_SIZE
    return frame[lo:hi, lo:hi].copy()


def make_observation(frame, variant: Variant) -> Observation:
    if variant == Variant.SINGLE:
        return Observation.single(_require_frame(frame).copy())
    if variant == Variant.DUAL:
        return Observation.dual(make_generic(frame), make_center(frame))
    return Observation.generic_only(make_generic(frame))


def apply_drop(obs: Observation, cfg: DropConfig, rng) -> Observation:
    """Independently per view, replace it with all-zeros with its probability.

    One uniform draw is consumed per view regardless of the probability.
    """
    if obs.variant == Variant.DUAL:
        probs = (cfg.p_generic, cfg.p_center)
    else:
        probs = (cfg.p_main,)
    views = tuple(np.zeros_like(v) if rng.random() < p else v
                  for v, p in zip(obs.views, probs))
    return Observation(obs.variant, views)
