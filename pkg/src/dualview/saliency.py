"""Input-gradient saliency maps for the value and policy heads.

A map is the elementwise absolute gradient of a scalar network output with
respect to one input view's pixels, computed through the full network for a
single decision step; the recurrent state is treated as a constant input.
The policy scalar defaults to the argmax action's post-softmax probability
(the pre-softmax logit is available behind a flag).
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import net, nn
from .net import LstmState, NetworkSpec
from .pgmio import to_u8, write_pgm

HEADS = ("value", "policy")
INDEX_CSV_HEADER = ["frame_idx", "view", "head", "path", "min", "max"]


@dataclass
class SaliencyMaps:
    """Per input view, one nonnegative map per head, same shape as the view."""

    view_names: tuple
    value: dict      # view name -> |dV/dinput|
    policy: dict     # view name -> |dpi_a*/dinput|
    inputs: dict     # view name -> the raw input view
    argmax_action: int

    def map_for(self, view, head):
        return self.value[view] if head == "value" else self.policy[view]


def compute_saliency(params, spec: NetworkSpec, obs, state: LstmState,
                     policy_scalar="prob") -> SaliencyMaps:
    """Backpropagate the value scalar and the argmax-action policy scalar to
    the input pixels and take elementwise absolute values."""
    if policy_scalar not in ("prob", "logit"):
        raise ValueError("policy_scalar must be 'prob' or 'logit'")
    pv, _, cache = net.forward_cached(params, spec, obs, state)
    a_star = int(np.argmax(pv.policy))
    names = [name for name, _ in spec.streams()]

    dvalue_grads = net.input_grads_for_scalar(
        params, spec, cache, dlogits=np.zeros(spec.n_actions, dtype=params.dtype),
        dvalue=1.0)
    if policy_scalar == "prob":
        dp = np.zeros(spec.n_actions, dtype=np.float64)
        dp[a_star] = 1.0
        dlogits = nn.softmax_backward(dp, pv.policy.astype(np.float64))
    else:
        dlogits = np.zeros(spec.n_actions, dtype=np.float64)
        dlogits[a_star] = 1.0
    dpolicy_grads = net.input_grads_for_scalar(
        params, spec, cache, dlogits=dlogits.astype(params.dtype), dvalue=0.0)

    value = {n: np.abs(g) for n, g in zip(names, dvalue_grads)}
    policy = {n: np.abs(g) for n, g in zip(names, dpolicy_grads)}
    for maps in (value, policy):
        for n, m in maps.items():
            if not np.all(np.isfinite(m)):
                raise FloatingPointError(f"non-finite saliency for view {n}")
    inputs = {n: np.asarray(v) for n, v in zip(names, obs.views)}
    return SaliencyMaps(view_names=tuple(names), value=value, policy=policy,
                        inputs=inputs, argmax_action=a_star)


def export_maps(maps: SaliencyMaps, directory, frame_idx=0, index_rows=None):
    """Write one min-max normalized PGM per (view, head) plus the raw input
    views; returns the written paths. ``index_rows`` collects CSV rows for
    :func:`write_index`."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for view in maps.view_names:
        for head in HEADS + ("input",):
            img = maps.inputs[view] if head == "input" else maps.map_for(view, head)
            path = os.path.join(directory, f"{frame_idx}_{view}_{head}.pgm")
            write_pgm(path, to_u8(img))
            written.append(path)
            if index_rows is not None:
                index_rows.append([frame_idx, view, head, path,
                                   repr(float(img.min())), repr(float(img.max()))])
    return written


def write_index(directory, index_rows):
    path = os.path.join(directory, "index.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(INDEX_CSV_HEADER)
        writer.writerows(index_rows)
    return path
