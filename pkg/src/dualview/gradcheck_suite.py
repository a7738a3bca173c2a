"""Randomized finite-difference trials for every layer type and the rollout
loss. Each trial builds a small float64 instance, wires the analytic backward
pass into a scalar loss and runs :func:`dualview.nn.grad_check` against it.
"""
from __future__ import annotations

import numpy as np

from . import net, nn
from .nn import ParamSet
from .net import LstmState, NetworkSpec, Rollout, RolloutStep
from .preprocess import Observation

LAYER_KINDS = ("conv", "fc", "elu", "softmax", "lstm")


def _rand_params(pairs, rng, scale=1.0):
    return ParamSet.from_arrays(
        [(n, rng.normal(scale=scale, size=s)) for n, s in pairs], dtype=np.float64)


def layer_trial(kind, rng, tolerance=1e-5, h=1e-5):
    """One randomized small instance of a layer; returns the check report.

    The scalar loss is a random projection of the layer output, and the input
    tensor is checked alongside the weights.
    """
    if kind == "conv":
        c_in, c_out = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        s = int(rng.integers(1, 3))
        hh = k + int(rng.integers(0, 5))
        params = _rand_params([("x", (c_in, hh, hh)), ("w", (c_out, c_in, k, k)),
                               ("b", (c_out,))], rng)
        ho = (hh - k) // s + 1
        proj = rng.normal(size=(c_out, ho, ho))

        def loss_fn(p):
            y, cache = nn.conv2d_forward(p["x"], p["w"], p["b"], s)
            dx, dw, db = nn.conv2d_backward(proj, cache)
            return float((proj * y).sum()), ParamSet.from_arrays(
                [("x", dx), ("w", dw), ("b", db)])

    elif kind == "fc":
        n, m = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        params = _rand_params([("x", (n,)), ("w", (m, n)), ("b", (m,))], rng)
        proj = rng.normal(size=m)

        def loss_fn(p):
            y, cache = nn.fc_forward(p["x"], p["w"], p["b"])
            dx, dw, db = nn.fc_backward(proj, cache)
            return float(proj @ y), ParamSet.from_arrays(
                [("x", dx), ("w", dw), ("b", db)])

    elif kind == "elu":
        n = int(rng.integers(1, 8))
        params = _rand_params([("x", (n,))], rng, scale=2.0)
        proj = rng.normal(size=n)

        def loss_fn(p):
            y, cache = nn.elu_forward(p["x"])
            return float(proj @ y), ParamSet.from_arrays(
                [("x", nn.elu_backward(proj, cache))])

    elif kind == "softmax":
        n = int(rng.integers(2, 6))
        params = _rand_params([("z", (n,))], rng)
        proj = rng.normal(size=n)

        def loss_fn(p):
            prob = nn.softmax(p["z"])
            return float(proj @ prob), ParamSet.from_arrays(
                [("z", nn.softmax_backward(proj, prob))])

    elif kind == "lstm":
        n_in, n = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        names = [("x", (n_in,)), ("h0", (n,)), ("c0", (n,))]
        names += [(f"w{g}", (n, n_in + n)) for g in "ifog"]
        names += [(f"b{g}", (n,)) for g in "ifog"]
        params = _rand_params(names, rng)
        ph = rng.normal(size=n)
        pc = rng.normal(size=n)

        def loss_fn(p):
            h, c, cache = nn.lstm_step_forward(
                p["x"], p["h0"], p["c0"],
                p["wi"], p["wf"], p["wo"], p["wg"],
                p["bi"], p["bf"], p["bo"], p["bg"])
            (dx, dh0, dc0, dwi, dwf, dwo, dwg,
             dbi, dbf, dbo, dbg) = nn.lstm_step_backward(ph, pc, cache)
            return float(ph @ h + pc @ c), ParamSet.from_arrays(
                [("x", dx), ("h0", dh0), ("c0", dc0),
                 ("wi", dwi), ("wf", dwf), ("wo", dwo), ("wg", dwg),
                 ("bi", dbi), ("bf", dbf), ("bo", dbo), ("bg", dbg)])
    else:
        raise ValueError(f"unknown layer kind {kind}")

    return nn.grad_check(loss_fn, params, h=h, tolerance=tolerance)


def random_rollout(spec: NetworkSpec, rng, length, terminal=False) -> Rollout:
    streams = spec.streams()
    steps = []
    for _ in range(length):
        views = tuple(rng.random((size, size)) for _, size in streams)
        steps.append(RolloutStep(obs=Observation(spec.variant, views),
                                 action=int(rng.integers(spec.n_actions)),
                                 reward=float(rng.normal()), value=0.0))
    init = LstmState(h=rng.normal(size=spec.lstm_units) * 0.5,
                     c=rng.normal(size=spec.lstm_units) * 0.5)
    return Rollout(steps=steps, initial_state=init,
                   bootstrap_value=0.0 if terminal else float(rng.normal()),
                   terminal=terminal)


def loss_trial(spec: NetworkSpec, rng, length, tolerance=1e-5, h=1e-5,
               gamma=0.99, entropy_weight=0.01, value_coeff=0.5):
    """FD check of the full rollout loss on a small random network."""
    params = net.build_network(spec, seed=int(rng.integers(1 << 31)),
                               dtype=np.float64)
    rollout = random_rollout(spec, rng, length)
    adv = net.rollout_advantages(rollout, params, spec, gamma)

    def loss_fn(p):
        return net.a3c_loss_and_grads(rollout, p, spec, gamma,
                                      entropy_weight=entropy_weight,
                                      value_coeff=value_coeff, advantages=adv)

    return nn.grad_check(loss_fn, params, h=h, tolerance=tolerance)
