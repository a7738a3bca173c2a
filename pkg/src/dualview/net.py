"""Policy/value network variants and the actor-critic rollout loss.

Three wirings share one trunk: per input stream a two-layer conv stack
(16 filters 8x8 stride 4, then 32 filters 4x4 stride 2, ELU after each),
flattened features concatenated across streams, one shared fully connected
layer of 256 units with ELU, an LSTM of 256 units, then a softmax policy
head and a linear value head.

  single   one 84x84 stream   (conv features 2592)
  dual     two 42x42 streams  (generic + center, 288 + 288 = 576)
  generic  one 42x42 stream   (288)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import nn
from .nn import ParamSet


class Variant(str, Enum):
    SINGLE = "single"
    DUAL = "dual"
    GENERIC_ONLY = "generic"


LSTM_W_NAMES = ("lstm.wi", "lstm.wf", "lstm.wo", "lstm.wg")
LSTM_B_NAMES = ("lstm.bi", "lstm.bf", "lstm.bo", "lstm.bg")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture hyperparameters; defaults give the full-size agent."""

    variant: Variant
    n_actions: int = 3
    frame_size: int = 84
    conv_channels: tuple = (16, 32)
    conv_kernels: tuple = (8, 4)
    conv_strides: tuple = (4, 2)
    fc_units: int = 256
    lstm_units: int = 256

    def streams(self):
        half = self.frame_size // 2
        if self.variant == Variant.SINGLE:
            return (("main", self.frame_size),)
        if self.variant == Variant.DUAL:
            return (("gen", half), ("cen", half))
        return (("gen", half),)

    def conv_flat_dim(self, size):
        for k, s in zip(self.conv_kernels, self.conv_strides):
            size = (size - k) // s + 1
        return self.conv_channels[-1] * size * size

    def feature_dim(self):
        return sum(self.conv_flat_dim(size) for _, size in self.streams())


def param_layout(spec: NetworkSpec):
    c1, c2 = spec.conv_channels
    k1, k2 = spec.conv_kernels
    shapes = []
    for name, _ in spec.streams():
        shapes += [
            (f"{name}.conv1.w", (c1, 1, k1, k1)),
            (f"{name}.conv1.b", (c1,)),
            (f"{name}.conv2.w", (c2, c1, k2, k2)),
            (f"{name}.conv2.b", (c2,)),
        ]
    shapes += [
        ("fc.w", (spec.fc_units, spec.feature_dim())),
        ("fc.b", (spec.fc_units,)),
    ]
    lstm_in = spec.fc_units + spec.lstm_units
    for gate in ("i", "f", "o", "g"):
        shapes.append((f"lstm.w{gate}", (spec.lstm_units, lstm_in)))
    for gate in ("i", "f", "o", "g"):
        shapes.append((f"lstm.b{gate}", (spec.lstm_units,)))
    shapes += [
        ("pi.w", (spec.n_actions, spec.lstm_units)),
        ("pi.b", (spec.n_actions,)),
        ("v.w", (1, spec.lstm_units)),
        ("v.b", (1,)),
    ]
    return shapes


def build_network(spec: NetworkSpec, seed, dtype=np.float32) -> ParamSet:
    """Initialized parameters: weights uniform in +-1/sqrt(fan_in), biases
    zero except the LSTM forget gate bias at 1.0."""
    if spec.n_actions < 2:
        raise ValueError("need at least two actions")
    rng = np.random.default_rng(seed)
    params = ParamSet(param_layout(spec), dtype=dtype)
    for name, tensor in params.items():
        if tensor.ndim < 2:
            continue  # biases stay zero (forget gate set below)
        fan_in = int(np.prod(tensor.shape[1:]))
        bound = 1.0 / np.sqrt(fan_in)
        tensor[...] = rng.uniform(-bound, bound, size=tensor.shape)
    params["lstm.bf"][...] = 1.0
    return params


def param_count(params: ParamSet) -> int:
    return int(params.size)


def reduction_ratio(baseline, reduced) -> float:
    """Fractional parameter reduction of ``reduced`` relative to ``baseline``."""
    a = param_count(baseline) if isinstance(baseline, ParamSet) else int(baseline)
    b = param_count(reduced) if isinstance(reduced, ParamSet) else int(reduced)
    return 1.0 - b / a


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, units, dtype=np.float32):
        return cls(h=np.zeros(units, dtype=dtype), c=np.zeros(units, dtype=dtype))

    def copy(self):
        return LstmState(h=self.h.copy(), c=self.c.copy())


@dataclass
class PolicyValue:
    policy: np.ndarray
    value: float


@dataclass
class RolloutStep:
    obs: object
    action: int
    reward: float
    value: float


@dataclass
class Rollout:
    """On-policy trajectory segment: the unit of one gradient update.

    ``bootstrap_value`` must be 0 exactly when ``terminal`` is set.
    """

    steps: list = field(default_factory=list)
    initial_state: LstmState = None
    bootstrap_value: float = 0.0
    terminal: bool = False

    def __len__(self):
        return len(self.steps)

    def validate(self):
        if not self.steps:
            raise ValueError("rollout is empty")
        if self.terminal and self.bootstrap_value != 0.0:
            raise ValueError("terminal rollout must have zero bootstrap value")


def _stream_forward(view, params, name, spec, dtype):
    x = np.asarray(view, dtype=dtype)[None, :, :]
    a1, ca1 = nn.conv2d_forward(x, params[f"{name}.conv1.w"], params[f"{name}.conv1.b"],
                                spec.conv_strides[0])
    e1, ce1 = nn.elu_forward(a1)
    a2, ca2 = nn.conv2d_forward(e1, params[f"{name}.conv2.w"], params[f"{name}.conv2.b"],
                                spec.conv_strides[1])
    e2, ce2 = nn.elu_forward(a2)
    return e2.reshape(-1), (ca1, ce1, ca2, ce2)


def _stream_backward(dflat, params, name, spec, cache, grads=None,
                     need_input_grads=False):
    ca1, ce1, ca2, ce2 = cache
    de2 = dflat.reshape(ce2[1].shape)
    da2 = nn.elu_backward(de2, ce2)
    dx2, dw2, db2 = nn.conv2d_backward(da2, ca2)
    da1 = nn.elu_backward(dx2, ce1)
    dx1, dw1, db1 = nn.conv2d_backward(da1, ca1, need_dx=need_input_grads)
    if grads is not None:
        grads[f"{name}.conv2.w"] += dw2
        grads[f"{name}.conv2.b"] += db2
        grads[f"{name}.conv1.w"] += dw1
        grads[f"{name}.conv1.b"] += db1
    return dx1[0] if need_input_grads else None


def _lstm_step_stacked(params, spec, x, state):
    """LSTM step computing all four gates through one stacked matmul; the
    cache matches :func:`nn.lstm_step_forward`'s layout."""
    n = spec.lstm_units
    W = params.block(LSTM_W_NAMES).reshape(4 * n, -1)
    b = params.block(LSTM_B_NAMES)
    xh = np.concatenate([x, state.h])
    zs = W @ xh + b
    gates = nn.sigmoid(zs[:3 * n])
    i, f, o = gates[:n], gates[n:2 * n], gates[2 * n:]
    g = np.tanh(zs[3 * n:])
    c = f * state.c + i * g
    tc = np.tanh(c)
    h = o * tc
    cache = (xh, x.shape[0], state.c, i, f, o, g, tc,
             params["lstm.wi"], params["lstm.wf"], params["lstm.wo"], params["lstm.wg"])
    return h, c, cache


def _step_forward(params, spec, obs, state, dtype):
    feats = []
    caches = []
    for (name, size), view in zip(spec.streams(), obs.views):
        if view.shape != (size, size):
            raise ValueError(f"view {name} has shape {view.shape}, expected {(size, size)}")
        f, c = _stream_forward(view, params, name, spec, dtype)
        feats.append(f)
        caches.append(c)
    concat = feats[0] if len(feats) == 1 else np.concatenate(feats)
    z, cfc = nn.fc_forward(concat, params["fc.w"], params["fc.b"])
    x, celu = nn.elu_forward(z)
    h, c, clstm = _lstm_step_stacked(params, spec, x, state)
    logits, cpi = nn.fc_forward(h, params["pi.w"], params["pi.b"])
    value_vec, cv = nn.fc_forward(h, params["v.w"], params["v.b"])
    policy = nn.softmax(logits)
    cache = (caches, cfc, celu, clstm, cpi, cv, policy, float(value_vec[0]))
    return policy, float(value_vec[0]), LstmState(h=h, c=c), cache


def _step_backward(params, spec, cache, dlogits, dvalue, dh_next, dc_next,
                   grads=None, want_input_grads=False):
    """Backward through one step. Returns (dh_prev, dc_prev, input_grads)."""
    caches, cfc, celu, clstm, cpi, cv, _, _ = cache
    dh, dwpi, dbpi = nn.fc_backward(dlogits, cpi)
    dval_vec = np.asarray([dvalue], dtype=dh.dtype)
    dh_v, dwv, dbv = nn.fc_backward(dval_vec, cv)
    dh = dh + dh_v + dh_next
    (dx, dh_prev, dc_prev,
     dwi, dwf, dwo, dwg, dbi, dbf, dbo, dbg) = nn.lstm_step_backward(dh, dc_next, clstm)
    dz = nn.elu_backward(dx, celu)
    dconcat, dwfc, dbfc = nn.fc_backward(dz, cfc)
    if grads is not None:
        grads["pi.w"] += dwpi
        grads["pi.b"] += dbpi
        grads["v.w"] += dwv
        grads["v.b"] += dbv
        grads["lstm.wi"] += dwi
        grads["lstm.wf"] += dwf
        grads["lstm.wo"] += dwo
        grads["lstm.wg"] += dwg
        grads["lstm.bi"] += dbi
        grads["lstm.bf"] += dbf
        grads["lstm.bo"] += dbo
        grads["lstm.bg"] += dbg
        grads["fc.w"] += dwfc
        grads["fc.b"] += dbfc
    input_grads = None
    offset = 0
    if grads is not None or want_input_grads:
        input_grads = []
        for (name, size), scache in zip(spec.streams(), caches):
            dim = spec.conv_flat_dim(size)
            dview = _stream_backward(dconcat[offset:offset + dim], params, name, spec,
                                     scache, grads, need_input_grads=want_input_grads)
            input_grads.append(dview)
            offset += dim
    return dh_prev, dc_prev, input_grads


def forward(params: ParamSet, spec: NetworkSpec, obs, state: LstmState):
    """Policy distribution, value estimate and the next recurrent state."""
    policy, value, new_state, _ = _step_forward(params, spec, obs, state, params.dtype)
    if not (np.all(np.isfinite(policy)) and np.isfinite(value)):
        raise FloatingPointError("non-finite network output")
    return PolicyValue(policy=policy, value=value), new_state


def n_step_returns(rewards, bootstrap, gamma):
    """Discounted returns computed backward from the bootstrap value."""
    out = np.empty(len(rewards), dtype=np.float64)
    acc = float(bootstrap)
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def entropy(policy) -> float:
    p = np.asarray(policy, dtype=np.float64)
    logs = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
    return float(-(p * logs).sum())


def a3c_loss_and_grads(rollout: Rollout, params: ParamSet, spec: NetworkSpec,
                       gamma, entropy_weight=0.01, value_coeff=0.5,
                       caches=None, advantages=None):
    """Summed actor-critic loss over a rollout and its parameter gradients.

    Per step with return R_t and advantage A_t = R_t - V_t (A_t held constant
    in the policy term):

        -log pi(a_t) * A_t + value_coeff * (R_t - V_t)^2 - entropy_weight * H

    The LSTM is unrolled from the rollout's stored initial state and gradients
    are truncated at the rollout boundary. ``caches`` may carry the forward
    caches recorded while acting with the same parameters, skipping the
    recomputation.

    The constant-advantage convention makes the loss surface at other
    parameter values depend on where the advantages were pinned; passing
    ``advantages`` explicitly (see :func:`rollout_advantages`) yields a
    probe-friendly function whose finite differences match these gradients.
    """
    rollout.validate()
    dtype = params.dtype
    T = len(rollout.steps)
    if caches is None:
        caches = []
        state = LstmState(h=rollout.initial_state.h.astype(dtype),
                          c=rollout.initial_state.c.astype(dtype))
        for step in rollout.steps:
            _, _, state, cache = _step_forward(params, spec, step.obs, state, dtype)
            caches.append(cache)
    elif len(caches) != T:
        raise ValueError("cache count does not match rollout length")

    returns = n_step_returns([s.reward for s in rollout.steps],
                             rollout.bootstrap_value, gamma)
    policies = np.stack([c[-2] for c in caches]).astype(np.float64)
    values = np.array([c[-1] for c in caches], dtype=np.float64)
    acts = np.array([s.action for s in rollout.steps])
    adv = (returns - values) if advantages is None \
        else np.asarray(advantages, dtype=np.float64)
    logp = np.where(policies > 0, np.log(np.where(policies > 0, policies, 1.0)), 0.0)
    ent = -(policies * logp).sum(axis=1)
    idx = np.arange(T)
    loss = float((-logp[idx, acts] * adv
                  + value_coeff * (returns - values) ** 2
                  - entropy_weight * ent).sum())
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")

    onehot = np.zeros((T, spec.n_actions))
    onehot[idx, acts] = 1.0
    dlogits = (adv[:, None] * (policies - onehot)
               + entropy_weight * policies * (logp + ent[:, None])).astype(dtype)
    dvalues = (2.0 * value_coeff * (values - returns)).astype(dtype)

    # Sequential pass through time for the small per-step vectors; weight
    # gradients are summed afterwards as single matmuls over the stacks.
    n = spec.lstm_units
    lstm_in = spec.fc_units + n
    H = np.empty((T, n), dtype=dtype)
    XH = np.empty((T, lstm_in), dtype=dtype)
    DZ = np.empty((T, 4 * n), dtype=dtype)
    DFC = np.empty((T, spec.fc_units), dtype=dtype)
    CONCAT = np.empty((T, spec.feature_dim()), dtype=dtype)
    streams = spec.streams()
    conv_stacks = {name: ([], []) for name, _ in streams}

    w_pi, w_v, w_fc = params["pi.w"], params["v.w"], params["fc.w"]
    W = params.block(LSTM_W_NAMES).reshape(4 * n, lstm_in)
    dh = np.zeros(n, dtype=dtype)
    dc = np.zeros(n, dtype=dtype)
    for t in range(T - 1, -1, -1):
        stream_caches, cfc, celu, clstm, cpi, _, _, _ = caches[t]
        H[t] = cpi[0]
        dh = w_pi.T @ dlogits[t] + w_v[0] * dvalues[t] + dh
        xh, nx, c_prev, i, f, o, g, tc = clstm[:8]
        do = dh * tc
        dct = dc + dh * o * (1.0 - tc * tc)
        dz = np.empty((4, n), dtype=dtype)
        np.multiply((dct * g) * i, 1.0 - i, out=dz[0])
        np.multiply((dct * c_prev) * f, 1.0 - f, out=dz[1])
        np.multiply(do * o, 1.0 - o, out=dz[2])
        np.multiply(dct * i, 1.0 - g * g, out=dz[3])
        dc = dct * f
        XH[t] = xh
        dzf = dz.reshape(-1)
        DZ[t] = dzf
        dxh = W.T @ dzf
        dh = dxh[nx:]
        DFC[t] = nn.elu_backward(dxh[:nx], celu)
        CONCAT[t] = cfc[0]
        dconcat = w_fc.T @ DFC[t]
        off = 0
        for (name, size), scache in zip(streams, stream_caches):
            dim = spec.conv_flat_dim(size)
            ca1, ce1, ca2, ce2 = scache
            da2 = nn.elu_backward(dconcat[off:off + dim].reshape(ce2[1].shape), ce2)
            cols2, w2 = ca2[0], ca2[1]
            dy2 = da2.reshape(da2.shape[0], -1).T
            dx2 = nn._col2im(dy2 @ w2, *ca2[2:])
            da1 = nn.elu_backward(dx2, ce1)
            s2, s1 = conv_stacks[name]
            s2.append((dy2, cols2))
            s1.append((da1.reshape(da1.shape[0], -1).T, ca1[0]))
            off += dim

    # every tensor below is fully written, so skip the zero fill
    grads = params.empty_like()
    grads["pi.w"][...] = dlogits.T @ H
    grads["pi.b"][...] = dlogits.sum(axis=0)
    grads["v.w"][...] = (dvalues @ H)[None, :]
    grads["v.b"][...] = dvalues.sum()
    grads.block(LSTM_W_NAMES)[...] = (DZ.T @ XH).reshape(-1)
    grads.block(LSTM_B_NAMES)[...] = DZ.sum(axis=0)
    grads["fc.w"][...] = DFC.T @ CONCAT
    grads["fc.b"][...] = DFC.sum(axis=0)
    for name, _ in streams:
        for layer, stack in zip(("conv2", "conv1"), conv_stacks[name]):
            dy_all = np.concatenate([a for a, _ in stack])
            cols_all = np.concatenate([b for _, b in stack])
            gw = grads[f"{name}.{layer}.w"]
            gw[...] = (dy_all.T @ cols_all).reshape(gw.shape)
            grads[f"{name}.{layer}.b"][...] = dy_all.sum(axis=0)
    grads.check_finite("loss gradients")
    return loss, grads


def sample_action(rng, policy) -> int:
    """Draw an action index from the policy (renormalized in float64)."""
    p = np.asarray(policy, dtype=np.float64)
    p /= p.sum()
    return int(rng.choice(len(p), p=p))


def rollout_advantages(rollout: Rollout, params: ParamSet, spec: NetworkSpec, gamma):
    """Advantage constants R_t - V_t of a rollout under the given parameters."""
    state = LstmState(h=rollout.initial_state.h.astype(params.dtype),
                      c=rollout.initial_state.c.astype(params.dtype))
    values = []
    for step in rollout.steps:
        pv, state = forward(params, spec, step.obs, state)
        values.append(pv.value)
    returns = n_step_returns([s.reward for s in rollout.steps],
                             rollout.bootstrap_value, gamma)
    return returns - np.asarray(values)


def forward_cached(params: ParamSet, spec: NetworkSpec, obs, state: LstmState):
    """Like :func:`forward` but also returns the step cache for reuse in
    :func:`a3c_loss_and_grads` and input-gradient computations."""
    policy, value, new_state, cache = _step_forward(params, spec, obs, state, params.dtype)
    if not (np.all(np.isfinite(policy)) and np.isfinite(value)):
        raise FloatingPointError("non-finite network output")
    return PolicyValue(policy=policy, value=value), new_state, cache


def input_grads_for_scalar(params: ParamSet, spec: NetworkSpec, cache,
                           dlogits, dvalue):
    """Gradients of a scalar head functional with respect to the input views.

    ``dlogits``/``dvalue`` select the scalar (for the value head pass 1.0 and
    zero logit grads). The recurrent state is treated as a constant input.
    """
    dtype = params.dtype
    dh = np.zeros(spec.lstm_units, dtype=dtype)
    dc = np.zeros(spec.lstm_units, dtype=dtype)
    _, _, input_grads = _step_backward(params, spec, cache,
                                       np.asarray(dlogits, dtype=dtype), float(dvalue),
                                       dh, dc, grads=None, want_input_grads=True)
    return input_grads
