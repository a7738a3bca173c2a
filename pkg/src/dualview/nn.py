"""Minimal tensor layers with hand-written forward/backward passes.

Everything operates on plain numpy arrays. A :class:`ParamSet` keeps all
trainable tensors as named views into one flat buffer so that optimizer
updates, snapshots and norm clipping are single vectorized passes.

Layer functions come in pairs: ``*_forward`` returns ``(output, cache)`` and
``*_backward`` consumes the upstream gradient plus that cache. Batch size is
always 1 (one observation per worker step), so convolution inputs are
``(C, H, W)`` and vectors are 1-D.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ParamSet:
    """Ordered, named collection of float tensors backed by one flat buffer.

    Iteration order is declaration order, which fixes the checkpoint layout,
    the RNG draw order at init time and the meaning of ``flat``.
    """

    def __init__(self, shapes, dtype=np.float32, flat=None):
        self._shapes = [(str(n), tuple(int(d) for d in s)) for n, s in shapes]
        names = [n for n, _ in self._shapes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate tensor names in ParamSet")
        total = sum(int(np.prod(s)) for _, s in self._shapes)
        if flat is None:
            flat = np.zeros(total, dtype=dtype)
        else:
            flat = np.asarray(flat, dtype=dtype)
            if flat.shape != (total,):
                raise ValueError(f"flat buffer has size {flat.size}, expected {total}")
        self.flat = flat
        self._views = {}
        self._spans = {}
        offset = 0
        for name, shape in self._shapes:
            n = int(np.prod(shape))
            self._views[name] = self.flat[offset:offset + n].reshape(shape)
            self._spans[name] = (offset, n)
            offset += n

    @classmethod
    def from_arrays(cls, pairs, dtype=None):
        """Build from ``(name, array)`` pairs, copying the values."""
        pairs = [(n, np.asarray(a)) for n, a in pairs]
        dtype = dtype or (pairs[0][1].dtype if pairs else np.float32)
        ps = cls([(n, a.shape) for n, a in pairs], dtype=dtype)
        for n, a in pairs:
            ps[n][...] = a
        return ps

    @property
    def dtype(self):
        return self.flat.dtype

    @property
    def size(self):
        return self.flat.size

    def names(self):
        return [n for n, _ in self._shapes]

    def shapes(self):
        return list(self._shapes)

    def items(self):
        for name, _ in self._shapes:
            yield name, self._views[name]

    def __getitem__(self, name):
        return self._views[name]

    def __setitem__(self, name, value):
        view = self._views[name]
        if value is not view:
            view[...] = value

    def __contains__(self, name):
        return name in self._views

    def __len__(self):
        return len(self._shapes)

    def block(self, names):
        """Flat view spanning the given tensors, which must be consecutive in
        declaration order. Used to treat e.g. the four LSTM gate weight
        matrices as one stacked matrix without copying."""
        order = self.names()
        idx = [order.index(n) for n in names]
        if idx != list(range(idx[0], idx[0] + len(idx))):
            raise ValueError(f"tensors {names} are not consecutive")
        start = self._spans[names[0]][0]
        last_off, last_n = self._spans[names[-1]]
        return self.flat[start:last_off + last_n]

    def copy(self):
        return ParamSet(self._shapes, dtype=self.dtype, flat=self.flat.copy())

    def copy_from(self, other):
        np.copyto(self.flat, other.flat)

    def zeros_like(self):
        return ParamSet(self._shapes, dtype=self.dtype)

    def empty_like(self):
        """Uninitialized same-layout set; caller must write every tensor."""
        return ParamSet(self._shapes, dtype=self.dtype,
                        flat=np.empty(self.flat.shape, dtype=self.dtype))

    def astype(self, dtype):
        return ParamSet(self._shapes, dtype=dtype, flat=self.flat.astype(dtype))

    def same_layout(self, other):
        return self._shapes == other._shapes

    def check_finite(self, what="values"):
        if not np.all(np.isfinite(self.flat)):
            raise FloatingPointError(f"non-finite {what} in ParamSet")


@dataclass
class AdamState:
    """First/second moment buffers mirroring a ParamSet, plus the step count."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, params: ParamSet):
        return cls(m=np.zeros_like(params.flat), v=np.zeros_like(params.flat), t=0)


def adam_update(params: ParamSet, grads: ParamSet, state: AdamState,
                lr, beta1=0.9, beta2=0.999, eps=1e-8, scratch=None,
                check=True):
    """One bias-corrected Adam step, in place on ``params`` and ``state``.

    theta -= lr * m_hat / (sqrt(v_hat) + eps) with m_hat = m/(1-beta1^t) and
    v_hat = v/(1-beta2^t). ``scratch`` may supply a reusable work buffer of
    the flat parameter shape; ``check=False`` skips the finite check when the
    caller has already performed it.
    """
    if not params.same_layout(grads):
        raise ValueError("gradient layout does not match parameters")
    if check:
        grads.check_finite("gradients")
    state.t += 1
    if scratch is None:
        scratch = np.empty_like(grads.flat)
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    # chunked so every pass stays cache-resident
    chunk = 1 << 14
    for lo in range(0, params.size, chunk):
        hi = min(lo + chunk, params.size)
        g = grads.flat[lo:hi]
        m = state.m[lo:hi]
        v = state.v[lo:hi]
        s = scratch[lo:hi]
        np.multiply(m, beta1, out=m)
        np.multiply(g, 1.0 - beta1, out=s)
        np.add(m, s, out=m)
        np.multiply(g, g, out=s)
        np.multiply(s, 1.0 - beta2, out=s)
        np.multiply(v, beta2, out=v)
        np.add(v, s, out=v)
        np.divide(v, c2, out=s)
        np.sqrt(s, out=s)
        np.add(s, eps, out=s)
        np.divide(m, s, out=s)
        np.multiply(s, lr / c1, out=s)
        np.subtract(params.flat[lo:hi], s, out=params.flat[lo:hi])


def global_norm(grads: ParamSet) -> float:
    return float(np.sqrt(np.sum(grads.flat.astype(np.float64) ** 2)))


def clip_global_norm(grads: ParamSet, max_norm) -> float:
    """Scale ``grads`` in place so the global L2 norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    norm = global_norm(grads)
    if norm > max_norm:
        grads.flat *= np.asarray(max_norm / norm, dtype=grads.dtype)
    return norm


# ---------------------------------------------------------------------------
# convolution

def _conv_out(h, k, s):
    return (h - k) // s + 1


def _im2col(x, k, stride):
    c, h, w = x.shape
    ho, wo = _conv_out(h, k, stride), _conv_out(w, k, stride)
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    # (C, Ho, Wo, K, K) -> (Ho*Wo, C*K*K)
    cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(ho * wo, c * k * k)
    return cols, ho, wo


def conv2d_forward(x, w, b, stride):
    """Valid (no padding) 2-D convolution of a (C,H,W) input.

    ``w`` is (C_out, C_in, K, K), ``b`` is (C_out,).
    """
    x = np.asarray(x)
    if x.ndim != 3 or w.ndim != 4:
        raise ValueError("conv2d expects (C,H,W) input and (Co,Ci,K,K) weights")
    c, h, width = x.shape
    co, ci, k, k2 = w.shape
    if k != k2:
        raise ValueError("conv2d kernels must be square")
    if ci != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, weights {ci}")
    if h < k or width < k:
        raise ValueError("conv2d kernel larger than input")
    if b.shape != (co,):
        raise ValueError("conv2d bias shape mismatch")
    cols, ho, wo = _im2col(x, k, stride)
    w2 = w.reshape(co, ci * k * k)
    out = cols @ w2.T + b
    y = out.T.reshape(co, ho, wo)
    cache = (cols, w2, x.shape, k, stride, ho, wo)
    return y, cache


def conv2d(x, w, b, stride):
    return conv2d_forward(x, w, b, stride)[0]


def conv2d_backward(dy, cache, need_dx=True):
    cols, w2, x_shape, k, stride, ho, wo = cache
    co = w2.shape[0]
    dy2 = dy.reshape(co, ho * wo).T            # (P, Co)
    dw = (dy2.T @ cols).reshape(co, x_shape[0], k, k)
    db = dy.sum(axis=(1, 2))
    dx = None
    if need_dx:
        dcols = dy2 @ w2                       # (P, C*K*K)
        dx = _col2im(dcols, x_shape, k, stride, ho, wo)
    return dx, dw, db


def _col2im(dcols, x_shape, k, stride, ho, wo):
    c = x_shape[0]
    d = dcols.reshape(ho, wo, c, k, k).transpose(2, 0, 1, 3, 4)
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + ho * stride:stride, j:j + wo * stride:stride] += d[:, :, :, i, j]
    return dx


# ---------------------------------------------------------------------------
# fully connected

def fc_forward(x, w, b):
    if x.ndim != 1 or w.ndim != 2 or w.shape[1] != x.shape[0] or b.shape != (w.shape[0],):
        raise ValueError(f"fc dimension mismatch: x{x.shape} w{w.shape} b{b.shape}")
    y = w @ x + b
    return y, (x, w)


def fully_connected(x, w, b):
    return fc_forward(x, w, b)[0]


def fc_backward(dy, cache):
    x, w = cache
    dw = dy[:, None] * x
    dx = w.T @ dy
    return dx, dw, dy.copy()


# ---------------------------------------------------------------------------
# activations

def elu_forward(x):
    y = np.where(x > 0, x, np.expm1(x))
    return y, (x, y)


def elu(x):
    return elu_forward(np.asarray(x))[0]


def elu_backward(dy, cache):
    x, y = cache
    return np.where(x > 0, dy, dy * (y + 1.0))


def sigmoid(x):
    # exp of a non-positive argument on both branches keeps this overflow-free
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits):
    logits = np.asarray(logits)
    if logits.size < 1:
        raise ValueError("softmax needs at least one logit")
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_backward(dp, p):
    """Gradient w.r.t. logits given ``dp`` = dL/d(softmax output)."""
    return p * (dp - float(dp @ p))


# ---------------------------------------------------------------------------
# LSTM step

def lstm_step_forward(x, h_prev, c_prev, wi, wf, wo, wg, bi, bf, bo, bg):
    """Single LSTM step over the concatenated ``[x; h_prev]`` input.

    Gates: i/f/o are sigmoids, g is the tanh candidate;
    ``c = f*c_prev + i*g`` and ``h = o*tanh(c)``.
    """
    n = h_prev.shape[0]
    if wi.shape != (n, x.shape[0] + n):
        raise ValueError(f"lstm weight shape {wi.shape} does not match input "
                         f"{x.shape[0]} + hidden {n}")
    xh = np.concatenate([x, h_prev])
    i = sigmoid(wi @ xh + bi)
    f = sigmoid(wf @ xh + bf)
    o = sigmoid(wo @ xh + bo)
    g = np.tanh(wg @ xh + bg)
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    cache = (xh, x.shape[0], c_prev, i, f, o, g, tc, wi, wf, wo, wg)
    return h, c, cache


def lstm_step(x, h_prev, c_prev, wi, wf, wo, wg, bi, bf, bo, bg):
    h, c, _ = lstm_step_forward(x, h_prev, c_prev, wi, wf, wo, wg, bi, bf, bo, bg)
    return h, c


def lstm_step_backward(dh, dc, cache):
    """Backward through one step; ``dh``/``dc`` flow in from the future.

    Returns ``(dx, dh_prev, dc_prev, dwi, dwf, dwo, dwg, dbi, dbf, dbo, dbg)``.
    """
    xh, nx, c_prev, i, f, o, g, tc, wi, wf, wo, wg = cache
    n = i.shape[0]
    do = dh * tc
    dct = dc + dh * o * (1.0 - tc * tc)
    di = dct * g
    dg = dct * i
    df = dct * c_prev
    dc_prev = dct * f
    dz = np.empty((4, n), dtype=dh.dtype)
    np.multiply(di * i, 1.0 - i, out=dz[0])
    np.multiply(df * f, 1.0 - f, out=dz[1])
    np.multiply(do * o, 1.0 - o, out=dz[2])
    np.multiply(dg, 1.0 - g * g, out=dz[3])
    dxh = wi.T @ dz[0] + wf.T @ dz[1] + wo.T @ dz[2] + wg.T @ dz[3]
    dw = dz[:, :, None] * xh  # one broadcast for all four gate weight grads
    return (dxh[:nx], dxh[nx:], dc_prev,
            dw[0], dw[1], dw[2], dw[3],
            dz[0], dz[1], dz[2], dz[3])


# ---------------------------------------------------------------------------
# finite-difference gradient check

@dataclass
class GradCheckReport:
    """Per-parameter worst relative error of analytic vs central-difference grads."""

    per_param: dict = field(default_factory=dict)
    tolerance: float = 1e-5

    @property
    def max_rel_error(self):
        return max(self.per_param.values(), default=0.0)

    @property
    def worst_param(self):
        return max(self.per_param, key=self.per_param.get, default=None)

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance

    def failures(self):
        return {n: e for n, e in self.per_param.items() if e > self.tolerance}


def grad_check(loss_fn, params: ParamSet, h=1e-5, tolerance=1e-5,
               floor=None, sample=None, rng=None) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn(params) -> (loss, grads)`` must be deterministic; only the loss
    value is used for the FD probe. Run with float64 parameters for
    trustworthy comparisons. ``sample`` limits the probe to that many randomly
    chosen coordinates per tensor (all coordinates when None).

    Relative error per coordinate is ``|a - f| / max(|a|, |f|, floor)``.
    The central difference carries cancellation noise of order
    eps*scale/(2h), where the scale covers the loss's internal accumulations
    (they may exceed the final value when terms cancel); coordinates below
    that level cannot be certified in relative terms, so the default floor
    (32 * eps * max(1, |loss|) / (2h) / tolerance) compares them absolutely
    against the noise level instead. A wrong gradient still registers: even
    at the floor, errors are caught from ~tolerance*floor upward.
    """
    loss, grads = loss_fn(params)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss at the linearization point")
    if floor is None:
        noise = np.finfo(np.float64).eps * max(1.0, abs(loss)) / (2.0 * h)
        floor = max(1e-12, 32.0 * noise / tolerance)
    report = GradCheckReport(tolerance=tolerance)
    work = params.copy()
    for name, tensor in work.items():
        analytic = grads[name]
        flat = tensor.reshape(-1)
        aflat = analytic.reshape(-1)
        idx = np.arange(flat.size)
        if sample is not None and sample < flat.size:
            if rng is None:
                rng = np.random.default_rng(0)
            idx = rng.choice(flat.size, size=sample, replace=False)
        worst = 0.0
        for j in idx:
            orig = flat[j]
            flat[j] = orig + h
            lp = loss_fn(work)[0]
            flat[j] = orig - h
            lm = loss_fn(work)[0]
            flat[j] = orig
            fd = (lp - lm) / (2.0 * h)
            denom = max(abs(aflat[j]), abs(fd), floor)
            worst = max(worst, abs(aflat[j] - fd) / denom)
        report.per_param[name] = worst
    return report
