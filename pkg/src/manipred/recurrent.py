"""Gated memory cell with peepholes, forward unrolling and exact BPTT.

Update for one frame (``*`` is elementwise, peepholes are diagonal)::

    i = sigmoid(W_xi x + W_hi h + w_ci * c + b_i)
    f = sigmoid(W_xf x + W_hf h + w_cf * c + b_f)
    c' = f * c + i * tanh(W_xc x + W_hc h + b_c)
    o = sigmoid(W_xo x + W_ho h + w_co * c' + b_o)
    h' = o * tanh(c')

The output gate looks at the updated cell ``c'``. All batched arrays are
(batch, features); sequences are stored time-major, (T, batch, features).
"""

from dataclasses import dataclass, fields

import numpy as np

from .errors import InvalidArgument
from .numerics import as_generator, sigmoid

MATRIX_FIELDS = ("W_xi", "W_hi", "W_xf", "W_hf", "W_xc", "W_hc", "W_xo", "W_ho")
PEEPHOLE_FIELDS = ("w_ci", "w_cf", "w_co")
BIAS_FIELDS = ("b_i", "b_f", "b_c", "b_o")
PARAM_FIELDS = MATRIX_FIELDS + PEEPHOLE_FIELDS + BIAS_FIELDS


@dataclass
class CellParams:
    W_xi: np.ndarray
    W_hi: np.ndarray
    W_xf: np.ndarray
    W_hf: np.ndarray
    W_xc: np.ndarray
    W_hc: np.ndarray
    W_xo: np.ndarray
    W_ho: np.ndarray
    w_ci: np.ndarray
    w_cf: np.ndarray
    w_co: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        n, d = np.shape(self.W_xi)
        for name in PARAM_FIELDS:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, arr)
            if name in MATRIX_FIELDS:
                want = (n, d) if name[2] == "x" else (n, n)
            else:
                want = (n,)
            if arr.shape != want:
                raise InvalidArgument(f"{name} has shape {arr.shape}, expected {want}")

    @property
    def input_dim(self):
        return self.W_xi.shape[1]

    @property
    def hidden_dim(self):
        return self.W_xi.shape[0]

    def arrays(self):
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def copy(self):
        return type(self)(**{k: v.copy() for k, v in self.arrays().items()})

    def stacked(self):
        """Gate weights stacked in (i, f, c, o) order, transposed: (d, 4n), (n, 4n)."""
        wx = np.concatenate([self.W_xi, self.W_xf, self.W_xc, self.W_xo])
        wh = np.concatenate([self.W_hi, self.W_hf, self.W_hc, self.W_ho])
        b = np.concatenate([self.b_i, self.b_f, self.b_c, self.b_o])
        return np.ascontiguousarray(wx.T), np.ascontiguousarray(wh.T), b

    @classmethod
    def zeros(cls, input_dim, hidden_dim):
        n, d = hidden_dim, input_dim
        kw = {}
        for name in PARAM_FIELDS:
            if name in MATRIX_FIELDS:
                kw[name] = np.zeros((n, d) if name[2] == "x" else (n, n))
            else:
                kw[name] = np.zeros(n)
        return cls(**kw)

    @classmethod
    def random(cls, input_dim, hidden_dim, std=0.01, seed=0, forget_bias=0.0,
               peepholes=True):
        """Normal(0, std) weights and peepholes drawn in field order; zero biases."""
        rng = as_generator(seed)
        p = cls.zeros(input_dim, hidden_dim)
        for name in MATRIX_FIELDS:
            arr = getattr(p, name)
            arr[...] = std * rng.standard_normal(arr.shape)
        for name in PEEPHOLE_FIELDS:
            draw = std * rng.standard_normal(hidden_dim)
            if peepholes:
                getattr(p, name)[...] = draw
        p.b_f[...] = forget_bias
        return p


@dataclass
class CellGradients(CellParams):
    """Parameter gradients; ``dx`` holds the gradient w.r.t. the inputs."""

    dx: np.ndarray = None

    def __post_init__(self):
        dx = self.dx
        super().__post_init__()
        self.dx = dx


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim, batch=None):
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class GateRecord:
    zi: np.ndarray
    zf: np.ndarray
    zc: np.ndarray
    zo: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tc: np.ndarray


def _gate(z):
    # logistic function via tanh; cheaper than exp-based forms on small arrays
    return 0.5 * np.tanh(0.5 * z) + 0.5


def _step(stack, p, h, c, x, xw=None):
    wxT, whT, b = stack
    n = h.shape[-1]
    if xw is None:
        z = x @ wxT + h @ whT + b
    else:
        z = xw + h @ whT
    z[:, :n] += p.w_ci * c
    z[:, n:2 * n] += p.w_cf * c
    gif = _gate(z[:, :2 * n])
    i, f = gif[:, :n], gif[:, n:]
    g = np.tanh(z[:, 2 * n:3 * n])
    c_new = f * c + i * g
    z[:, 3 * n:] += p.w_co * c_new
    o = _gate(z[:, 3 * n:])
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, GateRecord(z[:, :n], z[:, n:2 * n], z[:, 2 * n:3 * n],
                                    z[:, 3 * n:], i, f, g, o, tc)


def _check_dims(p, h, x):
    if x.shape[-1] != p.input_dim:
        raise InvalidArgument(f"input dim {x.shape[-1]} != cell input dim {p.input_dim}")
    if h.shape[-1] != p.hidden_dim:
        raise InvalidArgument(f"state dim {h.shape[-1]} != hidden dim {p.hidden_dim}")


def cell_step(p, state, x, stack=None):
    """Advance ``state`` by one frame ``x``; returns ``(new_state, gates)``.

    Accepts a single frame (d,) with state (n,), or a batch (B, d) with state
    (B, n). ``stack`` may carry a precomputed ``p.stacked()``.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_dims(p, state.h, x)
    single = x.ndim == 1
    h, c = state.h, state.c
    if single:
        x, h, c = x[None], h[None], c[None]
    if h.shape[-1] != c.shape[-1]:
        raise InvalidArgument("h and c sizes differ")
    h_new, c_new, gates = _step(stack or p.stacked(), p, h, c, x)
    if single:
        h_new, c_new = h_new[0], c_new[0]
        gates = GateRecord(*(getattr(gates, f.name)[0] for f in fields(GateRecord)))
    return CellState(h_new, c_new), gates


def vanilla_rnn_step(W_ih, W_hh, b_h, h, x):
    """Plain recurrent step with logistic activation."""
    W_ih, W_hh = np.asarray(W_ih), np.asarray(W_hh)
    h, x, b_h = np.asarray(h, float), np.asarray(x, float), np.asarray(b_h, float)
    n = W_hh.shape[0]
    if W_ih.shape != (n, x.shape[-1]) or W_hh.shape != (n, n) or b_h.shape != (n,) \
            or h.shape[-1] != n:
        raise InvalidArgument("inconsistent dimensions in vanilla_rnn_step")
    return sigmoid(x @ W_ih.T + h @ W_hh.T + b_h)


@dataclass
class ForwardTape:
    """Everything backward_sequence needs, time-major (T, B, .)."""

    x: np.ndarray
    zi: np.ndarray
    zf: np.ndarray
    zc: np.ndarray
    zo: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tc: np.ndarray
    h: np.ndarray
    h0: np.ndarray
    c0: np.ndarray

    def __len__(self):
        return self.x.shape[0]


def forward_sequence(p, xs, state=None, batched_inputs=False):
    """Unroll the cell over ``xs``: (T, d) for one sequence or (T, B, d).

    The initial state is zero unless ``state`` is given. The returned tape is
    always batched (T, B, .); a single sequence has B = 1.
    ``batched_inputs=True`` computes the input-side products for all frames in
    one matmul; results then agree with frame-by-frame evaluation only to
    rounding, so streaming comparisons use the default.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 2:
        xs = xs[:, None, :]
    if xs.ndim != 3 or xs.shape[0] == 0:
        raise InvalidArgument("forward_sequence needs a non-empty (T, d) or (T, B, d) input")
    T, B, d = xs.shape
    if d != p.input_dim:
        raise InvalidArgument(f"frame dim {d} != cell input dim {p.input_dim}")
    n = p.hidden_dim
    if state is None:
        h, c = np.zeros((B, n)), np.zeros((B, n))
    else:
        h, c = np.atleast_2d(state.h), np.atleast_2d(state.c)
    h0, c0 = h, c
    stack = p.stacked()
    xw = xs @ stack[0] + stack[2] if batched_inputs else None
    names = ("zi", "zf", "zc", "zo", "i", "f", "g", "o", "tc")
    rec = {k: np.empty((T, B, n)) for k in names + ("c", "h")}
    for t in range(T):
        h, c, gates = _step(stack, p, h, c, xs[t], None if xw is None else xw[t])
        for k in names:
            rec[k][t] = getattr(gates, k)
        rec["c"][t] = c
        rec["h"][t] = h
    return ForwardTape(x=xs, h0=h0, c0=c0, **rec)


def backward_sequence(p, tape, dh, truncation=None):
    """Exact gradients of a summed per-frame loss through all time steps.

    ``dh`` is dLoss/dh_t for every frame, shaped like ``tape.h`` (or (T, n)
    for a single sequence). With ``truncation=k`` the sequence is cut into
    chunks of k frames and no gradient crosses a chunk boundary.
    """
    dh = np.asarray(dh, dtype=np.float64)
    if dh.ndim == 2:
        dh = dh[:, None, :]
    if dh.shape != tape.h.shape:
        raise InvalidArgument(f"upstream gradient shape {dh.shape} != tape shape {tape.h.shape}")
    if truncation is not None and truncation < 1:
        raise InvalidArgument("truncation must be >= 1")
    T, B, n = tape.h.shape
    wxT, whT, _ = p.stacked()
    wh = whT.T.copy()
    c_prev = np.concatenate([tape.c0[None], tape.c[:-1]])
    h_prev = np.concatenate([tape.h0[None], tape.h[:-1]])
    i, f, g, o, tc = tape.i, tape.f, tape.g, tape.o, tape.tc
    # local derivative factors; only the products with dh/dc recur
    k_o = tc * o * (1.0 - o)
    k_c = o * (1.0 - tc * tc)
    k_i = g * i * (1.0 - i)
    k_f = c_prev * f * (1.0 - f)
    k_g = i * (1.0 - g * g)
    dz = np.empty((T, B, 4 * n))
    dh_next = np.zeros((B, n))
    dc_next = np.zeros((B, n))
    for t in range(T - 1, -1, -1):
        dht = dh[t] + dh_next
        dzo = dht * k_o[t]
        dc = dc_next + dht * k_c[t] + dzo * p.w_co
        dzi = dc * k_i[t]
        dzf = dc * k_f[t]
        dz[t, :, :n] = dzi
        dz[t, :, n:2 * n] = dzf
        dz[t, :, 2 * n:3 * n] = dc * k_g[t]
        dz[t, :, 3 * n:] = dzo
        if truncation is not None and t % truncation == 0:
            dh_next = np.zeros((B, n))
            dc_next = np.zeros((B, n))
        else:
            dh_next = dz[t] @ wh
            dc_next = dc * f[t] + dzi * p.w_ci + dzf * p.w_cf
    # everything below has no recurrence and runs over all frames at once
    flat = dz.reshape(T * B, 4 * n)
    dWx = flat.T @ tape.x.reshape(T * B, -1)
    dWh = flat.T @ h_prev.reshape(T * B, n)
    db = flat.sum(axis=0)
    dx = dz @ wxT.T
    dw_ci = np.einsum("tbn,tbn->n", dz[..., :n], c_prev)
    dw_cf = np.einsum("tbn,tbn->n", dz[..., n:2 * n], c_prev)
    dw_co = np.einsum("tbn,tbn->n", dz[..., 3 * n:], tape.c)
    sx = np.split(dWx, 4)
    sh = np.split(dWh, 4)
    sb = np.split(db, 4)
    return CellGradients(
        W_xi=sx[0], W_hi=sh[0], W_xf=sx[1], W_hf=sh[1],
        W_xc=sx[2], W_hc=sh[2], W_xo=sx[3], W_ho=sh[3],
        w_ci=dw_ci, w_cf=dw_cf, w_co=dw_co,
        b_i=sb[0], b_f=sb[1], b_c=sb[2], b_o=sb[3],
        dx=dx,
    )


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads, max_norm):
    """Scale a dict of gradient arrays in place so the global L2 norm <= max_norm."""
    if max_norm is None or not np.isfinite(max_norm):
        return grads
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return grads
