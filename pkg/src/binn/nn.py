"""Contextual LSTM layers with hand-written backpropagation.

The cell consumes an item vector ``v`` and a one-hot behavior vector ``b``::

    i = s(W_vi v + W_hi h' + W_ci c' + W_bi b + b_i)
    f = s(W_vf v + W_hf h' + W_cf c' + W_bf b + b_f)
    c = f * c' + i * tanh(W_vc v + W_hc h' + W_bc b + b_c)
    o = s(W_vo v + W_ho h' + W_co c + W_bo b + b_o)
    h = o * tanh(c)

Note the output gate peeks at the *new* cell ``c``.  Peepholes ``W_c*`` are
diagonal (vectors) unless ``full_peephole`` is set.

All sequence kernels are batched: inputs are ``(B, T, dim)`` arrays with a
``(B, T)`` mask.  A masked step copies the previous state through unchanged,
so left padding is equivalent to starting later from the zero state.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels

GATES = ("i", "f", "c", "o")
PEEPHOLE_GATES = ("i", "f", "o")
CHECKPOINT_VERSION = 1

# Diagonal-peephole cells run their time loop in compiled code; the array
# implementation below is kept for full peepholes and as a reference.
USE_COMPILED = True


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class ClstmParams:
    """Named parameter arrays for one CLSTM.

    ``arrays`` maps ``W_v{g}``, ``W_h{g}``, ``W_b{g}``, ``b_{g}`` for every gate
    and ``W_c{g}`` for the peephole gates to numpy arrays.
    """

    def __init__(self, arrays: dict[str, np.ndarray], full_peephole: bool = False):
        self.arrays = arrays
        self.full_peephole = full_peephole
        H, d = arrays["W_vi"].shape
        nb = arrays["W_bi"].shape[1]
        self.hidden, self.input_dim, self.behavior_dim = H, d, nb
        for g in GATES:
            if arrays[f"W_v{g}"].shape != (H, d) or arrays[f"W_h{g}"].shape != (H, H):
                raise ValueError(f"inconsistent shapes for gate {g}")
            if arrays[f"W_b{g}"].shape != (H, nb) or arrays[f"b_{g}"].shape != (H,):
                raise ValueError(f"inconsistent shapes for gate {g}")
        pshape = (H, H) if full_peephole else (H,)
        for g in PEEPHOLE_GATES:
            if arrays[f"W_c{g}"].shape != pshape:
                raise ValueError(f"peephole W_c{g} must have shape {pshape}")

    @staticmethod
    def names() -> list[str]:
        out = []
        for g in GATES:
            out += [f"W_v{g}", f"W_h{g}"]
            if g in PEEPHOLE_GATES:
                out.append(f"W_c{g}")
            out += [f"W_b{g}", f"b_{g}"]
        return out

    @classmethod
    def zeros(cls, input_dim, behavior_dim, hidden, full_peephole=False) -> "ClstmParams":
        H = hidden
        arrays = {}
        for g in GATES:
            arrays[f"W_v{g}"] = np.zeros((H, input_dim))
            arrays[f"W_h{g}"] = np.zeros((H, H))
            if g in PEEPHOLE_GATES:
                arrays[f"W_c{g}"] = np.zeros((H, H) if full_peephole else H)
            arrays[f"W_b{g}"] = np.zeros((H, behavior_dim))
            arrays[f"b_{g}"] = np.zeros(H)
        return cls(arrays, full_peephole)

    @classmethod
    def init(cls, input_dim, behavior_dim, hidden, rng, full_peephole=False) -> "ClstmParams":
        """Xavier-uniform matrices, zero biases, forget bias of one."""
        p = cls.zeros(input_dim, behavior_dim, hidden, full_peephole)
        for name in cls.names():
            a = p.arrays[name]
            if name.startswith("b_"):
                continue
            fan_out = a.shape[0]
            fan_in = a.shape[1] if a.ndim == 2 else hidden
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            p.arrays[name] = rng.uniform(-limit, limit, size=a.shape)
        p.arrays["b_f"] = np.ones(hidden)
        return p

    def zeros_like(self) -> "ClstmParams":
        return ClstmParams({k: np.zeros_like(v) for k, v in self.arrays.items()}, self.full_peephole)

    def copy(self) -> "ClstmParams":
        return ClstmParams({k: v.copy() for k, v in self.arrays.items()}, self.full_peephole)

    def __getitem__(self, name):
        return self.arrays[name]

    def stacked(self):
        """Gate-stacked ``(W_v, W_h, W_b, b)`` in gate order i, f, c, o."""
        a = self.arrays
        return (
            np.concatenate([a[f"W_v{g}"] for g in GATES]),
            np.concatenate([a[f"W_h{g}"] for g in GATES]),
            np.concatenate([a[f"W_b{g}"] for g in GATES]),
            np.concatenate([a[f"b_{g}"] for g in GATES]),
        )

    def peephole(self, c, gate):
        w = self.arrays[f"W_c{gate}"]
        return c @ w.T if self.full_peephole else c * w


@dataclass
class ClstmState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class ClstmCache:
    params: ClstmParams
    X: np.ndarray
    Bv: np.ndarray
    mask: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c_new: np.ndarray
    tanh_c: np.ndarray
    H: np.ndarray = field(repr=False, default=None)
    C: np.ndarray = field(repr=False, default=None)
    rows: list = field(repr=False, default=None)


def _active_rows(mask):
    """Per step, ``None`` when every row is live, else the indices of live rows."""
    out = []
    for t in range(mask.shape[1]):
        col = mask[:, t]
        if np.all(col > 0):
            out.append(None)
        else:
            out.append(np.flatnonzero(col > 0))
    return out


def clstm_run(p: ClstmParams, X, Bv, mask=None) -> tuple[np.ndarray, ClstmCache]:
    """Run the cell over ``(B, T)`` inputs from the zero state.

    Returns the per-step hidden states ``(B, T, H)`` and a cache for
    :func:`clstm_backprop`.  Only live (unmasked) rows are computed.
    """
    X = np.asarray(X, dtype=np.float64)
    Bv = np.asarray(Bv, dtype=np.float64)
    B, T, d = X.shape
    if d != p.input_dim or Bv.shape != (B, T, p.behavior_dim):
        raise ValueError("input shapes do not match the CLSTM parameters")
    if T == 0:
        raise ValueError("empty input sequence")
    mask = np.ones((B, T)) if mask is None else np.asarray(mask, dtype=np.float64)
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask entries must be 0 or 1")
    Hd = p.hidden
    Wv, Wh, Wb, bias = p.stacked()
    live = mask > 0
    Zx = np.zeros((B, T, 4 * Hd))
    Zx[live] = X[live] @ Wv.T + Bv[live] @ Wb.T + bias
    if not p.full_peephole and USE_COMPILED:
        a = p.arrays
        out = _kernels.clstm_forward_loop(Zx, np.ascontiguousarray(Wh.T), a["W_ci"], a["W_cf"], a["W_co"], live)
        cache = ClstmCache(p, X, Bv, mask, *out)
        cache.rows = None
        return out[-2], cache
    WhT = Wh.T
    shape = (B, T, Hd)
    h_prev, c_prev = np.zeros(shape), np.zeros(shape)
    i_, f_, g_, o_ = (np.zeros(shape) for _ in range(4))
    c_new, tanh_c = np.zeros(shape), np.zeros(shape)
    Hs, Cs = np.empty(shape), np.empty(shape)
    h = np.zeros((B, Hd))
    c = np.zeros((B, Hd))
    rows = _active_rows(mask)
    for t in range(T):
        a = rows[t]
        if a is None:
            hp, cp = h, c
            z = Zx[:, t] + hp @ WhT
        elif len(a) == 0:
            Hs[:, t], Cs[:, t] = h, c
            continue
        else:
            hp, cp = h[a], c[a]
            z = Zx[a, t] + hp @ WhT
        ig = _sigmoid(z[:, :Hd] + p.peephole(cp, "i"))
        fg = _sigmoid(z[:, Hd:2 * Hd] + p.peephole(cp, "f"))
        gg = np.tanh(z[:, 2 * Hd:3 * Hd])
        cc = fg * cp + ig * gg
        og = _sigmoid(z[:, 3 * Hd:] + p.peephole(cc, "o"))
        tc = np.tanh(cc)
        hc = og * tc
        sl = slice(None) if a is None else a
        h_prev[sl, t], c_prev[sl, t] = hp, cp
        i_[sl, t], f_[sl, t], g_[sl, t], o_[sl, t] = ig, fg, gg, og
        c_new[sl, t], tanh_c[sl, t] = cc, tc
        if a is None:
            h, c = hc, cc
        else:
            h, c = h.copy(), c.copy()
            h[a], c[a] = hc, cc
        Hs[:, t], Cs[:, t] = h, c
    cache = ClstmCache(p, X, Bv, mask, h_prev, c_prev, i_, f_, g_, o_, c_new, tanh_c, Hs, Cs)
    cache.rows = rows
    return Hs, cache


def clstm_backprop(cache: ClstmCache, dH) -> tuple[ClstmParams, np.ndarray]:
    """Backpropagation through time for :func:`clstm_run`.

    ``dH`` is the loss gradient w.r.t. every emitted hidden state (masked
    steps emit the carried state).  Returns parameter gradients and the
    gradient w.r.t. the item inputs ``X``.
    """
    if cache is None:
        raise ValueError("backprop requires the cache of a forward pass")
    p = cache.params
    B, T, Hd = cache.h_prev.shape
    _, Wh, _, _ = p.stacked()
    grads = p.zeros_like()
    if cache.rows is None:
        a = p.arrays
        dZ, dpi, dpf, dpo = _kernels.clstm_backward_loop(
            np.ascontiguousarray(dH, dtype=np.float64), Wh, a["W_ci"], a["W_cf"], a["W_co"], cache.mask > 0,
            cache.c_prev, cache.i, cache.f, cache.g, cache.o, cache.c_new, cache.tanh_c)
        grads.arrays["W_ci"], grads.arrays["W_cf"], grads.arrays["W_co"] = dpi, dpf, dpo
        return _weight_grads(cache, grads, dZ)
    dZ = np.zeros((B, T, 4 * Hd))
    dh_next = np.zeros((B, Hd))
    dc_next = np.zeros((B, Hd))
    for t in range(T - 1, -1, -1):
        a = cache.rows[t]
        dh_all = dH[:, t] + dh_next
        if a is not None and len(a) == 0:
            dh_next = dh_all
            continue
        sl = slice(None) if a is None else a
        dh = dh_all[sl]
        dc = dc_next[sl]
        og, tc, cc = cache.o[sl, t], cache.tanh_c[sl, t], cache.c_new[sl, t]
        ig, fg, gg, cp = cache.i[sl, t], cache.f[sl, t], cache.g[sl, t], cache.c_prev[sl, t]
        dzo = dh * tc * og * (1.0 - og)
        dcc = dc + dh * og * (1.0 - tc * tc) + _peep_back(p, dzo, "o")
        dzi = dcc * gg * ig * (1.0 - ig)
        dzf = dcc * cp * fg * (1.0 - fg)
        dzg = dcc * ig * (1.0 - gg * gg)
        _peep_grad(p, grads, dzo, cc, "o")
        _peep_grad(p, grads, dzi, cp, "i")
        _peep_grad(p, grads, dzf, cp, "f")
        dz = np.concatenate([dzi, dzf, dzg, dzo], axis=1)
        dZ[sl, t] = dz
        dh_p = dz @ Wh
        dc_p = dcc * fg + _peep_back(p, dzi, "i") + _peep_back(p, dzf, "f")
        if a is None:
            dh_next, dc_next = dh_p, dc_p
        else:
            dh_next, dc_next = dh_all, dc_next.copy()
            dh_next[a], dc_next[a] = dh_p, dc_p
    return _weight_grads(cache, grads, dZ)


def _weight_grads(cache: ClstmCache, grads: ClstmParams, dZ):
    p = cache.params
    Hd = p.hidden
    live = cache.mask > 0
    flatZ = dZ[live]
    dWv = flatZ.T @ cache.X[live]
    dWh = flatZ.T @ cache.h_prev[live]
    dWb = flatZ.T @ cache.Bv[live]
    db = flatZ.sum(0)
    for k, g in enumerate(GATES):
        sl = slice(k * Hd, (k + 1) * Hd)
        grads.arrays[f"W_v{g}"] = dWv[sl]
        grads.arrays[f"W_h{g}"] = dWh[sl]
        grads.arrays[f"W_b{g}"] = dWb[sl]
        grads.arrays[f"b_{g}"] = db[sl]
    Wv, _, _, _ = p.stacked()
    dX = np.zeros(cache.X.shape)
    dX[live] = flatZ @ Wv
    return grads, dX


def _peep_back(p: ClstmParams, dz, gate):
    w = p.arrays[f"W_c{gate}"]
    return dz @ w if p.full_peephole else dz * w


def _peep_grad(p: ClstmParams, grads: ClstmParams, dz, c, gate):
    key = f"W_c{gate}"
    if p.full_peephole:
        grads.arrays[key] += dz.T @ c
    else:
        grads.arrays[key] += (dz * c).sum(0)


def clstm_step(p: ClstmParams, v, b, prev: ClstmState | None = None) -> ClstmState:
    """One unbatched cell update."""
    v = np.asarray(v, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if v.shape != (p.input_dim,) or b.shape != (p.behavior_dim,):
        raise ValueError("item or behavior vector has the wrong length")
    if prev is None:
        prev = ClstmState(np.zeros(p.hidden), np.zeros(p.hidden))
    Wv, Wh, Wb, bias = p.stacked()
    Hd = p.hidden
    z = Wv @ v + Wh @ prev.h + Wb @ b + bias
    ig = _sigmoid(z[:Hd] + p.peephole(prev.c, "i"))
    fg = _sigmoid(z[Hd:2 * Hd] + p.peephole(prev.c, "f"))
    c = fg * prev.c + ig * np.tanh(z[2 * Hd:3 * Hd])
    og = _sigmoid(z[3 * Hd:] + p.peephole(c, "o"))
    return ClstmState(og * np.tanh(c), c)


def _stack_inputs(inputs):
    if len(inputs) == 0:
        raise ValueError("empty input sequence")
    X = np.stack([np.asarray(v, dtype=np.float64) for v, _ in inputs])[None]
    Bv = np.stack([np.asarray(b, dtype=np.float64) for _, b in inputs])[None]
    return X, Bv


def clstm_forward(p: ClstmParams, inputs) -> list[ClstmState]:
    """States after each ``(item vector, behavior vector)`` input, from zeros."""
    X, Bv = _stack_inputs(inputs)
    _, cache = clstm_run(p, X, Bv)
    return [ClstmState(cache.H[0, t].copy(), cache.C[0, t].copy()) for t in range(X.shape[1])]


def biclstm_run(fwd: ClstmParams, bwd: ClstmParams, X, Bv, mask=None):
    """Concatenated forward/backward hidden states ``(B, T, 2H)`` aligned by position.

    The backward pass runs over the time-reversed arrays; with left padding
    the reversed arrays are right padded, which a masked cell ignores.
    """
    X = np.asarray(X, dtype=np.float64)
    mask = np.ones(X.shape[:2]) if mask is None else np.asarray(mask, dtype=np.float64)
    Hf, cf = clstm_run(fwd, X, Bv, mask)
    Hb, cb = clstm_run(bwd, X[:, ::-1], np.asarray(Bv)[:, ::-1], mask[:, ::-1])
    return np.concatenate([Hf, Hb[:, ::-1]], axis=2), (cf, cb)


def biclstm_backprop(caches, dHcat):
    cf, cb = caches
    Hd = cf.params.hidden
    gf, dXf = clstm_backprop(cf, dHcat[:, :, :Hd])
    gb, dXb = clstm_backprop(cb, dHcat[:, :, Hd:][:, ::-1])
    return gf, gb, dXf + dXb[:, ::-1]


def biclstm_forward(fwd: ClstmParams, bwd: ClstmParams, inputs) -> list[np.ndarray]:
    X, Bv = _stack_inputs(inputs)
    Hcat, _ = biclstm_run(fwd, bwd, X, Bv)
    return [Hcat[0, t].copy() for t in range(X.shape[1])]


def average_pool(states) -> np.ndarray:
    if len(states) == 0:
        raise ValueError("cannot pool an empty list of states")
    S = np.asarray(states, dtype=np.float64)
    if S.ndim != 2:
        raise ValueError("states must be equal-length vectors")
    return S.mean(axis=0)


def masked_average(Hs, mask):
    """Mean over valid steps per batch row; rows without valid steps give zeros."""
    counts = mask.sum(axis=1, keepdims=True)
    safe = np.where(counts > 0, counts, 1.0)
    return (Hs * mask[:, :, None]).sum(axis=1) / safe, safe


def affine_forward(W, b, x):
    W, b, x = np.asarray(W), np.asarray(b), np.asarray(x)
    if W.shape[1] != x.shape[-1] or b.shape != (W.shape[0],):
        raise ValueError(f"affine shapes {W.shape}, {b.shape} do not fit input {x.shape}")
    return x @ W.T + b


def affine_backward(W, x, dy):
    """Returns ``(dW, db, dx)`` for ``y = x @ W.T + b`` with batched rows."""
    x2 = np.atleast_2d(x)
    dy2 = np.atleast_2d(dy)
    return dy2.T @ x2, dy2.sum(0), dy2 @ W


def mse_loss(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("prediction and target lengths differ")
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred, target):
    """Gradient of the per-row mean squared error w.r.t. ``pred``."""
    return 2.0 * (pred - target) / pred.shape[-1]


def dropout(x, p: float, training: bool, rng: np.random.Generator):
    """Inverted dropout; returns ``(output, mask)`` where ``mask`` already holds the scale."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must lie in [0, 1)")
    x = np.asarray(x, dtype=np.float64)
    if not training or p == 0.0:
        return x, None
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep, keep


@dataclass
class AdagradState:
    lr: float = 0.1
    eps: float = 1e-8
    accum: dict[str, np.ndarray] = field(default_factory=dict)


def adagrad_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdagradState):
    """In-place Adagrad: ``G += g*g; theta -= lr * g / (sqrt(G) + eps)``."""
    for name, g in grads.items():
        theta = params[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {theta.shape} for {name}")
        G = state.accum.get(name)
        if G is None:
            G = state.accum[name] = np.zeros_like(theta)
        G += g * g
        theta -= state.lr * g / (np.sqrt(G) + state.eps)
    return params, state


def save_checkpoint(path, arrays: dict[str, np.ndarray], config: dict) -> None:
    """Versioned ``.npz`` container of named tensors plus a JSON config echo.

    Zip member timestamps are fixed, so equal inputs give equal bytes.
    """
    meta = {"format": "binn-checkpoint", "version": CHECKPOINT_VERSION, "config": config,
            "shapes": {k: list(v.shape) for k, v in arrays.items()}}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        _write_npy(zf, "__meta__", np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8))
        for name in sorted(arrays):
            _write_npy(zf, "param/" + name, np.ascontiguousarray(arrays[name], dtype=np.float64))


def _write_npy(zf: zipfile.ZipFile, name: str, arr: np.ndarray) -> None:
    info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
    with zf.open(info, "w") as fh:
        np.lib.format.write_array(fh, arr, allow_pickle=False)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format") != "binn-checkpoint":
            raise ValueError(f"{path} is not a BINN checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    for k, shape in meta["shapes"].items():
        if list(arrays[k].shape) != shape:
            raise ValueError(f"shape mismatch for {k} in {path}")
    return arrays, meta["config"]


def numerical_gradient(f, arrays: dict[str, np.ndarray], h: float = 1e-6) -> dict[str, np.ndarray]:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arrays`` (perturbed in place)."""
    out = {}
    for name, a in arrays.items():
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + h
            fp = f()
            a[idx] = old - h
            fm = f()
            a[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out[name] = g
    return out


def max_relative_error(analytic: dict, numeric: dict, floor: float = 1e-8) -> float:
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)) if a.size else 0.0)
    return worst
