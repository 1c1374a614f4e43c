"""Reference computations written directly from the model definition.

Nothing here calls the batched kernels; every quantity is rebuilt one cell
update at a time from the named parameter arrays.
"""

import numpy as np


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def cell(a, v, b, h, c, full=False):
    peep = (lambda g, x: a[f"W_c{g}"] @ x) if full else (lambda g, x: a[f"W_c{g}"] * x)
    pre = {g: a[f"W_v{g}"] @ v + a[f"W_h{g}"] @ h + a[f"W_b{g}"] @ b + a[f"b_{g}"] for g in "ifco"}
    i = sig(pre["i"] + peep("i", c))
    f = sig(pre["f"] + peep("f", c))
    c_new = f * c + i * np.tanh(pre["c"])
    o = sig(pre["o"] + peep("o", c_new))
    return o * np.tanh(c_new), c_new


def run(a, steps, hidden):
    h, c = np.zeros(hidden), np.zeros(hidden)
    out = []
    for v, b in steps:
        h, c = cell(a, v, b, h, c)
        out.append(h)
    return out


def steps_of(model, events):
    nb = model.config.num_behavior_types
    return [(model.space.vector(e.item_id), np.eye(nb)[e.behavior - 1]) for e in events]


def psi_sbl(model, seq, t):
    cfg = model.config
    events = seq.events[max(0, t - 1 - cfg.ts):t - 1]
    return run(model.sbl.arrays, steps_of(model, events), cfg.hidden)[-1]


def psi_pbl(model, seq, t):
    cfg = model.config
    events = [e for e in seq.events[:t - 1] if e.behavior in cfg.preference][-cfg.pbl_history_cap:]
    if not events:
        return np.zeros(2 * cfg.hidden)
    steps = steps_of(model, events)
    fwd = run(model.pbl_fwd.arrays, steps, cfg.hidden)
    bwd = run(model.pbl_bwd.arrays, steps[::-1], cfg.hidden)[::-1]
    return np.mean([np.concatenate([f, b]) for f, b in zip(fwd, bwd)], axis=0)


def prediction(model, seq, t):
    z = np.concatenate([psi_sbl(model, seq, t), psi_pbl(model, seq, t)])
    return model.fusion_W @ z + model.fusion_b


def user_loss(model, seq):
    """``(1 / (|S_u| - ts - 1)) * sum_{t = ts+1}^{|S_u|} mean((v_hat_t - v_t)^2)``."""
    ts = model.config.ts
    total = 0.0
    for t in range(ts + 1, len(seq) + 1):
        target = model.space.vector(seq.events[t - 1].item_id)
        total += float(np.mean((prediction(model, seq, t) - target) ** 2))
    return total / (len(seq) - ts - 1)
