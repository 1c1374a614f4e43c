"""Compiled time loops for the diagonal-peephole CLSTM.

Input projections and weight gradients stay in numpy matrix products; these
kernels only run the per-step recurrence, which is dominated by interpreter
overhead when written with array operations.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


@njit(cache=True)
def _tanh(x):
    # 2 s(2x) - 1; libm tanh is several times slower than exp here.
    return 2.0 / (1.0 + math.exp(-2.0 * x)) - 1.0


@njit(cache=True)
def clstm_forward_loop(Zx, WhT, pi, pf, po, live):
    # Cache entries of masked steps are left uninitialised; nothing reads them.
    B, T, H4 = Zx.shape
    H = H4 // 4
    h_prev = np.empty((B, T, H))
    c_prev = np.empty((B, T, H))
    ig_ = np.empty((B, T, H))
    fg_ = np.empty((B, T, H))
    gg_ = np.empty((B, T, H))
    og_ = np.empty((B, T, H))
    c_new = np.empty((B, T, H))
    tanh_c = np.empty((B, T, H))
    Hs = np.empty((B, T, H))
    Cs = np.empty((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        idx = np.nonzero(live[:, t])[0]
        n = idx.shape[0]
        if n > 0:
            hp = np.empty((n, H))
            for r in range(n):
                hp[r] = h[idx[r]]
            R = hp @ WhT
            for r in range(n):
                b = idx[r]
                for k in range(H):
                    cp = c[b, k]
                    ig = _sig(Zx[b, t, k] + R[r, k] + pi[k] * cp)
                    fg = _sig(Zx[b, t, H + k] + R[r, H + k] + pf[k] * cp)
                    gg = _tanh(Zx[b, t, 2 * H + k] + R[r, 2 * H + k])
                    cc = fg * cp + ig * gg
                    og = _sig(Zx[b, t, 3 * H + k] + R[r, 3 * H + k] + po[k] * cc)
                    tc = _tanh(cc)
                    h_prev[b, t, k] = hp[r, k]
                    c_prev[b, t, k] = cp
                    ig_[b, t, k] = ig
                    fg_[b, t, k] = fg
                    gg_[b, t, k] = gg
                    og_[b, t, k] = og
                    c_new[b, t, k] = cc
                    tanh_c[b, t, k] = tc
                    c[b, k] = cc
                    h[b, k] = og * tc
        Hs[:, t] = h
        Cs[:, t] = c
    return h_prev, c_prev, ig_, fg_, gg_, og_, c_new, tanh_c, Hs, Cs


@njit(cache=True)
def clstm_backward_loop(dH, Wh, pi, pf, po, live, c_prev, ig_, fg_, gg_, og_, c_new, tanh_c):
    B, T, H = dH.shape
    dZ = np.zeros((B, T, 4 * H))
    dpi = np.zeros(H)
    dpf = np.zeros(H)
    dpo = np.zeros(H)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        for b in range(B):
            for k in range(H):
                dh_next[b, k] += dH[b, t, k]
        idx = np.nonzero(live[:, t])[0]
        n = idx.shape[0]
        if n == 0:
            continue
        Dz = np.empty((n, 4 * H))
        for r in range(n):
            b = idx[r]
            for k in range(H):
                dh = dh_next[b, k]
                og = og_[b, t, k]
                tc = tanh_c[b, t, k]
                ig = ig_[b, t, k]
                fg = fg_[b, t, k]
                gg = gg_[b, t, k]
                cp = c_prev[b, t, k]
                dzo = dh * tc * og * (1.0 - og)
                dcc = dc_next[b, k] + dh * og * (1.0 - tc * tc) + po[k] * dzo
                dzi = dcc * gg * ig * (1.0 - ig)
                dzf = dcc * cp * fg * (1.0 - fg)
                dzg = dcc * ig * (1.0 - gg * gg)
                dpo[k] += dzo * c_new[b, t, k]
                dpi[k] += dzi * cp
                dpf[k] += dzf * cp
                Dz[r, k] = dzi
                Dz[r, H + k] = dzf
                Dz[r, 2 * H + k] = dzg
                Dz[r, 3 * H + k] = dzo
                dc_next[b, k] = dcc * fg + pi[k] * dzi + pf[k] * dzf
        dhp = Dz @ Wh
        for r in range(n):
            b = idx[r]
            dZ[b, t] = Dz[r]
            dh_next[b] = dhp[r]
    return dZ, dpi, dpf, dpo
