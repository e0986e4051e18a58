"""Slow, obviously-correct reference implementations used only by tests.

Nothing here imports the production math; each oracle is written directly
from the defining formula with plain loops and the ``math`` module.
"""
import math

import numpy as np


def cox_de_boor(knots, i, k, x, top=None):
    """Textbook recursion; ``top`` maps x == top into the interval ending there."""
    t = knots
    if k == 0:
        if top is not None and x == top:
            return 1.0 if t[i + 1] == top and t[i] < top else 0.0
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    out = 0.0
    den = t[i + k] - t[i]
    if den != 0.0:
        out += (x - t[i]) / den * cox_de_boor(t, i, k - 1, x, top)
    den = t[i + k + 1] - t[i + 1]
    if den != 0.0:
        out += (t[i + k + 1] - x) / den * cox_de_boor(t, i + 1, k - 1, x, top)
    return out


def cox_de_boor_deriv(knots, i, k, x, top=None):
    t = knots
    out = 0.0
    den = t[i + k] - t[i]
    if den != 0.0:
        out += cox_de_boor(t, i, k - 1, x, top) / den
    den = t[i + k + 1] - t[i + 1]
    if den != 0.0:
        out -= cox_de_boor(t, i + 1, k - 1, x, top) / den
    return k * out


def spline_value(knots, order, coefs, x):
    """Sum c_i B_i(x) with edge clamping plus linear continuation at the edge slope."""
    lo, hi = knots[order], knots[-order - 1]
    xc = min(max(x, lo), hi)
    val = sum(c * cox_de_boor(knots, i, order, xc, top=hi) for i, c in enumerate(coefs))
    if xc == x:
        return val
    slope = sum(c * cox_de_boor_deriv(knots, i, order, xc, top=hi) for i, c in enumerate(coefs))
    return val + slope * (x - xc)


def silu(x):
    return x / (1.0 + math.exp(-x))


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def kan_layer(base, spline_w, coefs, knots, order, x):
    out_dim, in_dim = len(base), len(base[0])
    y = []
    for q in range(out_dim):
        acc = 0.0
        for p in range(in_dim):
            acc += base[q][p] * silu(x[p]) + spline_w[q][p] * spline_value(knots, order, coefs[q][p], x[p])
        y.append(acc)
    return y


def lstm_step(W, b, x, h, c):
    """W rows stacked (i, f, g, o); input to every gate is [h, x]."""
    H = len(h)
    z = list(h) + list(x)
    pre = [sum(W[r][j] * z[j] for j in range(len(z))) + b[r] for r in range(4 * H)]
    c_new, h_new = [], []
    for j in range(H):
        i = sig(pre[j])
        f = sig(pre[H + j])
        g = math.tanh(pre[2 * H + j])
        o = sig(pre[3 * H + j])
        cj = f * c[j] + i * g
        c_new.append(cj)
        h_new.append(o * math.tanh(cj))
    return h_new, c_new


def label_oracle(mids, k, alpha, smoothing):
    """Label row-by-row with explicit loops."""
    out = []
    w = min(smoothing, k) if smoothing else k
    for t in range(len(mids) - k):
        fut = [mids[t + k - j] for j in range(w)]
        rel = (sum(fut) / w - mids[t]) / mids[t]
        out.append(0 if rel > alpha else 2 if rel < -alpha else 1)
    return out


def spearman(a, b):
    def ranks(v):
        order = sorted(range(len(v)), key=lambda i: v[i])
        r = [0.0] * len(v)
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            for m in range(i, j + 1):
                r[order[m]] = (i + j) / 2.0
            i = j + 1
        return r

    ra, rb = ranks(list(a)), ranks(list(b))
    ma, mb = sum(ra) / len(ra), sum(rb) / len(rb)
    cov = sum((x - ma) * (y - mb) for x, y in zip(ra, rb))
    va = sum((x - ma) ** 2 for x in ra)
    vb = sum((y - mb) ** 2 for y in rb)
    return cov / math.sqrt(va * vb)


def naive_matmul(a, b):
    n, m, p = len(a), len(b), len(b[0])
    return [[sum(a[i][k] * b[k][j] for k in range(m)) for j in range(p)] for i in range(n)]


def conv_1x2(x, W, bias):
    """x: (T, F) single channel, W: (C, 2). Stride-2 pairing of columns."""
    T, F = len(x), len(x[0])
    C = len(W)
    return [[[sum(W[c][j] * x[t][2 * w + j] for j in range(2)) + bias[c] for c in range(C)]
             for w in range(F // 2)] for t in range(T)]


def conv_4x1_causal(x, W, bias):
    """x: (T, Wd, Cin); W: (Cout, Cin, 4). out[t] sees x[t-3..t], zero padded."""
    T, Wd, Cin = len(x), len(x[0]), len(x[0][0])
    Cout = len(W)
    out = []
    for t in range(T):
        row = []
        for w in range(Wd):
            cell = []
            for co in range(Cout):
                acc = bias[co]
                for ci in range(Cin):
                    for j in range(4):
                        src = t - 3 + j
                        if src >= 0:
                            acc += W[co][ci][j] * x[src][w][ci]
                cell.append(acc)
            row.append(cell)
        out.append(row)
    return out


def as_np(x):
    return np.asarray(x, dtype=np.float64)
