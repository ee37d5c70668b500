"""Reference computations that deliberately avoid the package's own code paths."""

import math

import numpy as np


def scalar_sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def scalar_layer(weights, bias, x):
    out = []
    for j in range(len(bias)):
        acc = bias[j]
        for k in range(len(x)):
            acc += weights[j][k] * x[k]
        out.append(scalar_sigmoid(acc))
    return out


def scalar_stack(layers, x):
    """``layers`` is a list of (weights, bias) nested lists."""
    h = list(x)
    for w, b in layers:
        h = scalar_layer(w, b, h)
    return h


def scalar_xent(target, z, eps=1e-7):
    total = 0.0
    for t, p in zip(target, z):
        p = min(max(p, eps), 1 - eps)
        total -= t * math.log(p) + (1 - t) * math.log(1 - p)
    return total


def central_difference(loss, arrays, h=1e-5):
    """Central finite-difference gradient of ``loss()`` w.r.t. each array, in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = a[i]
            a[i] = orig + h
            up = loss()
            a[i] = orig - h
            down = loss()
            a[i] = orig
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a).ravel()
        n = np.asarray(n).ravel()
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def loop_minmax(rows):
    lo = list(rows[0])
    hi = list(rows[0])
    for r in rows[1:]:
        for d, v in enumerate(r):
            if v < lo[d]:
                lo[d] = v
            if v > hi[d]:
                hi[d] = v
    return np.array(lo), np.array(hi)


def autocorr_pitch(x, fs, fmin=60.0, fmax=400.0):
    """Brute-force pitch: lag of the largest autocorrelation in range."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    best_lag, best = None, -np.inf
    for lag in range(int(math.ceil(fs / fmax)), int(fs / fmin) + 1):
        if lag >= len(x):
            break
        r = float(np.dot(x[:-lag], x[lag:]))
        if r > best:
            best, best_lag = r, lag
    return fs / best_lag


def extended_classifier_fd(layers, X, y, h=1e-5, eps=1e-7):
    """Central differences of the mean classification loss in extended precision.

    Double precision leaves a rounding floor near ``1e-16 * loss / h`` on each
    difference, which swamps partials of order 1e-8 deep in a wide first
    layer.  Evaluating in ``longdouble`` lowers the floor by three orders of
    magnitude.  First-layer perturbations are applied to the cached
    pre-activations (the layer is linear in its parameters).
    """
    ld = np.longdouble
    X = np.asarray(X, dtype=ld)
    y = np.asarray(y, dtype=ld)
    Ws = [np.asarray(l.weights, dtype=ld) for l in layers]
    bs = [np.asarray(l.bias, dtype=ld) for l in layers]
    hh = ld(h)

    def sig(a):
        return ld(1) / (ld(1) + np.exp(-a))

    def loss_from(a1, Ws, bs):
        out = sig(a1)
        for W, b in zip(Ws[1:], bs[1:]):
            out = sig(out @ W.T + b)
        p = np.clip(out[:, 0], ld(eps), ld(1) - ld(eps))
        return np.mean(-(y * np.log(p) + (ld(1) - y) * np.log(ld(1) - p)))

    A1 = X @ Ws[0].T + bs[0]
    gW1 = np.zeros(Ws[0].shape)
    gb1 = np.zeros(bs[0].shape)
    for j in range(Ws[0].shape[0]):
        for k in range(Ws[0].shape[1]):
            up, down = A1.copy(), A1.copy()
            up[:, j] += hh * X[:, k]
            down[:, j] -= hh * X[:, k]
            gW1[j, k] = float((loss_from(up, Ws, bs) - loss_from(down, Ws, bs)) / (2 * hh))
        up, down = A1.copy(), A1.copy()
        up[:, j] += hh
        down[:, j] -= hh
        gb1[j] = float((loss_from(up, Ws, bs) - loss_from(down, Ws, bs)) / (2 * hh))
    grads = [gW1, gb1]
    for arrs in zip(Ws[1:], bs[1:]):
        for a in arrs:
            g = np.zeros(a.shape)
            for i in np.ndindex(a.shape):
                orig = a[i]
                a[i] = orig + hh
                up = loss_from(A1, Ws, bs)
                a[i] = orig - hh
                down = loss_from(A1, Ws, bs)
                a[i] = orig
                g[i] = float((up - down) / (2 * hh))
            grads.append(g)
    return grads
