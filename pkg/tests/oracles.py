"""Independent reference implementations used only by the tests.

These are deliberately naive (plain Python loops over lists) so they share no
code path with the vectorised implementations they check.
"""

import math


def naive_thresholds(P, cutoff, scale):
    """Sort each column descending, keep p > cutoff, average, scale.

    Returns ``(tau, fallback)``. The average uses ``math.fsum``: an exactly
    rounded sum is the only summation that makes the sort order irrelevant.
    """
    rows = [list(map(float, r)) for r in P]
    n_classes = len(rows[0])
    tau, fallback = [], []
    for j in range(n_classes):
        column = sorted((r[j] for r in rows), reverse=True)
        kept = []
        for p in column:
            if p > cutoff:
                kept.append(p)
            else:
                break
        if kept:
            tau.append(scale * (math.fsum(kept) / len(kept)))
            fallback.append(False)
        else:
            tau.append(cutoff)
            fallback.append(True)
    return tau, fallback


def naive_select(P, tau):
    out = []
    for i, row in enumerate(P):
        row = list(map(float, row))
        best = 0
        for j in range(1, len(row)):
            if row[j] > row[best]:
                best = j
        if row[best] > tau[best]:
            out.append((i, best, row[best]))
    return out


def naive_forward(weights, biases, x):
    """Explicit triple-loop MLP forward pass with ReLU on hidden layers."""
    a = list(map(float, x))
    for k, (W, b) in enumerate(zip(weights, biases)):
        fan_in, fan_out = len(W), len(W[0])
        z = []
        for o in range(fan_out):
            s = float(b[o])
            for i in range(fan_in):
                s += a[i] * float(W[i][o])
            z.append(s)
        a = [max(v, 0.0) for v in z] if k < len(weights) - 1 else z
    return a


def central_differences(f, params, h=1e-4):
    """Central finite-difference gradient of scalar ``f()`` w.r.t. each array in ``params``.

    Arrays are perturbed in place and restored.
    """
    grads = []
    for p in params:
        g = p.copy()
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = f()
            flat[k] = orig - h
            down = f()
            flat[k] = orig
            gflat[k] = (up - down) / (2 * h)
        grads.append(g)
    return grads
