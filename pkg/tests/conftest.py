"""Shared test helpers: random expression sources and finite-difference
oracles used to cross-check exact gradients."""

import numpy as np


def fmt_const(value):
    return repr(round(float(value), 3))


def random_expr_source(rng, names, depth=3):
    """Random expression source text that is safe to evaluate on [-2, 2]^n:
    ln/sqrt arguments are kept positive and denominators bounded away
    from zero by construction."""
    if depth == 0 or rng.random() < 0.15:
        if rng.random() < 0.3:
            return fmt_const(rng.uniform(-2, 2))
        return str(rng.choice(names))
    a = random_expr_source(rng, names, depth - 1)
    b = random_expr_source(rng, names, depth - 1)
    pick = rng.random()
    if pick < 0.16:
        return f"({a}+{b})"
    if pick < 0.32:
        return f"({a}-{b})"
    if pick < 0.50:
        return f"({a}*{b})"
    if pick < 0.58:
        return f"({a}/(({b})^2+0.7))"
    if pick < 0.66:
        return f"({a})^{rng.integers(2, 4)}"
    if pick < 0.74:
        return f"sin({a})"
    if pick < 0.82:
        return f"cos({a})"
    if pick < 0.88:
        return f"exp(sin({a}))"
    if pick < 0.94:
        return f"ln(({a})^2+0.5)"
    return f"sqrt(({a})^2+0.5)"


def fd_gradient(fn, x, h=1e-5):
    """Central-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros(x.size)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (fn(xp) - fn(xm)) / (2.0 * h)
    return grad


def random_skew(rng, n):
    a = rng.uniform(-1.0, 1.0, (n, n))
    return (a - a.T) / 2.0


def random_psd(rng, n, rank=None):
    rank = n if rank is None else rank
    a = rng.uniform(-1.0, 1.0, (n, rank))
    return a @ a.T


def random_spd(rng, n):
    return random_psd(rng, n) + 0.3 * np.eye(n)
