"""Independent reference computations used by the test-suite.

Nothing here calls into the optimisers or root finders of the package:
CGFs are summed directly over atoms, transforms are solved with
``scipy.optimize.brentq`` and the simplex program is searched on a grid.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import logsumexp


def kl_bernoulli(a: float, b: float) -> float:
    """Relative entropy of Bernoulli(a) with respect to Bernoulli(b)."""
    out = 0.0
    if a > 0:
        out += a * math.log(a / b)
    if a < 1:
        out += (1 - a) * math.log((1 - a) / (1 - b))
    return out


def poisson_type_conjugate(x: float, u: float = 1.0, lam: float = 1.0) -> float:
    """Closed-form transform of ``U = (K + 1) u``, ``K ~ Poisson(lam)``."""
    y = x / u - 1.0
    return y * math.log(y / lam) - y + lam


def atom_cgf(values, probs, theta):
    return float(logsumexp(theta * np.asarray(values), b=np.asarray(probs)))


def atom_conjugate(values, probs, y: float) -> float:
    """``Lambda*(y)`` of a finite law by bracketing the tilt with ``brentq``."""
    v = np.asarray(values, dtype=float)
    q = np.asarray(probs, dtype=float)
    keep = q > 0
    v, q = v[keep], q[keep]
    lo_v, hi_v = v.min(), v.max()
    if y > hi_v + 1e-12 or y < lo_v - 1e-12:
        return math.inf
    if abs(y - hi_v) <= 1e-12:
        return -math.log(q[v == hi_v].sum())
    if abs(y - lo_v) <= 1e-12:
        return -math.log(q[v == lo_v].sum())

    def tilted_mean(th):
        w = np.log(q) + th * v
        w = np.exp(w - w.max())
        return float((w * v).sum() / w.sum()) - y

    a, b = -1.0, 1.0
    while tilted_mean(a) > 0:
        a *= 2
    while tilted_mean(b) < 0:
        b *= 2
    th = brentq(tilted_mean, a, b, xtol=1e-14, rtol=1e-14)
    return max(0.0, th * y - atom_cgf(v, q, th))


def grid_path_rate(x, values, probs, p, step: int = 200) -> float:
    """Dense grid search of the simplex program with spacing ``1/step``.

    The transform is only ever needed at ``dx_i * step / k`` for integer
    ``k``, so it is tabulated once per coordinate.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    dx = np.diff(np.concatenate([[0.0], x]))
    N = dx.size
    table = np.full((N, step + 1), math.inf)
    for i in range(N):
        # k = 0 is the empty bucket: finite only for a zero increment
        table[i, 0] = 0.0 if dx[i] == 0 else math.inf
        for k in range(1, step + 1):
            phi = k / step
            table[i, k] = phi * math.log(phi / p[i]) + phi * atom_conjugate(values, probs, dx[i] / phi)
    best = math.inf
    for ks in itertools.product(range(step + 1), repeat=N - 1):
        last = step - sum(ks)
        if last < 0:
            continue
        total = sum(table[i, k] for i, k in enumerate(ks)) + table[N - 1, last]
        best = min(best, total)
    return best


def dual_path_rate(x, classes) -> float:
    """Dual lower bound ``sup_theta theta.dx - sum_j a_j log sum_i p_ij e^{Lambda_j(theta_i)}``.

    ``classes`` holds ``(fraction, values, probs, p)`` for finite laws; the
    maximisation uses BFGS from zero.
    """
    dx = np.diff(np.concatenate([[0.0], np.asarray(x, dtype=float)]))

    def neg(th):
        tot = th @ dx
        for a, v, q, p in classes:
            lam = np.array([atom_cgf(v, q, t) for t in th])
            tot -= a * logsumexp(lam, b=np.asarray(p))
        return -tot

    res = minimize(neg, np.zeros(dx.size), method="BFGS", options={"gtol": 1e-11})
    return -res.fun


def brute_force_paths(n, values, probs, p):
    """Every joint outcome of ``n`` obligors as ``(probability, L(0..N))``.

    Exponential in ``n``; meant for ``n <= 4`` with few atoms and epochs.
    """
    N = len(p)
    epochs = [(j + 1, pj) for j, pj in enumerate(p)]
    never = 1.0 - sum(p)
    if never > 1e-15:
        epochs.append((N + 1, never))
    single = [(j, u, pj * pu) for j, pj in epochs for u, pu in zip(values, probs)]
    for combo in itertools.product(single, repeat=n):
        prob = math.prod(c[2] for c in combo)
        L = [sum(u for j, u, _ in combo if j <= t) for t in range(N + 1)]
        yield prob, L


def grid_fixtures(seed: int = 2024, count: int = 10):
    """Random ``(values, probs, p, x)`` with discrete ``U`` and ``N`` in {2, 3}.

    Half the fixtures use two epochs and half three. Weights are kept away
    from zero so the grid optimum is not hidden between grid points, and
    paths that no simplex point can reach are redrawn.
    """
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        N = 2 if len(out) < count // 2 else 3
        m = int(rng.integers(2, 5))
        vals = np.sort(rng.choice(np.arange(0, 9) * 0.5, m, replace=False))
        q = rng.dirichlet(2 * np.ones(m))
        p = rng.dirichlet(3 * np.ones(N))
        if p.min() < 0.1 or q.min() < 0.05:
            continue
        dx = float(vals @ q) * p * rng.uniform(0.6, 1.4, N)
        lo, hi = vals.min(), vals.max()
        if dx.sum() / hi > 1 or (lo > 0 and dx.sum() / lo < 1):
            continue
        out.append((vals, q, p, np.cumsum(dx)))
    return out
