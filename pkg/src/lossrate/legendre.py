"""Fenchel-Legendre transforms and tilt solving for one-dimensional CGFs.

The tilt ``sigma`` solving ``Lambda'(sigma) = q`` is found by a safeguarded
Newton iteration on the monotone ``Lambda'``: a bracket is grown by
doubling from ``theta = 0`` and every Newton step that leaves the bracket
is replaced by bisection. The transform is then ``sigma q - Lambda(sigma)``.
Support endpoints carrying an atom are handled by their exact limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .distributions import CumulantFunction
from .exceptions import NoTiltError

__all__ = [
    "LegendreResult",
    "legendre_transform",
    "conjugate",
    "tilt_solve",
    "perspective",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-10
_EDGE_TOL = 1e-12
_MAX_NEWTON = 200

INTERIOR, BOUNDARY, INFEASIBLE = "interior", "at-domain-boundary", "infeasible"


@dataclass(frozen=True)
class LegendreResult:
    value: float
    argmax: Optional[float]
    boundary_flag: str


def _near(a, b):
    if not math.isfinite(b):
        return np.zeros(np.shape(a), dtype=bool) if np.ndim(a) else False
    return np.abs(a - b) <= _EDGE_TOL * np.maximum(1.0, np.abs(b))


def _solve_interior(cgf: CumulantFunction, q: np.ndarray, tol: float):
    """Vectorised root of ``Lambda'(theta) = q`` for ``q`` strictly inside the range.

    Returns ``(theta, capped)``; ``capped`` marks entries whose root lies
    beyond the probe ceiling, for which ``theta`` is the ceiling itself.
    """
    q = np.asarray(q, dtype=float)
    up = q > cgf.mean
    step = 1.0 / cgf.scale
    top, bottom = cgf.theta_ceiling, cgf.theta_floor
    # an open domain end (exponential) is approached geometrically, never reached
    open_top = math.isfinite(cgf.theta_sup) and top == cgf.theta_sup
    open_bottom = math.isfinite(cgf.theta_inf) and bottom == cgf.theta_inf
    lo = np.where(up, 0.0, -min(step, 0.5 * -bottom) if open_bottom else -min(step, -bottom))
    hi = np.where(up, min(step, 0.5 * top) if open_top else min(step, top), 0.0)
    capped = np.zeros(q.shape, dtype=bool)

    for _ in range(4000):
        grow_up = up & ~capped & (cgf.derivs(hi)[1] < q)
        grow_dn = ~up & ~capped & (cgf.derivs(lo)[1] > q)
        if not open_top:
            hit = grow_up & (hi >= top)
            capped |= hit
            grow_up &= ~hit
        if not open_bottom:
            hit = grow_dn & (lo <= bottom)
            capped |= hit
            grow_dn &= ~hit
        if not (grow_up.any() or grow_dn.any()):
            break
        nxt_hi = np.minimum(2 * hi, 0.5 * (hi + top)) if open_top else np.minimum(2 * hi, top)
        nxt_lo = np.maximum(2 * lo, 0.5 * (lo + bottom)) if open_bottom else np.maximum(2 * lo, bottom)
        lo, hi = np.where(grow_up, hi, lo), np.where(grow_up, nxt_hi, hi)
        hi, lo = np.where(grow_dn, lo, hi), np.where(grow_dn, nxt_lo, lo)

    theta = np.where(capped, np.where(up, hi, lo), 0.0)
    active = ~capped
    # Newton start: Gaussian approximation, clipped into the bracket
    guess = (q - cgf.mean) / max(cgf.variance, 1e-300)
    theta = np.where(active, np.where((guess > lo) & (guess < hi), guess, 0.5 * (lo + hi)), theta)
    scale_q = np.maximum(1.0, np.abs(q))
    for _ in range(_MAX_NEWTON):
        if not active.any():
            break
        _, d1, d2 = cgf.derivs(theta)
        f = d1 - q
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = theta - f / d2
        # value error of the transform is about f * (Newton step) / 2
        done = (np.abs(f) <= tol * scale_q) & (np.abs(f * (newton - theta)) <= 1e-3 * tol)
        narrow = (hi - lo) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(theta))
        active &= ~(done | narrow)
        lo = np.where(active & (f < 0), theta, lo)
        hi = np.where(active & (f > 0), theta, hi)
        ok = (d2 > 0) & (newton > lo) & (newton < hi) & np.isfinite(newton)
        theta = np.where(active, np.where(ok, newton, 0.5 * (lo + hi)), theta)
    return theta, capped


def conjugate(cgf: CumulantFunction, x, tol: float = DEFAULT_TOL):
    """Vectorised transform.

    Returns arrays ``(value, sigma, cgf_at_sigma, flag)`` where ``flag`` is
    0 interior, 1 at a domain boundary, 2 infeasible. ``sigma`` is
    ``+-inf`` at an endpoint atom and ``nan`` when infeasible.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    value = np.full(x.shape, np.inf)
    sigma = np.full(x.shape, np.nan)
    lam = np.full(x.shape, np.nan)
    flag = np.full(x.shape, 2, dtype=int)

    at_mean = x == cgf.mean
    at_sup = ~at_mean & _near(x, cgf.ess_sup) if math.isfinite(cgf.ess_sup) else np.zeros_like(at_mean)
    at_inf = ~at_mean & ~at_sup & _near(x, cgf.ess_inf)
    inside = ~(at_mean | at_sup | at_inf) & (x > cgf.ess_inf) & (x < cgf.ess_sup)

    value[at_mean], sigma[at_mean], lam[at_mean], flag[at_mean] = 0.0, 0.0, 0.0, 0
    if cgf.mass_at_sup > 0:
        value[at_sup] = -math.log(cgf.mass_at_sup)
        sigma[at_sup], lam[at_sup], flag[at_sup] = np.inf, np.inf, 1
    if cgf.mass_at_inf > 0:
        value[at_inf] = -math.log(cgf.mass_at_inf)
        sigma[at_inf], flag[at_inf] = -np.inf, 1
        # Lambda(theta) -> log P(X = inf) + theta * inf as theta -> -inf
        lam[at_inf] = math.log(cgf.mass_at_inf) if cgf.ess_inf == 0 else (-np.inf if cgf.ess_inf > 0 else np.inf)

    if inside.any():
        th, capped = _solve_interior(cgf, x[inside], tol)
        lv = np.asarray(cgf.value(th), dtype=float)
        v = np.maximum(th * x[inside] - lv, 0.0)
        value[inside], sigma[inside], lam[inside] = v, th, lv
        flag[inside] = np.where(capped, 1, 0)
    if scalar:
        return float(value[0]), float(sigma[0]), float(lam[0]), int(flag[0])
    return value, sigma, lam, flag


_FLAGS = {0: INTERIOR, 1: BOUNDARY, 2: INFEASIBLE}


def legendre_transform(cgf: CumulantFunction, x: float, tol: float = DEFAULT_TOL) -> LegendreResult:
    """``sup_theta (theta x - Lambda(theta))`` with its maximiser.

    Examples
    --------
    >>> from lossrate.distributions import LossAmountModel
    >>> round(legendre_transform(LossAmountModel.exponential(1.0), 2.0).value, 6)
    0.306853
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    value, sigma, _, flag = conjugate(cgf, float(x), tol)
    argmax = sigma if math.isfinite(sigma) else None
    return LegendreResult(value=value, argmax=argmax, boundary_flag=_FLAGS[flag])


def tilt_solve(cgf: CumulantFunction, q: float, tol: float = DEFAULT_TOL) -> float:
    """Solve ``Lambda'(sigma) = q``; raises :class:`NoTiltError` at or beyond the support."""
    q = float(q)
    if q >= cgf.ess_sup or _near(q, cgf.ess_sup):
        raise NoTiltError(f"no tilt: q={q} is at or above the essential supremum {cgf.ess_sup}", "upper")
    if q <= cgf.ess_inf or _near(q, cgf.ess_inf):
        raise NoTiltError(f"no tilt: q={q} is at or below the essential infimum {cgf.ess_inf}", "lower")
    if q == cgf.mean:
        return 0.0
    theta, capped = _solve_interior(cgf, np.array([q]), tol)
    if capped[0]:
        side = "upper" if q > cgf.mean else "lower"
        raise NoTiltError(f"no tilt: q={q} needs |theta| beyond the probe ceiling", side)
    return float(theta[0])


def perspective(cgf: CumulantFunction, increment: float, weight: float, tol: float = DEFAULT_TOL) -> float:
    """Closed perspective ``weight * Lambda*(increment / weight)``.

    At ``weight == 0`` this is the recession function: 0 for a zero
    increment, ``increment * theta_sup`` otherwise.
    """
    if weight < 0 or (weight == 0 and increment < 0):
        raise ValueError("perspective needs weight >= 0")
    if weight > 0:
        return weight * conjugate(cgf, increment / weight, tol)[0]
    if increment == 0:
        return 0.0
    return increment * cgf.theta_sup if increment > 0 else -increment * -cgf.theta_inf
