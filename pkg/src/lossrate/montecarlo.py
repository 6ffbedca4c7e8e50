"""Monte Carlo estimates of barrier and increment crossing probabilities.

Replications are generated in fixed-size blocks. Block ``b`` draws from
``numpy.random.default_rng([seed, b])``, so the output depends only on the
seed and the replication count, never on how many workers run the blocks.
Block totals are combined in block order with ``math.fsum``.

The tilted estimator changes the law of each obligor only through the
event that it defaults inside the dominating window ``(s*, t*]``: that
event gets probability ``w e^{Lambda_U(sigma)} / (w e^{Lambda_U(sigma)} + 1 - w)``
and its loss amount is tilted by ``sigma``. Each replication is then
weighted by ``exp(-sigma (L(t*) - L(s*)) + n Lambda(sigma))``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple, Union

import numpy as np

from .asymptotics import AsymptoticEstimate, Barrier, IncrementBarrier
from .distributions import CompositeCgf, DefaultTimeModel, LossAmountModel

__all__ = ["McEstimate", "BLOCK_SIZE", "simulate_paths", "mc_barrier", "mc_increment"]

BLOCK_SIZE = 4096
_TIE_TOL = 1e-9


@dataclass(frozen=True)
class McEstimate:
    estimate: float
    stderr: float
    replications: int
    seed: int
    method: str
    n: int = 0


def _epoch_law(tau: DefaultTimeModel) -> np.ndarray:
    """Probabilities of epochs ``1..N`` followed by "never"."""
    p = tau.p
    return np.append(p, max(0.0, 1.0 - p.sum()))


def _normalised(q: np.ndarray) -> np.ndarray:
    s = q.sum()
    if s <= 0:
        out = np.zeros_like(q)
        out[-1] = 1.0
        return out
    return q / s


def _loss_sums(U: LossAmountModel, counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Total loss of ``counts`` independent draws of ``U`` (elementwise)."""
    counts = np.asarray(counts, dtype=np.int64)
    if U.is_atomic:
        values, probs = U.atoms()
        if values.size == 1:
            return counts * float(values[0])
        return rng.multinomial(counts, probs) @ values
    if U.family == "poisson":
        return U.u * (counts + rng.poisson(U.lam * counts))
    return np.where(counts > 0, rng.gamma(np.maximum(counts, 1), 1.0 / U.rate), 0.0)


def _block(U, tau, n, size, rng, window=None, sigma=0.0):
    """Normalised paths ``L_n(t)/n`` of shape ``(size, N)`` and log-weights.

    With ``window = (s, t)`` the defaults inside ``(s, t]`` are tilted by
    ``sigma``; otherwise the log-weights are all zero.
    """
    N = tau.grid_size
    law = _epoch_law(tau)
    if window is None:
        counts = rng.multinomial(n, law, size=size)
        losses = np.stack([_loss_sums(U, counts[:, j], rng) for j in range(N)], axis=1)
        return np.cumsum(losses, axis=1) / n, np.zeros(size)
    s, t = window
    inside = np.zeros(N + 1, dtype=bool)
    inside[s:t] = True
    w = float(law[inside].sum())
    lam_u = float(U.value(sigma))
    lw = math.log(w) + lam_u
    lam_c = float(np.logaddexp(lw, math.log1p(-w))) if w < 1 else lam_u
    w_tilt = math.exp(lw - lam_c)
    hits = rng.binomial(n, w_tilt, size=size)
    counts = np.zeros((size, N + 1), dtype=np.int64)
    counts[:, inside] = rng.multinomial(hits, _normalised(law[inside]))
    if (~inside).any():
        counts[:, ~inside] = rng.multinomial(n - hits, _normalised(law[~inside]))
    U_tilt = U.tilted(sigma)
    losses = np.stack(
        [_loss_sums(U_tilt if inside[j] else U, counts[:, j], rng) for j in range(N)], axis=1
    )
    inc = losses[:, inside[:N]].sum(axis=1)
    log_w = -sigma * inc + n * lam_c
    return np.cumsum(losses, axis=1) / n, log_w


def _block_sizes(replications: int):
    full, rest = divmod(replications, BLOCK_SIZE)
    return [BLOCK_SIZE] * full + ([rest] if rest else [])


def simulate_paths(U: LossAmountModel, tau: DefaultTimeModel, n: int, replications: int,
                   seed: int = 0) -> Iterator[np.ndarray]:
    """Yield ``replications`` normalised loss paths ``(L_n(1)/n, ..., L_n(N)/n)``.

    Obligors that never default (the defect mass) contribute nothing.
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    for b, size in enumerate(_block_sizes(replications)):
        paths, _ = _block(U, tau, n, size, np.random.default_rng([seed, b]))
        yield from paths


def _crossing_barrier(paths, zeta: Barrier):
    N = paths.shape[1]
    if zeta.horizon < N:
        raise ValueError(f"barrier is tabulated on {zeta.horizon} epochs but the grid has {N}")
    lv = np.array(zeta.values[:N])
    return np.any(paths >= lv - _TIE_TOL * np.maximum(1.0, np.abs(lv)), axis=1)


def _crossing_increment(paths, xi: IncrementBarrier):
    N = paths.shape[1]
    full = np.hstack([np.zeros((paths.shape[0], 1)), paths])
    hit = np.zeros(paths.shape[0], dtype=bool)
    for (s, t), v in xi.entries.items():
        if t <= N:
            hit |= full[:, t] - full[:, s] >= v - _TIE_TOL * max(1.0, abs(v))
    return hit


def _run(U, tau, n, replications, seed, indicator, window, sigma, n_jobs):
    if replications < 1:
        raise ValueError("replications must be at least 1")
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    sizes = _block_sizes(replications)

    def one(b):
        paths, log_w = _block(U, tau, n, sizes[b], np.random.default_rng([seed, b]), window, sigma)
        hit = indicator(paths)
        if window is None:
            return int(hit.sum()), 0.0
        vals = np.where(hit, np.exp(log_w), 0.0)
        return math.fsum(vals), math.fsum(vals * vals)

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(one, range(len(sizes))))
    else:
        parts = [one(b) for b in range(len(sizes))]
    R = replications
    if window is None:
        hits = sum(p[0] for p in parts)
        est = hits / R
        return est, math.sqrt(est * (1.0 - est) / R)
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    est = s1 / R
    var = max(0.0, (s2 - s1 * s1 / R) / (R - 1)) if R > 1 else 0.0
    return est, math.sqrt(var / R)


TiltSpec = Union[AsymptoticEstimate, Tuple, None]


def _tilt_args(method, tilt: TiltSpec, kind):
    if method == "plain":
        return None, 0.0
    if method != "tilted":
        raise ValueError("method must be 'plain' or 'tilted'")
    if tilt is None:
        raise ValueError("the tilted estimator needs the dominating epoch and tilt from the asymptotics")
    if isinstance(tilt, AsymptoticEstimate):
        if tilt.kind != kind:
            raise ValueError(f"tilt comes from {tilt.kind} asymptotics, expected {kind}")
        opt, sigma = tilt.optimum, tilt.tilt
    else:
        opt, sigma = tilt
    window = (0, int(opt)) if kind == "barrier" else (int(opt[0]), int(opt[1]))
    return window, float(sigma)


def mc_barrier(U: LossAmountModel, tau: DefaultTimeModel, zeta: Barrier, n: int, replications: int,
               seed: int = 0, method: str = "plain", tilt: TiltSpec = None, n_jobs: int = 1) -> McEstimate:
    """Estimate ``P(exists t: L_n(t)/n >= zeta(t))``.

    ``tilt`` is an :class:`AsymptoticEstimate` from ``barrier_asymptotics``
    or a pair ``(t_star, sigma_star)``; it is required for ``method="tilted"``.
    """
    window, sigma = _tilt_args(method, tilt, "barrier")
    if window is not None and window[1] > tau.grid_size:
        raise ValueError(f"dominating epoch {window[1]} lies beyond the grid")
    est, se = _run(U, tau, n, replications, seed, lambda P: _crossing_barrier(P, zeta), window, sigma, n_jobs)
    return McEstimate(est, se, replications, seed, method, n)


def mc_increment(U: LossAmountModel, tau: DefaultTimeModel, xi: IncrementBarrier, n: int, replications: int,
                 seed: int = 0, method: str = "plain", tilt: TiltSpec = None, n_jobs: int = 1) -> McEstimate:
    """Estimate ``P(exists s < t: (L_n(t) - L_n(s))/n >= xi(s, t))``.

    For ``method="tilted"``, ``tilt`` supplies ``((s*, t*), sigma*)`` or an
    :class:`AsymptoticEstimate` from ``increment_asymptotics``.
    """
    window, sigma = _tilt_args(method, tilt, "increment")
    if window is not None and window[1] > tau.grid_size:
        raise ValueError(f"dominating pair {window} lies beyond the grid")
    est, se = _run(U, tau, n, replications, seed, lambda P: _crossing_increment(P, xi), window, sigma, n_jobs)
    return McEstimate(est, se, replications, seed, method, n)
