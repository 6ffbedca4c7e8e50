"""Exact finite-n crossing probabilities for lattice loss amounts.

Losses are tracked as integers. A loss amount with atoms ``a_min + d k``
contributes index ``k``, so the portfolio loss after ``m`` defaults is
``m a_min + d e`` with ``e`` the summed indices. The state of every
recursion is therefore ``(m, e)`` plus, for increments, the pending
thresholds. Obligors default independently at each epoch with the hazard
``p_j / (1 - F_{j-1})``; mass that never defaults simply stays a survivor.

Probabilities are accumulated in double precision with ``math.fsum`` for
the final reductions. Passing ``exact=True`` runs the same recursion in
rational arithmetic on the binary values of the inputs, which makes
comparisons between two oracle outputs exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Optional

import numpy as np
from scipy.stats import binom

from .asymptotics import Barrier, IncrementBarrier
from .distributions import DefaultTimeModel, LossAmountModel, detect_lattice
from .exceptions import CapacityError

__all__ = [
    "DEFAULT_STATE_CAP",
    "LatticePortfolio",
    "MarginalLaw",
    "exact_marginal",
    "exact_barrier",
    "exact_increment",
    "exact_epoch_tail",
]

DEFAULT_STATE_CAP = 2_000_000
_TIE_TOL = 1e-9
_ENUMERATION_LIMIT = 6


def _crossed(loss, level):
    """``loss >= level`` with ties at the barrier counted as crossings."""
    return loss >= level - _TIE_TOL * max(1.0, abs(level))


@dataclass(frozen=True, eq=False)
class LatticePortfolio:
    """``n`` obligors with a finitely supported lattice loss amount."""

    n: int
    U: LossAmountModel
    tau: DefaultTimeModel
    state_cap: int = DEFAULT_STATE_CAP

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("portfolio needs n >= 1 obligors")
        if not self.U.is_atomic:
            raise ValueError(f"exact oracle needs a finitely supported loss amount, got {self.U.family}")
        values, probs = self.U.atoms()
        a_min = float(values.min())
        if values.size == 1:
            span = 1.0
            idx = np.zeros(1, dtype=int)
        else:
            lat = detect_lattice(values)
            if lat is None:
                raise ValueError("loss amount atoms do not lie on a lattice")
            span = lat.span
            idx = np.rint((values - a_min) / span).astype(int)
        pmf = np.zeros(int(idx.max()) + 1)
        np.add.at(pmf, idx, probs)
        object.__setattr__(self, "a_min", a_min)
        object.__setattr__(self, "span", span)
        object.__setattr__(self, "index_pmf", pmf)
        object.__setattr__(self, "_index_pmf_exact", None)
        needed = self.n * (pmf.size - 1) + 1
        if needed > self.state_cap:
            raise CapacityError(
                f"lattice state space needs {needed} loss indices, above the cap {self.state_cap}",
                required=needed,
            )

    @property
    def max_index(self) -> int:
        return self.index_pmf.size - 1

    def loss(self, m, e):
        """Portfolio loss for ``m`` defaults with summed index ``e``."""
        return m * self.a_min + self.span * e

    def hazards(self, exact: bool = False):
        """Per-epoch conditional default probabilities of a survivor."""
        p = [Fraction(x) for x in self.tau.probabilities] if exact else list(self.tau.p)
        out, F = [], (Fraction(0) if exact else 0.0)
        for pj in p:
            rest = 1 - F
            h = pj / rest if rest > 0 else (Fraction(0) if exact else 0.0)
            out.append(min(h, 1))
            F += pj
        return out

    def exact_index_pmf(self):
        if self._index_pmf_exact is None:
            values, probs = self.U.atoms()
            pmf = [Fraction(0)] * self.index_pmf.size
            for v, q in zip(values, self.U.probs if self.U.probs else probs):
                k = 0 if values.size == 1 else int(round((v - self.a_min) / self.span))
                pmf[k] += Fraction(q)
            # float inputs rarely sum to exactly one; without this an absorbed
            # path and its continuation would carry different total mass
            total = sum(pmf, Fraction(0))
            pmf = [q / total for q in pmf]
            object.__setattr__(self, "_index_pmf_exact", np.array(pmf, dtype=object))
        return self._index_pmf_exact


@dataclass(frozen=True)
class MarginalLaw:
    """Law of ``L_n(t)`` as sorted loss values and their probabilities."""

    values: np.ndarray
    probs: np.ndarray

    def as_dict(self) -> Dict[float, float]:
        return {float(v): float(q) for v, q in zip(self.values, self.probs)}

    def tail(self, level: float) -> float:
        """``P(L >= level)``."""
        picked = [q for v, q in zip(self.values, self.probs) if _crossed(v, level)]
        if picked and isinstance(picked[0], Fraction):
            return sum(picked, Fraction(0))
        return math.fsum(picked)


def _binom_pmf(k, h, exact):
    """``P(Bin(k, h) = D)`` for ``D = 0..k``."""
    if exact:
        return [math.comb(k, D) * h**D * (1 - h) ** (k - D) for D in range(k + 1)]
    return binom.pmf(np.arange(k + 1), k, h)


def _shift_conv(rows, pmf, exact):
    """Convolve every row of ``rows`` with the index pmf (one more default)."""
    width = rows.shape[1]
    out = np.zeros_like(rows) if not exact else np.full(rows.shape, Fraction(0), dtype=object)
    for k, q in enumerate(pmf):
        if q == 0 or k >= width:
            continue
        out[:, k:] += q * rows[:, : width - k]
    return out


def _zeros(shape, exact):
    return np.full(shape, Fraction(0), dtype=object) if exact else np.zeros(shape)


def _epoch_step(state, port: LatticePortfolio, h, exact):
    """Advance ``state[m, e]`` (m defaults so far) through one epoch."""
    n = port.n
    pmf = port.exact_index_pmf() if exact else port.index_pmf
    new = _zeros(state.shape, exact)
    live = [m for m in range(n + 1) if np.any(state[m] != 0)]
    if not live:
        return new
    lo = min(live)
    # B[m, D] = P(D of the n - m survivors default now)
    B = _zeros((n + 1, n + 1), exact)
    for m in live:
        B[m, : n - m + 1] = _binom_pmf(n - m, h, exact)
    conv = state.copy()  # conv[m] = state[m] convolved with the D-fold index law
    for D in range(n - lo + 1):
        if D > 0:
            conv = _shift_conv(conv, pmf, exact)
        rows = slice(lo, n + 1 - D)
        new[lo + D:] += B[rows, D][:, None] * conv[rows]
    return new


def _loss_grid(port: LatticePortfolio):
    m = np.arange(port.n + 1)[:, None]
    e = np.arange(port.n * port.max_index + 1)[None, :]
    return port.loss(m, e)


def _total(arr, exact):
    flat = arr.ravel()
    return sum(flat.tolist(), Fraction(0)) if exact else math.fsum(flat.tolist())


def exact_marginal(portfolio: LatticePortfolio, t: int, exact: bool = False) -> MarginalLaw:
    """Exact law of ``L_n(t) = sum_i U_i Z_i(t)``.

    The number of defaults by ``t`` is ``Bin(n, F_t)``; ``m`` defaults add
    the ``m``-fold convolution of the loss amount.
    """
    port = portfolio
    if int(t) != t or t < 1:
        raise ValueError(f"epoch t={t} is not on the grid")
    F = sum((Fraction(x) for x in port.tau.probabilities[: int(t)]), Fraction(0)) if exact else port.tau.cdf(t)
    # inputs that sum to a hair above one are clamped, as the hazards are
    F = min(F, 1) if exact else min(F, 1.0)
    counts = _binom_pmf(port.n, F, exact)
    pmf = port.exact_index_pmf() if exact else port.index_pmf
    width = port.n * port.max_index + 1
    row = _zeros((1, width), exact)
    row[0, 0] = 1
    acc: Dict[float, object] = {}
    for m in range(port.n + 1):
        if m > 0:
            row = _shift_conv(row, pmf, exact)
        w = counts[m]
        if w == 0:
            continue
        for e in np.flatnonzero(row[0] != 0):
            v = float(port.loss(m, e))
            key = round(v, 9)
            acc[key] = acc.get(key, 0) + w * row[0, e]
    keys = sorted(acc)
    probs = np.array([acc[k] for k in keys], dtype=object if exact else float)
    return MarginalLaw(np.array(keys, dtype=float), probs)


def exact_epoch_tail(portfolio: LatticePortfolio, t: int, level: float, exact: bool = False):
    """Single-epoch probability ``P(L_n(t) / n >= level)``."""
    return exact_marginal(portfolio, t, exact).tail(portfolio.n * level)


def exact_barrier(portfolio: LatticePortfolio, zeta: Barrier, exact: bool = False):
    """Exact ``P(exists t <= N: L_n(t) / n >= zeta(t))``.

    Forward recursion over epochs on ``(m, e)``; mass whose loss reaches
    ``n zeta(t)`` is absorbed into the answer and removed from the state.
    """
    port = portfolio
    N = port.tau.grid_size
    if zeta.horizon < N:
        raise ValueError(f"barrier is tabulated on {zeta.horizon} epochs but the grid has {N}")
    loss = _loss_grid(port)
    state = _zeros(loss.shape, exact)
    state[0, 0] = 1
    crossed = []
    for j, h in enumerate(port.hazards(exact), start=1):
        state = _epoch_step(state, port, h, exact)
        level = port.n * zeta.level(j)
        hit = loss >= level - _TIE_TOL * max(1.0, abs(level))
        crossed.append(_total(state[hit], exact))
        state[hit] = 0
    return sum(crossed, Fraction(0)) if exact else math.fsum(crossed)


def _increment_levels(port, xi: IncrementBarrier, N):
    levels = {}
    for (s, t), v in xi.entries.items():
        if t <= N:
            levels[(s, t)] = port.n * v
    return levels


def _increment_dp(port: LatticePortfolio, xi: IncrementBarrier, exact: bool, compress: bool, cap: int):
    """Sparse recursion over ``(m, e, key)``.

    With ``compress`` the key holds, for each later epoch ``t``, the lowest
    loss that would complete a crossing: ``min_s L(s) + n xi(s, t)``. Without
    it the key is the full history of losses, which is plain enumeration.
    """
    N = port.tau.grid_size
    levels = _increment_levels(port, xi, N)
    reach = port.loss(port.n, port.n * port.max_index)
    pmf = port.exact_index_pmf() if exact else port.index_pmf
    # the D-fold index law for every D, computed once
    width = port.n * port.max_index + 1
    sums = [None] * (port.n + 1)
    row = _zeros((1, width), exact)
    row[0, 0] = 1
    for D in range(port.n + 1):
        if D > 0:
            row = _shift_conv(row, pmf, exact)
        nz = np.flatnonzero(row[0] != 0)
        sums[D] = (nz, row[0, nz])

    def thresholds(history):
        out = []
        for t in range(len(history), N + 1):
            best = math.inf
            for s, L in enumerate(history):
                lv = levels.get((s, t))
                if lv is not None:
                    best = min(best, L + lv)
            out.append(best if best <= reach + 1e-9 * max(1.0, reach) else math.inf)
        return tuple(out)

    zero = Fraction(0) if exact else 0.0
    # key: thresholds for epochs j+1..N (compressed) or the loss history (plain)
    states = {(0, 0, thresholds((0.0,)) if compress else (0.0,)): Fraction(1) if exact else 1.0}
    crossed = []
    for j, h in enumerate(port.hazards(exact), start=1):
        nxt = {}
        for (m, e, key), mass in states.items():
            thr = key[0] if compress else thresholds(key)[0]
            bw = _binom_pmf(port.n - m, h, exact)
            for D in range(port.n - m + 1):
                wD = bw[D]
                if wD == 0:
                    continue
                nz, pr = sums[D]
                for k, q in zip(nz.tolist(), pr.tolist()):
                    m2, e2 = m + D, e + k
                    L = float(port.loss(m2, e2))
                    p = mass * wD * q
                    if _crossed(L, thr):
                        crossed.append(p)
                        continue
                    if j == N:
                        continue
                    if compress:
                        hist_next = key[1:]
                        new_thr = tuple(min(a, b) for a, b in zip(hist_next, _from_s(levels, j, L, N, reach)))
                        k2 = (m2, e2, new_thr)
                    else:
                        k2 = (m2, e2, key + (L,))
                    nxt[k2] = nxt.get(k2, zero) + p
        if len(nxt) > cap:
            raise CapacityError(
                f"increment recursion reached {len(nxt)} states at epoch {j}, above the cap {cap}; "
                "use Monte Carlo instead",
                required=len(nxt),
            )
        states = nxt
        if not states:
            break
    return sum(crossed, Fraction(0)) if exact else math.fsum(crossed)


def _from_s(levels, s, L, N, reach):
    out = []
    for t in range(s + 1, N + 1):
        lv = levels.get((s, t))
        v = L + lv if lv is not None else math.inf
        out.append(v if v <= reach + 1e-9 * max(1.0, reach) else math.inf)
    return out


def exact_increment(portfolio: LatticePortfolio, xi: IncrementBarrier, method: str = "dp",
                    exact: bool = False, max_states: Optional[int] = None):
    """Exact ``P(exists s < t <= N: (L_n(t) - L_n(s)) / n >= xi(s, t))``.

    ``method="dp"`` carries, for every later epoch, the smallest loss that
    would complete a crossing from some earlier start. ``method="enumerate"``
    keeps the whole loss history instead; it is exponentially larger and is
    meant for cross-checks on grids with at most six epochs.
    """
    port = portfolio
    N = port.tau.grid_size
    if method not in ("dp", "enumerate"):
        raise ValueError("method must be 'dp' or 'enumerate'")
    if method == "enumerate" and N > _ENUMERATION_LIMIT:
        raise CapacityError(f"enumeration supports at most {_ENUMERATION_LIMIT} epochs, got {N}; "
                            "use method='dp' or Monte Carlo", required=N)
    cap = port.state_cap if max_states is None else max_states
    return _increment_dp(port, xi, exact, compress=(method == "dp"), cap=cap)
