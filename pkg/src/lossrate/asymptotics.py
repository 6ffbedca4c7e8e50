"""Exact asymptotics for barrier crossings and large loss increments.

For a barrier ``zeta`` the crossing probability of the normalised loss
process behaves like ``C exp(-n I) / sqrt(n)``, where ``I`` is the smallest
single-epoch rate ``I(t) = Lambda*_{U Z(t)}(zeta(t))`` and ``C`` is the
Bahadur-Rao constant of the dominating epoch. Increments ``L(t) - L(s)``
are treated the same way with the variable ``U (Z(t) - Z(s))``.

Two conditions make the approximation valid: the minimising epoch is
unique, and the rates grow at least logarithmically in ``t``. Uniqueness is
checked exactly on the evaluated epochs. Growth can only be checked up to a
finite horizon ``T_check`` using a declared lower bound on the barrier
beyond the tabulated range.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .distributions import CompositeCgf, CumulantFunction, DefaultTimeModel, LatticeInfo, LossAmountModel
from .exceptions import ConfigError, NonUniqueOptimumError, NotRareEventError, UnreachableLevelError
from .legendre import DEFAULT_TOL, conjugate, tilt_solve

__all__ = [
    "Growth",
    "Barrier",
    "IncrementBarrier",
    "TailCheck",
    "HypothesisDiagnostics",
    "AsymptoticEstimate",
    "LatticeMismatchWarning",
    "EstimateAboveOneWarning",
    "bahadur_rao_constant",
    "barrier_asymptotics",
    "increment_asymptotics",
    "hypothesis_report",
    "GAP_TOL",
]

GAP_TOL = 1e-9
_TAIL_POINTS = 40
_RATIO_SLACK = 1e-9


class LatticeMismatchWarning(UserWarning):
    """``n q`` is not a point of the lattice of the dominating sum."""


class EstimateAboveOneWarning(UserWarning):
    """The asymptotic estimate is not below one, so ``n`` is too small for it."""


@dataclass(frozen=True)
class Growth:
    """Declared lower bound on a barrier beyond its tabulated range.

    ``kind`` selects the shape: ``"log"`` is ``c0 log t``, ``"loglog"`` is
    ``c0 log log t`` and ``"constant"`` is ``c0``.
    """

    c0: float
    kind: str = "log"

    def __post_init__(self):
        if self.kind not in ("log", "loglog", "constant"):
            raise ValueError(f"unknown growth kind {self.kind!r}")
        if not (math.isfinite(self.c0) and self.c0 > 0):
            raise ValueError("growth coefficient c0 must be positive and finite")

    def __call__(self, t: int) -> float:
        if self.kind == "log":
            return self.c0 * math.log(t)
        if self.kind == "loglog":
            return self.c0 * math.log(math.log(t)) if t > math.e else 0.0
        return self.c0


@dataclass(frozen=True)
class Barrier:
    """Level ``zeta(t)`` tabulated for ``t = 1..T_eval``."""

    values: tuple
    growth: Optional[Growth] = None

    def __post_init__(self):
        v = tuple(float(z) for z in self.values)
        if not v:
            raise ValueError("barrier needs at least one tabulated epoch")
        if not all(math.isfinite(z) and z >= 0 for z in v):
            raise ValueError("barrier values must be finite and nonnegative")
        object.__setattr__(self, "values", v)

    @property
    def horizon(self) -> int:
        return len(self.values)

    def level(self, t: int) -> float:
        if 1 <= t <= self.horizon:
            return self.values[t - 1]
        if self.growth is None:
            raise ConfigError(f"barrier is not tabulated at t={t} and has no growth declaration")
        return self.growth(t)


@dataclass(frozen=True)
class IncrementBarrier:
    """Levels ``xi(s, t)`` for pairs ``0 <= s < t <= T_eval``.

    ``s = 0`` measures the increment from the time origin. Pairs missing
    from ``entries`` are not part of the event. ``growth`` is either one
    declaration shared by every ``s`` or a mapping ``s -> Growth``.
    """

    entries: Mapping
    growth: Union[None, Growth, Mapping] = None

    def __post_init__(self):
        clean = {}
        for (s, t), v in dict(self.entries).items():
            s, t, v = int(s), int(t), float(v)
            if not 0 <= s < t:
                raise ValueError(f"increment pair ({s}, {t}) needs 0 <= s < t")
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"increment level at ({s}, {t}) must be finite and nonnegative")
            clean[(s, t)] = v
        if not clean:
            raise ValueError("increment barrier needs at least one pair")
        object.__setattr__(self, "entries", dict(sorted(clean.items())))

    @property
    def horizon(self) -> int:
        return max(t for _, t in self.entries)

    @property
    def starts(self) -> Tuple[int, ...]:
        return tuple(sorted({s for s, _ in self.entries}))

    def growth_for(self, s: int) -> Optional[Growth]:
        if self.growth is None or isinstance(self.growth, Growth):
            return self.growth
        return self.growth.get(s)


@dataclass(frozen=True)
class TailCheck:
    """Finite-horizon check of the logarithmic growth condition.

    ``status`` is ``"pass"``, ``"fail"`` or ``"unchecked"`` (no epochs
    beyond the tabulated horizon were requested).
    """

    status: str
    slope: float = math.nan
    epochs: tuple = ()
    rates: tuple = ()
    ratios: tuple = ()
    min_extrapolated_rate: float = math.inf
    detail: str = ""


@dataclass(frozen=True)
class HypothesisDiagnostics:
    rates: Dict
    gap: float
    runner_up: object
    gap_tol: float
    tail: TailCheck
    lattice_warnings: tuple = ()
    T_eval: int = 0
    T_check: int = 0
    notes: tuple = ()

    @property
    def uniqueness_ok(self) -> bool:
        return self.gap > self.gap_tol

    @property
    def passed(self) -> bool:
        return self.uniqueness_ok and self.tail.status != "fail"


@dataclass(frozen=True)
class AsymptoticEstimate:
    """Dominating epoch with its ``C exp(-n I) / sqrt(n)`` estimates."""

    optimum: object
    decay: float
    tilt: float
    prefactor: float
    lattice: Optional[LatticeInfo]
    level: float
    estimates: Dict[int, float] = field(default_factory=dict)
    diagnostics: Optional[HypothesisDiagnostics] = None
    kind: str = "barrier"

    def estimate(self, n: int) -> float:
        return self.prefactor * math.exp(-n * self.decay) / math.sqrt(n)


def _lattice_gap(lattice: LatticeInfo, q: float, n: int) -> float:
    """Distance of ``n q`` from the lattice of an ``n``-fold sum, in spans."""
    k = n * (q - lattice.offset) / lattice.span
    return abs(k - round(k))


def bahadur_rao_constant(cgf: CumulantFunction, q: float, lattice: Optional[LatticeInfo] = None,
                         n: Optional[int] = None, tol: float = DEFAULT_TOL):
    """Bahadur-Rao prefactor ``C`` and the tilt ``sigma`` with ``Lambda'(sigma) = q``.

    Lattice laws with span ``d`` use ``d / ((1 - exp(-sigma d)) sqrt(2 pi Lambda''))``,
    others ``1 / (sigma sqrt(2 pi Lambda''))``. When ``n`` is given with a
    lattice, a :class:`LatticeMismatchWarning` is issued if ``n q`` is not
    attainable by the ``n``-fold sum.

    >>> from lossrate.distributions import LossAmountModel
    >>> C, s = bahadur_rao_constant(LossAmountModel.exponential(1.0), 2.0)
    >>> round(C, 6), s
    (0.398942, 0.5)
    """
    sigma = tilt_solve(cgf, q, tol)
    _, _, d2 = cgf.derivs(sigma)
    root = math.sqrt(2.0 * math.pi * float(d2))
    if lattice is None:
        return 1.0 / (sigma * root), sigma
    if n is not None and _lattice_gap(lattice, q, n) > 1e-9 * max(1.0, n * abs(q) / lattice.span):
        warnings.warn(
            f"n*q = {n * q:.12g} is not on the lattice of span {lattice.span:g}; "
            "the lattice constant is applied at q anyway",
            LatticeMismatchWarning,
            stacklevel=2,
        )
    d = lattice.span
    return d / (-math.expm1(-sigma * d) * root), sigma


def _log_spaced_epochs(start: int, stop: int) -> np.ndarray:
    if stop < start:
        return np.zeros(0, dtype=int)
    pts = np.unique(np.round(np.geomspace(start, stop, _TAIL_POINTS)).astype(int))
    return pts[(pts >= start) & (pts <= stop)]


def _tail_check(rate_at, growth: Optional[Growth], T_eval: int, T_check: int) -> TailCheck:
    """Rates on log-spaced epochs in ``(T_eval, T_check]`` from the growth bound.

    The condition is a liminf, so only the upper half of the sampled epochs
    is judged: there the fitted slope of ``I(t)`` against ``log t`` must be
    positive and ``I(t) / log t`` positive and nondecreasing. Infinite rates
    (levels above the largest attainable loss) pass trivially. A declared
    growth slower than ``log t`` fails outright.
    """
    if T_check <= T_eval:
        return TailCheck("unchecked", detail="no epochs beyond the tabulated horizon")
    if growth is None:
        raise ConfigError(f"T_check={T_check} exceeds the tabulated horizon {T_eval} "
                          "but the barrier has no growth declaration")
    ts = _log_spaced_epochs(max(T_eval + 1, 2), T_check)
    if ts.size == 0:
        return TailCheck("unchecked", detail="no epochs with log t > 0 to check")
    rates = np.array([rate_at(int(t), growth(int(t))) for t in ts])
    logs = np.log(ts)
    ratios = rates / logs
    upper = slice(ts.size // 2, None)
    r_up, l_up, q_up = rates[upper], logs[upper], ratios[upper]
    fin = np.isfinite(r_up)
    if fin.sum() >= 2:
        slope = float(np.polyfit(l_up[fin], r_up[fin], 1)[0])
    else:
        slope = math.inf if not fin.any() else math.nan
    reasons = []
    if growth.kind != "log":
        reasons.append(f"declared {growth.kind} growth is slower than log t")
    if np.any(q_up <= 0):
        reasons.append("rate vanishes at a checked epoch")
    if fin.sum() >= 2 and not slope > 0:
        reasons.append("rate does not grow with log t")
    qf = q_up[fin]
    if qf.size >= 2 and np.any(np.diff(qf) < -_RATIO_SLACK * np.maximum(1.0, np.abs(qf[:-1]))):
        reasons.append("I(t)/log t decreases over the check horizon")
    return TailCheck(
        status="fail" if reasons else "pass",
        slope=slope,
        epochs=tuple(int(t) for t in ts),
        rates=tuple(float(r) for r in rates),
        ratios=tuple(float(r) for r in ratios),
        min_extrapolated_rate=float(rates.min()),
        detail="; ".join(reasons),
    )


def _select(rates: Dict, gap_tol: float):
    items = list(rates.items())
    finite = [(k, r) for k, r in items if math.isfinite(r)]
    if not finite:
        raise UnreachableLevelError("every level lies above the largest attainable loss")
    best_key, best = min(finite, key=lambda kv: kv[1])
    tied = [k for k, r in items if r - best <= gap_tol]
    if len(tied) > 1:
        raise NonUniqueOptimumError(
            f"minimal rate {best:.12g} is attained within {gap_tol:g} at epochs {tied}; "
            "the exact prefactor is unavailable for tied optima",
            tied,
        )
    others = [(k, r) for k, r in items if k != best_key]
    if others:
        runner, second = min(others, key=lambda kv: kv[1])
        gap = second - best
    else:
        runner, gap = None, math.inf
    return best_key, best, runner, gap


def _finish(kind, key, cgf, level, decay, runner, gap, gap_tol, tail, rates, n_list, T_eval, T_check, tol):
    notes = []
    if tail.status != "unchecked" and tail.min_extrapolated_rate - decay <= gap_tol:
        # the declared bound is only a lower bound on the barrier, so this is inconclusive
        notes.append("the growth bound alone cannot rule out an epoch beyond the horizon "
                     f"(smallest bounded rate {tail.min_extrapolated_rate:.6g})")
    lattice = cgf.lattice
    C, sigma = bahadur_rao_constant(cgf, level, lattice, tol=tol)
    mismatched = []
    estimates = {}
    for n in n_list:
        n = int(n)
        if n < 1:
            raise ValueError("n must be a positive integer")
        if lattice is not None and _lattice_gap(lattice, level, n) > 1e-9 * max(1.0, n * level / lattice.span):
            mismatched.append(n)
        est = C * math.exp(-n * decay) / math.sqrt(n)
        if est >= 1.0:
            warnings.warn(f"asymptotic estimate {est:.4g} at n={n} is not below 1; n is too small",
                          EstimateAboveOneWarning, stacklevel=3)
        estimates[n] = est
    if mismatched:
        warnings.warn(
            f"n*q is off the lattice of span {lattice.span:g} for n in {mismatched}; "
            "the lattice constant is applied at q anyway",
            LatticeMismatchWarning,
            stacklevel=3,
        )
    diag = HypothesisDiagnostics(
        rates=rates, gap=gap, runner_up=runner, gap_tol=gap_tol, tail=tail,
        lattice_warnings=tuple(mismatched), T_eval=T_eval, T_check=T_check, notes=tuple(notes),
    )
    if tail.status == "fail":
        warnings.warn(f"growth condition failed: {tail.detail}", UserWarning, stacklevel=3)
    return AsymptoticEstimate(
        optimum=key, decay=decay, tilt=sigma, prefactor=C, lattice=lattice, level=level,
        estimates=estimates, diagnostics=diag, kind=kind,
    )


def barrier_asymptotics(U: LossAmountModel, tau: DefaultTimeModel, zeta: Barrier, n_list: Sequence[int] = (),
                        T_check: Optional[int] = None, gap_tol: float = GAP_TOL,
                        tol: float = DEFAULT_TOL) -> AsymptoticEstimate:
    """Dominating epoch and exact asymptotics of ``P(exists t: L_n(t)/n >= zeta(t))``.

    Raises :class:`NotRareEventError` if some tabulated level does not
    exceed the mean loss ``E[U] F_t``, and :class:`NonUniqueOptimumError`
    when the two smallest rates are within ``gap_tol``.
    """
    T_eval = zeta.horizon
    T_check = T_eval if T_check is None else int(T_check)
    if T_check < T_eval:
        raise ConfigError(f"T_check={T_check} is below the tabulated horizon {T_eval}")
    cgfs = {}
    for t in range(1, T_eval + 1):
        c = CompositeCgf.at_time(U, tau, t)
        if not zeta.level(t) > c.mean:
            raise NotRareEventError(
                f"barrier zeta({t}) = {zeta.level(t):.6g} does not exceed the mean loss "
                f"E[U] F_{t} = {c.mean:.6g}; the crossing is not a rare event",
                t,
            )
        cgfs[t] = c
    rates = {t: float(conjugate(c, zeta.level(t), tol)[0]) for t, c in cgfs.items()}
    t_star, decay, runner, gap = _select(rates, gap_tol)

    def rate_at(t, level):
        c = CompositeCgf.at_time(U, tau, t)
        return float(conjugate(c, level, tol)[0]) if level > c.mean else 0.0

    tail = _tail_check(rate_at, zeta.growth, T_eval, T_check)
    return _finish("barrier", t_star, cgfs[t_star], zeta.level(t_star), decay, runner, gap, gap_tol,
                   tail, rates, n_list, T_eval, T_check, tol)


def increment_asymptotics(U: LossAmountModel, tau: DefaultTimeModel, xi: IncrementBarrier,
                          n_list: Sequence[int] = (), T_check: Optional[int] = None,
                          gap_tol: float = GAP_TOL, tol: float = DEFAULT_TOL) -> AsymptoticEstimate:
    """Exact asymptotics of ``P(exists s < t: (L_n(t) - L_n(s))/n >= xi(s, t))``.

    The growth condition must hold for every start ``s``, so the tail
    check fails if it fails for any tabulated ``s``.
    """
    T_eval = xi.horizon
    T_check = T_eval if T_check is None else int(T_check)
    if T_check < T_eval:
        raise ConfigError(f"T_check={T_check} is below the tabulated horizon {T_eval}")
    cgfs = {}
    for (s, t), v in xi.entries.items():
        c = CompositeCgf.increment(U, tau, s, t)
        if not v > c.mean:
            raise NotRareEventError(
                f"increment level xi({s}, {t}) = {v:.6g} does not exceed the mean increment "
                f"E[U] (F_{t} - F_{s}) = {c.mean:.6g}; the event is not rare",
                (s, t),
            )
        cgfs[(s, t)] = c
    rates = {k: float(conjugate(c, xi.entries[k], tol)[0]) for k, c in cgfs.items()}
    pair, decay, runner, gap = _select(rates, gap_tol)

    checks = []
    for s in xi.starts:
        def rate_at(t, level, s=s):
            c = CompositeCgf.increment(U, tau, s, t)
            return float(conjugate(c, level, tol)[0]) if level > c.mean else 0.0

        checks.append((s, _tail_check(rate_at, xi.growth_for(s), T_eval, T_check)))
    tail = _merge_tails(checks)
    return _finish("increment", pair, cgfs[pair], xi.entries[pair], decay, runner, gap, gap_tol,
                   tail, rates, n_list, T_eval, T_check, tol)


def _merge_tails(checks) -> TailCheck:
    """Combine per-start checks, keeping the weakest one as the summary."""
    ran = [(s, c) for s, c in checks if c.status != "unchecked"]
    if not ran:
        return checks[0][1]
    failed = [(s, c) for s, c in ran if c.status == "fail"]
    s, worst = min(failed or ran, key=lambda sc: sc[1].slope if math.isfinite(sc[1].slope) else -math.inf)
    detail = "; ".join(f"s={s}: {c.detail}" for s, c in failed)
    return TailCheck(
        status="fail" if failed else "pass",
        slope=worst.slope,
        epochs=worst.epochs,
        rates=worst.rates,
        ratios=worst.ratios,
        min_extrapolated_rate=min(c.min_extrapolated_rate for _, c in ran),
        detail=detail or f"weakest start s={s}",
    )


def hypothesis_report(estimate: AsymptoticEstimate) -> str:
    """Plain-text summary of the per-epoch rates with a verdict on each hypothesis."""
    d = estimate.diagnostics
    label = "t" if estimate.kind == "barrier" else "(s,t)"
    lines = [f"{estimate.kind} asymptotics", f"  per-epoch rates I({label}):"]
    for k, r in d.rates.items():
        mark = "  <- optimum" if k == estimate.optimum else ""
        lines.append(f"    {k}: {r:.10g}{mark}")
    lines.append(f"  decay I = {estimate.decay:.10g}, tilt sigma = {estimate.tilt:.10g}, "
                 f"prefactor C = {estimate.prefactor:.10g}")
    if estimate.lattice is not None:
        lines.append(f"  lattice span {estimate.lattice.span:g}, offset {estimate.lattice.offset:g}")
    else:
        lines.append("  non-lattice constant")
    gap = "inf (single epoch)" if math.isinf(d.gap) else f"{d.gap:.6g} (runner-up {d.runner_up})"
    lines.append(f"  uniqueness gap: {gap}  [{'PASS' if d.uniqueness_ok else 'FAIL'}]")
    tail = d.tail
    if tail.status == "unchecked":
        lines.append(f"  growth condition: not checked, {tail.detail}")
    else:
        lines.append(f"  growth condition on {d.T_eval} < t <= {d.T_check}: slope of I against log t = "
                     f"{tail.slope:.6g}, last I/log t = {tail.ratios[-1]:.6g}  [{tail.status.upper()}]")
        if tail.detail:
            lines.append(f"    {tail.detail}")
    for note in d.notes:
        lines.append(f"  note: {note}")
    if d.lattice_warnings:
        lines.append(f"  lattice mismatch for n in {list(d.lattice_warnings)}")
    lines.append(f"  overall: {'PASS' if d.passed else 'FAIL'}")
    return "\n".join(lines)
