"""Sample-path rate function on a finite default grid.

For a nondecreasing loss path ``x`` the rate is

    I(x) = inf over the simplex of  sum_i phi_i log(phi_i / p_i)
                                    + phi_i Lambda*_U(dx_i / phi_i)

a convex program (relative entropy plus the perspective of a convex
function). It is minimised by exponentiated-gradient steps with Armijo
backtracking. The partial derivative of the perspective term is
``-Lambda_U(sigma_i)`` with ``sigma_i`` the tilt at ``dx_i / phi_i``, so
each iterate also yields dual multipliers ``theta_i = sigma_i`` and the
lower bound

    D(theta) = sum_i theta_i dx_i - log sum_i p_i exp(Lambda_U(theta_i)),

whose gap to the primal value is the stopping certificate.

With several obligor classes the increments are also split among the
classes. For fixed weights the best split gives every class the same tilt
within a bucket, which removes the split from the problem; the weights of
all classes are then updated together by the same mirror-descent scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .distributions import DefaultTimeModel, LossAmountModel
from .exceptions import DefectiveDistributionError
from .legendre import conjugate

__all__ = [
    "PathRateResult",
    "MultiClassSpec",
    "check_loss_path",
    "path_rate",
    "multiclass_rate",
    "mixture_decay",
    "mean_path",
]

DEFAULT_TOL = 1e-8
MAX_ITER = 100_000
_DEFECT_TOL = 1e-12
_ARMIJO = 1e-4


class PathRateResult(NamedTuple):
    value: float
    weights: np.ndarray
    gap: float = 0.0
    iterations: int = 0


def check_loss_path(x) -> np.ndarray:
    """Validate a loss path: finite and nonnegative, never decreasing."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("loss path must be a nonempty 1-d array")
    if not np.all(np.isfinite(x)):
        raise ValueError("loss path must be finite")
    if x[0] < 0 or np.any(np.diff(x) < 0):
        raise ValueError("loss path must be nonnegative and nondecreasing")
    return x


def mean_path(U: LossAmountModel, tau: DefaultTimeModel) -> np.ndarray:
    """``x_j = E[U] F_j``, the law-of-large-numbers path."""
    return U.mean * tau.cumulative


def _buckets(x, U, tau, augment_defect):
    x = check_loss_path(x)
    if x.size != tau.grid_size:
        raise ValueError(f"path has {x.size} epochs but the default grid has {tau.grid_size}")
    dx = np.diff(np.concatenate([[0.0], x]))
    p = tau.p
    has_loss = np.ones(p.size, dtype=bool)
    defect = tau.defect
    if defect > _DEFECT_TOL:
        if not augment_defect:
            raise DefectiveDistributionError(defect)
        # virtual epoch: obligors that never default draw no loss
        p = np.append(p, defect)
        dx = np.append(dx, 0.0)
        has_loss = np.append(has_loss, False)
    return p, dx, has_loss


@dataclass
class _Problem:
    """One class: minimise ``sum_i phi_i (log(phi_i/p_i) + Lambda*(dx_i/phi_i))``."""

    U: LossAmountModel
    p: np.ndarray
    dx: np.ndarray
    has_loss: np.ndarray
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        U, dx, p = self.U, self.dx, self.p
        # Lambda*(0) is finite only when U has an atom at zero
        infinite_at_zero = not (U.ess_inf == 0 and U.mass_at_inf > 0)
        self.forced = (p == 0) | (self.has_loss & (dx == 0) & infinite_at_zero)
        self.free = ~self.forced
        loss = self.has_loss
        lo = np.zeros(p.size)
        hi = np.full(p.size, np.inf)
        if math.isfinite(U.ess_sup) and U.ess_sup > 0:
            lo[loss] = dx[loss] / U.ess_sup
        if U.ess_inf > 0:
            hi[loss] = dx[loss] / U.ess_inf
        lo[self.forced] = hi[self.forced] = 0.0
        self.lo, self.hi = lo, hi

    # -- objective ----------------------------------------------------------
    def evaluate(self, phi):
        """Return ``(f, grad, theta, lam)`` over free coordinates of ``phi``."""
        f_idx = self.free
        ph, p, dx, loss = phi[f_idx], self.p[f_idx], self.dx[f_idx], self.has_loss[f_idx]
        val = np.zeros(ph.size)
        theta = np.zeros(ph.size)
        lam = np.zeros(ph.size)
        if loss.any():
            with np.errstate(divide="ignore", invalid="ignore"):
                y = np.where(ph[loss] > 0, dx[loss] / ph[loss], np.inf)
            v, s, lm, _ = conjugate(self.U, y, self.tol * 1e-2)
            val[loss], theta[loss], lam[loss] = v, s, lm
        with np.errstate(divide="ignore", invalid="ignore"):
            logr = np.log(ph / p)
        cost = ph * (logr + val)
        f = float(np.sum(cost)) if np.all(np.isfinite(cost)) else math.inf
        grad = logr + 1.0 - lam
        return f, grad, theta, lam

    def dual(self, theta, lam):
        """Weak-duality lower bound at multipliers ``theta`` (free coordinates)."""
        dx, p = self.dx[self.free], self.p[self.free]
        lin = np.where(dx == 0, 0.0, theta * dx)
        if not np.all(np.isfinite(lin)) or not np.all(np.isfinite(lam) | (lam == -np.inf)):
            return -math.inf
        return float(np.sum(lin) - logsumexp(lam, b=p))

    def objective(self, phi) -> float:
        return self.evaluate(phi)[0]

    # -- feasibility and start --------------------------------------------
    def start(self):
        """Strictly feasible starting point if one exists, else a boundary singleton (``None`` when infeasible)."""
        U, free = self.U, self.free
        lo, hi = self.lo[free], self.hi[free]
        n_free = int(free.sum())
        phi = np.zeros(self.p.size)
        if n_free == 0:
            return None
        if n_free == 1:
            phi[free] = 1.0
            return phi
        s_lo, s_hi = lo.sum(), hi.sum()
        edge = 1e-12
        if s_lo > 1 + edge or s_hi < 1 - edge:
            return None
        if abs(s_lo - 1) <= edge:
            phi[free] = lo / s_lo
            return phi
        if abs(s_hi - 1) <= edge:
            phi[free] = hi / s_hi
            return phi
        pf = self.p[free] / self.p[free].sum()
        if np.all(pf > lo) and np.all(pf < hi):
            phi[free] = pf
            return phi
        cap = np.minimum(hi, 1.0)
        alpha = (1.0 - s_lo) / (cap - lo).sum()
        phi[free] = lo + alpha * (cap - lo)
        phi[free] /= phi[free].sum()
        return phi

    def solve(self, max_iter: int = MAX_ITER) -> PathRateResult:
        phi = self.start()
        if phi is None:
            return PathRateResult(math.inf, self._fallback_weights(), math.inf, 0)
        f, g, theta, lam = self.evaluate(phi)
        if int(self.free.sum()) <= 1 or not math.isfinite(f):
            return PathRateResult(f, phi, 0.0 if math.isfinite(f) else math.inf, 0)
        if abs(self.lo[self.free].sum() - 1) <= 1e-12 or abs(self.hi[self.free].sum() - 1) <= 1e-12:
            return PathRateResult(f, phi, 0.0, 0)
        gap = f - self.dual(theta, lam)
        eta = 1.0
        it = 0
        stalls = 0
        free = self.free
        while gap > self.tol and it < max_iter:
            it += 1
            accepted = False
            logphi = np.log(phi[free])
            for _ in range(60):
                z = logphi - eta * g
                cand = phi.copy()
                cand[free] = np.exp(z - logsumexp(z))
                fc, gc, tc, lc = self.evaluate(cand)
                if math.isfinite(fc) and fc <= f + _ARMIJO * float(g @ (cand[free] - phi[free])):
                    accepted = True
                    break
                eta *= 0.5
            if accepted and f - fc > 0:
                phi, f, g, theta, lam = cand, fc, gc, tc, lc
                eta = min(eta * 2.0, 1e6)
                stalls = 0
            else:
                stalls += 1
                moved = self._pairwise_step(phi, g)
                if moved is None:
                    break
                phi = moved
                f, g, theta, lam = self.evaluate(phi)
                eta = 1.0
            gap = f - self.dual(theta, lam)
            if stalls > 50:
                break
        return PathRateResult(f, phi, max(gap, 0.0), it)

    def _pairwise_step(self, phi, g):
        """Move mass between the steepest pair of coordinates by exact line search."""
        free_idx = np.flatnonzero(self.free)
        gi = g.copy()
        order = np.argsort(gi)
        j, i = free_idx[order[0]], free_idx[order[-1]]  # receive / donate
        if i == j:
            return None
        t_max = phi[i] - max(self.lo[i], 0.0)
        t_max = min(t_max, self.hi[j] - phi[j])
        if not t_max > 0:
            return None

        def h(t):
            c = phi.copy()
            c[i] -= t
            c[j] += t
            return self.objective(c)

        res = minimize_scalar(h, bounds=(0.0, t_max * (1 - 1e-12)), method="bounded",
                              options={"xatol": 1e-14})
        if not res.fun < self.objective(phi):
            return None
        c = phi.copy()
        c[i] -= res.x
        c[j] += res.x
        return c

    def _fallback_weights(self):
        w = self.p.copy()
        return w / w.sum()


def path_rate(x, U: LossAmountModel, tau: DefaultTimeModel, tol: float = DEFAULT_TOL,
              augment_defect: bool = False, max_iter: int = MAX_ITER) -> PathRateResult:
    """Rate function of the normalised loss path ``L_n(.)/n`` at ``x``.

    Parameters
    ----------
    x : array_like, shape (N,)
        Nondecreasing nonnegative loss path on the grid ``1..N``.
    U, tau : loss-amount and default-time laws.
    tol : float
        Duality-gap tolerance on the returned value.
    augment_defect : bool
        If the default-time law is defective, append a virtual epoch
        holding the never-default mass with zero loss increment.
        Otherwise a defective law raises :class:`DefectiveDistributionError`.

    Returns
    -------
    PathRateResult
        ``value`` (``inf`` when infeasible) and the minimising simplex
        point ``weights`` (length ``N`` or ``N + 1`` when augmented).
    """
    p, dx, has_loss = _buckets(x, U, tau, augment_defect)
    if np.any((p == 0) & (dx > 0)):
        return PathRateResult(math.inf, p / p.sum(), math.inf, 0)
    if U.is_degenerate:
        return _degenerate_rate(U, p, dx, has_loss)
    r = _Problem(U, p, dx, has_loss, tol).solve(max_iter)
    # the objective is nonnegative; rounding can leave a value just below zero
    return r._replace(value=max(r.value, 0.0))


def _degenerate_rate(U, p, dx, has_loss):
    """``U`` is a point mass ``v``: ``phi_i = dx_i / v`` is forced."""
    v = U.ess_sup
    phi = np.zeros(p.size)
    if v == 0:
        if np.any(dx[has_loss] > 0):
            return PathRateResult(math.inf, p / p.sum(), math.inf, 0)
        return PathRateResult(0.0, p.copy(), 0.0, 0)
    phi[has_loss] = dx[has_loss] / v
    rest = 1.0 - phi.sum()
    if rest < -1e-12:
        return PathRateResult(math.inf, p / p.sum(), math.inf, 0)
    if (~has_loss).any():
        phi[~has_loss] = max(rest, 0.0)
    elif rest > 1e-12:
        return PathRateResult(math.inf, p / p.sum(), math.inf, 0)
    pos = phi > 0
    if np.any(p[pos] == 0):
        return PathRateResult(math.inf, phi, math.inf, 0)
    val = max(float(np.sum(phi[pos] * np.log(phi[pos] / p[pos]))), 0.0)
    return PathRateResult(val, phi / phi.sum(), 0.0, 0)


# ---------------------------------------------------------------------------
# multiple obligor classes


@dataclass(frozen=True)
class MultiClassSpec:
    """Obligor classes ``(fraction, U, tau)``; fractions sum to one."""

    classes: tuple

    def __post_init__(self):
        cls = tuple(tuple(c) for c in self.classes)
        if not cls:
            raise ValueError("need at least one class")
        a = np.array([c[0] for c in cls], dtype=float)
        if np.any(a <= 0) or abs(a.sum() - 1.0) > 1e-10:
            raise ValueError("class fractions must be positive and sum to 1")
        sizes = {c[2].grid_size for c in cls}
        if len(sizes) != 1:
            raise ValueError("all classes must share the default grid")
        object.__setattr__(self, "classes", cls)

    @property
    def fractions(self) -> np.ndarray:
        return np.array([c[0] for c in self.classes], dtype=float)


def _common_tilt(models, w, dx, tol):
    """Solve ``sum_j w_ij Lambda_j'(theta_i) = dx_i`` for every bucket ``i``.

    ``w`` has shape (m, B) and every bucket has ``dx_i > 0`` and some
    ``w_ij > 0``. Returns ``(theta, feasible)``; a bucket is infeasible when
    ``dx_i`` lies outside the open range of the weighted means.
    """
    m, B = w.shape
    pos = w > 0
    sup = np.array([U.ess_sup for U in models])
    inf_ = np.array([U.ess_inf for U in models])
    with np.errstate(invalid="ignore"):
        hi_lim = np.where(pos, w * sup[:, None], 0.0).sum(axis=0)
        lo_lim = np.where(pos, w * inf_[:, None], 0.0).sum(axis=0)
    feasible = (dx > lo_lim) & (dx < hi_lim)
    top = np.min(np.where(pos, np.array([U.theta_ceiling for U in models])[:, None], np.inf), axis=0)
    open_top = np.min(np.where(pos, np.array([U.theta_sup for U in models])[:, None], np.inf), axis=0) == top
    step = 1.0 / max(U.scale for U in models)

    def k(theta):
        d1 = np.zeros(B)
        d2 = np.zeros(B)
        for j, U in enumerate(models):
            if pos[j].any():
                _, a1, a2 = U.derivs(np.where(pos[j], theta, 0.0))
                d1 += np.where(pos[j], w[j] * a1, 0.0)
                d2 += np.where(pos[j], w[j] * a2, 0.0)
        return d1, d2

    theta = np.zeros(B)
    k0 = k(theta)[0]
    up = dx > k0
    lo = np.where(up, 0.0, -step)
    hi = np.where(up, np.where(open_top, np.minimum(step, 0.5 * top), np.minimum(step, top)), 0.0)
    act = feasible.copy()
    for _ in range(4000):
        gu = act & up & (k(hi)[0] < dx) & (hi < top)
        gd = act & ~up & (k(lo)[0] > dx)
        if not (gu.any() or gd.any()):
            break
        nh = np.where(open_top, np.minimum(2 * hi, 0.5 * (hi + top)), np.minimum(2 * hi, top))
        lo, hi = np.where(gu, hi, lo), np.where(gu, nh, hi)
        hi, lo = np.where(gd, lo, hi), np.where(gd, 2 * lo, lo)
    theta = 0.5 * (lo + hi)
    scale = np.maximum(1.0, dx)
    for _ in range(200):
        if not act.any():
            break
        d1, d2 = k(theta)
        f = d1 - dx
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = theta - f / d2
        done = (np.abs(f) <= tol * scale) & (np.abs(f * (newton - theta)) <= 1e-3 * tol)
        narrow = (hi - lo) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(theta))
        act &= ~(done | narrow)
        lo = np.where(act & (f < 0), theta, lo)
        hi = np.where(act & (f > 0), theta, hi)
        ok = (d2 > 0) & (newton > lo) & (newton < hi) & np.isfinite(newton)
        theta = np.where(act, np.where(ok, newton, 0.5 * (lo + hi)), theta)
    return theta, feasible


class _MultiProblem:
    """Joint program over one simplex point per class, increments split exactly.

    For fixed weights the optimal split equalises the tilts of all classes
    in a bucket, which gives the perspective terms in closed form and the
    gradient ``a_j (log(phi_ij / p_ij) + 1 - Lambda_j(theta_i))``.
    """

    def __init__(self, x, spec, tol, augment_defect):
        self.a = spec.fractions
        self.models = [c[1] for c in spec.classes]
        self.tol = tol
        dx = np.diff(np.concatenate([[0.0], x]))
        N = dx.size
        m = len(self.models)
        taus = [c[2] for c in spec.classes]
        for tau in taus:
            if tau.grid_size != N:
                raise ValueError("path length does not match the class grids")
            if tau.defect > _DEFECT_TOL and not augment_defect:
                raise DefectiveDistributionError(tau.defect)
        self.N = N
        self.dx = dx
        p = np.zeros((m, N + 1))
        for j, tau in enumerate(taus):
            p[j, :N] = tau.p
            p[j, N] = tau.defect if tau.defect > _DEFECT_TOL else 0.0
        self.p = p
        zero_ok = np.array([U.ess_inf == 0 and U.mass_at_inf > 0 for U in self.models])
        forced = p == 0
        forced[:, :N] |= (dx[None, :] == 0) & ~zero_ok[:, None]
        self.free = ~forced
        with np.errstate(divide="ignore"):
            self.log_m0 = np.array([math.log(U.mass_at_inf) if z else -math.inf
                                    for U, z in zip(self.models, zero_ok)])

    def evaluate(self, phi):
        a, N, dx, free = self.a, self.N, self.dx, self.free
        m = len(self.models)
        w = a[:, None] * phi[:, :N]
        lam = np.zeros_like(phi)
        pers = np.zeros_like(phi)
        theta = np.full(N, -np.inf)
        moving = dx > 0
        if np.any(moving & ~np.any(w > 0, axis=0)):
            return math.inf, None, None, None
        if moving.any():
            th, ok = _common_tilt(self.models, w[:, moving], dx[moving], self.tol * 1e-2)
            if not ok.all():
                return math.inf, None, None, None
            theta[moving] = th
            for j, U in enumerate(self.models):
                lv, d1, _ = U.derivs(th)
                lam[j, :N][moving] = lv
                pers[j, :N][moving] = w[j, moving] * (th * d1 - lv)
        still = ~moving
        lam[:, :N][:, still] = self.log_m0[:, None]
        pers[:, :N][:, still] = w[:, still] * -self.log_m0[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            logr = np.where(free, np.log(phi / self.p), 0.0)
            pers = np.where(free, pers, 0.0)
        cost = a[:, None] * phi * logr + pers
        if not np.all(np.isfinite(cost[free])):
            return math.inf, None, None, None
        grad = np.where(free, logr + 1.0 - lam, 0.0)
        return float(cost[free].sum()), grad, theta, lam

    def dual(self, theta, lam):
        N, dx = self.N, self.dx
        lin = float(np.sum(np.where(dx > 0, theta * dx, 0.0)))
        total = lin
        for j in range(len(self.models)):
            fr = self.free[j]
            total -= self.a[j] * logsumexp(np.where(fr, lam[j], -np.inf), b=np.where(fr, self.p[j], 0.0))
        return total

    def _start(self):
        phi = np.where(self.free, self.p, 0.0)
        sums = phi.sum(axis=1, keepdims=True)
        if np.all(sums > 0):
            phi = phi / sums
            if math.isfinite(self.evaluate(phi)[0]):
                return phi
        return self._lp_start()

    def _lp_start(self):
        """Max-slack feasible point from a linear program, or ``None``."""
        from scipy.optimize import linprog

        m, B = self.p.shape
        N, a = self.N, self.a
        idx = np.flatnonzero(self.free.ravel())
        nv = idx.size + 1  # free weights, then slack
        A_ub, b_ub = [], []
        for i in np.flatnonzero(self.dx > 0):
            row_hi = np.zeros(nv)
            row_lo = np.zeros(nv)
            for k, flat in enumerate(idx):
                j, col = divmod(flat, B)
                if col == i:
                    U = self.models[j]
                    row_hi[k] = -a[j] * min(U.ess_sup, 1e12)
                    row_lo[k] = a[j] * U.ess_inf
            row_hi[-1] = row_lo[-1] = 1.0
            A_ub += [row_hi, row_lo]
            b_ub += [-self.dx[i], self.dx[i]]
        for k in range(idx.size):
            row = np.zeros(nv)
            row[k] = -1.0
            row[-1] = 1.0
            A_ub.append(row)
            b_ub.append(0.0)
        A_eq = np.zeros((m, nv))
        for k, flat in enumerate(idx):
            A_eq[flat // B, k] = 1.0
        c = np.zeros(nv)
        c[-1] = -1.0
        res = linprog(c, A_ub=np.array(A_ub), b_ub=b_ub, A_eq=A_eq, b_eq=np.ones(m),
                      bounds=[(0, 1)] * idx.size + [(None, 1)], method="highs")
        if not res.success or res.x[-1] <= 1e-12:
            return None
        phi = np.zeros(m * B)
        phi[idx] = res.x[:-1]
        return phi.reshape(m, B)

    def solve(self, max_iter=MAX_ITER):
        phi = self._start()
        if phi is None:
            return math.inf, math.inf
        f, g, theta, lam = self.evaluate(phi)
        gap = f - self.dual(theta, lam)
        eta = 1.0
        it = 0
        free = self.free
        while gap > self.tol and it < max_iter:
            it += 1
            with np.errstate(divide="ignore"):
                logphi = np.where(free, np.log(phi), -np.inf)
            for _ in range(60):
                z = logphi - eta * g
                cand = np.exp(z - logsumexp(z, axis=1, keepdims=True))
                fc, gc, tc, lc = self.evaluate(cand)
                slope = float(np.sum(self.a[:, None] * g * (cand - phi)))
                if math.isfinite(fc) and fc <= f + _ARMIJO * slope:
                    break
                eta *= 0.5
            else:
                break
            if not f - fc > 0:
                break
            phi, f, g, theta, lam = cand, fc, gc, tc, lc
            eta = min(eta * 2.0, 1e6)
            gap = f - self.dual(theta, lam)
        return f, max(gap, 0.0)


def multiclass_rate(x, spec: MultiClassSpec, tol: float = DEFAULT_TOL, augment_defect: bool = False,
                    max_iter: int = MAX_ITER) -> float:
    """Rate function for a portfolio made of several obligor classes.

    Class ``j`` makes up fraction ``a_j`` of the obligors, and its terms are
    weighted by its own fraction. The infimum runs over one simplex point per
    class and over nonnegative splits of each increment among the classes.
    The split is eliminated exactly (equal tilts across classes within a
    bucket) and the weights are found by mirror descent on the product of
    simplices, stopped on a duality gap of ``tol``.
    """
    x = check_loss_path(x)
    if len(spec.classes) == 1:
        _, U, tau = spec.classes[0]
        return path_rate(x, U, tau, tol, augment_defect).value
    return max(_MultiProblem(x, spec, tol, augment_defect).solve(max_iter)[0], 0.0)


def mixture_decay(rates: Sequence):
    """Decay rate of a finite mixture over macro scenarios.

    ``rates`` holds ``(label, r_y)`` pairs with ``r_y = lim (1/n) log P``.
    The unconditional rate is the largest ``r_y``; ties go to the first
    scenario listed.
    """
    rates = list(rates)
    if not rates:
        raise ValueError("mixture_decay needs at least one scenario")
    best_label, best = rates[0]
    for label, r in rates[1:]:
        if r > best:
            best_label, best = label, r
    return best, best_label
