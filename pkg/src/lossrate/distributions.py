"""Loss-amount and default-time laws, and the CGFs of the composite losses.

Every law exposes its cumulant generating function through the small
:class:`CumulantFunction` interface, which is what the Legendre solver,
the path rate function and the asymptotics consume. CGF evaluations are
vectorised over ``theta`` and return ``+inf`` outside the finiteness
domain instead of raising.

The exponential family is parameterised by its *rate*: the transform
``lambda*x - 1 - log(lambda*x)`` quoted in the literature for an
"exponential with mean lambda" is the transform of rate ``lambda``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .exceptions import DomainError

__all__ = [
    "LatticeInfo",
    "CumulantFunction",
    "LossAmountModel",
    "DefaultTimeModel",
    "CompositeCgf",
    "LightTailReport",
    "cgf_u",
    "cgf_u_derivs",
    "cgf_composite",
    "check_light_tail",
    "detect_lattice",
]

ATOM_SUM_TOL = 1e-12
LATTICE_TOL = 1e-9
_MAX_DENOMINATOR = 10**6
# exp(theta*u) overflows past ~709 for the poisson-type CGF; the atomic
# families use log-sum-exp and the exponential has a finite domain, so
# they only need a loose guard
THETA_CEILING = 700.0
THETA_GUARD = 1e12

FAMILIES = ("discrete", "poisson", "exponential", "empirical")


@dataclass(frozen=True)
class LatticeInfo:
    """Support contained in ``offset + span * Z`` with ``span`` maximal."""

    span: float
    offset: float = 0.0

    def contains(self, value: float, tol: float = LATTICE_TOL) -> bool:
        k = (value - self.offset) / self.span
        return abs(k - round(k)) <= tol


def _as_fraction(v: float) -> Optional[Fraction]:
    f = Fraction(v).limit_denominator(_MAX_DENOMINATOR)
    if abs(float(f) - v) > LATTICE_TOL * max(1.0, abs(v)):
        return None
    return f


def _fraction_gcd(values) -> Optional[Fraction]:
    g = Fraction(0)
    for v in values:
        f = _as_fraction(float(v))
        if f is None:
            return None
        if f == 0:
            continue
        f = abs(f)
        if g == 0:
            g = f
        else:
            num = math.gcd(g.numerator * f.denominator, f.numerator * g.denominator)
            g = Fraction(num, g.denominator * f.denominator)
    return g


def detect_lattice(values: Sequence[float]) -> Optional[LatticeInfo]:
    """Maximal lattice of a finite set of atoms, or ``None``.

    The span is the GCD of the atom differences after rational rounding at
    ``1e-9``. A single atom ``v`` gets the zero-anchored lattice ``v * Z``
    (span 1 when ``v == 0``), which is the lattice its sums live on.
    """
    vals = np.unique(np.asarray(values, dtype=float))
    if vals.size == 1:
        v = float(vals[0])
        return LatticeInfo(span=v if v > 0 else 1.0, offset=0.0)
    x0 = float(vals[0])
    g = _fraction_gcd(vals - x0)
    if g is None or g == 0:
        return None
    info = LatticeInfo(span=float(g), offset=x0)
    if not all(info.contains(float(v)) for v in vals):
        return None
    return info


class CumulantFunction:
    """Interface for a real random variable accessed through its CGF.

    Subclasses implement :meth:`derivs` (vectorised) and the support
    summary attributes; everything else derives from those.
    """

    mean: float
    variance: float
    ess_inf: float
    ess_sup: float
    # P(X = ess_inf), P(X = ess_sup); zero for continuous endpoints
    mass_at_inf: float
    mass_at_sup: float
    lattice: Optional[LatticeInfo]
    theta_sup: float = math.inf
    theta_inf: float = -math.inf
    scale: float = 1.0
    probe_limit: float = THETA_GUARD

    def derivs(self, theta):
        """Return ``(Lambda, Lambda', Lambda'')`` at ``theta`` (array-like)."""
        raise NotImplementedError

    def value(self, theta):
        return self.derivs(theta)[0]

    def __call__(self, theta):
        out = self.value(theta)
        return float(out) if np.ndim(out) == 0 else out

    @property
    def theta_ceiling(self) -> float:
        """Largest tilt probed by the numerical solvers."""
        return min(self.theta_sup, self.probe_limit / self.scale)

    @property
    def theta_floor(self) -> float:
        return max(self.theta_inf, -THETA_GUARD / self.scale)

    @property
    def is_degenerate(self) -> bool:
        return self.ess_inf == self.ess_sup

    def in_domain(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return (theta < self.theta_sup) & (theta > self.theta_inf)


def _discrete_derivs(values, log_probs, theta):
    theta = np.asarray(theta, dtype=float)
    t = np.atleast_1d(theta)
    logits = t[:, None] * values[None, :] + log_probs[None, :]
    lam = logsumexp(logits, axis=1)
    w = np.exp(logits - lam[:, None])
    lam = np.where(t == 0, 0.0, lam)  # exact at the origin despite rounded weights
    d1 = w @ values
    d2 = np.maximum(w @ (values**2) - d1**2, 0.0)
    if theta.ndim == 0:
        return float(lam[0]), float(d1[0]), float(d2[0])
    return lam, d1, d2


@dataclass(frozen=True, eq=False)
class LossAmountModel(CumulantFunction):
    """Law of the loss given default ``U >= 0``.

    Use the classmethod constructors rather than the raw initialiser:
    :meth:`discrete`, :meth:`empirical`, :meth:`poisson_type`,
    :meth:`exponential`, :meth:`constant`.
    """

    family: str
    values: tuple = ()
    probs: tuple = ()
    u: float = 0.0
    lam: float = 0.0
    rate: float = 0.0
    _v: np.ndarray = field(init=False, repr=False)
    _logp: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown loss-amount family {self.family!r}")
        set_ = object.__setattr__
        if self.family in ("discrete", "empirical"):
            v = np.asarray(self.values, dtype=float)
            p = np.asarray(self.probs, dtype=float)
            if v.ndim != 1 or v.size == 0 or v.shape != p.shape:
                raise ValueError("atoms need matching nonempty values and probabilities")
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ValueError("loss amounts must be finite and nonnegative")
            if np.any(p <= 0) or np.any(p > 1):
                raise ValueError("atom probabilities must lie in (0, 1]")
            if abs(p.sum() - 1.0) > ATOM_SUM_TOL:
                raise ValueError(f"atom probabilities sum to {p.sum():.15g}, not 1")
            # merge duplicate values
            uniq, inv = np.unique(v, return_inverse=True)
            merged = np.zeros(uniq.size)
            np.add.at(merged, inv, p)
            set_(self, "values", tuple(uniq.tolist()))
            set_(self, "probs", tuple(merged.tolist()))
            set_(self, "_v", uniq)
            set_(self, "_logp", np.log(merged))
            mean = float(merged @ uniq)
            set_(self, "mean", mean)
            set_(self, "variance", float(max(merged @ uniq**2 - mean**2, 0.0)))
            set_(self, "ess_inf", float(uniq[0]))
            set_(self, "ess_sup", float(uniq[-1]))
            set_(self, "mass_at_inf", float(merged[0]))
            set_(self, "mass_at_sup", float(merged[-1]))
            set_(self, "lattice", detect_lattice(uniq))
            set_(self, "scale", float(uniq[-1]) if uniq[-1] > 0 else 1.0)
        elif self.family == "poisson":
            if not (self.u > 0 and self.lam > 0):
                raise ValueError("poisson-type family needs u > 0 and lambda > 0")
            set_(self, "_v", np.empty(0))
            set_(self, "_logp", np.empty(0))
            set_(self, "mean", self.u * (1.0 + self.lam))
            set_(self, "variance", self.u**2 * self.lam)
            set_(self, "ess_inf", self.u)
            set_(self, "ess_sup", math.inf)
            set_(self, "mass_at_inf", math.exp(-self.lam))
            set_(self, "mass_at_sup", 0.0)
            set_(self, "lattice", LatticeInfo(span=self.u, offset=self.u))
            set_(self, "scale", self.u)
            set_(self, "probe_limit", THETA_CEILING)
        else:
            if not self.rate > 0:
                raise ValueError("exponential family needs rate > 0")
            set_(self, "_v", np.empty(0))
            set_(self, "_logp", np.empty(0))
            set_(self, "mean", 1.0 / self.rate)
            set_(self, "variance", 1.0 / self.rate**2)
            set_(self, "ess_inf", 0.0)
            set_(self, "ess_sup", math.inf)
            set_(self, "mass_at_inf", 0.0)
            set_(self, "mass_at_sup", 0.0)
            set_(self, "lattice", None)
            set_(self, "theta_sup", self.rate)
            set_(self, "scale", 1.0 / self.rate)

    # -- constructors -----------------------------------------------------
    @classmethod
    def discrete(cls, values, probs) -> "LossAmountModel":
        return cls("discrete", values=tuple(map(float, values)), probs=tuple(map(float, probs)))

    @classmethod
    def constant(cls, value: float) -> "LossAmountModel":
        return cls.discrete([value], [1.0])

    @classmethod
    def empirical(cls, samples) -> "LossAmountModel":
        """Bounded empirical law putting mass ``1/m`` on each of ``m`` samples."""
        s = np.asarray(samples, dtype=float)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("empirical family needs a nonempty sample")
        uniq, counts = np.unique(s, return_counts=True)
        return cls("empirical", values=tuple(uniq.tolist()), probs=tuple((counts / s.size).tolist()))

    @classmethod
    def poisson_type(cls, u: float, lam: float) -> "LossAmountModel":
        """``U = (K + 1) u`` with ``K ~ Poisson(lam)``."""
        return cls("poisson", u=float(u), lam=float(lam))

    @classmethod
    def exponential(cls, rate: float) -> "LossAmountModel":
        return cls("exponential", rate=float(rate))

    @property
    def is_atomic(self) -> bool:
        return self.family in ("discrete", "empirical")

    def atoms(self):
        """``(values, probs)`` arrays for the atomic families."""
        if not self.is_atomic:
            raise ValueError(f"{self.family} family has no finite atom list")
        return self._v.copy(), np.exp(self._logp)

    def derivs(self, theta):
        if self.is_atomic:
            return _discrete_derivs(self._v, self._logp, theta)
        theta = np.asarray(theta, dtype=float)
        if self.family == "poisson":
            u, lam = self.u, self.lam
            with np.errstate(over="ignore"):
                e = np.exp(theta * u)
            return (theta * u + lam * (e - 1.0), u + lam * u * e, lam * u * u * e)
        r = self.rate
        inside = theta < r
        gap = np.where(inside, r - theta, 1.0)
        val = np.where(inside, np.log(r / gap), np.inf)
        d1 = np.where(inside, 1.0 / gap, np.inf)
        d2 = np.where(inside, 1.0 / gap**2, np.inf)
        if theta.ndim == 0:
            return float(val), float(d1), float(d2)
        return val, d1, d2

    def tilted(self, theta: float) -> "LossAmountModel":
        """Exponentially tilted law ``dQ/dP = exp(theta U - Lambda(theta))``."""
        if not self.in_domain(theta):
            raise DomainError(f"tilt {theta} outside the CGF domain")
        if self.is_atomic:
            logits = theta * self._v + self._logp
            w = np.exp(logits - logsumexp(logits))
            keep = w > 0
            return LossAmountModel(self.family, values=tuple(self._v[keep]), probs=tuple(w[keep] / w[keep].sum()))
        if self.family == "poisson":
            return LossAmountModel.poisson_type(self.u, self.lam * math.exp(theta * self.u))
        return LossAmountModel.exponential(self.rate - theta)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.is_atomic:
            if self._v.size == 1:
                return np.full(size, self._v[0])
            return rng.choice(self._v, size=size, p=np.exp(self._logp))
        if self.family == "poisson":
            return self.u * (1.0 + rng.poisson(self.lam, size=size))
        return rng.exponential(1.0 / self.rate, size=size)

    def describe(self) -> dict:
        if self.is_atomic:
            return {"family": self.family, "values": list(self.values), "probs": list(self.probs)}
        if self.family == "poisson":
            return {"family": "poisson", "u": self.u, "lambda": self.lam}
        return {"family": "exponential", "rate": self.rate}


@dataclass(frozen=True, eq=False)
class DefaultTimeModel:
    """Default-time law ``p_j = P(tau = j)`` on the grid ``1..N``.

    Mass ``1 - F_N`` (the defect) never defaults within the horizon.
    """

    probabilities: tuple

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("default-time law needs at least one epoch")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise ValueError("default probabilities must lie in [0, 1]")
        if p.sum() > 1.0 + ATOM_SUM_TOL:
            raise ValueError(f"default probabilities sum to {p.sum():.15g} > 1")
        object.__setattr__(self, "probabilities", tuple(p.tolist()))

    @property
    def grid_size(self) -> int:
        return len(self.probabilities)

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.probabilities, dtype=float)

    @property
    def cumulative(self) -> np.ndarray:
        return np.minimum(np.cumsum(self.p), 1.0)

    @property
    def defect(self) -> float:
        return max(0.0, 1.0 - float(self.cumulative[-1]))

    def cdf(self, t: int) -> float:
        """``F_t``; zero for ``t <= 0`` and ``F_N`` beyond the grid."""
        if t <= 0:
            return 0.0
        return float(self.cumulative[min(t, self.grid_size) - 1])


class CompositeCgf(CumulantFunction):
    """CGF of ``U * B`` with ``B ~ Bernoulli(w)`` independent of ``U``.

    ``w = F_t`` gives ``U Z(t)``; ``w = F_t - F_s`` gives the increment
    ``U (Z(t) - Z(s))``. ``Lambda(theta) = log(w M_U(theta) + 1 - w)``.
    """

    def __init__(self, loss: LossAmountModel, success_mass: float, kind: str = "mass", epochs=()):
        w = float(success_mass)
        if not -ATOM_SUM_TOL <= w <= 1.0 + ATOM_SUM_TOL:
            raise ValueError(f"success mass {w} outside [0, 1]")
        w = min(max(w, 0.0), 1.0)
        self.loss = loss
        self.success_mass = w
        self.kind = kind
        self.epochs = tuple(epochs)
        self.theta_sup = loss.theta_sup
        self.theta_inf = loss.theta_inf
        self.scale = loss.scale
        self.probe_limit = loss.probe_limit
        m, v = loss.mean, loss.variance
        self.mean = w * m
        self.variance = w * (v + m * m) - (w * m) ** 2
        if w == 0.0:
            self.ess_inf = self.ess_sup = 0.0
            self.mass_at_inf = self.mass_at_sup = 1.0
        elif w == 1.0:
            self.ess_inf, self.ess_sup = loss.ess_inf, loss.ess_sup
            self.mass_at_inf, self.mass_at_sup = loss.mass_at_inf, loss.mass_at_sup
        else:
            self.ess_inf = 0.0
            self.mass_at_inf = (1.0 - w) + (w * loss.mass_at_inf if loss.ess_inf == 0.0 else 0.0)
            self.ess_sup = loss.ess_sup
            self.mass_at_sup = w * loss.mass_at_sup if loss.ess_sup > 0 else 1.0
        self.lattice = self._lattice()

    @classmethod
    def at_time(cls, loss: LossAmountModel, tau: DefaultTimeModel, t: int) -> "CompositeCgf":
        if t < 1 or int(t) != t:
            raise ValueError(f"epoch t={t} is not on the grid 1, 2, ...")
        return cls(loss, tau.cdf(t), kind="at-time", epochs=(t,))

    @classmethod
    def increment(cls, loss: LossAmountModel, tau: DefaultTimeModel, s: int, t: int) -> "CompositeCgf":
        if int(s) != s or int(t) != t or s < 0 or t < 1:
            raise ValueError(f"epochs ({s}, {t}) are not on the grid")
        if s >= t:
            raise ValueError(f"increment needs s < t, got s={s}, t={t}")
        return cls(loss, tau.cdf(t) - tau.cdf(s), kind="increment", epochs=(s, t))

    def _lattice(self) -> Optional[LatticeInfo]:
        w, loss = self.success_mass, self.loss
        if w == 1.0:
            return loss.lattice
        if w == 0.0:
            return LatticeInfo(span=1.0, offset=0.0)
        if loss.is_atomic:
            return detect_lattice(np.concatenate([[0.0], loss._v]))
        if loss.family == "poisson":
            return LatticeInfo(span=loss.u, offset=0.0)
        return None

    def derivs(self, theta):
        w = self.success_mass
        lu, d1u, d2u = self.loss.derivs(theta)
        if w == 1.0:
            return lu, d1u, d2u
        scalar = np.ndim(lu) == 0
        lu, d1u, d2u = (np.asarray(a, dtype=float) for a in (lu, d1u, d2u))
        if w == 0.0:
            z = np.where(np.isfinite(lu), 0.0, np.inf)
            out = (z, np.zeros_like(z), np.zeros_like(z))
        else:
            with np.errstate(invalid="ignore"):
                a_log = math.log(w) + lu
                val = np.logaddexp(a_log, math.log1p(-w))
                a = np.exp(a_log - val)  # tilted success probability
                val = np.where(np.asarray(theta) == 0, 0.0, val)
                d1 = a * d1u
                d2 = a * d2u + a * (1.0 - a) * d1u**2
            out = (val, np.where(np.isfinite(val), d1, np.inf), np.where(np.isfinite(val), d2, np.inf))
        if scalar:
            return tuple(float(x) for x in out)
        return out


def cgf_u(model: LossAmountModel, theta: float) -> float:
    """``log E exp(theta U)``; ``+inf`` outside the finiteness domain."""
    return float(model.value(theta))


def cgf_u_derivs(model: CumulantFunction, theta: float):
    """``(Lambda, Lambda', Lambda'')`` at an interior point of the domain."""
    if not model.in_domain(theta):
        raise DomainError(f"theta={theta} outside the CGF finiteness domain "
                          f"({model.theta_inf}, {model.theta_sup})")
    return tuple(float(x) for x in model.derivs(float(theta)))


def cgf_composite(c: CompositeCgf, theta: float) -> float:
    return float(c.value(theta))


@dataclass(frozen=True)
class LightTailReport:
    classification: str  # everywhere-finite | finite-up-to-theta0 | heavy
    theta0: float
    finite_on_probes: bool
    cgf_values: tuple
    ratio_points: tuple
    ratios: tuple
    ratio_increasing: bool
    ratio_diverging: bool


def check_light_tail(model: LossAmountModel, probe_grid: Sequence[float]) -> LightTailReport:
    """Probe the exponential-equivalence condition on a grid.

    The CGF is evaluated at each probe ``theta``; the ratio
    ``Lambda*(x) / x`` is evaluated at ``x = E[U] (1 + probe)``. The ratio
    is called diverging when it increases along the probes and no finite
    ``theta0`` was found, since ``Lambda*(x)/x <= theta0`` otherwise.
    """
    from .legendre import conjugate  # local import: legendre depends on this module

    probes = np.asarray(probe_grid, dtype=float)
    if probes.ndim != 1 or probes.size == 0 or np.any(probes <= 0) or np.any(np.diff(probes) <= 0):
        raise ValueError("probe grid must be increasing and positive")
    vals = np.asarray(model.value(probes), dtype=float)
    finite = np.isfinite(vals)
    if math.isfinite(model.theta_sup):
        theta0 = float(model.theta_sup)
    elif not finite.all():
        theta0 = float(probes[~finite][0])
    else:
        theta0 = math.inf
    if not finite.any():
        classification = "heavy"
    elif math.isinf(theta0):
        classification = "everywhere-finite"
    else:
        classification = "finite-up-to-theta0"
    xs = model.mean * (1.0 + probes)
    ratios = conjugate(model, xs)[0] / xs
    fin_r = ratios[np.isfinite(ratios)]
    increasing = bool(fin_r.size >= 2 and np.all(np.diff(fin_r) > 0))
    return LightTailReport(
        classification=classification,
        theta0=theta0,
        finite_on_probes=bool(finite.all()),
        cgf_values=tuple(vals.tolist()),
        ratio_points=tuple(xs.tolist()),
        ratios=tuple(ratios.tolist()),
        ratio_increasing=increasing,
        ratio_diverging=increasing and math.isinf(theta0),
    )
