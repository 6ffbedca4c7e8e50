import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import all_families
from lossrate import CompositeCgf, DefaultTimeModel, LossAmountModel, legendre_transform, perspective, tilt_solve
from lossrate.exceptions import NoTiltError
from lossrate.legendre import conjugate
from oracles import atom_conjugate, kl_bernoulli, poisson_type_conjugate


@pytest.mark.parametrize("model", all_families(), ids=lambda m: m.family)
def test_zero_at_mean(model):
    r = legendre_transform(model, model.mean)
    assert r.value == 0.0 and r.argmax == 0.0 and r.boundary_flag == "interior"


@pytest.mark.parametrize("x", [1.5, 2.0, 3.0, 5.0, 12.0])
def test_poisson_type_closed_form(x):
    r = legendre_transform(LossAmountModel.poisson_type(1.0, 1.0), x)
    assert r.value == pytest.approx(poisson_type_conjugate(x), abs=1e-10)
    assert r.argmax == pytest.approx(math.log(x - 1.0), abs=1e-9)


def test_poisson_type_at_three():
    assert legendre_transform(LossAmountModel.poisson_type(1.0, 1.0), 3.0).value == pytest.approx(
        2 * math.log(2) - 1, abs=1e-12
    )


@pytest.mark.parametrize("rate,x", [(1.0, 2.0), (1.0, 0.3), (2.5, 1.0), (1.0, 1e-6), (1.0, 1e4)])
def test_exponential_closed_form(rate, x):
    ref = rate * x - 1 - math.log(rate * x)
    assert legendre_transform(LossAmountModel.exponential(rate), x).value == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_discrete_endpoints_are_exact():
    D = LossAmountModel.discrete([1.0, 2.0, 4.0], [0.5, 0.3, 0.2])
    top = legendre_transform(D, 4.0)
    assert top.value == pytest.approx(-math.log(0.2), abs=1e-15)
    assert top.boundary_flag == "at-domain-boundary" and top.argmax is None
    bottom = legendre_transform(D, 1.0)
    assert bottom.value == pytest.approx(-math.log(0.5), abs=1e-15)
    out = legendre_transform(D, 4.5)
    assert out.value == math.inf and out.boundary_flag == "infeasible"
    assert legendre_transform(D, 0.5).value == math.inf


def test_bernoulli_composite_is_kl():
    c = CompositeCgf.at_time(LossAmountModel.constant(1.0), DefaultTimeModel((0.4, 0.3)), 2)
    for q in (0.75, 0.8, 0.95):
        assert legendre_transform(c, q).value == pytest.approx(kl_bernoulli(q, 0.7), abs=1e-12)


def test_tilt_examples():
    c = CompositeCgf.at_time(LossAmountModel.constant(1.0), DefaultTimeModel((0.7,)), 1)
    assert tilt_solve(c, 0.8) == pytest.approx(math.log(12 / 7), abs=1e-12)
    assert tilt_solve(c, c.mean) == 0.0
    full = CompositeCgf.at_time(LossAmountModel.constant(1.0), DefaultTimeModel((1.0,)), 1)
    with pytest.raises(NoTiltError) as exc:
        tilt_solve(full, 1.0)
    assert exc.value.side == "upper"
    with pytest.raises(NoTiltError) as exc:
        tilt_solve(c, 0.0)
    assert exc.value.side == "lower"


def test_tilt_residual_within_tolerance():
    P = LossAmountModel.poisson_type(1.0, 1.0)
    for q in (1.1, 2.5, 40.0):
        s = tilt_solve(P, q, tol=1e-10)
        assert abs(P.derivs(s)[1] - q) <= 1e-10 * max(1.0, q)


def test_perspective_examples():
    P = LossAmountModel.poisson_type(1.0, 1.0)
    assert perspective(P, 0.0, 0.0) == 0.0
    assert perspective(P, 0.3, 0.0) == math.inf
    assert perspective(P, 1.0, 0.5) == pytest.approx(0.0, abs=1e-12)
    E = LossAmountModel.exponential(2.0)
    assert perspective(E, 0.3, 0.0) == pytest.approx(0.6)


def test_vectorised_conjugate_matches_scalar():
    D = LossAmountModel.discrete([0.0, 1.0, 3.0], [0.2, 0.5, 0.3])
    xs = np.array([0.0, 0.4, 1.1, 2.9, 3.0, 3.5])
    vec = conjugate(D, xs)[0]
    for x, v in zip(xs, vec):
        assert v == legendre_transform(D, x).value


def test_invalid_tolerance():
    with pytest.raises(ValueError):
        legendre_transform(LossAmountModel.exponential(1.0), 2.0, tol=0.0)


# -- properties -------------------------------------------------------------

@st.composite
def finite_laws(draw):
    n = draw(st.integers(2, 5))
    vals = draw(st.lists(st.floats(0.0, 8.0), min_size=n, max_size=n, unique=True))
    w = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n)))
    return sorted(vals), (w / w.sum())[np.argsort(vals)]


@given(finite_laws(), st.floats(0.0, 1.0))
def test_discrete_against_brentq_oracle(law, frac):
    vals, probs = law
    vals = np.array(vals)
    D = LossAmountModel.discrete(vals, probs)
    if D.is_degenerate:
        return
    x = vals.min() + frac * (vals.max() - vals.min())
    ref = atom_conjugate(D.values, D.probs, x)
    got = legendre_transform(D, x).value
    if math.isinf(ref):
        assert math.isinf(got)
    else:
        assert got == pytest.approx(ref, abs=1e-8, rel=1e-8)


@given(finite_laws(), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_nonnegative_and_convex(law, f1, f2):
    vals, probs = law
    D = LossAmountModel.discrete(vals, probs)
    lo, hi = D.ess_inf, D.ess_sup
    a, b = sorted((lo + f1 * (hi - lo), lo + f2 * (hi - lo)))
    va, vb, vm = (legendre_transform(D, z).value for z in (a, b, 0.5 * (a + b)))
    assert min(va, vb, vm) >= 0.0
    if math.isfinite(va) and math.isfinite(vb):
        assert vm <= 0.5 * (va + vb) + 1e-8


@given(st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(0.05, 30.0))
def test_duality_spot_check(u, lam, excess):
    P = LossAmountModel.poisson_type(u, lam)
    q = P.mean + excess * u
    s = tilt_solve(P, q)
    r = legendre_transform(P, q)
    attained = s * q - float(P.value(s))
    assert r.value == pytest.approx(attained, abs=1e-9, rel=1e-9)


@given(st.floats(0.2, 4.0), st.floats(0.01, 5.0), st.floats(0.01, 1.0), st.sampled_from([0.5, 2.0]))
def test_perspective_homogeneous(rate, inc, weight, c):
    E = LossAmountModel.exponential(rate)
    lhs = perspective(E, c * inc, min(c * weight, 1.0) if c * weight <= 1 else c * weight)
    rhs = c * perspective(E, inc, weight)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)
