import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import all_families
from lossrate import (
    CompositeCgf,
    DefaultTimeModel,
    LatticeInfo,
    LossAmountModel,
    cgf_composite,
    cgf_u,
    cgf_u_derivs,
    check_light_tail,
)
from lossrate.distributions import detect_lattice
from lossrate.exceptions import DomainError
from oracles import atom_cgf


# -- examples ---------------------------------------------------------------

def test_poisson_type_cgf_values():
    P = LossAmountModel.poisson_type(1.0, 1.0)
    assert cgf_u(P, 0.0) == 0.0
    assert cgf_u(P, 1.0) == pytest.approx(1.0 + (math.e - 1.0), abs=1e-12)


def test_discrete_cgf_matches_direct_sum():
    D = LossAmountModel.discrete([1.0, 2.0], [0.5, 0.5])
    assert cgf_u(D, math.log(2)) == pytest.approx(math.log(3), abs=1e-14)


def test_derivatives_poisson_and_exponential():
    P = LossAmountModel.poisson_type(1.0, 1.0)
    assert cgf_u_derivs(P, 1.0)[1] == pytest.approx(1 + math.e, abs=1e-12)
    lam, d1, d2 = cgf_u_derivs(LossAmountModel.exponential(1.0), 0.5)
    assert (lam, d1, d2) == pytest.approx((math.log(2), 2.0, 4.0), abs=1e-14)


@pytest.mark.parametrize("model", all_families(), ids=lambda m: m.family)
def test_cumulants_at_zero(model):
    lam, d1, d2 = cgf_u_derivs(model, 0.0)
    assert lam == 0.0
    assert d1 == pytest.approx(model.mean, abs=1e-10)
    assert d2 == pytest.approx(model.variance, abs=1e-10)


def test_out_of_domain_is_infinite_not_an_error():
    E = LossAmountModel.exponential(1.0)
    assert cgf_u(E, 1.0) == math.inf
    assert cgf_u(E, 5.0) == math.inf
    with pytest.raises(DomainError):
        cgf_u_derivs(E, 1.5)


def test_composite_bernoulli_value():
    tau = DefaultTimeModel((0.7,))
    c = CompositeCgf.at_time(LossAmountModel.constant(1.0), tau, 1)
    assert cgf_composite(c, 0.0) == 0.0
    assert cgf_composite(c, math.log(12 / 7)) == pytest.approx(math.log(1.5), abs=1e-14)


@pytest.mark.parametrize("model", all_families(), ids=lambda m: m.family)
def test_composite_with_full_mass_equals_cgf_u(model):
    c = CompositeCgf.at_time(model, DefaultTimeModel((0.25, 0.75)), 2)
    for th in (-1.0, 0.3, 0.9):
        a, b = cgf_composite(c, th), cgf_u(model, th)
        assert a == b or abs(a - b) <= 1e-12 * max(1.0, abs(b))


def test_composite_argument_errors():
    U, tau = LossAmountModel.constant(1.0), DefaultTimeModel((0.5, 0.5))
    with pytest.raises(ValueError):
        CompositeCgf.increment(U, tau, 2, 2)
    with pytest.raises(ValueError):
        CompositeCgf.at_time(U, tau, 0)
    with pytest.raises(ValueError):
        CompositeCgf.at_time(U, tau, 1.5)


def test_increment_mass_and_mean():
    U, tau = LossAmountModel.discrete([1.0, 3.0], [0.5, 0.5]), DefaultTimeModel((0.2, 0.3, 0.1))
    c = CompositeCgf.increment(U, tau, 1, 3)
    assert c.success_mass == pytest.approx(0.4)
    assert c.mean == pytest.approx(0.8)
    assert CompositeCgf.increment(U, tau, 0, 2).mean == pytest.approx(CompositeCgf.at_time(U, tau, 2).mean)


def test_default_time_model():
    tau = DefaultTimeModel((0.4, 0.3))
    assert tau.grid_size == 2
    np.testing.assert_allclose(tau.cumulative, [0.4, 0.7])
    assert tau.defect == pytest.approx(0.3)
    assert tau.cdf(0) == 0.0 and tau.cdf(5) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        DefaultTimeModel((0.6, 0.6))
    with pytest.raises(ValueError):
        DefaultTimeModel((-0.1, 0.5))


def test_loss_model_validation():
    with pytest.raises(ValueError):
        LossAmountModel.discrete([1.0, -1.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        LossAmountModel.discrete([1.0, 2.0], [0.5, 0.4])
    with pytest.raises(ValueError):
        LossAmountModel.exponential(0.0)
    with pytest.raises(ValueError):
        LossAmountModel.poisson_type(1.0, -1.0)


def test_lattice_detection():
    assert detect_lattice([1.0, 2.0, 4.0]) == LatticeInfo(1.0, 1.0)
    lat = detect_lattice([0.5, 1.25, 2.0])
    assert lat.span == pytest.approx(0.75) and lat.offset == pytest.approx(0.5)
    assert detect_lattice([0.0, 1.0, math.sqrt(2)]) is None
    assert LossAmountModel.poisson_type(2.0, 1.0).lattice == LatticeInfo(2.0, 2.0)
    assert LossAmountModel.exponential(1.0).lattice is None
    # the composite adds an atom at zero
    c = CompositeCgf.at_time(LossAmountModel.discrete([2.0, 3.0], [0.5, 0.5]), DefaultTimeModel((0.5,)), 1)
    assert c.lattice == LatticeInfo(1.0, 0.0)


def test_light_tail_classification():
    probes = [0.5, 1.0, 2.0, 4.0, 8.0]
    r = check_light_tail(LossAmountModel.empirical([0.2, 0.7, 1.5]), probes)
    assert r.classification == "everywhere-finite" and r.finite_on_probes
    r = check_light_tail(LossAmountModel.exponential(1.0), [0.25, 0.5, 0.9, 1.5])
    assert r.classification == "finite-up-to-theta0" and r.theta0 == 1.0
    assert not r.finite_on_probes
    r = check_light_tail(LossAmountModel.poisson_type(1.0, 1.0), probes)
    assert r.classification == "everywhere-finite"
    assert r.ratio_increasing and r.ratio_diverging
    with pytest.raises(ValueError):
        check_light_tail(LossAmountModel.exponential(1.0), [1.0, 0.5])


def test_tilted_law_matches_exponential_reweighting():
    D = LossAmountModel.discrete([0.0, 1.0, 3.0], [0.2, 0.5, 0.3])
    T = D.tilted(0.7)
    w = np.array([0.2, 0.5, 0.3]) * np.exp(0.7 * np.array([0.0, 1.0, 3.0]))
    np.testing.assert_allclose(T.probs, w / w.sum(), rtol=1e-12)
    assert LossAmountModel.exponential(2.0).tilted(0.5).rate == 1.5
    P = LossAmountModel.poisson_type(1.0, 1.0).tilted(0.5)
    assert P.lam == pytest.approx(math.exp(0.5))


# -- properties -------------------------------------------------------------

atoms = st.lists(st.floats(0.0, 10.0, allow_nan=False), min_size=1, max_size=6)


@st.composite
def discrete_models(draw):
    vals = draw(atoms)
    w = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=len(vals), max_size=len(vals))))
    return LossAmountModel.discrete(vals, w / w.sum())


@st.composite
def any_model(draw):
    kind = draw(st.sampled_from(["discrete", "poisson", "exponential"]))
    if kind == "discrete":
        return draw(discrete_models())
    if kind == "poisson":
        return LossAmountModel.poisson_type(draw(st.floats(0.1, 3.0)), draw(st.floats(0.1, 3.0)))
    return LossAmountModel.exponential(draw(st.floats(0.2, 5.0)))


@given(any_model(), st.floats(0.0, 1.0))
def test_zero_at_origin(model, w):
    assert cgf_u(model, 0.0) == 0.0
    assert cgf_composite(CompositeCgf(model, w), 0.0) == 0.0


@given(any_model(), st.floats(0.0, 1.0), st.lists(st.floats(-3, 3), min_size=3, max_size=3, unique=True))
def test_convexity_by_interpolation(model, w, ths):
    t1, t2, t3 = sorted(ths)
    c = CompositeCgf(model, w)
    hi = min(model.theta_sup, 1e300)
    if t3 >= hi:
        t1, t2, t3 = (t * 0.99 * hi / (abs(t3) + 1e-9) for t in (t1, t2, t3))
    vals = [float(c.value(t)) for t in (t1, t2, t3)]
    if not all(math.isfinite(v) for v in vals):
        return
    lam = (t3 - t2) / (t3 - t1)
    assert vals[1] <= lam * vals[0] + (1 - lam) * vals[2] + 1e-9 * max(1.0, abs(vals[0]), abs(vals[2]))


@given(any_model(), st.floats(0.0, 1.0))
def test_slope_at_zero_is_mean(model, w):
    c = CompositeCgf(model, w)
    assert float(c.derivs(0.0)[1]) == pytest.approx(model.mean * w, abs=1e-10, rel=1e-12)


@given(discrete_models(), st.floats(-5.0, 5.0))
def test_discrete_cgf_against_direct_sum(model, th):
    ref = atom_cgf(model.values, model.probs, th)
    assert cgf_u(model, th) == pytest.approx(ref, rel=1e-12, abs=1e-12)


@given(any_model(), st.floats(-2.0, 2.0))
def test_full_mass_composite_agrees(model, th):
    if not model.in_domain(th):
        return
    a = cgf_composite(CompositeCgf(model, 1.0), th)
    b = cgf_u(model, th)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(b))
