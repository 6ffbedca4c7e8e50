import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import binom

from lossrate import Barrier, DefaultTimeModel, IncrementBarrier, LatticePortfolio, LossAmountModel, exact_barrier, exact_increment, exact_marginal
from lossrate.exceptions import CapacityError
from lossrate.oracle import exact_epoch_tail
from oracles import brute_force_paths

BERN = (LossAmountModel.constant(1.0), DefaultTimeModel((0.4, 0.3)))


def _brute_barrier(n, values, probs, p, zeta):
    return math.fsum(
        w for w, L in brute_force_paths(n, values, probs, p)
        if any(L[t] >= n * zeta[t - 1] - 1e-9 for t in range(1, len(p) + 1))
    )


def _brute_increment(n, values, probs, p, xi):
    return math.fsum(
        w for w, L in brute_force_paths(n, values, probs, p)
        if any(L[t] - L[s] >= n * v - 1e-9 for (s, t), v in xi.items())
    )


def test_marginal_two_obligors():
    law = exact_marginal(LatticePortfolio(2, *BERN), 2)
    got = law.as_dict()
    assert got.keys() == {0.0, 1.0, 2.0}
    for k, v in {0.0: 0.09, 1.0: 0.42, 2.0: 0.49}.items():
        assert got[k] == pytest.approx(v, abs=1e-15)


def test_barrier_and_increment_two_obligors():
    port = LatticePortfolio(2, *BERN)
    assert exact_barrier(port, Barrier((0.8, 0.8))) == pytest.approx(0.49, abs=1e-15)
    # both obligors default at epoch 2 (0.09), or one does while the other defaulted at 1 or never (2 * 0.3 * 0.7)
    assert exact_increment(port, IncrementBarrier({(1, 2): 0.5})) == pytest.approx(0.3 * 0.3 + 2 * 0.3 * 0.7, abs=1e-15)


def test_exact_mode_returns_fractions():
    port = LatticePortfolio(2, *BERN)
    v = exact_barrier(port, Barrier((0.8, 0.8)), exact=True)
    assert isinstance(v, Fraction)
    assert float(v) == pytest.approx(0.49, abs=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_barrier_matches_brute_force(n):
    values, probs, p = [1.0, 2.0, 4.0], [0.5, 0.3, 0.2], [0.3, 0.2, 0.25]
    U, tau = LossAmountModel.discrete(values, probs), DefaultTimeModel(tuple(p))
    zeta = (0.6, 1.2, 1.5)
    got = exact_barrier(LatticePortfolio(n, U, tau), Barrier(zeta))
    assert got == pytest.approx(_brute_barrier(n, values, probs, p, zeta), abs=1e-13)


@pytest.mark.parametrize("method", ["dp", "enumerate"])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_increment_matches_brute_force(n, method):
    values, probs, p = [0.0, 1.0, 2.0], [0.2, 0.5, 0.3], [0.3, 0.3, 0.2]
    U, tau = LossAmountModel.discrete(values, probs), DefaultTimeModel(tuple(p))
    xi = {(0, 1): 0.9, (1, 2): 0.7, (1, 3): 1.0, (2, 3): 0.6, (0, 3): 1.6}
    got = exact_increment(LatticePortfolio(n, U, tau), IncrementBarrier(xi), method=method)
    assert got == pytest.approx(_brute_increment(n, values, probs, p, xi), abs=1e-13)


def test_dp_and_enumeration_agree_exactly():
    U, tau = LossAmountModel.discrete([1.0, 2.0], [0.6, 0.4]), DefaultTimeModel((0.2, 0.2, 0.2, 0.2))
    xi = IncrementBarrier({(s, t): 0.35 * (t - s) for s in range(4) for t in range(s + 1, 5)})
    port = LatticePortfolio(4, U, tau)
    a = exact_increment(port, xi, method="dp", exact=True)
    b = exact_increment(port, xi, method="enumerate", exact=True)
    assert a == b


def test_bernoulli_barrier_reduces_to_binomial_tail():
    U, tau = BERN
    for n in (10, 100, 800):
        got = exact_barrier(LatticePortfolio(n, U, tau), Barrier((0.8, 0.8)))
        ref = binom.sf(math.ceil(0.8 * n) - 1, n, 0.7)
        assert got == pytest.approx(ref, rel=1e-10)


def test_ties_at_the_barrier_count_as_crossings():
    port = LatticePortfolio(5, *BERN)
    # 0.8 * 5 = 4 exactly; the single epoch tail includes L = 4
    ref = binom.sf(3, 5, 0.7)
    assert exact_epoch_tail(port, 2, 0.8) == pytest.approx(ref, rel=1e-12)


def test_capacity_errors():
    U = LossAmountModel.discrete([0.0, 1.0, 1000.0], [0.4, 0.4, 0.2])
    with pytest.raises(CapacityError):
        LatticePortfolio(10_000, U, DefaultTimeModel((1.0,)))
    tau = DefaultTimeModel((0.1,) * 7)
    port = LatticePortfolio(2, LossAmountModel.constant(1.0), tau)
    with pytest.raises(CapacityError):
        exact_increment(port, IncrementBarrier({(0, 7): 0.9}), method="enumerate")
    big = LatticePortfolio(30, LossAmountModel.discrete([1.0, 2.0, 3.0], [0.3, 0.3, 0.4]), DefaultTimeModel((0.3, 0.3, 0.3)))
    with pytest.raises(CapacityError):
        exact_increment(big, IncrementBarrier({(0, 3): 1.8, (1, 3): 1.1, (2, 3): 0.7}), max_states=10)


def test_rejects_non_lattice_and_continuous():
    tau = DefaultTimeModel((1.0,))
    with pytest.raises(ValueError):
        LatticePortfolio(3, LossAmountModel.exponential(1.0), tau)
    with pytest.raises(ValueError):
        LatticePortfolio(3, LossAmountModel.discrete([0.0, 1.0, math.sqrt(2)], [0.4, 0.3, 0.3]), tau)


def test_marginal_is_a_distribution():
    U, tau = LossAmountModel.discrete([0.5, 1.0, 2.0], [0.2, 0.5, 0.3]), DefaultTimeModel((0.3, 0.5))
    law = exact_marginal(LatticePortfolio(12, U, tau), 2, exact=True)
    assert sum(law.probs, Fraction(0)) == 1
    mean = sum(Fraction(v) * q for v, q in zip(law.values, law.probs))
    assert float(mean) == pytest.approx(12 * 0.8 * U.mean, rel=1e-12)


# -- properties -------------------------------------------------------------

@st.composite
def small_fixture(draw):
    k = draw(st.integers(1, 3))
    vals = sorted(draw(st.lists(st.integers(0, 4), min_size=k, max_size=k, unique=True)))
    w = np.array(draw(st.lists(st.floats(0.1, 1.0), min_size=k, max_size=k)))
    N = draw(st.integers(1, 3))
    p = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=N, max_size=N)))
    p = p / p.sum() * draw(st.floats(0.5, 1.0))
    n = draw(st.integers(1, 12))
    return n, LossAmountModel.discrete([float(v) for v in vals], w / w.sum()), DefaultTimeModel(tuple(p))


@given(small_fixture(), st.floats(0.05, 3.0), st.floats(0.0, 0.5))
def test_barrier_monotone_in_level(fx, z, bump):
    n, U, tau = fx
    port = LatticePortfolio(n, U, tau)
    N = tau.grid_size
    lo = exact_barrier(port, Barrier((z,) * N), exact=True)
    hi = exact_barrier(port, Barrier((z + bump,) * N), exact=True)
    assert 0 <= hi <= lo <= 1


@given(small_fixture(), st.floats(0.05, 3.0))
def test_union_lower_bound_exact(fx, z):
    n, U, tau = fx
    port = LatticePortfolio(n, U, tau)
    N = tau.grid_size
    total = exact_barrier(port, Barrier((z,) * N), exact=True)
    for t in range(1, N + 1):
        assert total >= exact_epoch_tail(port, t, z, exact=True)
