import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from lossrate import DefaultTimeModel, LossAmountModel  # noqa: E402


@pytest.fixture
def bernoulli():
    """Unit loss, default law (0.4, 0.3) with defect 0.3."""
    return LossAmountModel.constant(1.0), DefaultTimeModel((0.4, 0.3))


def all_families():
    return [
        LossAmountModel.discrete([1.0, 2.0, 4.0], [0.5, 0.3, 0.2]),
        LossAmountModel.empirical([0.5, 1.0, 1.0, 3.0]),
        LossAmountModel.poisson_type(1.0, 1.0),
        LossAmountModel.poisson_type(0.5, 2.0),
        LossAmountModel.exponential(1.0),
        LossAmountModel.exponential(3.0),
    ]
