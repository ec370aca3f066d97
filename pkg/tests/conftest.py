from pathlib import Path

import numpy as np
import pytest

from censored_auction.dists import BidModel, load_model, uniform_model, validate

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def uniform2():
    return uniform_model(2)


@pytest.fixture
def asymmetric3():
    return load_model(CONFIGS / "models" / "asymmetric3.txt")


@pytest.fixture
def kinked():
    """One bidder with breakpoints (0,0), (0.5,0.8), (1,1)."""
    model = BidModel([[(0, 0), (0.5, 0.8), (1, 1)]], lipschitz=1.6)
    validate(model)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
