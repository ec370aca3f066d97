"""Recovering bidder value distributions from censored auction outcomes."""

from .dists import BidModel, InvalidModel, cdf_eval, load_model, p_gamma, validate
from .kaplan import CdfEstimate, EstimatorParams, derive_params, estimate_all, kaplan_estimate
from .oracle import AuctionOracle, IndependentParticipation

__all__ = [
    "BidModel",
    "InvalidModel",
    "cdf_eval",
    "load_model",
    "p_gamma",
    "validate",
    "CdfEstimate",
    "EstimatorParams",
    "derive_params",
    "estimate_all",
    "kaplan_estimate",
    "AuctionOracle",
    "IndependentParticipation",
]
