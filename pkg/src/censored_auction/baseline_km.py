"""Kaplan-Meier product-limit baseline from full-information rounds.

With the winning bid visible, the rounds won by bidder ``i`` are exact
observations of ``b_i`` and the others censor it from above.  Sorting rounds
by winning bid (rank ``t = 1..m``, ascending), the estimate is

    KM(x) = prod over t with bid_t >= x of ((t - 1) / t) ** [winner_t = i]

The lowest-ranked win of ``i`` contributes a factor 0, so the estimate is
exactly 0 below it.  :func:`km_conditional_chain` evaluates the same quantity
as a chain of conditional survival ratios, as an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .oracle import Trace

__all__ = ["FullInfoSample", "KmEstimate", "km_estimate", "km_conditional_chain", "write_km_csv"]


@dataclass(frozen=True)
class FullInfoSample:
    """One ``(winning_bid, winner)`` pair per round."""

    bids: np.ndarray
    winners: np.ndarray

    def __post_init__(self):
        bids = np.asarray(self.bids, dtype=float).reshape(-1)
        winners = np.asarray(self.winners, dtype=int).reshape(-1)
        if len(bids) != len(winners):
            raise ValueError("need one winner per winning bid")
        if np.any((bids < 0) | (bids > 1)):
            raise ValueError("winning bids must lie in [0, 1]")
        if np.any(winners < 1):
            raise ValueError("winners must be real bidders (ids >= 1)")
        object.__setattr__(self, "bids", bids)
        object.__setattr__(self, "winners", winners)

    def __len__(self) -> int:
        return len(self.bids)

    @classmethod
    def from_trace(cls, trace: Trace) -> "FullInfoSample":
        """Rounds of a winner-and-price trace; rounds the reserve won carry no bid and are dropped."""
        bids, winners = [], []
        for rec in trace:
            out = rec.outcome
            if out.winning_bid is None:
                raise ValueError(f"round {rec.index} was recorded without the winning bid")
            if out.winner > 0:
                bids.append(out.winning_bid)
                winners.append(out.winner)
        return cls(np.array(bids), np.array(winners, dtype=int))


def _ranked(sample: FullInfoSample) -> np.ndarray:
    # Stable sort: equal bids keep round order.
    return np.argsort(sample.bids, kind="stable")


@dataclass(frozen=True)
class KmEstimate:
    """Step estimate with jumps at the sorted winning bids.

    ``suffix[t]`` is the product of the factors of ranks ``t+1..m`` (0-based
    ``t``), so ``KM(x) = suffix[first rank with bid >= x]`` and ``suffix[m] = 1``.
    """

    bidder: int
    bids: np.ndarray
    suffix: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.suffix[np.searchsorted(self.bids, x, side="left")]
        return float(out) if out.ndim == 0 else out

    @property
    def points(self) -> np.ndarray:
        """Winning bids of the bidder, where the estimate jumps."""
        return self.bids[self.suffix[:-1] != self.suffix[1:]]


def km_estimate(sample: FullInfoSample, i: int) -> KmEstimate:
    if len(sample) == 0:
        raise ValueError("sample is empty")
    order = _ranked(sample)
    bids = sample.bids[order]
    ranks = np.arange(1, len(bids) + 1)
    factors = np.where(sample.winners[order] == i, (ranks - 1) / ranks, 1.0)
    suffix = np.append(np.cumprod(factors[::-1])[::-1], 1.0)
    return KmEstimate(i, bids, suffix)


def km_conditional_chain(sample: FullInfoSample, i: int, x: float) -> float:
    """F_i(x) as a product of estimated P[b_i < s | b_i <= s] over observed prices s >= x.

    Each ratio is (rounds priced strictly below s) / (rounds priced at or below
    s) when ``i`` set price s, and 1 otherwise.
    """
    order = _ranked(sample)
    bids = sample.bids[order].tolist()
    winners = sample.winners[order].tolist()
    value = 1.0
    at_or_below = len(bids)
    while at_or_below and bids[at_or_below - 1] >= x:
        if winners[at_or_below - 1] == i:
            value *= (at_or_below - 1) / at_or_below
        at_or_below -= 1
    return value


def write_km_csv(est: KmEstimate, path: str | Path, truth=None) -> None:
    """``bidder,lattice_point,estimate[,true_cdf]`` at each jump of the estimate."""
    pts = est.points
    head = "bidder,lattice_point,estimate" + (",true_cdf" if truth is not None else "")
    lines = [head]
    for p in pts:
        row = [str(est.bidder), repr(float(p)), repr(float(est(p)))]
        if truth is not None:
            row.append(repr(float(truth(p))))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")
