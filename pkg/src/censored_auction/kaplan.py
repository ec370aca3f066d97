"""CDF recovery from winner-only observations with chosen reserves.

The pipeline is:

1. :func:`intervals` walks down from 1, halving a candidate lower endpoint
   until the probability that the max bid lands inside ``[candidate, top]``
   (given it is at most ``top``) drops below a threshold.  It stops once the
   reserve wins too rarely to learn anything lower.
2. :func:`iwin` estimates, on each interval, the probability that bidder ``i``
   wins with a bid in the interval given all bids are at most its top, from
   three reserve probes.
3. :func:`chain_estimate` multiplies ``1 - r`` over the intervals above each
   lattice point, which recovers ``F_i`` at that point.

``derive_params`` produces the theoretical schedule.  Its batch size is
astronomically large for any useful accuracy, so ``budget_override`` substitutes
a practical batch size.  In that case the Intervals acceptance threshold is
raised to what Inside can resolve at that batch size (see
:attr:`EstimatorParams.inside_threshold`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .oracle import AuctionOracle, Batch

__all__ = [
    "EstimatorParams",
    "Lattice",
    "CdfEstimate",
    "EstimationError",
    "RareConditioningEvent",
    "LipschitzViolation",
    "derive_params",
    "inside",
    "iwin",
    "intervals",
    "product_chain",
    "chain_estimate",
    "kaplan_estimate",
    "estimate_all",
    "kaplan_subsets",
]

# Floor of the halving search, below which the oracle cannot be Lipschitz.
HALVING_FLOOR = 1e-12
# Standard errors of Inside that the budget-mode threshold must clear.
THRESHOLD_Z = 3.0


class EstimationError(RuntimeError):
    """Estimator failure; ``interval`` is the lattice index when known."""

    def __init__(self, message: str, interval: int | None = None):
        self.interval = interval
        super().__init__(message)


class RareConditioningEvent(EstimationError):
    """The reserve never won at the conditioning price, so no ratio exists."""


class LipschitzViolation(EstimationError):
    pass


@dataclass(frozen=True)
class EstimatorParams:
    """Accuracy targets and the schedule derived from them.

    ``T`` is the batch size actually used; ``T_theory`` is the schedule's.
    """

    epsilon: float
    gamma: float
    delta: float
    lipschitz: float
    n: int
    beta: float
    alpha: float
    mu: float
    k_max: int
    delta_prime: float
    T_theory: int
    T: int
    budget_override: int | None = None

    @property
    def inside_threshold(self) -> float:
        """Intervals acceptance threshold.

        beta/48 when Inside is accurate to that level, otherwise
        ``THRESHOLD_Z`` standard errors of Inside at the gamma floor for the
        batch size in use.  At ``T_theory`` the second term is far below
        beta/48, so the two coincide.
        """
        noise = THRESHOLD_Z * math.sqrt(2.0 * (1.0 - self.gamma) / (self.gamma * self.T))
        return max(self.beta / 48.0, noise)

    @property
    def theoretical_samples(self) -> int:
        """Sample count of the full schedule, for cost forecasting."""
        levels = math.log2(self.k_max) + 1
        return math.ceil(3 * self.k_max * self.T_theory * levels + 3 * self.k_max * self.T_theory * self.n)


def derive_params(
    epsilon: float,
    gamma: float,
    delta: float,
    lipschitz: float,
    n: int,
    budget_override: int | None = None,
) -> EstimatorParams:
    for name, value in (("epsilon", epsilon), ("gamma", gamma), ("delta", delta)):
        if not 0 < value < 1:
            raise ValueError(f"{name} must lie in (0, 1), got {value}")
    if lipschitz < 1:
        raise ValueError(f"a CDF on [0, 1] has slope >= 1 somewhere; L={lipschitz} is impossible")
    if n < 1:
        raise ValueError("need at least one bidder")
    if budget_override is not None and budget_override < 1:
        raise ValueError("budget_override must be a positive batch size")
    beta = epsilon * gamma / (32 * n * lipschitz)
    alpha = beta**2 / 96
    mu = beta / 96
    k_max = math.ceil(48 * lipschitz * n / (beta * gamma))
    delta_prime = delta / (3 * k_max * (math.log2(k_max) + 1))
    t_theory = math.ceil(8 * math.log(6 / delta_prime) / (alpha**2 * gamma**2 * (mu / 2) ** 2))
    return EstimatorParams(
        epsilon=epsilon,
        gamma=gamma,
        delta=delta,
        lipschitz=lipschitz,
        n=n,
        beta=beta,
        alpha=alpha,
        mu=mu,
        k_max=k_max,
        delta_prime=delta_prime,
        T_theory=t_theory,
        T=t_theory if budget_override is None else int(budget_override),
        budget_override=budget_override,
    )


@dataclass
class Lattice:
    """Interval endpoints ``0 = l_1 < ... < l_k = 1``.

    ``inside_values[c]`` is the Inside estimate that accepted ``points[c]``
    (for c = 1..k-2; the ends carry NaN).
    """

    points: np.ndarray
    inside_values: np.ndarray
    rounds: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if len(self.points) < 2 or self.points[0] != 0 or self.points[-1] != 1:
            raise ValueError("lattice must start at 0 and end at 1")
        if np.any(np.diff(self.points) <= 0):
            raise ValueError("lattice points must be strictly increasing")

    @property
    def k(self) -> int:
        return len(self.points)

    @property
    def floor(self) -> float:
        """l_2: below it the estimate carries no information."""
        return float(self.points[1])


@dataclass
class CdfEstimate:
    """Step-function estimate of one bidder's CDF on a lattice.

    ``values[t]`` estimates ``F_i(lattice.points[t + 1])``, i.e. the values
    cover ``l_2 .. l_k``; ``r`` holds the per-interval conditional win
    estimates that produced them.
    """

    bidder: int
    lattice: Lattice
    values: np.ndarray
    r: np.ndarray = field(default_factory=lambda: np.empty(0))
    rounds: int = 0

    @property
    def valid_from(self) -> float:
        return self.lattice.floor

    @property
    def points(self) -> np.ndarray:
        return self.lattice.points[1:]

    def __call__(self, x):
        """max over lattice points l_t <= x of the estimate; F(l_2) below l_2."""
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.points, x, side="right") - 1
        out = self.values[np.clip(idx, 0, len(self.values) - 1)]
        return float(out) if out.ndim == 0 else out


def _probe(oracle: AuctionOracle, reserve: float, T: int, tag: str, bidder: int | None) -> Batch:
    if bidder is None:
        return oracle.batch(reserve, T, tag)
    try:
        return oracle.batch_with(reserve, T, bidder, tag)
    except RuntimeError as exc:
        raise EstimationError(str(exc)) from exc


def _reserve_wins(batch: Batch) -> int:
    return int(np.count_nonzero(batch.winners == 0))


def inside(a: float, b: float, T: int, oracle: AuctionOracle, bidder: int | None = None) -> float:
    """Estimate P[max bid >= a | max bid <= b] from one probe at ``a`` and one at ``b``.

    Returns ``1 - (reserve wins at a) / (reserve wins at b)`` clamped to [0, 1].
    ``bidder`` restricts both probes to rounds that bidder attends.
    """
    if not 0 <= a < b <= 1:
        raise ValueError(f"need 0 <= a < b <= 1, got a={a}, b={b}")
    low = _reserve_wins(_probe(oracle, a, T, "inside", bidder))
    high = _reserve_wins(_probe(oracle, b, T, "inside", bidder))
    if high == 0:
        raise RareConditioningEvent(f"reserve {b} never won in {T} rounds; P[max bid <= {b}] is negligible")
    return min(max(1.0 - low / high, 0.0), 1.0)


def _iwin_ratio(wins_lo: np.ndarray, wins_hi: np.ndarray, cond: int, lo: float, hi: float, T: int) -> np.ndarray:
    if cond == 0:
        raise RareConditioningEvent(
            f"reserve {hi} never won in {T} rounds; interval [{lo}, {hi}] violates the gamma floor"
        )
    return np.clip((wins_lo - wins_hi) / cond, 0.0, 1.0)


def _iwin_batches(oracle, lo, hi, T, bidder=None):
    at_lo = _probe(oracle, lo, T, "iwin", bidder)
    at_hi = _probe(oracle, hi, T, "iwin", bidder)
    cond = _probe(oracle, hi, T, "iwin", bidder)
    return at_lo, at_hi, cond


def iwin(i: int, lo: float, hi: float, T: int, oracle: AuctionOracle, restrict: bool = False) -> float:
    """Estimate P[i wins with a bid in [lo, hi] | all bids <= hi].

    Three probes: wins of ``i`` at reserve ``lo``, wins of ``i`` at ``hi``,
    and reserve wins at ``hi`` for the conditioning event.  With ``restrict``
    only rounds bidder ``i`` attends are used.
    """
    if not 0 <= lo < hi <= 1:
        raise ValueError(f"need 0 <= lo < hi <= 1, got lo={lo}, hi={hi}")
    n = oracle.n
    at_lo, at_hi, cond = _iwin_batches(oracle, lo, hi, T, i if restrict else None)
    ratio = _iwin_ratio(at_lo.tally(n)[i], at_hi.tally(n)[i], _reserve_wins(cond), lo, hi, T)
    return float(ratio)


def intervals(params: EstimatorParams, oracle: AuctionOracle, bidder: int | None = None) -> Lattice:
    """Partition [0, 1] top-down into intervals of small conditional max-bid mass."""
    T = params.T
    threshold = params.inside_threshold
    start = oracle.rounds_used
    points = [1.0]
    accepted = [np.nan]
    while True:
        top = points[-1]
        candidate = 0.0
        while True:
            try:
                value = inside(candidate, top, T, oracle, bidder)
            except RareConditioningEvent as exc:
                raise RareConditioningEvent(str(exc), interval=len(points)) from exc
            if value <= threshold:
                break
            candidate = 0.5 * (top + candidate)
            if top - candidate < HALVING_FLOOR:
                raise LipschitzViolation(
                    f"halving search below {top} reached the floor; Lipschitz assumption violated by oracle",
                    interval=len(points),
                )
        points.append(candidate)
        accepted.append(value)
        if len(points) + 1 > params.k_max:
            raise EstimationError(f"lattice exceeds k_max={params.k_max}")
        stop = _probe(oracle, candidate, T, "stop", bidder)
        if _reserve_wins(stop) / T <= params.gamma / 2:
            break
    points.append(0.0)
    accepted.append(np.nan)
    return Lattice(points[::-1], np.array(accepted[::-1]), rounds=oracle.rounds_used - start)


def product_chain(r) -> np.ndarray:
    """Lattice values from per-interval conditional masses.

    ``r[t]`` is the mass of interval ``[l_{t+2}, l_{t+3}]`` given the bid is at
    most ``l_{t+3}`` (so ``r`` covers intervals above ``l_2``).  Returns
    ``F(l_2), ..., F(l_k)`` with ``F(l_k) = 1``.
    """
    r = np.clip(np.asarray(r, dtype=float), 0.0, 1.0)
    survive = np.cumprod((1.0 - r)[::-1])[::-1]
    return np.concatenate([survive, [1.0]])


def chain_estimate(bidder: int, lattice: Lattice, r, rounds: int = 0) -> CdfEstimate:
    """Build the monotone, clamped step estimate from interval estimates ``r``."""
    r = np.asarray(r, dtype=float)
    if len(r) != lattice.k - 2:
        raise ValueError(f"need {lattice.k - 2} interval estimates, got {len(r)}")
    values = np.maximum.accumulate(np.clip(product_chain(r), 0.0, 1.0))
    return CdfEstimate(bidder, lattice, values, r, rounds)


def _annotate(exc: EstimationError, tau: int, lo: float, hi: float) -> EstimationError:
    cls = type(exc)
    return cls(f"interval {tau} [{lo!r}, {hi!r}]: {exc}", interval=tau)


def kaplan_estimate(
    i: int, params: EstimatorParams, oracle: AuctionOracle, lattice: Lattice | None = None
) -> CdfEstimate:
    """Estimate F_i; the lattice is built first when not supplied."""
    if not 1 <= i <= oracle.n:
        raise ValueError(f"bidder id {i} outside 1..{oracle.n}")
    start = oracle.rounds_used
    if lattice is None:
        lattice = intervals(params, oracle)
    pts = lattice.points
    r = []
    for tau in range(1, lattice.k - 1):
        lo, hi = float(pts[tau]), float(pts[tau + 1])
        try:
            r.append(iwin(i, lo, hi, params.T, oracle))
        except EstimationError as exc:
            raise _annotate(exc, tau + 1, lo, hi) from exc
    return chain_estimate(i, lattice, r, rounds=oracle.rounds_used - start)


def estimate_all(params: EstimatorParams, oracle: AuctionOracle) -> list[CdfEstimate]:
    """Estimate every bidder's CDF from one lattice and one probe triple per interval.

    Each probe's tally holds every bidder's win count, so the cost does not
    grow with n.
    """
    start = oracle.rounds_used
    lattice = intervals(params, oracle)
    n = oracle.n
    pts = lattice.points
    rows = []
    for tau in range(1, lattice.k - 1):
        lo, hi = float(pts[tau]), float(pts[tau + 1])
        at_lo, at_hi, cond = _iwin_batches(oracle, lo, hi, params.T)
        try:
            ratio = _iwin_ratio(at_lo.tally(n), at_hi.tally(n), _reserve_wins(cond), lo, hi, params.T)
        except EstimationError as exc:
            raise _annotate(exc, tau + 1, lo, hi) from exc
        rows.append(ratio)
    r = np.array(rows).reshape(len(rows), n + 1)
    rounds = oracle.rounds_used - start
    return [chain_estimate(i, lattice, r[:, i], rounds=rounds) for i in range(1, n + 1)]


def kaplan_subsets(i: int, params: EstimatorParams, oracle: AuctionOracle) -> CdfEstimate:
    """Estimate F_i using only rounds in which bidder ``i`` participated.

    Every probe keeps drawing rounds until ``params.T`` of them include ``i``;
    ``rounds`` on the result counts all rounds drawn.
    """
    if not 1 <= i <= oracle.n:
        raise ValueError(f"bidder id {i} outside 1..{oracle.n}")
    start = oracle.rounds_used
    lattice = intervals(params, oracle, bidder=i)
    pts = lattice.points
    r = []
    for tau in range(1, lattice.k - 1):
        lo, hi = float(pts[tau]), float(pts[tau + 1])
        try:
            r.append(iwin(i, lo, hi, params.T, oracle, restrict=True))
        except EstimationError as exc:
            raise _annotate(exc, tau + 1, lo, hi) from exc
    return chain_estimate(i, lattice, r, rounds=oracle.rounds_used - start)
