"""Common-value extension: values ``w . x + v_i`` with a shared, unknown ``w``.

Bidding ``u ~ U[0, 1]`` and recording ``y = 1`` on a loss gives
``E[y | x] = E[max_i (w . x + v_i)] = w . x + E[max_i v_i]``, so least squares
on ``(1, x) -> y`` recovers ``w`` with the constant absorbed by the bias.
Submitting ``b + w~ . x`` instead of ``b`` then cancels the common part and
leaves an auction over the private ``v_i`` only, which the core estimator
handles unchanged.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dists import BidModel, _inverse_cdf, expected_max
from .kaplan import CdfEstimate, EstimatorParams, estimate_all
from .linear import ItemBox
from .oracle import AuctionOracle, _resolve, batch_key, uniform_stream

__all__ = [
    "CommonValueWorld",
    "LabeledPairs",
    "CommonFit",
    "CommonValueOracle",
    "collect_labels",
    "fit_common_w",
    "reduced_oracle",
    "learn_common_model",
    "offset_accuracy",
    "default_regression_size",
    "write_pairs",
    "write_common_w",
]

RIDGE = 1e-8
# Submitted bids outside this range indicate a badly fitted w~.
BID_GUARD = (0.0, 2.0)


def _support_top(model: BidModel, i: int) -> float:
    xs, fs = model.xs(i), model.fs(i)
    return float(xs[np.argmax(fs >= 1.0)])


@dataclass(frozen=True)
class CommonValueWorld:
    w: np.ndarray
    private: BidModel
    items: ItemBox

    def __post_init__(self):
        w = np.array(self.w, dtype=float).reshape(-1)
        if len(w) != self.items.d:
            raise ValueError(f"w must have {self.items.d} components")
        if np.linalg.norm(w) > 1 + 1e-12:
            raise ValueError("w must have 2-norm <= 1")
        lo, hi = self.items.value_range(w)
        top = max(_support_top(self.private, i) for i in range(1, self.n + 1))
        if lo < -1e-12 or hi + top > 1 + 1e-12:
            raise ValueError(f"values w.x + v_i span [{lo}, {hi + top}], outside [0, 1]")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.private.n

    @property
    def d(self) -> int:
        return self.items.d

    def draw(self, key: int, start: int, count: int) -> tuple[np.ndarray, np.ndarray]:
        """Items and realized values for rounds ``start .. start+count-1`` of batch ``key``."""
        x = self.items.from_uniforms(uniform_stream(key, "features", start, count, self.d))
        u = uniform_stream(key, "bids", start, count, self.n)
        v = np.column_stack([_inverse_cdf(self.private.cdfs[j], u[:, j]) for j in range(self.n)])
        return x, (x @ self.w)[:, None] + v


@dataclass(frozen=True)
class LabeledPairs:
    """Augmented items ``(1, x)`` and loss labels ``y``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.x) and np.any(self.x[:, 0] != 1.0):
            raise ValueError("first feature must be the constant 1")
        if np.any((self.y != 0) & (self.y != 1)):
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.y)


def collect_labels(world: CommonValueWorld, m: int, seed: int) -> LabeledPairs:
    """``m`` rounds bidding ``U[0, 1]``; ``y = 1`` when we lose."""
    if m < 0:
        raise ValueError("m must be non-negative")
    key = batch_key(seed, "common-labels", 0)
    x, values = world.draw(key, 0, m)
    ours = uniform_stream(key, "ourbid", 0, m, 1)[:, 0]
    winners, _ = _resolve(values, np.ones_like(values, dtype=bool), ours)
    aug = np.column_stack([np.ones(m), x]) if m else np.zeros((0, world.d + 1))
    return LabeledPairs(aug, (winners > 0).astype(float))


@dataclass(frozen=True)
class CommonFit:
    """Least-squares fit; ``bias`` absorbs ``E[max_i v_i]``."""

    bias: float
    w: np.ndarray
    rank_deficient: bool = False
    clipped: bool = False

    @property
    def augmented(self) -> np.ndarray:
        return np.r_[self.bias, self.w]

    def offset(self, x: np.ndarray) -> np.ndarray:
        return self.bias + np.asarray(x, dtype=float) @ self.w


def fit_common_w(pairs: LabeledPairs, ridge: float = RIDGE) -> CommonFit:
    """Minimize the squared loss via ridge-stabilized normal equations."""
    if len(pairs) == 0:
        raise ValueError("no labeled pairs to fit")
    X, y = pairs.x, pairs.y
    gram = X.T @ X / len(y)
    rank_deficient = np.linalg.matrix_rank(gram) < gram.shape[0]
    sol = np.linalg.solve(gram + ridge * np.eye(gram.shape[0]), X.T @ y / len(y))
    w = sol[1:]
    norm = float(np.linalg.norm(w))
    clipped = norm > 1 + 1e-6
    if clipped:
        warnings.warn(f"fitted w has norm {norm:.6g} > 1; clipping to the unit ball", stacklevel=2)
        w = w / norm
    return CommonFit(float(sol[0]), w, bool(rank_deficient), clipped)


class CommonValueOracle(AuctionOracle):
    """Standard probe interface over a common-value world.

    A requested reserve ``b`` is submitted as ``b + w~ . x`` for the round's
    item ``x``, so winners reflect the private parts only (up to the error in
    ``w~``).  The bias of the fit is deliberately not added: it estimates
    ``E[max v_i]``, which is not part of any single bidder's value.
    """

    def __init__(self, world: CommonValueWorld, w_tilde, seed: int, trace=None):
        super().__init__(world.private, seed, trace=trace)
        self.world = world
        self.w_tilde = np.asarray(w_tilde, dtype=float).reshape(-1)
        if len(self.w_tilde) != world.d:
            raise ValueError(f"w~ must have {world.d} components")
        self.guarded_rounds = 0

    def _simulate(self, key, start, count, reserve):
        x, values = self.world.draw(key, start, count)
        bid = reserve + x @ self.w_tilde
        out = (bid < BID_GUARD[0]) | (bid > BID_GUARD[1])
        if np.any(out):
            self.guarded_rounds += int(out.sum())
            bid = np.clip(bid, *BID_GUARD)
        present = np.ones_like(values, dtype=bool)
        winners, top = _resolve(values, present, bid)
        return winners, present, top


def reduced_oracle(fit: CommonFit | np.ndarray, world: CommonValueWorld, seed: int) -> CommonValueOracle:
    w = fit.w if isinstance(fit, CommonFit) else fit
    return CommonValueOracle(world, w, seed)


def learn_common_model(
    params: EstimatorParams, world: CommonValueWorld, m_regression: int, seed: int
) -> tuple[CommonFit, list[CdfEstimate]]:
    fit = fit_common_w(collect_labels(world, m_regression, seed))
    return fit, estimate_all(params, reduced_oracle(fit, world, seed))


def offset_accuracy(fit: CommonFit, world: CommonValueWorld, tol: float, samples: int, seed: int) -> float:
    """Fraction of items with ``|w~ . x + bias - (w . x + E[max v])| <= tol``."""
    key = batch_key(seed, "common-holdout", 0)
    x = world.items.from_uniforms(uniform_stream(key, "features", 0, samples, world.d))
    target = x @ world.w + expected_max(world.private)
    return float(np.mean(np.abs(fit.offset(x) - target) <= tol))


def default_regression_size(d: int, eps_prime: float, delta: float) -> int:
    """``d / eps'^3 * log(1 / delta)`` rounds."""
    return math.ceil(d / eps_prime**3 * math.log(1 / delta))


def write_pairs(pairs: LabeledPairs, path: str | Path) -> None:
    d = pairs.x.shape[1] - 1
    lines = [",".join(["y"] + [f"x{k}" for k in range(d + 1)])]
    for row, y in zip(pairs.x, pairs.y):
        lines.append(",".join([str(int(y))] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_common_w(fit: CommonFit, path: str | Path) -> None:
    vec = fit.augmented
    lines = [",".join(f"w{k}" for k in range(len(vec))), ",".join(repr(float(v)) for v in vec)]
    Path(path).write_text("\n".join(lines) + "\n")
