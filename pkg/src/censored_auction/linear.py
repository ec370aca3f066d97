"""Learning linear bidder valuations from winner identities.

Bidder ``i`` values an item with features ``x`` at ``w_i . x``.  Each round we
bid a random multiple of ``eps`` and observe who won; every observation is a
set of linear inequalities in the unknown weights, and any weights satisfying
all of them predict future winners well.

Strict inequalities are realized with a margin ``rho``.  The solver first
tries cheap cyclic projections and, when those stall on a thin feasible
region, switches to a cutting-plane linear program that maximizes the margin
(:func:`solve_feasibility`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .oracle import batch_key, uniform_stream

__all__ = [
    "ItemBox",
    "LinearWorld",
    "ConstraintSet",
    "LinearFit",
    "Infeasible",
    "random_linear_world",
    "collect",
    "sample_bound",
    "bid_grid",
    "solve_feasibility",
    "predict",
    "FitQuality",
    "evaluate_fit",
    "write_constraints",
    "read_constraints",
    "write_weights",
]

BOUND_CONSTANT = 64


@dataclass(frozen=True)
class ItemBox:
    """Items uniform on the box ``[lo, hi]^d``."""

    d: int
    lo: float = 0.0
    hi: float | None = None

    @property
    def upper(self) -> float:
        return 1.0 / math.sqrt(self.d) if self.hi is None else self.hi

    def from_uniforms(self, u: np.ndarray) -> np.ndarray:
        return self.lo + (self.upper - self.lo) * u

    def value_range(self, w: np.ndarray) -> tuple[float, float]:
        """Exact min and max of ``w . x`` over the box (attained at vertices)."""
        w = np.asarray(w, dtype=float)
        lo = np.where(w >= 0, self.lo, self.upper) @ w
        hi = np.where(w >= 0, self.upper, self.lo) @ w
        return float(lo), float(hi)


@dataclass(frozen=True)
class LinearWorld:
    """``n`` bidders with weight rows ``weights[i - 1]`` over ``d`` features."""

    weights: np.ndarray
    items: ItemBox

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[1] != self.items.d:
            raise ValueError(f"weights must have shape (n, {self.items.d})")
        if np.any(np.linalg.norm(w, axis=1) > 1 + 1e-12):
            raise ValueError("weight vectors must have 2-norm <= 1")
        if self.items.upper * math.sqrt(self.items.d) > 1 + 1e-12 or self.items.lo < 0:
            raise ValueError("item box must lie in the unit ball's positive orthant")
        for i, row in enumerate(w, start=1):
            lo, hi = self.items.value_range(row)
            if lo < -1e-12 or hi > 1 + 1e-12:
                raise ValueError(f"bidder {i} values range over [{lo}, {hi}], outside [0, 1]")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    def winners(self, x: np.ndarray, bids: np.ndarray) -> np.ndarray:
        return predict(self.weights, x, bids)


def random_linear_world(rng: np.random.Generator, n: int, d: int) -> LinearWorld:
    """Non-negative weights with norms in [0.4, 1], items on the default box."""
    w = np.abs(rng.normal(size=(n, d)))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    w *= rng.uniform(0.4, 1.0, size=(n, 1))
    return LinearWorld(w, ItemBox(d))


def bid_grid(eps: float) -> np.ndarray:
    steps = round(1 / eps)
    if not math.isclose(steps * eps, 1.0, rel_tol=1e-9):
        raise ValueError(f"1/eps must be an integer, got eps={eps}")
    return np.arange(steps + 1) / steps


def predict(weights: np.ndarray, x, b) -> np.ndarray | int:
    """Winner among the reserve ``b`` and bidders valuing ``x`` at ``weights @ x``.

    A bidder must strictly beat the reserve; ties between bidders go to the
    lowest id.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    values = np.atleast_2d(x) @ np.asarray(weights, dtype=float).T
    b = np.broadcast_to(np.asarray(b, dtype=float), (values.shape[0],))
    top = values.max(axis=1)
    out = np.where(top > b, values.argmax(axis=1) + 1, 0)
    return int(out[0]) if single else out


def sample_bound(eps: float, delta: float, d: int, n: int, constant: float = BOUND_CONSTANT) -> int:
    """Rounds needed to learn to accuracy ``eps`` with confidence ``1 - delta``."""
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    return math.ceil(constant / eps**2 * (d * n**2 * math.log(1 / eps) + math.log(1 / delta)))


@dataclass
class ConstraintSet:
    """Observed rounds ``(x_t, b_t, winner_t)`` and the inequalities they imply.

    :meth:`system` returns ``(A, c)`` with one row per inequality
    ``A[r] . vec(W) > c[r]``, where ``vec(W)`` stacks the weight rows.
    """

    n: int
    x: np.ndarray
    bids: np.ndarray
    winners: np.ndarray
    eps: float | None = None
    _cache: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.bids = np.asarray(self.bids, dtype=float)
        self.winners = np.asarray(self.winners, dtype=int)
        if not len(self.x) == len(self.bids) == len(self.winners):
            raise ValueError("x, bids and winners must have one entry per round")
        if np.any((self.winners < 0) | (self.winners > self.n)):
            raise ValueError(f"winners must lie in 0..{self.n}")
        if self.eps is not None and len(self.bids):
            steps = self.bids * round(1 / self.eps)
            if np.any(np.abs(steps - np.round(steps)) > 1e-9):
                raise ValueError("bids must lie on the eps grid")

    @property
    def m(self) -> int:
        return len(self.winners)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def system(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(A, c, source)``; ``source[r] = (round, winner, other)`` with other 0 for the bid."""
        if self._cache is not None:
            return self._cache
        n, d = self.n, self.d
        blocks, rhs, source = [], [], []
        rounds = np.arange(self.m)
        for i in range(1, n + 1):
            won = self.winners == i
            xs = self.x[won]
            for j in range(1, n + 1):
                if j == i:
                    continue
                a = np.zeros((len(xs), n * d))
                a[:, (i - 1) * d : i * d] = xs
                a[:, (j - 1) * d : j * d] = -xs
                blocks.append(a)
                rhs.append(np.zeros(len(xs)))
                source.append(np.column_stack([rounds[won], np.full(len(xs), i), np.full(len(xs), j)]))
            a = np.zeros((len(xs), n * d))
            a[:, (i - 1) * d : i * d] = xs
            blocks.append(a)
            rhs.append(self.bids[won])
            source.append(np.column_stack([rounds[won], np.full(len(xs), i), np.zeros(len(xs), int)]))
        lost = self.winners == 0
        for j in range(1, n + 1):
            a = np.zeros((int(lost.sum()), n * d))
            a[:, (j - 1) * d : j * d] = -self.x[lost]
            blocks.append(a)
            rhs.append(-self.bids[lost])
            source.append(np.column_stack([rounds[lost], np.zeros(int(lost.sum()), int), np.full(int(lost.sum()), j)]))
        A = np.vstack(blocks) if blocks else np.zeros((0, n * d))
        c = np.concatenate(rhs) if rhs else np.zeros(0)
        src = np.vstack(source) if source else np.zeros((0, 3), int)
        order = np.lexsort((src[:, 2], src[:, 0]))
        self._cache = (A[order], c[order], src[order])
        return self._cache

    def describe(self, row: int) -> str:
        _, _, src = self.system()
        t, winner, other = (int(v) for v in src[row])
        b = self.bids[t]
        if winner == 0:
            return f"round {t}: bid {b} > w_{other} . x"
        if other == 0:
            return f"round {t}: w_{winner} . x > bid {b}"
        return f"round {t}: w_{winner} . x > w_{other} . x"


class Infeasible(RuntimeError):
    def __init__(self, message: str, constraint: str | None = None):
        self.constraint = constraint
        super().__init__(message if constraint is None else f"{message}; violated: {constraint}")


@dataclass
class LinearFit:
    weights: np.ndarray
    min_slack: float
    method: str
    iterations: int


def collect(world: LinearWorld, m: int, eps: float, seed: int) -> ConstraintSet:
    """Play ``m`` rounds with uniform grid bids and record the outcomes."""
    if m < 0:
        raise ValueError("m must be non-negative")
    grid = bid_grid(eps)
    key = batch_key(seed, "linear", 0)
    x = world.items.from_uniforms(uniform_stream(key, "features", 0, m, world.d))
    u = uniform_stream(key, "ourbid", 0, m, 1)[:, 0]
    bids = grid[np.minimum((u * len(grid)).astype(int), len(grid) - 1)]
    return ConstraintSet(world.n, x.reshape(m, world.d), bids, world.winners(x.reshape(m, world.d), bids), eps)


def _project_ball(w: np.ndarray, n: int, d: int) -> np.ndarray:
    rows = w.reshape(n, d)
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return (rows / np.maximum(norms, 1.0)).ravel()


def _projection(A, c, rho, n, d, max_passes):
    w = np.zeros(n * d)
    sq = np.einsum("ij,ij->i", A, A)
    for sweep in range(max_passes):
        slack = A @ w - c
        viol = np.flatnonzero(slack < rho)
        if len(viol) == 0:
            return w, sweep
        for r in viol:
            s = A[r] @ w - c[r]
            if s < rho:
                if sq[r] == 0:
                    return None, sweep
                w += (rho - s) / sq[r] * A[r]
        w = _project_ball(w, n, d)
    return None, max_passes


def _max_margin_lp(A, c, rho, n, d, max_rounds=200, seed_rows=2000):
    """Maximize the common slack ``t`` over the unit balls by constraint generation.

    Solves over an active subset of rows, adds the most violated rows and
    tangent cuts for any weight row outside its ball, and repeats.  Cuts and
    dropped rows only relax the problem, so ``t* < rho`` proves infeasibility.
    Returns ``(weights or None, rounds, t*, last iterate)``.
    """
    K = n * d
    rows = len(A)
    active = np.zeros(rows, dtype=bool)
    active[np.argsort(-c, kind="stable")[:seed_rows]] = True
    active[np.linspace(0, rows - 1, min(rows, seed_rows)).astype(int)] = True
    cuts: list[np.ndarray] = []
    objective = np.r_[np.zeros(K), -1.0]
    w, t = np.zeros(K), -np.inf
    for it in range(1, max_rounds + 1):
        idx = np.flatnonzero(active)
        a_ub = np.hstack([-A[idx], np.ones((len(idx), 1))])
        b_ub = -c[idx]
        if cuts:
            a_ub = np.vstack([a_ub, np.hstack([np.array(cuts), np.zeros((len(cuts), 1))])])
            b_ub = np.r_[b_ub, np.ones(len(cuts))]
        res = linprog(objective, A_ub=a_ub, b_ub=b_ub, bounds=[(-1, 1)] * K + [(None, 1)], method="highs")
        if res.status != 0:
            return None, it, -np.inf, w
        w, t = res.x[:K], res.x[K]
        if t < rho:
            return None, it, t, w
        slack = A @ w - c
        norms = np.linalg.norm(w.reshape(n, d), axis=1)
        fresh = 0
        for i in np.flatnonzero(norms > 1 + 1e-12):
            cut = np.zeros(K)
            cut[i * d : (i + 1) * d] = w.reshape(n, d)[i] / norms[i]
            cuts.append(cut)
            fresh += 1
        viol = np.flatnonzero(~active & (slack < rho))
        if fresh == 0 and len(viol) == 0:
            w = _project_ball(w, n, d)
            if np.all(A @ w - c >= rho):
                return w, it, t, w
        worst = viol[np.argsort(slack[viol], kind="stable")][:3000]
        active[worst] = True
    return None, max_rounds, t, w


def solve_feasibility(cs: ConstraintSet, rho: float = 1e-6, max_passes: int = 50) -> LinearFit:
    """Weights with 2-norm <= 1 meeting every constraint with slack >= ``rho``.

    Cyclic projections run for ``max_passes`` sweeps; if they have not
    converged the margin-maximizing LP decides.  Raises :class:`Infeasible`
    naming the most violated constraint at the last iterate.
    """
    if rho <= 0:
        raise ValueError("margin rho must be positive")
    n, d = cs.n, cs.d
    A, c, _ = cs.system()
    if len(A) == 0:
        return LinearFit(np.zeros((n, d)), math.inf, "projection", 0)
    w, iterations = _projection(A, c, rho, n, d, max_passes)
    method = "projection"
    if w is None:
        w, iterations, margin, last = _max_margin_lp(A, c, rho, n, d)
        method = "lp"
        if w is None:
            worst = int(np.argmin(A @ last - c))
            raise Infeasible(
                f"no weights meet all {len(A)} constraints with margin {rho} (best margin {margin:.3g})",
                cs.describe(worst),
            )
    return LinearFit(w.reshape(n, d), float((A @ w - c).min()), method, iterations)


@dataclass
class FitQuality:
    """Held-out accuracy of learned weights against the true world."""

    mispredict_rate: float
    value_error_mass: float
    samples: int


def evaluate_fit(world: LinearWorld, weights: np.ndarray, eps: float, samples: int, seed: int) -> FitQuality:
    """Misprediction rate on fresh ``(x, b)`` pairs, and the fraction of correctly
    predicted bidder wins whose learned winner value is within ``eps``."""
    grid = bid_grid(eps)
    key = batch_key(seed, "linear-holdout", 0)
    x = world.items.from_uniforms(uniform_stream(key, "features", 0, samples, world.d))
    u = uniform_stream(key, "ourbid", 0, samples, 1)[:, 0]
    b = grid[np.minimum((u * len(grid)).astype(int), len(grid) - 1)]
    truth = world.winners(x, b)
    guess = predict(weights, x, b)
    right = (truth == guess) & (truth > 0)
    idx = truth[right] - 1
    err = np.abs(np.einsum("ij,ij->i", x[right], np.asarray(weights)[idx] - world.weights[idx]))
    mass = float(np.mean(err <= eps)) if len(err) else 1.0
    return FitQuality(float(np.mean(truth != guess)), mass, samples)


def write_constraints(cs: ConstraintSet, path: str | Path) -> None:
    head = ",".join(["round", "bid", "winner"] + [f"x{k}" for k in range(1, cs.d + 1)])
    lines = [head]
    for t in range(cs.m):
        lines.append(",".join([str(t), repr(float(cs.bids[t])), str(int(cs.winners[t]))] + [repr(float(v)) for v in cs.x[t]]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_constraints(path: str | Path, n: int, eps: float | None = None) -> ConstraintSet:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return ConstraintSet(n, data[:, 3:], data[:, 1], data[:, 2].astype(int), eps)


def write_weights(weights: np.ndarray, path: str | Path) -> None:
    weights = np.asarray(weights, dtype=float)
    lines = [",".join(["bidder"] + [f"w{k}" for k in range(1, weights.shape[1] + 1)])]
    for i, row in enumerate(weights, start=1):
        lines.append(",".join([str(i)] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")
