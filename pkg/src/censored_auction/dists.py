"""Ground-truth bid distributions.

Every bidder's CDF is continuous and piecewise linear on ``[0, 1]``, given by
an ordered list of ``(value, cumulative probability)`` breakpoints.  The
representation has no point masses by construction, has a finite maximum
slope, and admits exact probability oracles, which is what every estimator in
this package is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "BidModel",
    "InvalidModel",
    "validate",
    "cdf_eval",
    "sample_bid",
    "max_cdf",
    "p_gamma",
    "win_mass",
    "win_probability",
    "exact_conditional_win",
    "conditional_bid_mass",
    "expected_max",
    "uniform_model",
    "random_model",
    "load_model",
    "dump_model",
    "parse_model",
]

_SLOPE_TOL = 1e-9


class InvalidModel(ValueError):
    """A BidModel breaks one of its invariants.

    ``kind`` is one of ``"shape"``, ``"range"``, ``"endpoint"``, ``"order"``,
    ``"jump"``, ``"decreasing"``, ``"slope"``; ``bidder`` is 1-based (0 when the
    violation is not specific to a bidder).
    """

    def __init__(self, kind: str, bidder: int, detail: str):
        self.kind = kind
        self.bidder = bidder
        self.detail = detail
        where = f"bidder {bidder}: " if bidder else ""
        super().__init__(f"{kind}: {where}{detail}")


@dataclass(frozen=True, eq=False)
class BidModel:
    """Per-bidder piecewise-linear CDFs with a declared Lipschitz bound.

    Parameters
    ----------
    cdfs : sequence of sequences of (x, F) pairs
        One breakpoint list per bidder, bidder ``i`` at position ``i - 1``.
    lipschitz : float
        Declared bound on every segment slope.
    """

    cdfs: tuple
    lipschitz: float

    def __init__(self, cdfs: Iterable[Sequence[Sequence[float]]], lipschitz: float):
        arrays = []
        for pts in cdfs:
            arr = np.array(pts, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 2:
                raise InvalidModel("shape", len(arrays) + 1, "need at least two (x, F) breakpoints")
            arr.setflags(write=False)
            arrays.append(arr)
        if not arrays:
            raise InvalidModel("shape", 0, "model has no bidders")
        object.__setattr__(self, "cdfs", tuple(arrays))
        object.__setattr__(self, "lipschitz", float(lipschitz))

    @property
    def n(self) -> int:
        return len(self.cdfs)

    def xs(self, i: int) -> np.ndarray:
        return self.cdfs[i - 1][:, 0]

    def fs(self, i: int) -> np.ndarray:
        return self.cdfs[i - 1][:, 1]

    def breakpoints(self) -> np.ndarray:
        """Sorted union of all bidders' breakpoint locations."""
        return np.unique(np.concatenate([c[:, 0] for c in self.cdfs]))

    def __repr__(self) -> str:
        return f"BidModel(n={self.n}, lipschitz={self.lipschitz})"


def validate(model: BidModel) -> None:
    """Raise :class:`InvalidModel` naming the first violated invariant."""
    for i, pts in enumerate(model.cdfs, start=1):
        x, f = pts[:, 0], pts[:, 1]
        if np.any((x < 0) | (x > 1) | (f < 0) | (f > 1)) or not np.all(np.isfinite(pts)):
            raise InvalidModel("range", i, "breakpoints must lie in [0, 1] x [0, 1]")
        if x[0] != 0 or f[0] != 0 or x[-1] != 1 or f[-1] != 1:
            raise InvalidModel(
                "endpoint", i, f"CDF must run from (0, 0) to (1, 1), got ({x[0]:g}, {f[0]:g})..({x[-1]:g}, {f[-1]:g})"
            )
        dx, df = np.diff(x), np.diff(f)
        if np.any(dx < 0):
            k = int(np.argmax(dx < 0))
            raise InvalidModel("order", i, f"breakpoint values decrease at {x[k + 1]:g}")
        jumps = (dx == 0) & (df != 0)
        if np.any(jumps):
            k = int(np.argmax(jumps))
            raise InvalidModel("jump", i, f"jump at {x[k]:g} (point mass)")
        if np.any(df < 0):
            k = int(np.argmax(df < 0))
            raise InvalidModel("decreasing", i, f"CDF decreases after {x[k]:g}")
        seg = dx > 0
        slopes = df[seg] / dx[seg]
        if slopes.size and slopes.max() > model.lipschitz * (1 + _SLOPE_TOL):
            raise InvalidModel("slope", i, f"slope {slopes.max():g} > L={model.lipschitz:g}")
    if model.lipschitz < 1:
        raise InvalidModel("slope", 0, f"L={model.lipschitz:g} < 1 cannot bound a CDF on [0, 1]")


def _check_bidder(model: BidModel, i: int) -> None:
    if not 1 <= i <= model.n:
        raise ValueError(f"bidder id {i} outside 1..{model.n}")


def _check_values(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ValueError("values must lie in [0, 1]")
    return arr


def cdf_eval(model: BidModel, i: int, x):
    """F_i(x) by linear interpolation; accepts scalars or arrays."""
    _check_bidder(model, i)
    arr = _check_values(x)
    out = _interp_cdf(model.cdfs[i - 1], arr)
    return float(out) if np.ndim(out) == 0 else out


def _interp_cdf(pts: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Right-most breakpoint at or below x; well defined with duplicate x values.
    xs, fs = pts[:, 0], pts[:, 1]
    k = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
    x0, x1 = xs[k], xs[k + 1]
    f0, f1 = fs[k], fs[k + 1]
    width = x1 - x0
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(width > 0, (x - x0) / width, 1.0)
    return f0 + np.clip(t, 0.0, 1.0) * (f1 - f0)


def _inverse_cdf(pts: np.ndarray, u: np.ndarray) -> np.ndarray:
    xs, fs = pts[:, 0], pts[:, 1]
    # fs[k-1] < u <= fs[k] so the segment has positive rise.
    k = np.searchsorted(fs, u, side="left")
    k = np.clip(k, 1, len(fs) - 1)
    f0, f1 = fs[k - 1], fs[k]
    x0, x1 = xs[k - 1], xs[k]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(f1 > f0, (u - f0) / (f1 - f0), 0.0)
    x = x0 + np.clip(t, 0.0, 1.0) * (x1 - x0)
    return np.where(u <= 0, 0.0, x)


def sample_bid(model: BidModel, i: int, u):
    """Inverse-CDF transform of uniform draw(s) ``u``: inf{x : F_i(x) >= u}."""
    _check_bidder(model, i)
    arr = _check_values(u)
    out = _inverse_cdf(model.cdfs[i - 1], arr)
    return float(out) if np.ndim(out) == 0 else out


def max_cdf(model: BidModel, subset: Iterable[int], x):
    """P[max over ``subset`` of bids <= x] = product of the subset's CDFs."""
    ids = list(subset)
    if not ids:
        raise ValueError("subset must be non-empty")
    arr = _check_values(x)
    out = np.ones_like(arr, dtype=float)
    for j in ids:
        _check_bidder(model, j)
        out = out * _interp_cdf(model.cdfs[j - 1], arr)
    return float(out) if np.ndim(out) == 0 else out


def p_gamma(
    model: BidModel,
    gamma: float,
    max_cdf_fn: Callable[[float], float] | None = None,
    tol: float = 1e-9,
) -> float:
    """Lowest price p at which the winning bid is <= p with probability >= gamma.

    With reserve 0 and continuous bids that probability is ``prod_j F_j(p)``;
    pass ``max_cdf_fn`` to use another max-bid law (e.g. random participation).
    """
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    g = max_cdf_fn or (lambda p: max_cdf(model, range(1, model.n + 1), p))
    lo, hi = 0.0, 1.0
    if g(lo) >= gamma:
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) >= gamma:
            hi = mid
        else:
            lo = mid
    return hi


def _segments(model: BidModel, a: float, b: float) -> np.ndarray:
    grid = model.breakpoints()
    inner = grid[(grid > a) & (grid < b)]
    return np.concatenate([[a], inner, [b]])


def _gauss_integrate(model: BidModel, integrand, a: float, b: float) -> float:
    # Integrands are polynomials of degree <= n between joint breakpoints, so
    # Gauss-Legendre with n + 2 nodes per segment is exact up to rounding.
    if b <= a:
        return 0.0
    nodes, weights = np.polynomial.legendre.leggauss(model.n + 2)
    edges = _segments(model, a, b)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = mid[:, None] + half[:, None] * nodes[None, :]
    return float(np.sum(half[:, None] * weights[None, :] * integrand(x)))


def _density(pts: np.ndarray, x: np.ndarray) -> np.ndarray:
    xs, fs = pts[:, 0], pts[:, 1]
    k = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
    width = xs[k + 1] - xs[k]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(width > 0, (fs[k + 1] - fs[k]) / width, 0.0)


def win_mass(
    model: BidModel, i: int, a: float, b: float, participants: Iterable[int] | None = None
) -> float:
    """P[b_i in [a, b] and b_i beats every other participant] (exact)."""
    _check_bidder(model, i)
    others = [j for j in (participants or range(1, model.n + 1)) if j != i]
    pts_i = model.cdfs[i - 1]

    def integrand(x):
        g = _density(pts_i, x)
        for j in others:
            g = g * _interp_cdf(model.cdfs[j - 1], x)
        return g

    return _gauss_integrate(model, integrand, float(a), float(b))


def win_probability(
    model: BidModel, i: int, reserve: float, participants: Iterable[int] | None = None
) -> float:
    """Exact probability that bidder ``i`` wins against reserve ``reserve``."""
    return win_mass(model, i, reserve, 1.0, participants)


def exact_conditional_win(model: BidModel, i: int, a: float, b: float) -> float:
    """P[i wins with a bid in [a, b] | all bids <= b], the quantity IWin estimates."""
    if not 0 <= a < b <= 1:
        raise ValueError(f"need 0 <= a < b <= 1, got a={a}, b={b}")
    denom = max_cdf(model, range(1, model.n + 1), b)
    if denom <= 0:
        raise ValueError(f"P[max bid <= {b}] is zero")
    return win_mass(model, i, a, b) / denom


def conditional_bid_mass(model: BidModel, i: int, a: float, b: float) -> float:
    """P[b_i in [a, b] | b_i <= b]; 0 when F_i(b) = 0."""
    fb = cdf_eval(model, i, b)
    if fb <= 0:
        return 0.0
    return (fb - cdf_eval(model, i, a)) / fb


def expected_max(model: BidModel, participants: Iterable[int] | None = None) -> float:
    """E[max bid] = integral of 1 - prod F_j over [0, 1]."""
    ids = list(participants or range(1, model.n + 1))

    def integrand(x):
        g = np.ones_like(x)
        for j in ids:
            g = g * _interp_cdf(model.cdfs[j - 1], x)
        return 1.0 - g

    return _gauss_integrate(model, integrand, 0.0, 1.0)


def uniform_model(n: int) -> BidModel:
    """n i.i.d. uniform[0, 1] bidders, L = 1."""
    return BidModel([[(0.0, 0.0), (1.0, 1.0)]] * n, lipschitz=1.0)


def random_model(
    rng: np.random.Generator, n: int, segments: int = 4, flat_prob: float = 0.0
) -> BidModel:
    """Random valid model; L is set to the largest realized slope.

    ``flat_prob`` is the chance that any given segment carries zero mass.
    """
    cdfs = []
    for _ in range(n):
        inner = np.sort(rng.uniform(0.02, 0.98, size=segments - 1))
        xs = np.concatenate([[0.0], inner, [1.0]])
        mass = rng.dirichlet(np.ones(segments))
        if flat_prob > 0:
            flat = rng.random(segments) < flat_prob
            if flat.all():
                flat[rng.integers(segments)] = False
            mass = np.where(flat, 0.0, mass)
            mass /= mass.sum()
        # Dividing by the total maps a flat tail to exactly 1.0.
        total = np.cumsum(mass)
        fs = np.concatenate([[0.0], total / total[-1]])
        cdfs.append(list(zip(xs, fs)))
    slopes = [np.max(np.diff(np.array(c)[:, 1]) / np.diff(np.array(c)[:, 0])) for c in cdfs]
    return BidModel(cdfs, lipschitz=max(1.0, float(max(slopes))) * (1 + 1e-12))


def parse_model(text: str, source: str = "<string>") -> BidModel:
    """Parse the plain-text distribution format.

    ::

        n 2
        lipschitz 1.0
        bidder 1
        point 0 0
        point 1 1
        bidder 2
        ...
    """
    n = None
    lipschitz = None
    cdfs: dict[int, list[tuple[float, float]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            key = parts[0]
            if key == "n" and len(parts) == 2:
                n = int(parts[1])
            elif key == "lipschitz" and len(parts) == 2:
                lipschitz = float(parts[1])
            elif key == "bidder" and len(parts) == 2:
                current = int(parts[1])
                if current in cdfs:
                    raise ValueError(f"bidder {current} defined twice")
                cdfs[current] = []
            elif key == "point" and len(parts) == 3:
                if current is None:
                    raise ValueError("point before any bidder line")
                cdfs[current].append((float(parts[1]), float(parts[2])))
            else:
                raise ValueError(f"unrecognized line {line!r}")
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
    if n is None or lipschitz is None:
        raise ValueError(f"{source}: missing 'n' or 'lipschitz' header")
    if sorted(cdfs) != list(range(1, n + 1)):
        raise ValueError(f"{source}: expected bidders 1..{n}, found {sorted(cdfs)}")
    return BidModel([cdfs[i] for i in range(1, n + 1)], lipschitz=lipschitz)


def load_model(path: str | Path) -> BidModel:
    path = Path(path)
    model = parse_model(path.read_text(), source=str(path))
    validate(model)
    return model


def dump_model(model: BidModel) -> str:
    lines = [f"n {model.n}", f"lipschitz {model.lipschitz!r}"]
    for i, pts in enumerate(model.cdfs, start=1):
        lines.append(f"bidder {i}")
        lines.extend(f"point {float(x)!r} {float(f)!r}" for x, f in pts)
    return "\n".join(lines) + "\n"

