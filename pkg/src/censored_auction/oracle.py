"""The probed sealed-bid auction.

Each round every participant draws an independent bid; we submit a reserve
(bidder 0) and observe only the winner's identity, or, in the full-information
mode used by the Kaplan-Meier baseline, the winner and the winning bid.

Randomness comes from counter-based Philox streams keyed by
``(root seed, purpose tag, batch index, stream name)``.  Round ``r`` of a batch
owns a fixed slice of each stream, so a single round can be regenerated on its
own and a batch is identical to the rounds that compose it, whatever order
batches run in.
"""

from __future__ import annotations

import hashlib
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .dists import BidModel, _inverse_cdf

__all__ = [
    "WINNER_ONLY",
    "WINNER_AND_PRICE",
    "RoundSeed",
    "RoundRequest",
    "Outcome",
    "TraceRecord",
    "Trace",
    "TraceMismatch",
    "Batch",
    "IndependentParticipation",
    "CorrelatedParticipation",
    "batch_key",
    "uniform_stream",
    "run_round",
    "run_batch",
    "simulate_rounds",
    "record",
    "replay",
    "write_trace",
    "read_trace",
    "AuctionOracle",
]

WINNER_ONLY = "winner-only"
WINNER_AND_PRICE = "winner-and-price"
_MODES = (WINNER_ONLY, WINNER_AND_PRICE)

_BLOCK = 4  # Philox emits four 64-bit words per counter step.


def _tag_code(tag: str) -> int:
    return zlib.crc32(tag.encode())


def batch_key(root_seed: int, tag: str, batch_index: int) -> int:
    """128-bit Philox key for one batch of the seed hierarchy."""
    ss = np.random.SeedSequence([int(root_seed) & (2**64 - 1), _tag_code(tag), int(batch_index)])
    lo, hi = ss.generate_state(2, dtype=np.uint64)
    return int(lo) | (int(hi) << 64)


def _stream_key(key: int, stream: str) -> int:
    digest = hashlib.blake2b(key.to_bytes(16, "little") + stream.encode(), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def uniform_stream(key: int, stream: str, start: int, count: int, width: int) -> np.ndarray:
    """Uniforms in [0, 1) for rounds ``start .. start+count-1``, shape (count, width).

    Round ``r`` always receives the same ``width`` values no matter which
    ``start``/``count`` window it is read through.
    """
    if count <= 0:
        return np.empty((0, width))
    blocks = -(-width // _BLOCK)
    bitgen = np.random.Philox(key=_stream_key(key, stream))
    if start:
        bitgen.advance(start * blocks)
    raw = bitgen.random_raw(count * blocks * _BLOCK).reshape(count, blocks * _BLOCK)[:, :width]
    return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 2**53)


@dataclass(frozen=True)
class RoundSeed:
    """Position of a round in the seed hierarchy: batch key plus round index."""

    key: int
    index: int


@dataclass(frozen=True)
class RoundRequest:
    reserve: float
    participants: frozenset[int] | None = None
    info_mode: str = WINNER_ONLY
    round_seed: RoundSeed = RoundSeed(0, 0)

    def __post_init__(self):
        if not 0.0 <= self.reserve <= 1.0:
            raise ValueError(f"reserve {self.reserve} outside [0, 1]")
        if self.participants is not None:
            object.__setattr__(self, "participants", frozenset(self.participants))
            if not self.participants:
                raise ValueError("participant set must be non-empty when given")
        if self.info_mode not in _MODES:
            raise ValueError(f"unknown info mode {self.info_mode!r}")


@dataclass(frozen=True)
class Outcome:
    winner: int
    participants: frozenset[int]
    winning_bid: float | None = None


class TraceMismatch(ValueError):
    def __init__(self, round_index: int, detail: str):
        self.round_index = round_index
        super().__init__(f"round {round_index}: {detail}")


@dataclass(frozen=True)
class TraceRecord:
    index: int
    request: RoundRequest
    outcome: Outcome


@dataclass
class Trace:
    records: list[TraceRecord] = field(default_factory=list)
    n: int | None = None

    def append(self, request: RoundRequest, outcome: Outcome) -> None:
        self.records.append(TraceRecord(len(self.records), request, outcome))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass
class Batch:
    """Per-round results of one batch of rounds at a single reserve.

    ``winners`` holds ids in ``0..n``; ``present`` is an (rounds, n) boolean
    participation matrix; ``winning_bid`` is set only in winner-and-price mode.
    ``raw_rounds`` counts every round the auction ran, including rounds dropped
    by a participation filter.
    """

    reserve: float
    winners: np.ndarray
    present: np.ndarray
    winning_bid: np.ndarray | None = None
    raw_rounds: int = 0

    def tally(self, n: int) -> np.ndarray:
        return np.bincount(self.winners, minlength=n + 1)

    def __len__(self) -> int:
        return len(self.winners)


class IndependentParticipation:
    """Each bidder shows up independently with probability ``q`` (scalar or per bidder)."""

    def __init__(self, q):
        self.q = q

    def probabilities(self, n: int) -> np.ndarray:
        q = np.broadcast_to(np.asarray(self.q, dtype=float), (n,))
        if np.any((q <= 0) | (q > 1)):
            raise ValueError("participation probabilities must lie in (0, 1]")
        return q

    def draw(self, u: np.ndarray) -> np.ndarray:
        return u < self.probabilities(u.shape[1])[None, :]

    def max_cdf_given(self, model: BidModel, i: int, x: float) -> float:
        """P[max participant bid <= x | bidder i participates]."""
        from .dists import cdf_eval

        q = self.probabilities(model.n)
        out = cdf_eval(model, i, x)
        for j in range(1, model.n + 1):
            if j != i:
                out *= 1.0 - q[j - 1] + q[j - 1] * cdf_eval(model, j, x)
        return out


class CorrelatedParticipation:
    """Participation drawn from an explicit distribution over subsets.

    ``subsets`` is a list of bidder-id collections and ``weights`` their
    probabilities; subsets need not be independent across bidders.
    """

    def __init__(self, subsets: Sequence[Iterable[int]], weights: Sequence[float]):
        self.subsets = [frozenset(s) for s in subsets]
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0) or any(not s for s in self.subsets):
            raise ValueError("need non-empty subsets with probabilities summing to 1")
        self.cum = np.cumsum(w)

    def draw(self, u: np.ndarray) -> np.ndarray:
        n = u.shape[1]
        table = np.zeros((len(self.subsets), n), dtype=bool)
        for k, s in enumerate(self.subsets):
            table[k, [j - 1 for j in s]] = True
        pick = np.minimum(np.searchsorted(self.cum, u[:, 0], side="right"), len(self.subsets) - 1)
        return table[pick]


def _resolve(values: np.ndarray, present: np.ndarray, reserve: np.ndarray) -> np.ndarray:
    # argmax returns the lowest index among exact ties; the reserve wins only strictly.
    masked = np.where(present, values, -np.inf)
    top = masked.max(axis=1)
    winners = masked.argmax(axis=1) + 1
    return np.where(top > reserve, winners, 0), top


def simulate_rounds(
    model: BidModel,
    key: int,
    start: int,
    count: int,
    reserve: float,
    participants: Iterable[int] | None = None,
    participation=None,
    with_bids: bool = False,
):
    """Vectorized core of the auction: rounds ``start .. start+count-1`` of batch ``key``.

    Returns ``(winners, present, top_bid)`` and, when ``with_bids``, the full
    (count, n) bid matrix as a fourth element.
    """
    n = model.n
    u = uniform_stream(key, "bids", start, count, n)
    bids = np.empty((count, n))
    for j in range(n):
        bids[:, j] = _inverse_cdf(model.cdfs[j], u[:, j])
    if participation is not None:
        present = participation.draw(uniform_stream(key, "participation", start, count, n))
    else:
        present = np.zeros((count, n), dtype=bool)
        ids = range(1, n + 1) if participants is None else participants
        for j in ids:
            if not 1 <= j <= n:
                raise ValueError(f"participant {j} outside 1..{n}")
            present[:, j - 1] = True
    winners, top = _resolve(bids, present, np.full(count, float(reserve)))
    if with_bids:
        return winners, present, top, bids
    return winners, present, top


def run_round(model: BidModel, req: RoundRequest) -> Outcome:
    """One auction round, fully determined by ``(model, req)``."""
    winners, present, top = simulate_rounds(
        model, req.round_seed.key, req.round_seed.index, 1, req.reserve, req.participants
    )
    winner = int(winners[0])
    price = None
    if req.info_mode == WINNER_AND_PRICE:
        price = float(top[0]) if winner else float(req.reserve)
    members = frozenset(int(j) + 1 for j in np.flatnonzero(present[0]))
    return Outcome(winner=winner, participants=members, winning_bid=price)


def run_batch(
    model: BidModel,
    reserve: float,
    count: int,
    participants: Iterable[int] | None = None,
    batch_seed: int = 0,
) -> np.ndarray:
    """Win tally over ids ``0..n`` for ``count`` rounds of batch ``batch_seed``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 0.0 <= reserve <= 1.0:
        raise ValueError(f"reserve {reserve} outside [0, 1]")
    winners, _, _ = simulate_rounds(model, batch_seed, 0, count, reserve, participants)
    return np.bincount(winners, minlength=model.n + 1)


def record(model: BidModel, requests: Iterable[RoundRequest]) -> Trace:
    trace = Trace(n=model.n)
    for req in requests:
        trace.append(req, run_round(model, req))
    return trace


def replay(trace: Trace, requests: Sequence[RoundRequest]) -> list[Outcome]:
    """Serve recorded outcomes for ``requests``; any divergence is an error."""
    if len(requests) != len(trace):
        k = min(len(requests), len(trace))
        raise TraceMismatch(k, f"trace has {len(trace)} rounds, {len(requests)} requested")
    out = []
    for rec, req in zip(trace, requests):
        want = rec.request
        if req.reserve != want.reserve or req.participants != want.participants:
            raise TraceMismatch(rec.index, f"request {req} does not match recorded {want}")
        if (req.info_mode == WINNER_AND_PRICE) != (rec.outcome.winning_bid is not None):
            raise TraceMismatch(rec.index, "information mode differs from the recording")
        out.append(rec.outcome)
    return out


TRACE_HEADER = "index,reserve,winner,winning_bid,participants"


def _format_set(members, everyone: bool) -> str:
    return "*" if everyone else ";".join(str(j) for j in sorted(members))


def write_trace(trace: Trace, path: str | Path) -> None:
    """Write ``index,reserve,winner,winning_bid|_,participants|*`` lines."""
    lines = [TRACE_HEADER]
    for rec in trace:
        req, out = rec.request, rec.outcome
        price = "_" if out.winning_bid is None else repr(out.winning_bid)
        lines.append(
            f"{rec.index},{req.reserve!r},{out.winner},{price},"
            f"{_format_set(out.participants, req.participants is None and _is_full(out, trace.n))}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _is_full(out: Outcome, n: int | None) -> bool:
    return n is not None and out.participants == frozenset(range(1, n + 1))


def read_trace(path: str | Path, n: int | None = None) -> Trace:
    trace = Trace(n=n)
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line == TRACE_HEADER:
            continue
        try:
            idx, reserve, winner, price, members = line.split(",")
            if int(idx) != len(trace):
                raise ValueError(f"expected round index {len(trace)}, got {idx}")
            if members == "*":
                if n is None:
                    raise ValueError("'*' participants need a known bidder count")
                parts, req_parts = frozenset(range(1, n + 1)), None
            else:
                parts = frozenset(int(j) for j in members.split(";"))
                req_parts = parts
            mode = WINNER_ONLY if price == "_" else WINNER_AND_PRICE
            req = RoundRequest(float(reserve), req_parts, mode)
            out = Outcome(int(winner), parts, None if price == "_" else float(price))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        trace.append(req, out)
    return trace


class AuctionOracle:
    """Stateful probe interface used by the estimators.

    Every call to :meth:`batch` gets the next batch index under its purpose
    tag, so a run is reproducible from ``seed`` alone.  ``rounds_used`` audits
    every auction round consumed; ``rounds_delivered`` counts the rounds
    handed back to the caller, which is smaller when a participation filter
    drops rounds.

    Parameters
    ----------
    model : BidModel
    seed : int
        Root of the seed hierarchy.
    participation : object with ``draw(u) -> bool matrix``, optional
        Random per-round participation; default is everyone, every round.
    info_mode : str
        ``WINNER_ONLY`` or ``WINNER_AND_PRICE``.
    trace : Trace, optional
        When given, every round is appended to it.
    """

    def __init__(
        self,
        model: BidModel,
        seed: int,
        participation=None,
        info_mode: str = WINNER_ONLY,
        trace: Trace | None = None,
    ):
        if info_mode not in _MODES:
            raise ValueError(f"unknown info mode {info_mode!r}")
        self.model = model
        self.n = model.n
        self.seed = int(seed)
        self.participation = participation
        self.info_mode = info_mode
        self.trace = trace
        self.rounds_used = 0
        self.rounds_delivered = 0
        self._counters: dict[str, int] = defaultdict(int)

    def _next_key(self, tag: str) -> int:
        idx = self._counters[tag]
        self._counters[tag] += 1
        return batch_key(self.seed, tag, idx)

    def _simulate(self, key, start, count, reserve):
        return simulate_rounds(self.model, key, start, count, reserve, participation=self.participation)

    def batch(self, reserve: float, count: int, tag: str = "probe") -> Batch:
        """Run ``count`` rounds at ``reserve``."""
        if count < 1:
            raise ValueError("count must be >= 1")
        if not 0.0 <= reserve <= 1.0:
            raise ValueError(f"reserve {reserve} outside [0, 1]")
        key = self._next_key(tag)
        winners, present, top = self._simulate(key, 0, count, reserve)
        self.rounds_used += count
        self.rounds_delivered += count
        price = None
        if self.info_mode == WINNER_AND_PRICE:
            price = np.where(winners > 0, top, reserve)
        self._record(reserve, winners, present, price)
        return Batch(reserve, winners, present, price, raw_rounds=count)

    def batch_with(
        self, reserve: float, count: int, bidder: int, tag: str = "probe", max_factor: float = 10.0
    ) -> Batch:
        """Run rounds until ``count`` of them include ``bidder``; keep only those.

        Raises ``RuntimeError`` when ``max_factor * count / q_hat`` raw rounds
        do not yield ``count`` retained rounds.
        """
        if count < 1:
            raise ValueError("count must be >= 1")
        key = self._next_key(tag)
        keep_w, keep_p, keep_t = [], [], []
        retained = raw = 0
        chunk = count
        while retained < count:
            winners, present, top = self._simulate(key, raw, chunk, reserve)
            hit = np.flatnonzero(present[:, bidder - 1])
            need = count - retained
            if len(hit) >= need:
                used = int(hit[need - 1]) + 1
                hit = hit[:need]
            else:
                used = chunk
            keep_w.append(winners[hit])
            keep_p.append(present[hit])
            keep_t.append(top[hit])
            retained += len(hit)
            raw += used
            q_hat = retained / raw
            if retained < count and (q_hat == 0 or raw >= max_factor * count / q_hat):
                self.rounds_used += raw
                raise RuntimeError(
                    f"participation too rare: bidder {bidder} present in {retained} of {raw} rounds"
                )
            chunk = max(1, int(np.ceil(1.2 * (count - retained) / max(q_hat, 1e-9))))
        self.rounds_used += raw
        self.rounds_delivered += count
        winners = np.concatenate(keep_w)
        present = np.concatenate(keep_p)
        price = None
        if self.info_mode == WINNER_AND_PRICE:
            price = np.where(winners > 0, np.concatenate(keep_t), reserve)
        self._record(reserve, winners, present, price)
        return Batch(reserve, winners, present, price, raw_rounds=raw)

    def _record(self, reserve, winners, present, price) -> None:
        if self.trace is None:
            return
        if self.trace.n is None:
            self.trace.n = self.n
        # With random participation the drawn subset is part of the request.
        drawn = self.participation is not None
        for r in range(len(winners)):
            members = frozenset(int(j) + 1 for j in np.flatnonzero(present[r]))
            req = RoundRequest(float(reserve), members if drawn else None, self.info_mode)
            self.trace.append(req, Outcome(int(winners[r]), members, None if price is None else float(price[r])))

    def round_requests(self) -> list[RoundRequest]:
        """Requests matching the recorded trace, for :func:`replay`."""
        if self.trace is None:
            return []
        return [rec.request for rec in self.trace]
