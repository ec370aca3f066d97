import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from censored_auction.baseline_km import FullInfoSample, km_conditional_chain, km_estimate, write_km_csv
from censored_auction.oracle import WINNER_AND_PRICE, AuctionOracle, Trace


@pytest.fixture
def three_rounds():
    # Sorted bids 0.2, 0.5, 0.8 won by bidders 1, 2, 1 (given out of order).
    return FullInfoSample([0.8, 0.2, 0.5], [1, 1, 2])


class TestKmEstimate:
    def test_lowest_win_zeroes(self, three_rounds):
        assert km_estimate(three_rounds, 1)(0.1) == 0.0

    def test_between(self, three_rounds):
        assert km_estimate(three_rounds, 1)(0.6) == pytest.approx(2 / 3)

    def test_above_all(self, three_rounds):
        assert km_estimate(three_rounds, 1)(0.9) == 1.0

    def test_never_wins(self, three_rounds):
        est = km_estimate(three_rounds, 3)
        np.testing.assert_array_equal(est(np.linspace(0, 1, 11)), np.ones(11))

    def test_jump_points(self, three_rounds):
        np.testing.assert_array_equal(km_estimate(three_rounds, 1).points, [0.2, 0.8])

    def test_empty(self):
        with pytest.raises(ValueError):
            km_estimate(FullInfoSample([], []), 1)

    def test_invalid_sample(self):
        with pytest.raises(ValueError):
            FullInfoSample([0.5, 1.2], [1, 2])
        with pytest.raises(ValueError):
            FullInfoSample([0.5], [0])

    def test_monotone_and_bounded(self, rng):
        sample = FullInfoSample(rng.random(500), rng.integers(1, 4, 500))
        vals = km_estimate(sample, 2)(np.linspace(0, 1, 2001))
        assert np.all(np.diff(vals) >= 0) and vals.min() >= 0 and vals.max() <= 1

    def test_ties_keep_round_order(self):
        sample = FullInfoSample([0.5, 0.5], [2, 1])
        # Bidder 1's tied round ranks second: factor 1/2.
        assert km_estimate(sample, 1)(0.5) == pytest.approx(0.5)
        assert km_estimate(sample, 2)(0.5) == 0.0


class TestChain:
    def test_single_round(self):
        sample = FullInfoSample([0.4], [1])
        assert km_conditional_chain(sample, 1, 0.3) == 0.0
        assert km_conditional_chain(sample, 2, 0.3) == 1.0

    @settings(max_examples=100, deadline=None)
    @given(
        bids=st.lists(st.floats(0, 1), min_size=1, max_size=40),
        seed=st.integers(0, 1000),
        x=st.floats(0, 1),
    )
    def test_equals_product(self, bids, seed, x):
        winners = np.random.default_rng(seed).integers(1, 3, len(bids))
        sample = FullInfoSample(bids, winners)
        for i in (1, 2):
            est = km_estimate(sample, i)
            assert km_conditional_chain(sample, i, x) == pytest.approx(est(x), abs=1e-12)
            for p in sample.bids:
                assert km_conditional_chain(sample, i, p) == pytest.approx(est(p), abs=1e-12)


class TestFromTrace:
    def test_round_trip(self, uniform2, tmp_path):
        trace = Trace()
        batch = AuctionOracle(uniform2, 4, info_mode=WINNER_AND_PRICE, trace=trace).batch(0.0, 200)
        sample = FullInfoSample.from_trace(trace)
        np.testing.assert_array_equal(sample.bids, batch.winning_bid)
        est = km_estimate(sample, 1)
        write_km_csv(est, tmp_path / "km.csv", truth=lambda x: x)
        lines = (tmp_path / "km.csv").read_text().splitlines()
        assert lines[0] == "bidder,lattice_point,estimate,true_cdf"
        assert len(lines) == 1 + int(np.sum(batch.winners == 1))

    def test_drops_reserve_wins(self, uniform2):
        trace = Trace()
        AuctionOracle(uniform2, 4, info_mode=WINNER_AND_PRICE, trace=trace).batch(0.5, 100)
        sample = FullInfoSample.from_trace(trace)
        assert len(sample) == sum(r.outcome.winner > 0 for r in trace)

    def test_needs_prices(self, uniform2):
        trace = Trace()
        AuctionOracle(uniform2, 4, trace=trace).batch(0.0, 5)
        with pytest.raises(ValueError, match="without the winning bid"):
            FullInfoSample.from_trace(trace)
