"""Ground-truth distributions and their exact probability oracles.

Quadrature-based oracles are cross-checked against scipy's adaptive
``quad``, an independent integration method.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from censored_auction.dists import (
    BidModel,
    InvalidModel,
    cdf_eval,
    conditional_bid_mass,
    dump_model,
    exact_conditional_win,
    expected_max,
    load_model,
    max_cdf,
    p_gamma,
    parse_model,
    random_model,
    sample_bid,
    uniform_model,
    validate,
    win_mass,
)


def _quad_win_mass(model, i, a, b):
    """Independent oracle: adaptive quadrature split at every breakpoint."""
    others = [j for j in range(1, model.n + 1) if j != i]
    xs, fs = model.xs(i), model.fs(i)
    total = 0.0
    for k in range(len(xs) - 1):
        lo, hi = max(a, xs[k]), min(b, xs[k + 1])
        if hi <= lo or xs[k + 1] == xs[k]:
            continue
        slope = (fs[k + 1] - fs[k]) / (xs[k + 1] - xs[k])
        pts = [p for p in model.breakpoints() if lo < p < hi]
        val, _ = quad(
            lambda x: slope * np.prod([cdf_eval(model, j, x) for j in others]), lo, hi, points=pts or None, epsabs=1e-13
        )
        total += val
    return total


class TestValidate:
    def test_uniform_ok(self):
        validate(uniform_model(3))

    def test_point_mass_is_a_jump(self):
        model = BidModel([[(0, 0), (0.5, 0.2), (0.5, 0.6), (1, 1)]], lipschitz=10)
        with pytest.raises(InvalidModel, match="jump at 0.5") as info:
            validate(model)
        assert info.value.kind == "jump" and info.value.bidder == 1

    def test_slope_above_declared_bound(self):
        with pytest.raises(InvalidModel, match="slope 1 > L=0.5"):
            validate(BidModel([[(0, 0), (1, 1)]], lipschitz=0.5))

    @pytest.mark.parametrize(
        "pts, kind",
        [
            ([(0, 0.1), (1, 1)], "endpoint"),
            ([(0, 0), (0.9, 1), (1, 0.9)], "endpoint"),
            ([(0, 0), (0.6, 0.5), (0.4, 0.6), (1, 1)], "order"),
            ([(0, 0), (0.3, 0.5), (0.6, 0.4), (1, 1)], "decreasing"),
            ([(0, 0), (1.2, 1)], "range"),
        ],
    )
    def test_names_first_violation(self, pts, kind):
        model = BidModel([[(0, 0), (1, 1)], pts], lipschitz=5)
        with pytest.raises(InvalidModel) as info:
            validate(model)
        assert info.value.kind == kind
        assert info.value.bidder == 2

    def test_flat_segments_allowed(self):
        validate(BidModel([[(0, 0), (0.3, 0.0), (0.6, 1.0), (1, 1)]], lipschitz=10 / 3))


class TestCdfEval:
    def test_uniform(self):
        assert cdf_eval(uniform_model(1), 1, 0.3) == pytest.approx(0.3)

    def test_interpolation(self, kinked):
        assert cdf_eval(kinked, 1, 0.25) == pytest.approx(0.4, abs=1e-15)

    def test_exact_at_breakpoints(self, kinked):
        assert cdf_eval(kinked, 1, 0.5) == 0.8
        assert cdf_eval(kinked, 1, 1.0) == 1.0

    def test_rejects_out_of_range(self, kinked):
        with pytest.raises(ValueError):
            cdf_eval(kinked, 1, 1.5)
        with pytest.raises(ValueError):
            cdf_eval(kinked, 2, 0.5)

    def test_non_decreasing_on_grid(self, rng):
        for _ in range(20):
            model = random_model(rng, 3, flat_prob=0.3)
            grid = np.linspace(0, 1, 1000)
            for i in range(1, 4):
                assert np.all(np.diff(cdf_eval(model, i, grid)) >= 0)


class TestSampleBid:
    def test_uniform_identity(self):
        assert sample_bid(uniform_model(1), 1, 0.7) == pytest.approx(0.7)

    def test_inverts_interpolation(self, kinked):
        assert sample_bid(kinked, 1, 0.4) == pytest.approx(0.25)

    def test_top_endpoint(self, kinked):
        assert sample_bid(kinked, 1, 1.0) == 1.0

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), u=st.floats(0.001, 0.999))
    def test_round_trip(self, seed, u):
        model = random_model(np.random.default_rng(seed), 1, flat_prob=0.3)
        assert cdf_eval(model, 1, sample_bid(model, 1, u)) == pytest.approx(u, abs=1e-12)

    def test_empirical_frequency(self, asymmetric3):
        u = np.random.default_rng(5).random(100_000)
        grid = np.linspace(0.05, 0.95, 20)
        for i in range(1, 4):
            draws = np.sort(sample_bid(asymmetric3, i, u))
            emp = np.searchsorted(draws, grid, side="right") / len(draws)
            assert np.max(np.abs(emp - cdf_eval(asymmetric3, i, grid))) <= 0.01


class TestMaxCdf:
    def test_product(self):
        assert max_cdf(uniform_model(2), [1, 2], 0.5) == pytest.approx(0.25)
        assert max_cdf(uniform_model(3), [1, 2, 3], 0.9) == pytest.approx(0.729)

    def test_single(self, asymmetric3):
        assert max_cdf(asymmetric3, [2], 0.3) == cdf_eval(asymmetric3, 2, 0.3)

    def test_empty_rejected(self, asymmetric3):
        with pytest.raises(ValueError):
            max_cdf(asymmetric3, [], 0.3)

    def test_definition(self, rng):
        model = random_model(rng, 4)
        for x in np.linspace(0, 1, 11):
            want = np.prod([cdf_eval(model, j, x) for j in (1, 3, 4)])
            assert max_cdf(model, [1, 3, 4], x) == pytest.approx(want, rel=1e-15, abs=0)


class TestPGamma:
    @pytest.mark.parametrize("n, gamma, want", [(2, 0.25, 0.5), (1, 0.1, 0.1), (3, 1.0, 1.0), (2, 0.05, np.sqrt(0.05))])
    def test_uniform(self, n, gamma, want):
        assert p_gamma(uniform_model(n), gamma) == pytest.approx(want, abs=2e-9)

    def test_custom_law(self):
        assert p_gamma(uniform_model(1), 0.25, max_cdf_fn=lambda p: p**2) == pytest.approx(0.5, abs=2e-9)


class TestConditionalWin:
    def test_two_uniform_upper_half(self):
        assert exact_conditional_win(uniform_model(2), 1, 0.5, 1.0) == pytest.approx(0.375, abs=1e-12)

    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_symmetry(self, n):
        assert exact_conditional_win(uniform_model(n), 1, 0.0, 1.0) == pytest.approx(1 / n, abs=1e-12)

    def test_degenerate_interval(self):
        with pytest.raises(ValueError):
            exact_conditional_win(uniform_model(2), 1, 0.5, 0.5)

    def test_matches_adaptive_quadrature(self, rng):
        for _ in range(30):
            model = random_model(rng, int(rng.integers(1, 5)), flat_prob=0.2)
            a, b = np.sort(rng.uniform(0, 1, 2))
            i = int(rng.integers(1, model.n + 1))
            assert win_mass(model, i, a, b) == pytest.approx(_quad_win_mass(model, i, a, b), rel=1e-6, abs=1e-12)

    def test_total_probability(self, rng):
        for _ in range(10):
            model = random_model(rng, 3)
            cuts = np.linspace(0, 1, 41)
            total = sum(win_mass(model, i, lo, hi) for i in range(1, 4) for lo, hi in zip(cuts[:-1], cuts[1:]))
            assert total / max_cdf(model, [1, 2, 3], 1.0) == pytest.approx(1.0, abs=1e-5)
            assert sum(exact_conditional_win(model, i, 0.0, 1.0) for i in range(1, 4)) == pytest.approx(1.0, abs=1e-5)

    def test_conditional_bid_mass(self):
        assert conditional_bid_mass(uniform_model(1), 1, 0.25, 0.5) == pytest.approx(0.5)


def test_expected_max_uniform():
    for n in (1, 2, 10):
        assert expected_max(uniform_model(n)) == pytest.approx(n / (n + 1), abs=1e-12)


class TestModelFiles:
    def test_round_trip(self, tmp_path, rng):
        model = random_model(rng, 3, flat_prob=0.2)
        path = tmp_path / "m.txt"
        path.write_text(dump_model(model))
        back = load_model(path)
        assert back.lipschitz == model.lipschitz
        for a, b in zip(model.cdfs, back.cdfs):
            np.testing.assert_array_equal(a, b)

    def test_comments_and_blank_lines(self):
        text = "# header\nn 1\n\nlipschitz 1  # bound\nbidder 1\npoint 0 0\npoint 1 1\n"
        assert parse_model(text).n == 1

    def test_error_has_line_number(self):
        with pytest.raises(ValueError, match="m.txt:3"):
            parse_model("n 1\nlipschitz 1\npoint 0 0\n", "m.txt")

    def test_missing_bidder(self):
        with pytest.raises(ValueError, match="expected bidders 1..2"):
            parse_model("n 2\nlipschitz 1\nbidder 1\npoint 0 0\npoint 1 1\n")

    def test_load_validates(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("n 1\nlipschitz 0.5\nbidder 1\npoint 0 0\npoint 1 1\n")
        with pytest.raises(InvalidModel):
            load_model(path)
