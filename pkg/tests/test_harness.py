from dataclasses import replace

import numpy as np
import pytest

from censored_auction.dists import p_gamma, uniform_model
from censored_auction.harness import (
    ConfigError,
    load_config,
    marginal_bid_mean,
    parse_config,
    run_experiment,
    sup_error,
    winning_bid_mean,
    with_overrides,
)
from conftest import CONFIGS


class _Exact:
    """Estimate that returns a fixed function of the point."""

    def __init__(self, fn, bidder=1):
        self.fn, self.bidder, self.points = fn, bidder, np.array([0.5])

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))


class TestSupError:
    def test_zero_for_truth(self, uniform2):
        rep = sup_error(_Exact(lambda x: x), uniform2, 0.1, tolerance=0.0)
        assert rep.sup_error == pytest.approx(0.0, abs=1e-15) and rep.passed

    def test_tolerance_threshold(self, uniform2):
        est = _Exact(lambda x: x + 0.1)
        assert sup_error(est, uniform2, 0.1).sup_error == pytest.approx(0.1)
        assert sup_error(est, uniform2, 0.1, tolerance=0.1 + 1e-12).passed
        assert not sup_error(est, uniform2, 0.1, tolerance=0.1 - 1e-12).passed

    def test_ignores_region_below_p_gamma(self, uniform2):
        pg = p_gamma(uniform2, 0.1)
        rep = sup_error(_Exact(lambda x: np.where(x < pg - 1e-9, 1.0, x)), uniform2, 0.1)
        assert rep.sup_error == pytest.approx(0.0, abs=1e-12)
        assert rep.p_gamma == pytest.approx(np.sqrt(0.1))
        assert rep.passed is None

    def test_signed_errors_at_points(self, uniform2):
        rep = sup_error(_Exact(lambda x: x - 0.02), uniform2, 0.1)
        np.testing.assert_allclose(rep.signed_errors, [-0.02])


class TestSanityMeans:
    @pytest.mark.parametrize("n", [1, 2, 10])
    def test_winning_bid(self, n):
        assert winning_bid_mean(uniform_model(n), 100_000, seed=0) == pytest.approx(n / (n + 1), abs=0.01)

    def test_marginal(self):
        assert marginal_bid_mean(uniform_model(3), 2, 100_000, seed=0) == pytest.approx(0.5, abs=0.005)


class TestConfig:
    def _text(self, **extra):
        base = {"scenario": "core", "model": "models/uniform2.txt", "seeds": "0..2", "out": "x"}
        base.update(extra)
        return "\n".join(f"{k} = {v}" for k, v in base.items())

    def test_shipped_configs_load(self):
        for path in sorted(CONFIGS.glob("*.cfg")):
            cfg = load_config(path)
            assert cfg.seeds == tuple(range(10))

    def test_seed_forms(self):
        cfg = parse_config(self._text(seeds="1, 4..6, 9"), base=CONFIGS)
        assert cfg.seeds == (1, 4, 5, 6, 9)

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# head\n\n" + self._text(budget="500  # trailing"), base=CONFIGS)
        assert cfg.budget == 500

    @pytest.mark.parametrize(
        "line, message",
        [
            ("budgett = 5", "unknown key 'budgett'"),
            ("budget = lots", "bad value for budget"),
            ("gamma = 1.5", "gamma must lie in"),
            ("just text", "expected 'key = value'"),
            ("scenario = core", "duplicate key"),
        ],
    )
    def test_errors_name_the_line(self, line, message):
        text = self._text() + "\n" + line
        with pytest.raises(ConfigError, match=message) as info:
            parse_config(text, "exp.cfg", base=CONFIGS)
        assert info.value.lineno == 5
        assert "exp.cfg:5" in str(info.value)

    def test_unknown_scenario_lists_choices(self):
        with pytest.raises(ConfigError, match="core, subsets, km-baseline, linear, common"):
            parse_config(self._text(scenario="magic"), base=CONFIGS)

    def test_missing_model_file(self):
        with pytest.raises(ConfigError, match="does not exist") as info:
            parse_config(self._text(model="models/nope.txt"), base=CONFIGS)
        assert info.value.lineno == 2

    def test_model_required(self):
        with pytest.raises(ConfigError, match="needs a model"):
            parse_config("scenario = core\nseeds = 0\nout = x", base=CONFIGS)

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="missing required key 'out'"):
            parse_config("scenario = linear\nseeds = 0")

    def test_default_tolerance_is_epsilon(self):
        assert parse_config(self._text(epsilon=0.2), base=CONFIGS).tol == 0.2

    def test_overrides(self, tmp_path):
        cfg = parse_config(self._text(min_pass=3), base=CONFIGS)
        new = with_overrides(cfg, seed=7, out=tmp_path, budget=99)
        assert new.seeds == (7,) and new.required_passes == 1 and new.budget == 99 and new.out == tmp_path


def _small(name, out, **changes):
    cfg = with_overrides(load_config(CONFIGS / name), out=out)
    return replace(cfg, seeds=(0, 1), min_pass=None, **changes)


SMALL = {
    "core_uniform2.cfg": dict(budget=3000),
    "subsets_uniform2.cfg": dict(budget=3000),
    "km_uniform2.cfg": dict(rounds=5000),
    "linear.cfg": dict(rounds=2000, holdout=1000),
    "common.cfg": dict(budget=3000, m_regression=5000, holdout=1000),
}


class TestRunExperiment:
    @pytest.mark.parametrize("name", sorted(SMALL))
    def test_runs_and_is_deterministic(self, name, tmp_path):
        first = run_experiment(_small(name, tmp_path / "a", **SMALL[name]))
        run_experiment(_small(name, tmp_path / "b", **SMALL[name]))
        assert all(res.error is None for res in first.seeds), [r.error for r in first.seeds]
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert "summary.csv" in files
        for fname in files:
            assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes(), fname

    def test_summary_layout(self, tmp_path):
        result = run_experiment(_small("core_uniform2.cfg", tmp_path, budget=3000))
        lines = (tmp_path / "summary.csv").read_text().splitlines()
        assert lines[0] == "seed,bidder,metric,value,passed"
        assert lines[-1] == f"all,0,seeds_passed,{result.passes},{result.passed}"
        assert any(",sup_error," in line for line in lines)

    def test_estimate_csv(self, tmp_path):
        run_experiment(_small("core_uniform2.cfg", tmp_path, budget=3000))
        rows = (tmp_path / "estimate_seed0.csv").read_text().splitlines()
        assert rows[0] == "bidder,lattice_point,estimate,true_cdf"
        vals = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
        assert set(vals[:, 0]) == {1.0, 2.0}
        np.testing.assert_allclose(vals[:, 3], vals[:, 1])

    def test_failing_seed_is_recorded(self, tmp_path):
        # A tiny batch makes the conditioning event unobservable.
        result = run_experiment(_small("core_uniform2.cfg", tmp_path, budget=1))
        assert all(res.error is not None for res in result.seeds)
        assert not result.passed or result.config.required_passes == 0
        text = (tmp_path / "summary.csv").read_text()
        assert ",error," in text
