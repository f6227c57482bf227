import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from expertagg.dataset import Dataset
from expertagg.evaluation import (
    UndefinedScoreError,
    activity_stats,
    build_report,
    nearest_rank,
    residual_quantiles,
    rmse_convex,
    rmse_rule,
)
from expertagg.oracles import expert_scores


class TestRmse:
    def test_zero(self):
        assert rmse_rule(np.zeros(5)) == 0.0

    def test_hand(self):
        assert rmse_rule([3.0, 4.0]) == pytest.approx(np.sqrt(12.5))

    def test_constant(self):
        assert rmse_rule([-2.0] * 7) == pytest.approx(2.0)

    def test_empty(self):
        with pytest.raises(UndefinedScoreError):
            rmse_rule([])

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), st.floats(0.01, 100))
    def test_scale_equivariant(self, r, c):
        assert rmse_rule(np.asarray(r) * c) == pytest.approx(c * rmse_rule(r), rel=1e-9, abs=1e-12)


class TestRmseConvex:
    def test_dirac_is_expert(self):
        rng = np.random.default_rng(0)
        F = rng.random((20, 3))
        F[rng.random((20, 3)) < 0.3] = np.nan
        F[:, 1] = rng.random(20)
        data = Dataset(rng.random(20), F, 1.0)
        s = expert_scores(data)
        for j in range(3):
            if np.isnan(s[j]):
                continue
            assert rmse_convex(data, np.eye(3)[j]) == s[j]

    def test_all_active_reduces_to_rule(self):
        rng = np.random.default_rng(1)
        F, y = rng.random((15, 3)), rng.random(15)
        q = np.array([0.2, 0.3, 0.5])
        assert rmse_convex(Dataset(y, F, 1.0), q) == pytest.approx(rmse_rule(F @ q - y))

    def test_two_rounds(self):
        # round 1: both active, prediction 0.5, loss 0.25, weight 1
        # round 2: only expert 0, prediction 0, y=1, loss 1, weight 1/2
        data = Dataset([0.0, 1.0], [[0.0, 1.0], [0.0, np.nan]], 1.0)
        expected = np.sqrt((0.25 * 1 + 1.0 * 0.5) / 1.5)
        assert rmse_convex(data, [0.5, 0.5]) == pytest.approx(expected)

    def test_no_mass(self):
        with pytest.raises(UndefinedScoreError):
            rmse_convex(Dataset([0.0], [[0.0, np.nan]], 1.0), [0.0, 1.0])


class TestActivity:
    def test_exact_always_active(self):
        y = np.array([0.1, 0.2])
        assert activity_stats(Dataset(y, y[:, None], 1.0)) == [(0.0, 1.0)]

    def test_half_active(self):
        F = np.array([[0.1, 0.1], [np.nan, 0.1], [0.1, 0.1], [np.nan, 0.1]])
        stats = activity_stats(Dataset(np.full(4, 0.1), F, 1.0))
        assert stats[0][1] == 0.5 and len(stats) == 2


class TestQuantiles:
    def test_nearest_rank(self):
        r = np.arange(1, 11)
        assert residual_quantiles(r) == {"all": (5.0, 8.0, 9.0)}

    def test_single(self):
        assert residual_quantiles([-3.0], ["a"]) == {"a": (3.0, 3.0, 3.0)}

    def test_half_hour_groups(self):
        rng = np.random.default_rng(2)
        D = 5
        groups = [str(k % 48) for k in range(48 * D)]
        q = residual_quantiles(rng.standard_normal(48 * D), groups)
        assert len(q) == 48 and all(len(v) == 3 for v in q.values())
        assert all(a <= b <= c for a, b, c in q.values())

    def test_nearest_rank_edges(self):
        assert nearest_rank([4.0, 1.0], 1) == 1.0
        assert nearest_rank([4.0, 1.0], 100) == 4.0
        with pytest.raises(ValueError):
            nearest_rank([], 50)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
    def test_monotone(self, r):
        a, b, c = residual_quantiles(r)["all"]
        assert a <= b <= c


class TestReport:
    def test_fields(self):
        data = Dataset([0.0, 1.0, 0.5], [[0.0, 1.0], [1.0, np.nan], [0.5, 0.5]], 1.0)
        W = np.array([[0.5, 0.5], [1.0, 0.0], [0.0, 1.0]])
        rep = build_report("x", data, W)
        np.testing.assert_allclose(rep.predictions, [0.5, 1.0, 0.5])
        np.testing.assert_allclose(rep.residuals, [0.5, 0.0, 0.0])
        np.testing.assert_allclose(rep.regrets, [0.25 + 0 + 0, 0.25 - 1.0 + 0])
        assert rep.rmse == pytest.approx(np.sqrt(0.25 / 3))
        assert rep.T == 3 and rep.N == 2

    def test_non_square_has_no_rmse(self):
        data = Dataset([0.5], [[0.4]], 1.0)
        rep = build_report("x", data, np.array([[1.0]]), "absolute")
        assert rep.rmse is None and rep.mean_loss == pytest.approx(0.1)
