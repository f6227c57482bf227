import math

import numpy as np
import pytest

from bruteforce import compound_mixture, legal_compounds, naive_ewa, random_rounds
from expertagg.core import Bounds, ContractError, ForecastRound, StateError
from expertagg.rules import (
    EWA,
    FixedShare,
    RegretLedger,
    Specialist,
    ewa_step,
    fixed_share_bound,
    fixed_share_step,
    gradientize,
    make_rule,
    regret_bound,
    regret_vs_compound,
    regret_vs_convex,
    regret_vs_expert,
    run_rule,
    share_update,
    specialist_step,
    theoretical_optimal_eta,
)

E1 = 1.0 / (1.0 + math.exp(-1.0))
TWO_ROUND = (E1, 1.0 - E1)  # weights after one round with f=(0,1), y=0, eta=1


def _fixed_active(rng, T, N):
    F = rng.random((T, N))
    y = rng.random(T)
    return [ForecastRound(t + 1, F[t], float(y[t])) for t in range(T)]


class TestEWA:
    def test_first_round_uniform(self):
        w, _ = ewa_step(EWA(2, 1.0), ForecastRound(1, [0.0, 1.0]))
        np.testing.assert_allclose(w, [0.5, 0.5])

    def test_one_round_regrets_and_weights(self):
        s = EWA(2, 1.0)
        _, s = ewa_step(s, ForecastRound(1, [0.0, 1.0], 0.0))
        np.testing.assert_allclose(s.regrets, [0.25, -0.75])
        w, _ = ewa_step(s, ForecastRound(2, [0.0, 1.0]))
        np.testing.assert_allclose(w, TWO_ROUND, atol=1e-12)

    def test_step_does_not_mutate_input(self):
        s = EWA(2, 1.0)
        ewa_step(s, ForecastRound(1, [0.0, 1.0], 0.0))
        assert s.t == 0 and np.all(s.regrets == 0)

    def test_tiny_eta_uniform(self):
        rng = np.random.default_rng(3)
        rounds = random_rounds(rng, 50, 4)
        W = run_rule(EWA(4, 1e-12), rounds)
        for w, r in zip(W, rounds):
            np.testing.assert_allclose(w[r.active], 1.0 / r.active.sum(), atol=1e-6)

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(4)
        rounds = random_rounds(rng, 60, 4)
        F = np.array([r.forecasts for r in rounds])
        y = np.array([r.observation for r in rounds])
        prior = np.array([0.1, 0.2, 0.3, 0.4])
        W = run_rule(EWA(4, 2.0, prior=prior), rounds)
        np.testing.assert_allclose(W, naive_ewa(F, y, 2.0, prior), atol=1e-12)

    def test_regrets_only_for_active(self):
        s = EWA(3, 1.0)
        s.step(ForecastRound(1, [0.0, np.nan, 1.0], 0.0))
        assert s.regrets[1] == 0.0

    def test_empty_active_set(self):
        with pytest.raises(ContractError):
            EWA(2, 1.0).predict(ForecastRound(1, [np.nan, np.nan]))

    def test_missing_observation(self):
        s = EWA(2, 1.0)
        s.predict(ForecastRound(1, [0.0, 1.0]))
        with pytest.raises(StateError):
            s.update(ForecastRound(1, [0.0, 1.0]))

    def test_rounds_must_increase(self):
        s = EWA(2, 1.0)
        s.step(ForecastRound(1, [0.0, 1.0], 0.0))
        with pytest.raises(StateError):
            s.predict(ForecastRound(1, [0.0, 1.0]))

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            EWA(2, 0.0)
        with pytest.raises(ValueError):
            FixedShare(2, 1.0, 1.5)
        with pytest.raises(ValueError):
            make_rule("fixed-share", 2, 1.0)
        with pytest.raises(ValueError):
            make_rule("hedge", 2, 1.0)


class TestSpecialist:
    def test_single_active_unchanged(self):
        s = Specialist(2, 1.0)
        w1, s = specialist_step(s, ForecastRound(1, [0.3, np.nan], 0.9))
        np.testing.assert_allclose(np.exp(s.log_weights), [0.5, 0.5])
        w2, _ = specialist_step(s, ForecastRound(2, [0.3, 0.5]))
        np.testing.assert_allclose(w2, [0.5, 0.5])

    def test_one_round(self):
        s = Specialist(2, 1.0)
        _, s = specialist_step(s, ForecastRound(1, [0.0, 1.0], 0.0))
        w, _ = specialist_step(s, ForecastRound(2, [0.0, 1.0]))
        np.testing.assert_allclose(w, TWO_ROUND, atol=1e-12)

    def test_shift_invariance(self):
        # adding a constant to both losses = shifting both forecasts symmetrically around y
        a = Specialist(2, 1.0, loss="absolute")
        b = Specialist(2, 1.0, loss="absolute")
        a.step(ForecastRound(1, [0.0, 1.0], 2.0))   # losses (2, 1)
        b.step(ForecastRound(1, [1.0, 2.0], 2.0))   # losses (1, 0)
        np.testing.assert_allclose(np.exp(a.log_weights), np.exp(b.log_weights), atol=1e-12)

    def test_mass_of_inactive_preserved(self):
        s = Specialist(3, 2.0)
        s.step(ForecastRound(1, [0.1, 0.9, np.nan], 0.0))
        assert np.exp(s.log_weights[2]) == pytest.approx(1 / 3, abs=1e-12)
        assert np.exp(s.log_weights).sum() == pytest.approx(1.0, abs=1e-12)


class TestFixedShare:
    def test_share_full_mixing(self):
        w, tot = share_update(np.array([0.6, 0.4]), np.array([True, True]), np.array([True, True]), 1.0)
        np.testing.assert_allclose(w, [0.5, 0.5])
        assert tot == pytest.approx(1.0)

    def test_share_moving_active_set(self):
        w, tot = share_update(np.array([0.6, 0.4, 0.0]), np.array([True, True, False]),
                              np.array([False, True, True]), 0.5)
        np.testing.assert_allclose(w, [0.0, 0.6, 0.4])
        assert tot == pytest.approx(1.0)

    def test_share_zero_alpha_identity(self):
        v = np.array([0.2, 0.5, 0.3])
        m = np.ones(3, dtype=bool)
        w, _ = share_update(v, m, m, 0.0)
        np.testing.assert_array_equal(w, v)

    def test_first_round_prior_on_active(self):
        s = FixedShare(3, 1.0, 0.1, prior=[0.5, 0.25, 0.25])
        w = s.predict(ForecastRound(1, [0.0, np.nan, 1.0]))
        np.testing.assert_allclose(w, [2 / 3, 0, 1 / 3])

    def test_step_uses_next_active(self):
        s = FixedShare(3, 1.0, 0.5)
        _, s = fixed_share_step(s, ForecastRound(1, [0.0, 0.0, np.nan], 0.0), [1, 2])
        np.testing.assert_allclose(np.exp(s.log_weights), [0.0, 0.625, 0.375])

    @pytest.mark.parametrize("eta", [0.1, 1.0, 5.0])
    @pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
    def test_matches_compound_mixture(self, eta, alpha):
        rng = np.random.default_rng(int(eta * 10 + alpha * 100))
        for _ in range(5):
            T, N = 5, 3
            rounds = random_rounds(rng, T + 1, N)
            s = FixedShare(N, eta, alpha)
            losses, sets, raw = [], [], []
            for t in range(T):
                s.predict(rounds[t].hidden())
                s.update(rounds[t], rounds[t + 1].active)
                losses.append(np.nan_to_num((rounds[t].forecasts - rounds[t].observation) ** 2))
                sets.append(set(rounds[t].members))
                raw.append(s.raw_weights())
            sets.append(set(rounds[T].members))
            np.testing.assert_allclose(raw, compound_mixture(losses, sets, eta, alpha), atol=1e-12, rtol=1e-10)

    def test_alpha_zero_equals_ewa(self):
        rng = np.random.default_rng(5)
        rounds = _fixed_active(rng, 300, 4)
        np.testing.assert_allclose(run_rule(FixedShare(4, 3.0, 0.0), rounds),
                                   run_rule(EWA(4, 3.0), rounds), atol=1e-9)

    def test_raw_mass_tracks_losses(self):
        s = FixedShare(2, 1.0, 0.2)
        s.step(ForecastRound(1, [0.0, 1.0], 0.0))
        assert s.raw_weights().sum() == pytest.approx(0.5 + 0.5 * math.exp(-1.0))


class TestEquivalences:
    def test_ewa_specialist_agree_when_all_active(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            rounds = _fixed_active(rng, 200, int(rng.integers(2, 6)))
            n = rounds[0].n_experts
            eta = float(rng.choice([0.1, 1.0, 5.0]))
            np.testing.assert_allclose(run_rule(EWA(n, eta), rounds),
                                       run_rule(Specialist(n, eta), rounds), atol=1e-9)

    def test_support_and_convexity(self):
        rng = np.random.default_rng(8)
        rounds = random_rounds(rng, 1000, 5)
        for rule in (EWA(5, 2.0), Specialist(5, 2.0), FixedShare(5, 2.0, 0.1),
                     EWA(5, 2.0, gradient=True), FixedShare(5, 2.0, 0.1, gradient=True)):
            W = run_rule(rule, rounds)
            act = np.array([r.active for r in rounds])
            assert np.all(W >= 0)
            assert np.all(W[~act] == 0)
            np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-9)


class TestGradient:
    def test_perfect_prediction_no_op(self):
        s = EWA(2, 1.0, gradient=True)
        s.step(ForecastRound(1, [0.0, 1.0], 0.5))
        np.testing.assert_array_equal(s.regrets, [0.0, 0.0])

    def test_one_round(self):
        s = EWA(2, 1.0, gradient=True)
        s.step(ForecastRound(1, [0.0, 1.0], 0.0))
        w = s.predict(ForecastRound(2, [0.0, 1.0]))
        np.testing.assert_allclose(w, TWO_ROUND, atol=1e-12)

    def test_idempotent(self):
        s = gradientize(gradientize(Specialist(2, 1.0)))
        assert s.gradient
        assert gradientize(s).gradient

    def test_gradientize_copies(self):
        s = EWA(2, 1.0)
        g = gradientize(s)
        assert not s.gradient and g.gradient


class TestRegrets:
    def _history(self):
        r = ForecastRound(1, [0.0, 1.0], 0.0)
        return [(np.array([0.5, 0.5]), r), (np.array([0.5, 0.5]), ForecastRound(2, [0.0, 1.0], 0.0))]

    def test_expert_hand_sum(self):
        assert regret_vs_expert(self._history(), 0) == pytest.approx(0.5)

    def test_copying_rule(self):
        h = [(np.array([1.0, 0.0]), ForecastRound(1, [0.3, 0.7], 0.1))]
        assert regret_vs_expert(h, 0) == 0.0

    def test_never_active(self):
        h = [(np.array([1.0, 0.0]), ForecastRound(1, [0.3, np.nan], 0.1))]
        assert regret_vs_expert(h, 1) == 0.0

    def test_convex_dirac_is_expert(self):
        rng = np.random.default_rng(2)
        rounds = random_rounds(rng, 30, 3)
        W = run_rule(EWA(3, 1.0), rounds)
        h = list(zip(W, rounds))
        for j in range(3):
            assert regret_vs_convex(h, np.eye(3)[j]) == pytest.approx(regret_vs_expert(h, j), abs=1e-12)

    def test_convex_no_mass(self):
        h = [(np.array([1.0, 0.0]), ForecastRound(1, [0.3, np.nan], 0.1))]
        assert regret_vs_convex(h, [0.0, 1.0]) == 0.0

    def test_convex_hand(self):
        h = [(np.array([1.0, 0.0]), ForecastRound(1, [0.0, 1.0], 0.0))]
        assert regret_vs_convex(h, [0.5, 0.5]) == pytest.approx(-0.25)

    def test_compound_illegal(self):
        h = [(np.array([1.0, 0.0]), ForecastRound(1, [0.3, np.nan], 0.1))]
        with pytest.raises(ContractError):
            regret_vs_compound(h, [1])

    def test_ledger_matches_functions(self):
        rng = np.random.default_rng(9)
        rounds = random_rounds(rng, 40, 3)
        W = run_rule(Specialist(3, 1.0), rounds)
        led = RegretLedger(3)
        for w, r in zip(W, rounds):
            led.record(w, r)
        h = list(zip(W, rounds))
        np.testing.assert_allclose(led.regrets, [regret_vs_expert(h, j) for j in range(3)], atol=1e-12)
        q = np.array([0.2, 0.5, 0.3])
        # linearization upper-bounds the regret only when every round is fully active
        rounds = _fixed_active(rng, 40, 3)
        W = run_rule(EWA(3, 1.0), rounds)
        led = RegretLedger(3)
        for w, r in zip(W, rounds):
            led.record(w, r)
        assert regret_vs_convex(list(zip(W, rounds)), q) <= led.linearized_regret(q) + 1e-12


class TestTheory:
    b = Bounds.for_square_loss(1020.0)

    @pytest.mark.parametrize("kind, target", [("ewa", 8e-8), ("specialist-gradient", 4e-8),
                                              ("ewa-gradient", 2e-8)])
    def test_optimal_eta_constants(self, kind, target):
        eta = theoretical_optimal_eta(kind, 35, 1095, self.b)
        assert target / 1.05 <= eta <= target * 1.05

    def test_optimal_eta_minimizes_bound(self):
        eta = theoretical_optimal_eta("specialist", 10, 500, Bounds(1.0, 1.0, 2.0))
        best = regret_bound("specialist", 10, 500, eta, 1.0)
        for f in (0.5, 0.9, 1.1, 2.0):
            assert regret_bound("specialist", 10, 500, eta * f, 1.0) >= best

    def test_single_expert_rejected(self):
        with pytest.raises(ValueError):
            theoretical_optimal_eta("ewa", 1, 10, self.b)

    def test_fixed_share_bound_alpha_zero(self):
        assert fixed_share_bound(3, 10, 1, 1.0, 0.0, 1.0) == math.inf
        assert fixed_share_bound(3, 10, 0, 1.0, 0.0, 1.0) == pytest.approx(math.log(3) + 10 / 8)

    def test_ewa_bound_holds(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            rounds = random_rounds(rng, 100, 4)
            for eta in (0.01, 0.1, 1.0):
                W = run_rule(EWA(4, eta), rounds)
                h = list(zip(W, rounds))
                worst = max(regret_vs_expert(h, j) for j in range(4))
                assert worst <= regret_bound("ewa", 4, 100, eta, 1.0)

    def test_fixed_share_bound_holds(self):
        rng = np.random.default_rng(12)
        T, N = 8, 3
        for _ in range(10):
            rounds = random_rounds(rng, T, N)
            act = np.array([r.active for r in rounds])
            for alpha in (0.1, 0.3):
                W = run_rule(FixedShare(N, 1.0, alpha), rounds)
                h = list(zip(W, rounds))
                for m in range(3):
                    bound = fixed_share_bound(N, T, m, 1.0, alpha, 1.0)
                    for seq in legal_compounds(act, m):
                        assert regret_vs_compound(h, seq) <= bound
