import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from basinlab.errors import InvalidParameter
from basinlab.game import Action, Signal, signal_of
from basinlab.simulator import substream
from basinlab.strategies import (
    Mixture,
    StrategyKind,
    fresh_state,
    next_action,
    sample_strategy,
    update_state,
)

C, D, S, F = Action.C, Action.D, Signal.S, Signal.F


def test_next_action_basics():
    assert next_action(fresh_state(StrategyKind.GRIM)) is C
    assert next_action(fresh_state(StrategyKind.ALL_D)) is D
    triggered = update_state(fresh_state(StrategyKind.GRIM), C, F)
    assert next_action(triggered) is D


def test_update_state_grim():
    grim = fresh_state(StrategyKind.GRIM)
    assert not update_state(grim, C, S).triggered
    assert update_state(grim, C, F).triggered
    assert update_state(grim, D, S).triggered
    already = update_state(grim, C, F)
    assert update_state(already, C, S).triggered


def test_update_state_alld_constant():
    alld = fresh_state(StrategyKind.ALL_D)
    for own in (C, D):
        for sig in (S, F):
            assert update_state(alld, own, sig) == alld


@given(st.lists(st.tuples(st.sampled_from([C, D]), st.sampled_from([S, F])), max_size=20))
def test_trigger_is_monotone(rounds):
    state = fresh_state(StrategyKind.GRIM)
    defected = False
    for own, sig in rounds:
        state = update_state(state, own, sig)
        if next_action(state) is D:
            defected = True
        if defected:
            assert next_action(state) is D


@pytest.mark.parametrize("players", [2, 4, 10])
@pytest.mark.parametrize("length", [1, 3, 8])
def test_all_grim_group_plays_c_s_forever(players, length):
    states = [fresh_state(StrategyKind.GRIM) for _ in range(players)]
    for _ in range(length):
        actions = [next_action(s) for s in states]
        assert actions == [C] * players
        signals = [signal_of(actions[:i] + actions[i + 1 :]) for i in range(players)]
        assert signals == [S] * players
        states = [update_state(s, a, sig) for s, a, sig in zip(states, actions, signals)]


@pytest.mark.parametrize("players", [2, 4])
@pytest.mark.parametrize("defect_round", [1, 3])
def test_single_forced_defection_resolves_in_one_round(players, defect_round):
    # one exogenous defection in an all-Grim group flips everyone to D
    # from the next round on
    states = [fresh_state(StrategyKind.GRIM) for _ in range(players)]
    for t in range(1, defect_round + 4):
        actions = [next_action(s) for s in states]
        if t == defect_round:
            actions[0] = D
        if t < defect_round:
            assert actions == [C] * players
        if t > defect_round:
            assert actions == [D] * players
        signals = [signal_of(actions[:i] + actions[i + 1 :]) for i in range(players)]
        states = [update_state(s, a, sig) for s, a, sig in zip(states, actions, signals)]


def test_mixture_validation():
    with pytest.raises(InvalidParameter):
        Mixture(p=1.5)
    with pytest.raises(InvalidParameter):
        Mixture(p=-0.1)


def test_sample_strategy_degenerate():
    rng = substream(1, 0)
    assert all(sample_strategy(Mixture(0.0), rng) is StrategyKind.ALL_D for _ in range(200))
    assert all(sample_strategy(Mixture(1.0), rng) is StrategyKind.GRIM for _ in range(200))


def test_sample_strategy_half_within_three_sigma():
    rng = substream(2024, 0)
    n = 10**5
    draws = rng.random(n) < 0.5  # vectorized equivalent of n sample_strategy calls
    assert abs(draws.mean() - 0.5) < 0.005  # 3 * sqrt(0.25 / 1e5) ~ 0.0047


@pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
def test_sample_strategy_binomial_chi_square(p):
    rng = substream(7_000 + int(p * 10), 0)
    n = 10**5
    grim = sum(sample_strategy(Mixture(p), rng) is StrategyKind.GRIM for _ in range(n))
    observed = np.array([grim, n - grim])
    expected = np.array([n * p, n * (1 - p)])
    result = stats.chisquare(observed, expected)
    assert result.pvalue > 0.001


def test_sample_strategy_consumes_one_uniform():
    a, b = substream(33, 0), substream(33, 0)
    sample_strategy(Mixture(0.4), a)
    b.random()
    assert a.random() == b.random()
