import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gymcards_rl.env_core import EnvUsageError, check_action_label
from gymcards_rl.gym_cards import (
    RANKS, TASKS, Blackjack, Card, EZPoints, NumberLine, Points24, draw_card, ezpoints_sample_cards,
    hand_value, make_env, numberline_transition,
)
from gymcards_rl.oracles import ezpoints_solve
from gymcards_rl.prompting import parse_action


def cards(*ranks):
    return [Card(r, "S") for r in ranks]


# --------------------------------------------------------------------------
# NumberLine


def test_numberline_examples():
    assert numberline_transition(3, 0, "+", 5) == (1, 0.0, False)
    assert numberline_transition(3, 2, "+", 5) == (3, 1.0, True)
    assert numberline_transition(3, 4, "+", 5) == (5, -1.0, False)
    # blocked boundary move is penalized
    assert numberline_transition(3, 5, "+", 5) == (5, -1.0, False)
    assert numberline_transition(3, 0, "-", 5) == (0, -1.0, False)


def test_numberline_env_steps_and_horizon():
    env = NumberLine(5)
    env.reset(0)
    env.set_state(3, 0)
    res = env.step("+")
    assert (res.reward, res.done, res.observation.symbolic["current"]) == (0.0, False, 1)
    env = NumberLine(5)
    env.reset(1)
    env.set_state(5, 0)
    for _ in range(10):
        res = env.step("-")
    assert res.done and env.t == 10 and res.reward == -1.0
    assert NumberLine(5).max_steps == 10


@given(st.integers(1, 8), st.data())
def test_numberline_reward_rule(n_max, data):
    x = data.draw(st.integers(0, n_max))
    y = data.draw(st.integers(0, n_max))
    a = data.draw(st.sampled_from(["+", "-"]))
    y2, r, done = numberline_transition(x, y, a, n_max)
    assert 0 <= y2 <= n_max
    assert (r == 1.0) == (y2 == x) == done
    assert (r == -1.0) == (abs(x - y2) >= abs(x - y) and y2 != x)


def test_numberline_reset_never_solved():
    env = NumberLine(5)
    for s in range(300):
        sym = env.reset(s).symbolic
        assert sym["target"] != sym["current"]


# --------------------------------------------------------------------------
# EZPoints / Points24


def test_ezpoints_examples():
    env = EZPoints()
    env.reset(0)
    env.set_state(cards("7", "5"), ["5"])
    res = env.step("+")
    assert res.reward == 0.0 and not res.done and env.formula == ["5", "+"]
    res = env.step("7")
    assert res.reward == 0.0
    res = env.step("=")
    assert res.reward == 10.0 and res.done and res.info["success"]

    env.reset(0)
    env.set_state(cards("7", "5"), ["5"])
    before = env.symbolic()
    res = env.step("9")
    assert res.reward == -1.0 and res.info["illegal"] and env.symbolic() == before


def test_ezpoints_duplicate_values_tracked_per_card():
    env = EZPoints()
    env.reset(0)
    env.set_state(cards("7", "7"))
    assert env.step("7").reward == 0.0
    assert env.step("+").reward == 0.0
    assert env.step("7").reward == 0.0
    assert env.step("7").reward == -1.0


def test_ezpoints_terminal_cases():
    env = EZPoints()
    env.reset(0)
    env.set_state(cards("2", "T"), ["10", "+", "2"])
    assert env.step("=").reward == 10.0
    env.reset(0)
    env.set_state(cards("2", "T"))
    res = env.step("=")
    assert res.reward == -1.0 and res.done  # empty formula
    env.reset(0)
    env.set_state(cards("3", "4"), ["3", "*"])
    res = env.step("=")
    assert res.reward == -1.0 and res.done  # dangling operator
    assert EZPoints().max_steps == 5 and Points24().max_steps == 20


def test_target_without_all_cards_fails():
    env = Points24()
    env.reset(0)
    env.set_state(cards("6", "4", "A", "A"), ["6", "*", "4"])
    assert env.step("=").reward == -1.0


def test_points24_examples():
    env = Points24()
    env.reset(0)
    env.set_state(cards("A", "2", "T", "A"), ["(", "2", "+", "10", ")", "*", "(", "1", "+", "1", ")"])
    assert env.step("=").reward == 10.0
    env.reset(0)
    env.set_state(cards("8", "5", "5", "A"), ["8", "/", "(", "5", "-", "5", ")"])
    assert env.step("=").reward == -1.0
    env.reset(0)
    env.set_state(cards("2", "8", "5", "J"))
    for tok in ["(", ")", "(", ")"]:
        assert env.step(tok).reward == 0.0


def test_face_mode_values():
    assert Card("K", "H").value() == 10 and Card("K", "H").value(face_mode=True) == 13
    assert Card("A", "H").value(face_mode=True) == 1
    assert "13" in EZPoints(face_mode=True).action_space
    assert "11" not in EZPoints().action_space


def test_ezpoints_sampler_always_solvable():
    rng = np.random.default_rng(5)
    for _ in range(10_000):
        vals = [c.value() for c in ezpoints_sample_cards(rng)]
        assert ezpoints_solve(vals) is not None


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["ezpoints", "points24"]), st.integers(0, 2**31), st.data())
def test_illegal_formula_actions_never_mutate(task, seed, data):
    env = make_env(task)
    env.reset(seed)
    for _ in range(env.max_steps - 1):
        a = data.draw(st.sampled_from([x for x in env.action_space if x != "="]))
        before = env.symbolic()
        res = env.step(a)
        if res.info["illegal"]:
            assert res.reward == -1.0
            assert env.symbolic() == before
        if res.done:
            break


# --------------------------------------------------------------------------
# Blackjack


def test_blackjack_bust():
    env = Blackjack()
    env.reset(0)
    env.set_state(cards("K", "9"), cards("5", "6"))
    env.rng = _fixed_draws(["3"])
    res = env.step("hit")
    assert res.reward == -1.0 and res.done


def test_blackjack_push_and_natural():
    env = Blackjack()
    env.reset(0)
    env.set_state(cards("K", "Q"), cards("T", "K"))
    res = env.step("stand")
    assert res.reward == 0.0 and res.done
    env = Blackjack(natural_bonus=True)
    env.reset(0)
    env.set_state(cards("A", "K"), cards("T", "9"))
    assert env.step("stand").reward == 1.5
    env = Blackjack(natural_bonus=False)
    env.reset(0)
    env.set_state(cards("A", "K"), cards("T", "9"))
    assert env.step("stand").reward == 1.0


def test_hand_value():
    assert hand_value([1, 10]) == (21, True)
    assert hand_value([1, 1, 9]) == (21, True)
    assert hand_value([1, 5, 10]) == (16, False)
    assert hand_value([10, 10, 2]) == (22, False)


def test_blackjack_dealer_total_after_stand():
    env = Blackjack()
    for s in range(2000):
        env.reset(s)
        res = env.step("stand")
        dealer = res.info["dealer_sum"]
        assert dealer >= 17
        assert res.observation.symbolic["dealer_sum"] == dealer


def test_blackjack_hides_dealer_hole_card():
    env = Blackjack()
    sym = env.reset(3).symbolic
    assert len(sym["dealer"]) == 1 and "dealer_sum" not in sym


def test_draw_distribution_uniform_over_ranks():
    rng = np.random.default_rng(11)
    n = 100_000
    counts = np.zeros(13)
    for _ in range(n):
        counts[RANKS.index(draw_card(rng).rank)] += 1
    p = 1 / 13
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 5 * sigma)


class _fixed_draws:
    """Stand-in generator returning preset ranks for ``draw_card``."""

    def __init__(self, ranks):
        self.seq = []
        for r in ranks:
            self.seq += [RANKS.index(r), 0]

    def integers(self, n):
        return self.seq.pop(0)


# --------------------------------------------------------------------------
# Shared contract


@pytest.mark.parametrize("task", TASKS)
def test_step_after_done_and_unknown_action(task):
    env = make_env(task)
    with pytest.raises(EnvUsageError):
        env.step(env.action_space[0])  # never reset
    env.reset(0)
    with pytest.raises(EnvUsageError):
        env.step("fly")
    while not env.step(env.action_space[-1]).done:
        pass
    with pytest.raises(EnvUsageError, match="episode finished"):
        env.step(env.action_space[0])


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(TASKS), st.integers(0, 2**40), st.lists(st.integers(0, 100), min_size=25, max_size=25))
def test_determinism_and_horizon(task, seed, picks):
    def trace():
        env = make_env(task)
        out = [env.reset(seed).to_json()]
        for k in picks:
            a = env.action_space[k % len(env.action_space)]
            res = env.step(a)
            out.append((res.observation.to_json(), res.reward, res.done))
            if res.done:
                return out, env.t
        raise AssertionError("episode exceeded its horizon")

    (a, ta), (b, tb) = trace(), trace()
    assert a == b and ta == tb <= make_env(task).max_steps


@pytest.mark.parametrize("task", TASKS)
def test_legal_actions_round_trip_through_parser(task):
    env = make_env(task)
    env.reset(0)
    rng = np.random.default_rng(0)
    for a in env.legal_actions():
        check_action_label(a)
        assert parse_action(f'{{"action": "{a}"}}', env.legal_actions(), rng) == (a, False)


def test_action_label_check():
    with pytest.raises(ValueError):
        check_action_label("Hit")
    with pytest.raises(ValueError):
        check_action_label(" hit")


def test_observation_json_shape():
    obs = NumberLine().reset(4)
    js = obs.to_json()
    assert set(js) == {"task", "symbolic", "text", "legal_actions", "step_index"}
    assert "step" not in js["text"].lower()
