import numpy as np
import pytest

from prescribe_select.core import FeasibilityError
from prescribe_select.problems import NewsvendorProblem, NewsvendorSpec


@pytest.fixture
def prob():
    return NewsvendorProblem()


def test_cost_perfect_stocking(prob):
    y = np.array([10.0, 5.0, 40.0, 100.0])
    expect = float((np.array(prob.c) - np.array(prob.p)) @ y)
    assert prob.cost(y, y) == pytest.approx(expect)


def test_cost_zero_order(prob):
    assert prob.cost(np.zeros(4), np.array([10.0, 5.0, 40.0, 100.0])) == 0.0


def test_cost_single_unit_product0(prob):
    # one unit of product 0 sold at 500, bought at 350
    q = np.array([1.0, 0.0, 0.0, 0.0])
    y = np.array([5.0, 0.0, 0.0, 0.0])
    assert prob.cost(q, y) == pytest.approx(-150.0)


def test_cost_many_matches_scalar(prob):
    rng = np.random.default_rng(0)
    q = rng.uniform(0, 40, size=4)
    Y = rng.uniform(0, 60, size=(7, 4))
    many = prob.cost_many(q, Y)
    for i in range(7):
        assert many[i] == pytest.approx(prob.cost(q, Y[i]))


def test_unit_profits_sum_to_negative_cost(prob):
    rng = np.random.default_rng(1)
    q = rng.uniform(0, 40, size=4)
    y = rng.uniform(0, 60, size=4)
    assert prob.unit_profits(q, y).sum() == pytest.approx(-prob.cost(q, y))


def test_feasibility_check(prob):
    with pytest.raises(FeasibilityError):
        prob.check_feasible(np.array([-1.0, 0, 0, 0]))
    with pytest.raises(FeasibilityError):
        prob.check_feasible(np.array([0.0, 100.0, 0, 0]))  # 15*100 > 1200
    prob.check_feasible(np.array([10.0, 10.0, 10.0, 10.0]))


def test_single_scenario_orders_the_scenario(prob):
    y = np.array([12.0, 8.0, 30.0, 50.0])
    q = prob.solve_weighted(y[None, :], np.array([1.0]))
    assert np.allclose(q, y, atol=1e-9)


def test_degenerate_weights_reduce_to_single_scenario(prob):
    rng = np.random.default_rng(2)
    Y = rng.uniform(0, 50, size=(6, 4))
    w = np.zeros(6)
    w[3] = 1.0
    q = prob.solve_weighted(Y, w)
    q_single = prob.solve_weighted(Y[3][None, :], np.array([1.0]))
    assert np.allclose(q, q_single, atol=1e-9)


def _grid_oracle_cost(prob1, values, weights):
    """Grid search over candidate stocks (the scenario values and 0)."""
    best = (np.inf, None)
    for q in np.concatenate([[0.0], values]):
        cost = prob1.weighted_cost(np.array([q]), [values], [weights])
        if cost < best[0] - 1e-12:
            best = (cost, q)
    return best


def test_uniform_single_product_critical_ratio():
    # p=10, c=6: ratio 0.4, uniform CDF over {10..50} reaches 0.4 at 20.
    spec = NewsvendorSpec(prices=(10.0,), costs=(6.0,), storage=(1.0,), capacity=1e9)
    prob1 = NewsvendorProblem(spec)
    values = np.array([10.0, 20.0, 30.0, 40.0, 50.0])
    weights = np.full(5, 0.2)
    q = prob1.solve_weighted(values[:, None], weights)
    assert q[0] == pytest.approx(20.0)
    # independent grid oracle agrees
    oracle_cost, oracle_q = _grid_oracle_cost(prob1, values, weights)
    assert oracle_q == pytest.approx(20.0)
    assert prob1.weighted_cost(q, [values], [weights]) == pytest.approx(oracle_cost)


def test_quantile_tie_takes_smallest_minimizer():
    # ratio exactly on a CDF atom: both atoms minimize; declared rule picks
    # the smaller stock.
    spec = NewsvendorSpec(prices=(10.0,), costs=(6.0,), storage=(1.0,), capacity=1e9)
    prob1 = NewsvendorProblem(spec)
    values = np.array([10.0, 20.0])
    weights = np.array([0.6, 0.4])  # CDF(10) = 0.6 > 0.4 -> q = 10
    q = prob1.solve_weighted(values[:, None], weights)
    assert q[0] == pytest.approx(10.0)
    weights = np.array([0.4, 0.6])  # CDF(10) = 0.4 == ratio -> flat [10, 20]
    q = prob1.solve_weighted(values[:, None], weights)
    assert q[0] == pytest.approx(10.0)


def _random_instance(rng, n_scen=None, d=4):
    n = n_scen or int(rng.integers(2, 51))
    prices = rng.uniform(5, 900, size=d)
    costs = prices * rng.uniform(0.3, 0.9, size=d)
    storage = rng.uniform(0.4, 16, size=d)
    # capacity tight enough to bind often
    capacity = float(rng.uniform(0.1, 1.2) * storage.sum() * 25)
    spec = NewsvendorSpec(prices=tuple(prices), costs=tuple(costs),
                          storage=tuple(storage), capacity=capacity)
    values = [rng.uniform(0, 60, size=n) for _ in range(d)]
    weights = []
    for _ in range(d):
        w = rng.uniform(0, 1, size=n) ** 2
        weights.append(w / w.sum())
    return NewsvendorProblem(spec), values, weights


def test_quantile_and_lp_paths_agree_on_random_instances():
    rng = np.random.default_rng(20240811)
    for trial in range(40):
        prob, values, weights = _random_instance(rng)
        q_fast = prob.solve_weighted_per_output(values, weights, method="quantile")
        q_lp = prob.solve_weighted_per_output(values, weights, method="lp")
        c_fast = prob.weighted_cost(q_fast, values, weights)
        c_lp = prob.weighted_cost(q_lp, values, weights)
        assert c_fast == pytest.approx(c_lp, abs=1e-5), f"trial {trial}"
        prob.check_feasible(q_fast)
        prob.check_feasible(q_lp)


def test_capacity_always_respected_and_slack_means_unconstrained():
    rng = np.random.default_rng(7)
    for _ in range(30):
        prob, values, weights = _random_instance(rng, n_scen=20)
        q = prob.solve_weighted_per_output(values, weights)
        used = float(prob.s @ q)
        assert used <= prob.capacity + 1e-7 * max(1.0, prob.capacity)
        if used < prob.capacity - 1e-6:
            # slack capacity: per-product unconstrained quantiles
            for j in range(4):
                r = (prob.p[j] - prob.c[j]) / prob.p[j]
                vals = np.sort(values[j])
                order = np.argsort(values[j], kind="stable")
                cdf = np.cumsum(np.asarray(weights[j])[order])
                expect = vals[int(np.searchsorted(cdf, r - 1e-9))]
                assert q[j] == pytest.approx(expect, abs=1e-9)


def test_spec_validation():
    with pytest.raises(ValueError):
        NewsvendorSpec(prices=(10.0,), costs=(11.0,), storage=(1.0,), capacity=10.0)
    with pytest.raises(ValueError):
        NewsvendorSpec(prices=(10.0,), costs=(6.0,), storage=(-1.0,), capacity=10.0)


def test_rejects_unnormalized_or_empty_weights(prob):
    Y = np.ones((3, 4))
    with pytest.raises(ValueError):
        prob.solve_weighted(Y, np.array([0.5, 0.1, 0.1]))
    with pytest.raises(ValueError):
        prob.solve_weighted(Y, np.zeros(3))
