import numpy as np
import pytest

from gchain.gfun import PastWindow, evaluate
from gchain.params import InvalidParameter, PRESETS, SpecConfig, build_scales
from gchain.rng import philox_generator
from gchain.varlab import (
    BudgetExceeded,
    L1_CAP,
    METHOD_EXHAUSTIVE,
    METHOD_SEARCH,
    analytic_bound,
    bound_curve,
    exact_var,
    lp_report,
    output_l1,
    p_star,
    search_var,
    variation_exponent,
)


@pytest.fixture(scope="module")
def table_cap():
    return build_scales(SpecConfig(epsilon=0.3, K=4, k_max=4, window_depth=64,
                                   clamp_enabled=True))


def test_exponent_and_threshold_frozen():
    assert abs(variation_exponent(0.3) - 0.4 / (2 * 1.69)) < 1e-15
    assert abs(variation_exponent(0.3) - 0.11834319526627219) < 1e-15
    assert abs(p_star(0.3) - 8.45) < 1e-12
    assert p_star(0.0) == 2.0


def test_analytic_bound_values(table_a):
    assert analytic_bound(table_a, 1) == L1_CAP
    assert analytic_bound(table_a, 100) == L1_CAP  # 8*100^-0.118 = 4.64, capped
    # j = 1000 sits in (beta_8, beta_9]: sharper cap keyed one scale down
    eff, base, sharper = analytic_bound(table_a, 1000, detailed=True)
    assert sharper == pytest.approx(2.0 * 128 ** -0.2, abs=1e-12)
    assert sharper == pytest.approx(0.7578582832551991, abs=1e-12)
    assert eff == pytest.approx(min(base, sharper), abs=0)
    # j = 3000 sits in (beta_9, beta_10]: the value criterion 7 quotes at k=9
    _, _, sharper9 = analytic_bound(table_a, 3000, detailed=True)
    assert sharper9 == pytest.approx(2.0 * 512 ** -0.2, abs=1e-12)
    assert sharper9 == pytest.approx(0.574349177498517, abs=1e-12)
    with pytest.raises(InvalidParameter):
        analytic_bound(table_a, 0)


def test_analytic_bound_monotone_and_vectorized(table_a):
    js = np.unique(np.concatenate([
        np.arange(1, 40),
        np.geomspace(40, 300_000, 120).astype(np.int64),
        [table_a.beta[k] + d for k in range(8, 11) for d in (-1, 0, 1)],
    ]))
    vals = [analytic_bound(table_a, int(j)) for j in js]
    assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))
    assert np.allclose(bound_curve(table_a, js), vals, atol=1e-15)


def test_exact_var_identical_tails_zero(table_cap):
    est = exact_var(table_cap, 3, 3)
    assert est.lower_bound == 0.0
    assert est.method == METHOD_EXHAUSTIVE
    assert est.witness is not None


def test_exact_var_monotone_and_capped(table_cap):
    depth = 5
    vals = []
    for j in range(1, depth + 1):
        est = exact_var(table_cap, j, depth)
        assert 0.0 <= est.lower_bound <= L1_CAP + 1e-12
        assert est.lower_bound <= est.analytic_cap + 1e-12
        vals.append(est.lower_bound)
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("j,depth", [(1, 4), (2, 4), (4, 4), (3, 5)])
def test_exact_var_matches_bruteforce(table_cap, j, depth):
    from oracle_varlab import brute_var
    est = exact_var(table_cap, j, depth)
    assert est.lower_bound == pytest.approx(
        brute_var(table_cap, j, depth, seed=17 * j + depth), abs=1e-12)


def test_exact_var_matches_bruteforce_small_table(table_small):
    from oracle_varlab import brute_var
    est = exact_var(table_small, 2, 4)
    assert est.lower_bound == pytest.approx(
        brute_var(table_small, 2, 4, seed=5), abs=1e-12)


def test_exact_var_witness_is_valid(table_cap):
    est = exact_var(table_cap, 2, 5)
    wa, wb = est.witness
    assert np.array_equal(wa.x_row[-2:], wb.x_row[-2:])
    assert np.array_equal(wa.y_row[-2:], wb.y_row[-2:])
    d = output_l1(evaluate(wa, table_cap, strict=False),
                  evaluate(wb, table_cap, strict=False))
    assert d == pytest.approx(est.lower_bound, abs=1e-12)


def test_exact_var_budget_guard(table_cap):
    with pytest.raises(BudgetExceeded):
        exact_var(table_cap, 1, 8)  # 4^1 * 4^14 pair workload is over the guard
    with pytest.raises(InvalidParameter):
        exact_var(table_cap, 0, 4)
    with pytest.raises(InvalidParameter):
        exact_var(table_cap, 5, 4)


def test_search_single_probe(table_cap):
    est = search_var(table_cap, 2, 1, philox_generator(7, 0), depth=5)
    assert est.method == METHOD_SEARCH
    assert 0.0 <= est.lower_bound <= L1_CAP + 1e-12
    assert est.witness is not None
    with pytest.raises(InvalidParameter):
        search_var(table_cap, 2, 0, philox_generator(7, 0))


def test_search_never_exceeds_exact_100_cases(table_cap):
    rng = philox_generator(23, 0)
    exact_cache = {}
    for _ in range(100):
        depth = int(rng.integers(2, 6))
        j = int(rng.integers(1, depth + 1))
        if (j, depth) not in exact_cache:
            exact_cache[(j, depth)] = exact_var(table_cap, j, depth).lower_bound
        got = search_var(table_cap, j, 60, rng, depth=depth).lower_bound
        assert got <= exact_cache[(j, depth)] + 1e-12


def test_search_witness_shares_prefix(table_cap):
    est = search_var(table_cap, 3, 200, philox_generator(29, 0), depth=6)
    wa, wb = est.witness
    assert np.array_equal(wa.x_row[-3:], wb.x_row[-3:])
    assert np.array_equal(wa.y_row[-3:], wb.y_row[-3:])
    d = output_l1(evaluate(wa, table_cap, strict=False),
                  evaluate(wb, table_cap, strict=False))
    assert d == pytest.approx(est.lower_bound, abs=1e-12)


def test_zero_difference_beyond_dependence_radius(table_fast):
    # pairs agreeing past the dependence radius give exactly equal outputs
    gen = philox_generator(31, 0)
    checked = 0
    for _ in range(120):
        n = 700
        x = (2 * gen.integers(0, 2, n, dtype=np.int8) - 1).astype(np.int8)
        y = (2 * gen.integers(0, 2, n, dtype=np.int8) - 1).astype(np.int8)
        out = evaluate(PastWindow(x, y, -n), table_fast, strict=False)
        k0 = max(out.plus.k0, out.minus.k0)
        radius = table_fast.beta[k0 + 2] + table_fast.ell[k0 + 1] - 1
        j = 600
        if radius > j:
            continue
        x2 = x.copy()
        y2 = y.copy()
        deep = n - j  # row indices [0, deep) are positions older than -j
        for _ in range(int(gen.integers(1, 20))):
            r = int(gen.integers(0, deep))
            if gen.integers(0, 2):
                x2[r] = -x2[r]
            else:
                y2[r] = -y2[r]
        out2 = evaluate(PastWindow(x2, y2, -n), table_fast, strict=False)
        assert output_l1(out, out2) == 0.0
        checked += 1
    assert checked > 60


def test_lp_report_threshold_and_ratios(table_a):
    # j_max deep enough that the 1.6 cap has released (near j ~ 8e5) and
    # the last dyadic blocks sit in the pure power regime
    expo = variation_exponent(0.3)
    rep = lp_report(table_a, p_star(0.3) + 1.0, 1 << 24)
    assert rep.p_star == pytest.approx(8.45, abs=1e-12)
    assert rep.p_star_eps_zero == 2.0
    assert rep.convergence_consistent
    assert rep.dyadic_ratios[-1] == pytest.approx(
        2.0 ** (1.0 - 9.45 * expo), rel=0.02)
    assert rep.measured_partial_sum is None
    divergent = lp_report(table_a, 1.0, 1 << 24)
    assert not divergent.convergence_consistent
    assert divergent.dyadic_ratios[-1] == pytest.approx(
        2.0 ** (1.0 - expo), rel=0.02)
    assert all(r > 1.0 for r in divergent.dyadic_ratios)
    assert divergent.bound_partial_sum > rep.bound_partial_sum


def test_lp_report_measured_sums(table_cap):
    ests = {j: exact_var(table_cap, j, 4) for j in (1, 2, 3)}
    rep = lp_report(table_cap, 2.0, 100, estimates=ests)
    assert rep.n_measured == 3
    expect = sum(e.lower_bound ** 2 for e in ests.values())
    assert rep.measured_partial_sum == pytest.approx(expect, abs=1e-12)
    rep2 = lp_report(table_cap, 2.0, 100,
                     estimates={j: e.lower_bound for j, e in ests.items()})
    assert rep2.measured_partial_sum == pytest.approx(expect, abs=1e-12)
    with pytest.raises(InvalidParameter):
        lp_report(table_cap, 0.0, 100)
    with pytest.raises(InvalidParameter):
        lp_report(table_cap, 2.0, 0)
