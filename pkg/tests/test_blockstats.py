from fractions import Fraction

import numpy as np
import pytest

from gchain.blockscan import find_pattern_ends
from gchain.blockstats import (
    RunawayLength,
    bucket_envelope,
    contains_interior_marker,
    good_prob_estimate,
    harvest_lengths,
    is_good,
    opening_size_with_context,
    promotion_probability,
    sample_mk_block,
    tail_histogram,
    trajectory_good_frequency,
)
from gchain.chain import run
from gchain.params import ScaleOutOfRangeForTable
from gchain.rng import philox_generator

from oracle_blockscan import OracleCtx, o_opening_members
from oracle_blockstats import (
    o_admissible_words,
    o_length_pmf,
    o_mean_length,
    o_promotion,
    o_tail_mass,
)


def test_exact_mean_is_beta():
    # absorption-equation oracle agrees with the renewal value 2^ell
    for ell in range(2, 8):
        assert o_mean_length(ell) == Fraction(2 ** ell)


def test_admissible_words_min_length():
    for ell in (2, 3, 4):
        words = o_admissible_words(ell, 3 * ell)
        assert min(len(w) for w in words) == ell
        assert (1,) * (ell - 1) + (-1,) in words
        for w in words:
            assert not contains_interior_marker(np.array(w, np.int8), ell)


def test_length_law_tv_against_exact(table_small):
    # k = 4 has ell = 3: exact pmf is cheap, harvest is 10^6 draws
    gen = philox_generator(1001, 0)
    lengths = harvest_lengths(table_small, 4, 1_000_000, gen)
    n = len(lengths)
    assert n == 1_000_000
    pmf = o_length_pmf(3, 20)
    emp = np.bincount(np.minimum(lengths, 21), minlength=22) / n
    tv = 0.0
    for m in range(1, 21):
        tv += abs(emp[m] - float(pmf[m]))
    tail_exact = 1.0 - float(sum(pmf.values(), Fraction(0)))
    tv = 0.5 * (tv + abs(emp[21] - tail_exact))
    assert tv < 0.01
    # mean within 2% of beta, and the size-bias identity total weight is 1
    assert abs(lengths.mean() / table_small.beta[4] - 1.0) < 0.02


def test_mean_length_all_active_scales(table_small):
    for k, n in ((5, 200_000), (6, 200_000)):
        gen = philox_generator(1010 + k, 0)
        lengths = harvest_lengths(table_small, k, n, gen)
        assert abs(lengths.mean() / table_small.beta[k] - 1.0) < 0.02


def test_sampler_segments_are_admissible(table_small):
    gen = philox_generator(1020, 0)
    words = o_admissible_words(3, 8)
    seen = {}
    min_len = 10 ** 9
    for _ in range(20_000):
        s = sample_mk_block(table_small, 4, gen, with_opening=False)
        assert s.length == len(s.segment)
        assert s.segment[-1] == -1
        assert not contains_interior_marker(s.segment, 3)
        min_len = min(min_len, s.length)
        if s.length <= 8:
            w = tuple(int(v) for v in s.segment)
            assert w in words
            seen[w] = seen.get(w, 0) + 1
    assert min_len == 3  # shortest admissible interior is the marker itself
    for w in [w for w in words if len(w) <= 5]:
        p = 2.0 ** (-len(w))
        se = (p * (1 - p) / 20_000) ** 0.5
        assert abs(seen.get(w, 0) / 20_000 - p) < 4 * se


def test_per_sample_and_harvest_agree(table_small):
    gen = philox_generator(1030, 0)
    a = np.array([sample_mk_block(table_small, 5, gen, with_opening=False).length
                  for _ in range(30_000)])
    b = harvest_lengths(table_small, 5, 30_000, philox_generator(1031, 0))
    beta = table_small.beta[5]
    se = (a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b)) ** 0.5
    assert abs(a.mean() - b.mean()) < 4 * se
    hi = 4 * beta
    ha = np.bincount(np.minimum(a, hi), minlength=hi + 1) / len(a)
    hb = np.bincount(np.minimum(b, hi), minlength=hi + 1) / len(b)
    assert 0.5 * np.abs(ha - hb).sum() < 0.03


def test_harvest_matches_independent_end_scan(table_small):
    # same fixed stream, two scanners: gaps must agree exactly
    gen = philox_generator(1040, 0)
    row = (2 * gen.integers(0, 2, size=200_000, dtype=np.int8) - 1).astype(np.int8)
    ends = find_pattern_ends(row, 4, table_small, start=0)
    gaps = np.diff(np.asarray(ends))
    got = harvest_lengths(table_small, 4, len(gaps), signs=row, chunk_bits=4096)
    assert np.array_equal(got, gaps)


def test_runaway_guard(table_small):
    with pytest.raises(RunawayLength):
        harvest_lengths(table_small, 4, 10, signs=np.ones(128, np.int8))


def test_tail_histogram_envelope(table_small):
    gen = philox_generator(1050, 0)
    h = tail_histogram(table_small, 4, 200_000, gen)
    assert h.sample_count == 200_000
    assert h.violations == ()
    assert h.bucket_masses.sum() <= 1.0 + 1e-12
    assert 0.0 <= h.ytilde <= 1.0
    assert h.ytilde == h.bucket_masses[0]
    assert h.ytilde > 0.5  # capture within beta sites is the likely case
    for j in range(6):
        lo, hi = bucket_envelope(j)
        assert lo - 3 * h.bucket_se[j] < h.bucket_masses[j] < hi + 3 * h.bucket_se[j]
    for j in (0, 3):
        exact = float(o_tail_mass(3, j))
        se = max(h.bucket_se[j], 1e-9)
        assert abs(h.bucket_masses[j] - exact) < 4 * se


def test_tail_histogram_empty(table_small):
    h = tail_histogram(table_small, 4, 0, None)
    assert h.sample_count == 0
    assert len(h.bucket_masses) == 0
    assert h.violations == ()
    assert h.ytilde == 0.0


def test_is_good_thresholds(table_small):
    len_bound = table_small.good_len_bound[4]
    open_bound = table_small.good_open_bound[4]
    assert open_bound == 0
    assert is_good(table_small, 4, len_bound - 1, open_bound + 1)
    assert not is_good(table_small, 4, len_bound, open_bound + 1)  # strict length gate
    assert not is_good(table_small, 4, len_bound - 1, open_bound)
    assert not is_good(table_small, 4, len_bound - 1, 0)
    with pytest.raises(ScaleOutOfRangeForTable):
        is_good(table_small, table_small.k_max + 1, 1, 1)


def test_opening_with_context_matches_oracle(table_small):
    gen = philox_generator(1060, 0)
    for _ in range(30):
        s = sample_mk_block(table_small, 5, gen, with_opening=True)
        ell = table_small.ell[5]
        ybar = np.concatenate([np.ones(ell - 1, np.int8),
                               np.array([-1], np.int8), s.segment])
        ctx = OracleCtx(ybar.tolist(), 0, table_small)
        a = ell - 1
        members = o_opening_members(ctx, 5, (a, a + s.length, "Complete"))
        assert s.opening_size == len(members)
        assert s.good == is_good(table_small, 5, s.length, s.opening_size)


def test_size_biased_vs_trajectory(table_small):
    est = good_prob_estimate(table_small, 5, 4000, philox_generator(1070, 0))
    assert est.n == 4000
    assert abs(est.mean_len_ratio - 1.0) < 4 * est.mean_len_ratio_se
    assert abs(est.mean_len_ratio - 1.0) < 0.1
    _, _, state = run(table_small, "PlusWall", seed=41, steps=120_000,
                      with_trajectory=False)
    freq = trajectory_good_frequency(table_small, 5, state.y_history(), start=0)
    assert freq.n_blocks > 3000
    joint = (est.se ** 2 + freq.se ** 2) ** 0.5
    assert abs(est.p_good - freq.freq) < 3 * joint
    assert 0.0 < est.p_good < 1.0


def test_promotion_probability_exact_and_mc(table_small):
    # exact absorption oracle equals the scale ratio
    assert o_promotion(3, 4) == Fraction(1, 2)
    assert o_promotion(4, 5) == Fraction(1, 2)
    assert o_promotion(3, 5) == Fraction(1, 4)
    for k in (5, 6):
        lo, hi = table_small.ell[k - 1], table_small.ell[k]
        assert o_promotion(lo, hi) == Fraction(1, table_small.nu[k])
    p, se = promotion_probability(table_small, 5, 20_000, philox_generator(1080, 0))
    assert abs(p - 1.0 / table_small.nu[5]) < 3 * se


def test_good_fraction_monotone_in_k(table_small):
    fracs = {}
    ses = {}
    for k in (4, 5, 6):
        gen = philox_generator(1090 + k, 0)
        flags = np.array([sample_mk_block(table_small, k, gen).good
                          for _ in range(2500)], dtype=float)
        fracs[k] = flags.mean()
        ses[k] = (fracs[k] * (1 - fracs[k]) / 2500) ** 0.5
    for k in (4, 5):
        slack = 3 * (ses[k] ** 2 + ses[k + 1] ** 2) ** 0.5
        assert fracs[k + 1] >= fracs[k] - slack


def test_scale_validation(table_small):
    with pytest.raises(ScaleOutOfRangeForTable):
        sample_mk_block(table_small, 99, philox_generator(1, 0))
