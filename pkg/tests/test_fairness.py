import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from misattrib.errors import ConfigError, DataError, DegenerateError
from misattrib.fairness import (
    TopKTally,
    exceed_table,
    expected_count,
    fairness_report,
    maui,
    mean_reciprocal_rank,
    per_author_mrr,
    recall_at_k,
    risk_ratio_stats,
    tally_table,
    tally_topk,
)
from misattrib.ranking import RankTable, TopKSlice


def maui_oracle(counts, k, n_h, n_q):
    e = math.ceil(Fraction(k * n_q, n_h))
    return Fraction(sum(max(0, c - e) for c in counts), k * (n_q - e))


def _slice(qid, true, top):
    return TopKSlice(qid, true, tuple(top), tuple(float(-i) for i in range(len(top))))


def _perm_table(n_h, n_q, seed):
    rng = np.random.default_rng(seed)
    ids = tuple(f"a{j:04d}" for j in range(n_h))
    ranks = np.stack([rng.permutation(n_h) + 1 for _ in range(n_q)]).astype(np.int32)
    owners = tuple(ids[i] for i in rng.integers(0, n_h, n_q))
    return RankTable(ids, tuple(f"q{i}" for i in range(n_q)), owners, ranks)


class TestExpectedCount:
    def test_large_population_spot_value(self):
        assert expected_count(10, 111396, 25000) == math.ceil(Fraction(250000, 111396)) == 3

    def test_full_haystack(self):
        for n_q in (1, 7, 500):
            assert expected_count(40, 40, n_q) == n_q

    def test_exact_ratio(self):
        assert expected_count(2, 10, 10) == 2

    def test_grid(self):
        for k in range(1, 13):
            for n_h in range(k, 30):
                for n_q in range(1, 60, 7):
                    assert expected_count(k, n_h, n_q) == math.ceil(Fraction(k * n_q, n_h))

    @pytest.mark.parametrize("args", [(11, 10, 5), (0, 10, 5), (1, 10, 0), (1, 0, 1)])
    def test_errors(self, args):
        with pytest.raises(ConfigError):
            expected_count(*args)


class TestTally:
    def test_self_hit_excluded(self):
        t = tally_topk([_slice("q", "B", "ABC")], 3, ["A", "B", "C", "D"])
        assert t.as_dict() == {"A": 1, "B": 0, "C": 1, "D": 0}
        t = tally_topk([_slice("q", "B", "ABC")], 3, ["A", "B", "C", "D"], include_self=True)
        assert t.as_dict()["B"] == 1

    def test_repeat_top1(self):
        t = tally_topk([_slice("q1", "B", "AB"), _slice("q2", "C", "AC")], 1, ["A", "B", "C"])
        assert t.as_dict()["A"] == 2 and t.n_queries == 2

    def test_unknown_author(self):
        with pytest.raises(DataError):
            tally_topk([_slice("q", "A", "AZ")], 2, ["A", "B"])

    def test_short_slice(self):
        with pytest.raises(DataError):
            tally_topk([_slice("q", "A", "A")], 2, ["A", "B", "C"])

    def test_random_permutation_mean(self):
        table = _perm_table(100, 1000, seed=4)
        t = tally_table(table, 5)
        # every query places 5 authors in its top 5, minus a self-hit with probability 5/100
        assert abs(t.counts.mean() - 50 * (1 - 1 / 100)) < 0.5
        assert np.all(t.counts <= 1000) and t.counts.sum() <= 5 * 1000

    def test_table_agrees_with_slices(self):
        table = _perm_table(40, 60, seed=1)
        slices = [
            _slice(q, true, [table.author_ids[j] for j in np.argsort(table.ranks[i])][:7])
            for i, (q, true) in enumerate(zip(table.query_ids, table.true_author_ids))
        ]
        for include_self in (False, True):
            a = tally_table(table, 7, include_self)
            b = tally_topk(slices, 7, table.author_ids, include_self)
            assert np.array_equal(a.counts, b.counts)

    def test_merge_is_order_independent(self):
        table = _perm_table(30, 90, seed=2)
        parts = [
            tally_table(RankTable(table.author_ids, table.query_ids[s], table.true_author_ids[s], table.ranks[s]), 4)
            for s in (slice(0, 10), slice(10, 55), slice(55, 90))
        ]
        whole = tally_table(table, 4)
        for merged in ((parts[0] + parts[1]) + parts[2], parts[2] + (parts[1] + parts[0])):
            assert np.array_equal(merged.counts, whole.counts) and merged.n_queries == 90


class TestMaui:
    def test_no_exceedance(self):
        assert maui(TopKTally.from_counts([2, 2, 1, 0, 2, 1, 2, 2, 2, 2], 2, 10)) == 0.0

    @pytest.mark.parametrize("k, n_h, n_q", [(5, 50, 20), (10, 1000, 500), (3, 7, 9)])
    def test_worst_case_exactly_one(self, k, n_h, n_q):
        assert maui(TopKTally.from_counts([n_q] * k + [0] * (n_h - k), k, n_q)) == 1.0

    def test_worked_example(self):
        t = TopKTally.from_counts([6, 4, 2, 2, 2, 2, 1, 1, 0, 0], 2, 10)
        assert t.expected == 2
        assert maui(t) == 0.375 == float(maui_oracle(t.counts.tolist(), 2, 10, 10))

    def test_degenerate(self):
        with pytest.raises(DegenerateError, match="degenerate configuration"):
            maui(TopKTally.from_counts([3, 3, 3], 3, 3))

    @settings(max_examples=150, deadline=None)
    @given(
        n_h=st.integers(2, 40),
        n_q=st.integers(1, 60),
        data=st.data(),
    )
    def test_bounds_and_oracle(self, n_h, n_q, data):
        k = data.draw(st.integers(1, n_h))
        assume(n_q > expected_count(k, n_h, n_q))
        # build counts from actual top-k sets so sum(c) <= k * N_q
        tops = [data.draw(st.lists(st.integers(0, n_h - 1), min_size=k, max_size=k, unique=True)) for _ in range(n_q)]
        counts = np.bincount(np.array(tops).ravel(), minlength=n_h)
        t = TopKTally.from_counts(counts.tolist(), k, n_q)
        value = maui(t)
        assert 0.0 <= value <= 1.0
        assert value == float(maui_oracle(counts.tolist(), k, n_h, n_q))

    @settings(max_examples=100, deadline=None)
    @given(counts=st.lists(st.integers(0, 50), min_size=5, max_size=30), j=st.integers(0, 29), bump=st.integers(1, 10))
    def test_monotone(self, counts, j, bump):
        j %= len(counts)
        k, n_q = 2, 50
        t = TopKTally.from_counts(counts, k, n_q)
        assume(n_q > t.expected)
        raised = list(counts)
        raised[j] = min(n_q, raised[j] + bump)
        assert maui(TopKTally.from_counts(raised, k, n_q)) >= maui(t)


class TestEffectiveness:
    def test_recall(self):
        assert recall_at_k([1, 2, 9], 8) == pytest.approx(2 / 3)
        assert recall_at_k([1, 1, 1], 1) == 1.0
        assert recall_at_k([5, 50, 100], 100) == 1.0
        with pytest.raises(DataError):
            recall_at_k([], 8)

    def test_mrr(self):
        assert mean_reciprocal_rank([1, 2, 4]) == pytest.approx(0.5833333333333334)
        assert mean_reciprocal_rank([1, 1, 1]) == 1.0
        assert mean_reciprocal_rank([250]) == 1 / 250
        with pytest.raises(DataError):
            mean_reciprocal_rank([])

    def test_per_author_mrr(self):
        got = per_author_mrr(["x", "x", "y", "x", "x"], [1, 1, 1, 2, 4])
        assert got == {"x": 0.6875, "y": 1.0}
        assert got["x"] == mean_reciprocal_rank([1, 1, 2, 4])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 100), min_size=1, max_size=50))
    def test_recall_monotone_and_mrr_bound(self, ranks):
        rec = [recall_at_k(ranks, k) for k in range(1, 101)]
        assert all(a <= b for a, b in zip(rec, rec[1:]))
        assert mean_reciprocal_rank(ranks) <= 1.0
        assert mean_reciprocal_rank(ranks) >= rec[0]


class TestExceedAndRisk:
    def test_exceed_example(self):
        t = TopKTally.from_counts([7, 3, 9], 1, 9)
        assert t.expected == 3
        assert exceed_table(t, [2]) == {2: 2}

    def test_exceed_impossible(self):
        t = TopKTally.from_counts([7, 3, 9], 1, 9)
        assert exceed_table(t, [4]) == {4: 0}

    def test_exceed_strict_and_fractional(self):
        t = TopKTally.from_counts([6, 7, 5, 0], 1, 12)
        assert t.expected == 3
        assert exceed_table(t, [2, 1.5]) == {2: 1, 1.5: 3}

    def test_default_multipliers_non_increasing(self):
        rng = np.random.default_rng(0)
        t = TopKTally.from_counts(rng.poisson(3, 500).tolist(), 10, 150)
        vals = list(exceed_table(t).values())
        assert list(exceed_table(t)) == [2, 4, 5]
        assert vals == sorted(vals, reverse=True)

    def test_exceed_bad_multiplier(self):
        with pytest.raises(ConfigError):
            exceed_table(TopKTally.from_counts([1, 2], 1, 4), [0])

    def test_risk_example(self):
        t = TopKTally.from_counts([5, 10, 0], 1, 15)
        assert t.expected == 5
        r = risk_ratio_stats(t)
        assert (r.max, r.mean, r.std, r.n_authors) == (2.0, 1.5, 0.5, 2)
        r_all = risk_ratio_stats(t, "all")
        assert r_all.n_authors == 3 and r_all.mean == pytest.approx(1.0)

    def test_risk_uniform(self):
        r = risk_ratio_stats(TopKTally.from_counts([4, 4, 4, 4], 1, 16))
        assert (r.max, r.mean, r.std) == (1.0, 1.0, 0.0)

    def test_risk_worst_case(self):
        n_q = 40
        t = TopKTally.from_counts([n_q] + [0] * 19, 1, n_q)
        assert risk_ratio_stats(t).max == n_q / t.expected

    def test_risk_empty(self):
        with pytest.raises(DataError):
            risk_ratio_stats(TopKTally.from_counts([0, 0], 1, 4))


def test_fairness_report_shape():
    table = _perm_table(60, 200, seed=8)
    tallies = {k: tally_table(table, k) for k in (5, 10)}
    rep = fairness_report(tallies, exceed_k=10)
    d = rep.to_dict()
    assert [r["k"] for r in d["maui"]] == [5, 10]
    assert d["exceed"]["expected"] == expected_count(10, 60, 200)
    assert all(0 <= r.maui <= 1 for r in rep.records)
