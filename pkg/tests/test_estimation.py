import math

import numpy as np
import pytest

from missdag.data import (
    MISSING,
    CategoricalDataset,
    VariableSchema,
    forward_sample,
)
from missdag.errors import (
    AllZero,
    EmptyList,
    MissingCellsPresent,
    SchemaMismatch,
    TooManyMissingInRow,
)
from missdag.estimation import (
    BicScorer,
    IpwBicScorer,
    ParameterSet,
    ScoreValue,
    bic,
    em_fit,
    expand_completions,
    fit_mle,
    ipw_weights,
    log_likelihood,
    rescale_ll,
    weighted_counts,
)
from missdag.graphs import Dag

from oracles import joint_log_likelihood, random_dag, random_params


def _schema(*cards):
    return [VariableSchema(f"v{i}", tuple(f"s{k}" for k in range(c)))
            for i, c in enumerate(cards)]


def _dataset(cards, rows):
    return CategoricalDataset(_schema(*cards), np.asarray(rows, dtype=np.int16))


def _random_instance(seed, max_vars=4, missing=0.3):
    rng = np.random.default_rng(seed)
    nv = int(rng.integers(2, max_vars + 1))
    names = [f"v{i}" for i in range(nv)]
    g = random_dag(rng, names, edge_prob=0.5)
    cards = {v: int(rng.integers(2, 4)) for v in names}
    params = random_params(rng, g, cards)
    d = forward_sample(g, params, int(rng.integers(50, 200)), seed=int(seed))
    if missing > 0:
        rows = d.rows.copy()
        holes = rng.random(rows.shape) < missing * rng.random()
        keep = ~holes.any(axis=1)
        holes[keep | ~keep] &= True  # no-op, keeps shape explicit
        rows[holes] = MISSING
        d = CategoricalDataset(d.schema, rows)
    return g, params, d


class TestParameterSet:
    def test_rows_must_sum_to_one(self):
        with pytest.raises(SchemaMismatch):
            ParameterSet({"a": ((), np.array([[0.5, 0.4]]))}, {"a": ("s0", "s1")})

    def test_shape_must_match_parent_product(self):
        with pytest.raises(SchemaMismatch):
            ParameterSet(
                {"a": ((), np.array([[0.5, 0.5]])),
                 "b": (("a",), np.array([[0.5, 0.5]]))},
                {"a": ("s0", "s1"), "b": ("s0", "s1")})

    def test_json_round_trip(self):
        g = Dag(["a", "b"], [("a", "b")])
        params = random_params(np.random.default_rng(0), g, {"a": 2, "b": 3})
        back = ParameterSet.from_json(params.to_json())
        for v in g.vertices:
            assert back.parents(v) == params.parents(v)
            assert np.allclose(back.table(v), params.table(v))
            assert back.states[v] == params.states[v]


class TestFitMle:
    def test_hand_counts(self):
        g = Dag(["v0", "v1"], [("v0", "v1")])
        d = _dataset([2, 2], [[0, 0], [0, 0], [0, 1], [1, 1]])
        params = fit_mle(g, d)
        assert np.allclose(params.table("v0"), [[0.75, 0.25]])
        assert np.allclose(params.table("v1"), [[2 / 3, 1 / 3], [0.0, 1.0]])

    def test_unseen_parent_row_is_uniform(self):
        g = Dag(["v0", "v1"], [("v0", "v1")])
        d = _dataset([2, 3], [[0, 0], [0, 2]])
        params = fit_mle(g, d)
        assert np.allclose(params.table("v1")[1], [1 / 3, 1 / 3, 1 / 3])

    def test_pseudocount_smooths_counts(self):
        g = Dag(["v0"], [])
        d = _dataset([2], [[0], [0], [0]])
        params = fit_mle(g, d, pseudocount=1.0)
        assert np.allclose(params.table("v0"), [[4 / 5, 1 / 5]])

    def test_missing_cells_rejected(self):
        g = Dag(["v0"], [])
        d = _dataset([2], [[MISSING]])
        with pytest.raises(MissingCellsPresent):
            fit_mle(g, d)

    def test_dataset_must_cover_vertices(self):
        g = Dag(["v0", "zz"], [])
        d = _dataset([2], [[0]])
        with pytest.raises(SchemaMismatch):
            fit_mle(g, d)


class TestLogLikelihood:
    def test_complete_data_matches_enumeration(self):
        for seed in range(5):
            g, params, d = _random_instance(seed, missing=0.0)
            got = log_likelihood(params, g, d)
            want = joint_log_likelihood(params, g, d)
            assert got.log_likelihood == pytest.approx(want, abs=1e-10)
            assert got.per_sample == pytest.approx(want / d.n)

    def test_missing_data_matches_enumeration(self):
        for seed in range(5):
            g, params, d = _random_instance(100 + seed, missing=0.4)
            got = log_likelihood(params, g, d)
            want = joint_log_likelihood(params, g, d)
            assert got.log_likelihood == pytest.approx(want, abs=1e-10)

    def test_wrong_parent_set_rejected(self):
        g = Dag(["v0", "v1"], [("v0", "v1")])
        params = random_params(np.random.default_rng(1), Dag(["v0", "v1"]),
                               {"v0": 2, "v1": 2})
        d = _dataset([2, 2], [[0, 0]])
        with pytest.raises(SchemaMismatch):
            log_likelihood(params, g, d)


class TestExpandCompletions:
    def test_weights_sum_to_one_per_origin(self):
        g, params, d = _random_instance(7, missing=0.4)
        rows, weights, origin, row_ll = expand_completions(g, params, d)
        sums = np.bincount(origin, weights=weights, minlength=d.n)
        assert np.allclose(sums, 1.0)
        assert rows.shape[0] == weights.size == origin.size
        assert row_ll.shape == (d.n,)

    def test_completed_rows_have_no_sentinel(self):
        g, params, d = _random_instance(8, missing=0.5)
        rows, _, _, _ = expand_completions(g, params, d)
        assert (rows >= 0).all()

    def test_cap_guards_row_blowup(self):
        g = Dag(["v0", "v1", "v2"], [])
        params = random_params(np.random.default_rng(2), g,
                               {"v0": 2, "v1": 2, "v2": 2})
        d = _dataset([2, 2, 2], [[MISSING, MISSING, MISSING]])
        with pytest.raises(TooManyMissingInRow):
            expand_completions(g, params, d, cap=4)


class TestRescale:
    def test_divides_by_n_then_max_abs(self):
        vals = [ScoreValue(-20.0), ScoreValue(-10.0)]
        assert rescale_ll(vals, 10) == [-1.0, -0.5]

    def test_accepts_plain_floats(self):
        assert rescale_ll([-4.0, -2.0], 2) == [-1.0, -0.5]

    def test_empty_rejected(self):
        with pytest.raises(EmptyList):
            rescale_ll([], 5)
        with pytest.raises(EmptyList):
            rescale_ll([-1.0], 0)

    def test_all_zero_rejected(self):
        with pytest.raises(AllZero):
            rescale_ll([0.0, 0.0], 3)


class TestEmFit:
    def test_trace_is_monotone(self):
        for seed in range(8):
            g, _, d = _random_instance(200 + seed, missing=0.35)
            _, trace = em_fit(g, d, max_iter=40)
            diffs = np.diff(trace.log_likelihoods)
            assert (diffs >= -1e-9).all()

    def test_matches_mle_on_complete_data(self):
        g, params, d = _random_instance(9, missing=0.0)
        fitted, trace = em_fit(g, d, max_iter=10)
        plain = fit_mle(g, d)
        for v in g.vertices:
            assert np.allclose(fitted.table(v), plain.table(v))

    def test_reports_convergence(self):
        g, _, d = _random_instance(10, missing=0.3)
        _, trace = em_fit(g, d, max_iter=100, tol=1e-6)
        assert trace.converged
        assert trace.iterations <= 100


class TestIpwWeights:
    def test_hand_values(self):
        # stratum v0=0: 3 usable, 2 observed -> phat = 3/5; v0=1: 1/1 -> 2/3
        d = _dataset([2, 2], [[0, 0], [0, 1], [0, MISSING], [1, 0]])
        w = ipw_weights(d, "v1", ["v0"])
        assert w[0] == pytest.approx(5 / 3)
        assert w[1] == pytest.approx(5 / 3)
        assert w[2] == 0.0
        assert w[3] == pytest.approx(3 / 2)

    def test_no_parents_gives_constant_weight(self):
        d = _dataset([2], [[0], [1], [MISSING], [0]])
        w = ipw_weights(d, "v0", [])
        assert np.allclose(w[[0, 1, 3]], 6 / 4)  # phat = (3+1)/(4+2)
        assert w[2] == 0.0

    def test_parent_missing_where_target_observed_rejected(self):
        d = _dataset([2, 2], [[MISSING, 0]])
        with pytest.raises(MissingCellsPresent):
            ipw_weights(d, "v1", ["v0"])


class TestWeightedCountsAndBic:
    def test_counts_match_hand_tally(self):
        g = Dag(["v0", "v1"], [("v0", "v1")])
        d = _dataset([2, 2], [[0, 0], [0, 1], [1, 1]])
        c = weighted_counts(g, d)
        assert np.allclose(c.tables["v0"], [[2, 1]])
        assert np.allclose(c.tables["v1"], [[1, 1], [0, 1]])
        assert c.total_weight == 3.0

    def test_bic_matches_scorer(self):
        g, _, d = _random_instance(11, missing=0.0)
        counts = weighted_counts(g, d)
        val = bic(g, counts, float(d.n))
        scorer = BicScorer(d.schema, d.rows)
        assert val.bic == pytest.approx(scorer.score(g), abs=1e-9)

    def test_bic_rejects_wrong_parent_sets(self):
        g = Dag(["v0", "v1"], [("v0", "v1")])
        d = _dataset([2, 2], [[0, 0]])
        counts = weighted_counts(Dag(["v0", "v1"]), d)
        with pytest.raises(SchemaMismatch):
            bic(g, counts, 1.0)

    def test_missing_cells_rejected(self):
        g = Dag(["v0"], [])
        d = _dataset([2], [[MISSING]])
        with pytest.raises(MissingCellsPresent):
            weighted_counts(g, d)


class TestBicScorer:
    def test_score_decomposes_over_families(self):
        g, _, d = _random_instance(12, missing=0.0)
        scorer = BicScorer(d.schema, d.rows)
        assert scorer.score(g) == pytest.approx(
            sum(scorer.family_score(v, g.parents(v)) for v in g.vertices))

    def test_move_delta_equals_score_difference(self):
        d = _dataset([2, 2, 2], np.random.default_rng(1).integers(0, 2, (80, 3)))
        scorer = BicScorer(d.schema, d.rows)
        g0 = Dag(["v0", "v1", "v2"], [("v0", "v2")])
        g1 = Dag(["v0", "v1", "v2"], [("v0", "v2"), ("v1", "v2")])
        delta = scorer.move_delta("v2", g0.parents("v2"), g1.parents("v2"))
        assert delta == pytest.approx(scorer.score(g1) - scorer.score(g0), abs=1e-9)

    def test_parent_order_does_not_matter(self):
        d = _dataset([2, 2, 2], np.random.default_rng(2).integers(0, 2, (50, 3)))
        scorer = BicScorer(d.schema, d.rows)
        assert scorer.family_score("v2", ("v0", "v1")) == scorer.family_score(
            "v2", ("v1", "v0"))

    def test_bootstrap_weights_equal_duplicated_rows(self):
        d = _dataset([2, 2], [[0, 0], [0, 1], [1, 1]])
        dup = np.repeat(d.rows, [2, 1, 3], axis=0)
        weighted = BicScorer(d.schema, d.rows, weights=np.array([2.0, 1.0, 3.0]))
        plain = BicScorer(d.schema, dup)
        g = Dag(["v0", "v1"], [("v0", "v1")])
        assert weighted.score(g) == pytest.approx(plain.score(g), abs=1e-9)


class TestIpwBicScorer:
    def test_reduces_to_plain_bic_on_complete_data(self):
        g, _, d = _random_instance(13, missing=0.0)
        names = [v.name for v in d.schema]
        plain = BicScorer(d.schema, d.rows)
        ipw = IpwBicScorer(d, {})
        assert ipw.score(g) == pytest.approx(plain.score(g), abs=1e-9)
        delta_args = (names[0], (), (names[1],))
        assert ipw.move_delta(*delta_args) == pytest.approx(
            plain.move_delta(*delta_args), abs=1e-9)

    def test_move_delta_is_antisymmetric(self):
        rng = np.random.default_rng(3)
        rows = rng.integers(0, 2, (120, 3)).astype(np.int16)
        rows[rng.random(120) < 0.3, 1] = MISSING
        d = _dataset([2, 2, 2], rows)
        w = ipw_weights(d, "v1", ["v0"])
        scorer = IpwBicScorer(d, {"v1": w})
        fwd = scorer.move_delta("v2", (), ("v1",))
        back = scorer.move_delta("v2", ("v1",), ())
        assert fwd == pytest.approx(-back, abs=1e-9)

    def test_family_counts_use_family_complete_rows_only(self):
        d = _dataset([2, 2], [[0, 0], [0, MISSING], [1, 1]])
        scorer = IpwBicScorer(d, {"v1": np.array([1.0, 0.0, 1.0])})
        counts = scorer._family_counts("v1", ("v0",))
        # the row with v1 missing contributes nothing
        assert counts.sum() == pytest.approx(2.0)

    def test_mean_one_normalisation_caps_total_evidence(self):
        rng = np.random.default_rng(4)
        rows = rng.integers(0, 2, (200, 2)).astype(np.int16)
        rows[rng.random(200) < 0.4, 1] = MISSING
        d = _dataset([2, 2], rows)
        w = ipw_weights(d, "v1", ["v0"])
        scorer = IpwBicScorer(d, {"v1": w})
        counts = scorer._family_counts("v1", ("v0",))
        n_seen = (~d.mask[:, 1]).sum()
        assert counts.sum() == pytest.approx(float(n_seen))
