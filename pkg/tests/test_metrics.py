import numpy as np
import pytest

from fedmerge.client import ClientState
from fedmerge.data import ClientSplit
from fedmerge.metrics import evaluate_all, hr_at_k, ndcg_at_k, rank_test_item


def sort_oracle_rank(scores, ids, test_item):
    """Full sort by (-score, id); rank = 1 + position of the test item."""
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    ranked_ids = [ids[i] for i in order]
    return ranked_ids.index(test_item) + 1


def make_state(u, table, user_vec, negatives, test):
    split = ClientSplit(
        train=np.array([], dtype=np.int64),
        validation=int(negatives[0]),  # unused here
        test=int(test),
        eval_negatives=np.asarray(negatives, dtype=np.int64),
    )
    return ClientState(u, user_vec, table, None, None, None, split)


class TestRank:
    def test_strict_maximum_is_rank_one(self):
        scores = np.array([0.1, 0.9, 0.3])
        ids = np.array([5, 7, 9])
        assert rank_test_item(scores, ids, 7) == 1

    def test_all_tied_largest_id_is_last(self):
        scores = np.zeros(100)
        ids = np.arange(100)
        assert rank_test_item(scores, ids, 99) == 100

    def test_all_tied_smallest_id_is_first(self):
        scores = np.zeros(100)
        ids = np.arange(100)
        assert rank_test_item(scores, ids, 0) == 1

    def test_matches_sort_oracle_on_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(2, 60))
            ids = rng.permutation(1000)[:n]
            # quantized scores force plenty of ties
            scores = np.round(rng.normal(size=n), 1)
            test_item = int(ids[rng.integers(n)])
            assert rank_test_item(scores, ids, test_item) == sort_oracle_rank(
                scores, ids, test_item
            )

    def test_missing_test_item(self):
        with pytest.raises(ValueError, match="not among"):
            rank_test_item(np.zeros(3), np.array([1, 2, 3]), 9)

    def test_non_finite_scores_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            rank_test_item(np.array([np.nan, 0.0]), np.array([1, 2]), 1)


class TestPointMetrics:
    def test_hr_boundary_inclusive(self):
        assert hr_at_k(10, 10) == 1
        assert hr_at_k(11, 10) == 0
        assert hr_at_k(1, 1) == 1

    def test_ndcg_values(self):
        assert ndcg_at_k(1, 10) == 1.0
        assert ndcg_at_k(3, 10) == pytest.approx(0.5, abs=1e-15)  # 1/log2(4)
        assert ndcg_at_k(11, 10) == 0.0

    def test_monotone_non_increasing_in_rank(self):
        for K in (1, 5, 10):
            hr = [hr_at_k(r, K) for r in range(1, 30)]
            nd = [ndcg_at_k(r, K) for r in range(1, 30)]
            assert hr == sorted(hr, reverse=True)
            assert nd == sorted(nd, reverse=True)

    def test_ndcg_never_exceeds_hr(self):
        for K in (1, 5, 10):
            for r in range(1, 30):
                assert ndcg_at_k(r, K) <= hr_at_k(r, K)

    def test_rank_must_be_positive(self):
        with pytest.raises(ValueError):
            hr_at_k(0, 10)
        with pytest.raises(ValueError):
            ndcg_at_k(0, 10)


class TestEvaluateAll:
    def test_untrained_model_hits_the_null_rate(self):
        # null expectation: the test item lands uniformly among 100
        # candidates, so HR@10 = 0.10; verified here by simulation
        rng = np.random.default_rng(1)
        m = 150
        states = []
        for u in range(1200):
            table = rng.normal(size=(m, 6)) * 0.01
            vec = rng.normal(size=6) * 0.01
            cands = rng.permutation(m)[:100]
            states.append(make_state(u, table, vec, cands[:99], cands[99]))
        record = evaluate_all(states, ks=(10,))
        assert abs(record.hr[10] - 0.10) < 0.02

    def test_perfect_model_scores_one(self):
        states = []
        for u in range(5):
            table = np.zeros((120, 3))
            test = 100 + u
            table[test] = 1.0
            states.append(make_state(u, table, np.ones(3), np.arange(99), test))
        record = evaluate_all(states, ks=(5, 10))
        assert record.hr[10] == 1.0 and record.ndcg[10] == 1.0

    def test_single_client_record_is_that_client(self):
        table = np.zeros((120, 3))
        table[50] = 1.0
        state = make_state(0, table, np.ones(3), np.arange(99), 50)
        record = evaluate_all([state], ks=(10,))
        assert record.hr[10] == 1.0

    def test_evaluation_mutates_nothing(self):
        rng = np.random.default_rng(2)
        table = rng.normal(size=(120, 4))
        vec = rng.normal(size=4)
        state = make_state(0, table.copy(), vec.copy(), np.arange(99), 110)
        evaluate_all([state], ks=(5, 10))
        assert np.array_equal(state.local_table, table)
        assert np.array_equal(state.user_vec, vec)

    def test_validation_split_selection(self):
        table = np.zeros((120, 3))
        table[40] = 1.0  # validation item scored top
        split = ClientSplit(
            train=np.array([], dtype=np.int64),
            validation=40,
            test=50,
            eval_negatives=np.arange(30, dtype=np.int64),
        )
        state = ClientState(0, np.ones(3), table, None, None, None, split)
        test_rec = evaluate_all([state], ks=(10,), which="test")
        val_rec = evaluate_all([state], ks=(10,), which="validation")
        assert val_rec.hr[10] == 1.0
        assert test_rec.hr[10] == 0.0
