import numpy as np
import pytest

from fedmerge.theory import (
    alignment_inner_product,
    compensation_threshold_check,
    deviation_bound,
    one_round_distance_comparison,
    run_probe,
    two_cluster_instance,
)


class TestInstance:
    def test_layout(self):
        inst = two_cluster_instance(n=10, d=4, zeta=1.0)
        assert inst.n == 10 and inst.d == 4
        assert np.allclose(inst.optima[:5, 0], 1.0)
        assert np.allclose(inst.optima[5:, 0], -1.0)
        assert np.all(inst.optima[:, 1:] == 0.0)

    def test_loss_and_grad_are_the_quadratic(self):
        inst = two_cluster_instance()
        q = np.array([2.0, 1.0, 0.0, 0.0])
        assert inst.loss(0, q) == pytest.approx(0.5 * ((2 - 1) ** 2 + 1), abs=1e-15)
        assert np.allclose(inst.grad(0, q), q - inst.optima[0])

    def test_odd_n_rejected(self):
        with pytest.raises(ValueError):
            two_cluster_instance(n=5)


class TestAlignment:
    def test_zero_at_the_optimum(self):
        inst = two_cluster_instance()
        assert alignment_inner_product(inst, 3, inst.optima[3]) == 0.0

    def test_unit_offset_gives_one(self):
        inst = two_cluster_instance()
        e = np.zeros(inst.d)
        e[1] = 1.0
        assert alignment_inner_product(inst, 0, inst.optima[0] + e) == pytest.approx(1.0)

    def test_always_nonnegative_and_equals_squared_distance(self):
        inst = two_cluster_instance()
        rng = np.random.default_rng(0)
        for _ in range(100):
            u = int(rng.integers(inst.n))
            Q = rng.normal(scale=3.0, size=inst.d)
            val = alignment_inner_product(inst, u, Q)
            want = float(np.sum((Q - inst.optima[u]) ** 2))
            assert val >= 0.0
            assert val == pytest.approx(want, rel=1e-14)


class TestDistanceComparison:
    def test_two_client_closed_form(self):
        # one client at +e, the other at -e: the aggregate for client 0 is
        # exactly -e, so dist_replacement = 2(1-eta), dist_merge = 2 rho (1-eta)
        inst = two_cluster_instance(n=2, d=4, zeta=1.0)
        eta, rho = 0.1, 0.1
        dist_sr, dist_em = one_round_distance_comparison(inst, 0, rho, eta)
        assert dist_sr == pytest.approx((1 - eta) * 2.0, rel=1e-14)
        assert dist_em == pytest.approx((1 - eta) * 2.0 * rho, rel=1e-13)
        assert dist_em < dist_sr

    def test_rho_one_degenerates_to_replacement(self):
        inst = two_cluster_instance()
        dist_sr, dist_em = one_round_distance_comparison(inst, 0, 1.0, 0.2)
        assert dist_em == pytest.approx(dist_sr, rel=1e-14)

    def test_rho_zero_stays_at_the_optimum(self):
        inst = two_cluster_instance()
        _, dist_em = one_round_distance_comparison(inst, 0, 0.0, 0.2)
        assert dist_em == pytest.approx(0.0, abs=1e-14)

    def test_merge_never_worse_with_equality_only_at_one(self):
        inst = two_cluster_instance()
        for u in (0, 7):
            for rho in np.linspace(0.0, 1.0, 21):
                dist_sr, dist_em = one_round_distance_comparison(inst, u, float(rho), 0.1)
                if rho < 1.0:
                    assert dist_em < dist_sr
                else:
                    assert dist_em == pytest.approx(dist_sr, rel=1e-14)


class TestCompensation:
    def test_rho_zero_is_equality(self):
        inst = two_cluster_instance()
        rng = np.random.default_rng(1)
        q_l, q_g = rng.normal(size=4), rng.normal(size=4)
        holds, margin = compensation_threshold_check(inst, 0, 0.0, q_l, q_g)
        assert holds and margin == pytest.approx(0.0, abs=1e-12)

    def test_zero_discrepancy_reduces_to_local_terms(self):
        inst = two_cluster_instance()
        q = np.array([0.5, -0.2, 0.1, 0.0])
        holds, _ = compensation_threshold_check(inst, 2, 0.6, q, q.copy())
        assert holds
        # the bound collapses to ||grad|| * ||local - optimum||
        c = deviation_bound(inst, 2, q, q, rho=0.6)
        grad_norm = np.linalg.norm(inst.grad(2, q))
        dist = np.linalg.norm(q - inst.optima[2])
        assert c == pytest.approx(grad_norm * dist, rel=1e-14)

    def test_holds_on_a_thousand_random_draws(self):
        inst = two_cluster_instance()
        rng = np.random.default_rng(2)
        for _ in range(1000):
            u = int(rng.integers(inst.n))
            rho = float(rng.uniform())
            q_l = rng.normal(scale=2.0, size=inst.d)
            q_g = rng.normal(scale=2.0, size=inst.d)
            holds, margin = compensation_threshold_check(inst, u, rho, q_l, q_g)
            assert holds, f"margin {margin} at rho={rho}"


def test_run_probe_reports_all_hold():
    all_hold, rows = run_probe(draws=500, seed=3)
    assert all_hold
    assert len(rows) == 500
    assert all(len(r) == 5 for r in rows)
