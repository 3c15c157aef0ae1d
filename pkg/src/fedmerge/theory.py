"""Empirical probes of the aggregation-bottleneck and merge-compensation claims.

The probes run on a synthetic strongly convex instance with known per-client
optima: client u's loss is L_u(q) = 0.5 * ||q - q_u*||^2, which is 1-smooth
and 1-strongly convex with gradient q - q_u*. Optima sit in two clusters at
+/- zeta * e_1, so the mean of the other clients' optima (the aggregate a
client would download) genuinely deviates from its own optimum.

Probed claims, at smoothness constant L = 1:

  * replacement distance growth: after one gradient step, starting from the
    aggregate lands farther from the client optimum than starting from the
    rho-merge of (aggregate, local optimum), for every rho < 1;
  * merge compensation: <grad L_u(merged), merged - q_u*> >=
    (1 - rho) * <grad L_u(local), local - q_u*> - rho * C with C the
    deviation bound evaluated numerically on the instance.

Note the alignment inner product <grad L_u(Q), Q - q_u*> equals
||Q - q_u*||^2 on this instance and is therefore never negative; the probe
tests the operational distance-growth claim, not a sign flip.
"""

from dataclasses import dataclass

import numpy as np

from .rng import stream


@dataclass
class QuadraticInstance:
    optima: np.ndarray  # (n, d), row u = q_u*

    @property
    def n(self) -> int:
        return self.optima.shape[0]

    @property
    def d(self) -> int:
        return self.optima.shape[1]

    def loss(self, u: int, q) -> float:
        diff = q - self.optima[u]
        return 0.5 * float(diff @ diff)

    def grad(self, u: int, q) -> np.ndarray:
        return q - self.optima[u]

    def rest_mean(self, u: int) -> np.ndarray:
        """Mean of all other clients' optima (the aggregate a client sees)."""
        mask = np.arange(self.n) != u
        return self.optima[mask].mean(axis=0)


def two_cluster_instance(n: int = 10, d: int = 4, zeta: float = 1.0) -> QuadraticInstance:
    """n clients split into two clusters of optima at +/- zeta * e_1."""
    if n < 2 or n % 2:
        raise ValueError("n must be even and >= 2")
    e = np.zeros(d)
    e[0] = 1.0
    optima = np.vstack([np.tile(zeta * e, (n // 2, 1)), np.tile(-zeta * e, (n // 2, 1))])
    return QuadraticInstance(optima=optima)


def alignment_inner_product(instance: QuadraticInstance, u: int, Q) -> float:
    """<grad L_u(Q), Q - q_u*>; equals ||Q - q_u*||^2 on this instance."""
    diff = np.asarray(Q, dtype=np.float64) - instance.optima[u]
    return float(instance.grad(u, Q) @ diff)


def one_round_distance_comparison(
    instance: QuadraticInstance, u: int, rho: float, eta: float
):
    """Distances to q_u* after one gradient step from replacement vs merge.

    The local model starts at its optimum q_u*, the downloaded aggregate is
    the mean of the other clients' optima. Returns (dist_replacement,
    dist_merge).
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must be in [0, 1]")
    if not 0.0 < eta <= 1.0:
        raise ValueError("eta must be in (0, 1]")
    q_star = instance.optima[u]
    g = instance.rest_mean(u)

    start_sr = g
    step_sr = start_sr - eta * instance.grad(u, start_sr)
    dist_sr = float(np.linalg.norm(step_sr - q_star))

    start_em = rho * g + (1.0 - rho) * q_star
    step_em = start_em - eta * instance.grad(u, start_em)
    dist_em = float(np.linalg.norm(step_em - q_star))
    return dist_sr, dist_em


def deviation_bound(instance, u, q_local, q_global, rho: float, L: float = 1.0) -> float:
    """The merge-deviation constant evaluated numerically on the instance."""
    q_star = instance.optima[u]
    grad_local = instance.grad(u, q_local)
    dist_local = np.linalg.norm(q_local - q_star)
    delta = np.linalg.norm(q_global - q_local)
    return float(
        np.linalg.norm(grad_local) * (dist_local + delta)
        + L * delta * (dist_local + rho * delta)
    )


def compensation_threshold_check(
    instance: QuadraticInstance, u: int, rho: float, q_local, q_global
):
    """Check the merge-compensation inequality for one (local, global, rho).

    Returns (holds, margin) with margin = lhs - rhs, where
    lhs = <grad L_u(merged), merged - q_u*> and
    rhs = (1 - rho) * <grad L_u(local), local - q_u*> - rho * C.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must be in [0, 1]")
    q_local = np.asarray(q_local, dtype=np.float64)
    q_global = np.asarray(q_global, dtype=np.float64)
    merged = rho * q_global + (1.0 - rho) * q_local
    lhs = alignment_inner_product(instance, u, merged)
    rhs = (1.0 - rho) * alignment_inner_product(instance, u, q_local) - rho * deviation_bound(
        instance, u, q_local, q_global, rho
    )
    margin = lhs - rhs
    return margin >= 0.0, margin


def run_probe(draws: int = 1000, seed: int = 0, n: int = 10, d: int = 4, zeta: float = 1.0):
    """Run both probes; returns (all_hold, rows) with one row per draw.

    Each row is (draw, rho, lhs_margin, dist_replacement, dist_merge). The
    compensation check uses random (local, global, rho) triples; the distance
    comparison uses the same rho with eta = 0.1.
    """
    instance = two_cluster_instance(n=n, d=d, zeta=zeta)
    rng = stream(seed, "probe")
    rows = []
    all_hold = True
    for i in range(draws):
        u = int(rng.integers(instance.n))
        rho = float(rng.uniform(0.0, 1.0))
        q_local = rng.normal(0.0, 1.0, size=instance.d)
        q_global = rng.normal(0.0, 1.0, size=instance.d)
        holds, margin = compensation_threshold_check(instance, u, rho, q_local, q_global)
        dist_sr, dist_em = one_round_distance_comparison(
            instance, u, min(rho, 1.0 - 1e-12), 0.1
        )
        if not holds or not (dist_em < dist_sr):
            all_hold = False
        rows.append((i, rho, margin, dist_sr, dist_em))
    return all_hold, rows
