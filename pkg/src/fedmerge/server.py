"""Server side: data-share weights, similarity, aggregation, round loop.

Client-specific aggregation weights minimize, elementwise over v,

    (w_uv - share_v)^2 + alpha * (w_uv - sigma_uv)^2

whose unique stationary point is (share_v + alpha * sigma_uv) / (1 + alpha);
by default each solved row is renormalized to sum to 1 so the aggregate
stays a convex combination (at alpha = 0 the raw solution already is the
share vector and is returned bit-exactly, matching fixed-weight
aggregation). Similarity is sigma_uv = 1 / (1 + ||Q_u - Q_v||_F^2), computed
exactly or through a seeded sign random projection sketch for large n.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .client import client_update
from .metrics import evaluate_all
from .privacy import perturb_upload
from .rng import stream


@dataclass
class AggregationPlan:
    share: np.ndarray  # (n,)
    sigma: np.ndarray | None  # (n, n), None under fixed-weight aggregation
    W: np.ndarray  # (n, n), row u = client u's weights
    alpha: float


@dataclass
class GlobalBundle:
    """Per-client global tables, shared or materialized per client.

    mode 'shared': one (m, d) table for everyone. mode 'per_client': an
    (n, m, d) array. mode 'lazy': rows are built on demand from (W, uploads).
    """

    mode: str
    table: np.ndarray = None  # shared
    tables: np.ndarray = None  # per_client, (n, m, d)
    W: np.ndarray = None  # lazy
    uploads: np.ndarray = None  # lazy, (n, m, d)

    def table_for(self, u: int) -> np.ndarray:
        if self.mode == "shared":
            return self.table
        if self.mode == "per_client":
            return self.tables[u]
        flat = self.uploads.reshape(self.uploads.shape[0], -1)
        return (self.W[u] @ flat).reshape(self.uploads.shape[1:])


# above this client count 'auto' similarity switches from the exact
# n^2 x (m d) computation to the seeded sign-projection sketch
AUTO_SKETCH_THRESHOLD = 2000


def resolve_similarity_mode(mode: str, n: int) -> str:
    if mode == "auto":
        return "exact" if n <= AUTO_SKETCH_THRESHOLD else "sketch"
    return mode


@dataclass(frozen=True)
class ServerConfig:
    aggregation: str = "similarity"  # 'fixed' | 'similarity'
    alpha: float = 1.0
    normalize_weights: bool = True
    similarity: str = "auto"  # 'auto' | 'exact' | 'sketch'
    sketch_dim: int = 256
    participation: float = 1.0
    lazy_bundle: bool = False

    def __post_init__(self):
        if self.aggregation not in ("fixed", "similarity"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.similarity not in ("auto", "exact", "sketch"):
            raise ValueError(f"unknown similarity mode {self.similarity!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0 < self.participation <= 1:
            raise ValueError("participation must be in (0, 1]")
        if self.sketch_dim <= 0:
            raise ValueError("sketch_dim must be > 0")


def compute_share_weights(train_sizes) -> np.ndarray:
    """Data-share weights |D_v| / sum |D_w| from train-split sizes."""
    sizes = np.asarray(train_sizes, dtype=np.float64)
    total = sizes.sum()
    if total <= 0:
        raise ValueError("zero total interactions")
    return sizes / total


def pairwise_similarity(
    tables, mode: str = "exact", sketch_dim: int = 256, seed: int = 0,
    projection=None,
) -> np.ndarray:
    """Similarity matrix 1 / (1 + squared distance) between client tables.

    'exact' uses the squared Frobenius distance via the Gram expansion
    ||A||^2 + ||B||^2 - 2<A, B>. 'sketch' first projects the flattened
    tables with a shared random sign projection scaled by 1/sqrt(k) (so
    squared distances are unbiased), drawn on the (seed, sketch) stream; a
    precomputed ``projection`` matrix overrides it. The diagonal is forced
    to 1 and the matrix is exactly symmetric by construction.
    """
    tables = np.asarray(tables, dtype=np.float64)
    n = tables.shape[0]
    X = tables.reshape(n, -1)
    if mode == "sketch":
        if projection is None:
            if sketch_dim <= 0:
                raise ValueError("sketch_dim must be > 0")
            rng = stream(seed, "sketch")
            projection = rng.choice([-1.0, 1.0], size=(X.shape[1], sketch_dim))
            projection /= np.sqrt(sketch_dim)
        X = X @ projection
    elif mode != "exact":
        raise ValueError(f"unknown similarity mode {mode!r}")
    sq = np.einsum("ij,ij->i", X, X)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    sigma = 1.0 / (1.0 + d2)
    upper = np.triu(sigma, 1)
    sigma = upper + upper.T
    np.fill_diagonal(sigma, 1.0)
    return sigma


def solve_aggregation_weights(
    share, sigma_row, alpha: float, normalize: bool = True
) -> np.ndarray:
    """Closed-form minimizer of the per-element aggregation objective.

    Returns (share + alpha * sigma_row) / (1 + alpha), renormalized to sum
    to 1 when ``normalize``. alpha = 0 returns the share weights bit-exactly
    (no renormalization: the share row sums to 1 by construction).
    """
    share = np.asarray(share, dtype=np.float64)
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0.0:
        return share.copy()
    sigma_row = np.asarray(sigma_row, dtype=np.float64)
    raw = (share + alpha * sigma_row) / (1.0 + alpha)
    if not normalize:
        return raw
    total = raw.sum()
    if total <= 0:
        raise ValueError("degenerate all-zero weight row")
    return raw / total


def build_plan(share, sigma, alpha: float, normalize: bool = True) -> AggregationPlan:
    """Solve every client's weight row."""
    n = len(share)
    if sigma is None or alpha == 0.0:
        W = np.tile(share, (n, 1))
        return AggregationPlan(share=share, sigma=sigma, W=W, alpha=alpha)
    W = np.empty((n, n))
    for u in range(n):
        W[u] = solve_aggregation_weights(share, sigma[u], alpha, normalize)
    return AggregationPlan(share=share, sigma=sigma, W=W, alpha=alpha)


def aggregate(W, uploads, lazy: bool = False) -> GlobalBundle:
    """Per-client global tables Q_u^g = sum_v W[u, v] * upload_v.

    Eager mode materializes all n tables with one fixed-order product; lazy
    mode stores (W, uploads) and builds rows on demand (identical up to
    float reduction order, ~1e-12).
    """
    uploads = np.asarray(uploads, dtype=np.float64)
    n = uploads.shape[0]
    if W.shape != (n, n):
        raise ValueError("weight matrix shape mismatch")
    if lazy:
        return GlobalBundle(mode="lazy", W=W, uploads=uploads)
    flat = uploads.reshape(n, -1)
    tables = (W @ flat).reshape(uploads.shape)
    return GlobalBundle(mode="per_client", tables=tables)


def aggregate_fixed(share, uploads) -> GlobalBundle:
    """One shared global table under fixed (data-share) weights."""
    uploads = np.asarray(uploads, dtype=np.float64)
    flat = uploads.reshape(uploads.shape[0], -1)
    table = (share @ flat).reshape(uploads.shape[1:])
    return GlobalBundle(mode="shared", table=table)


def run_round(
    states,
    bundle: GlobalBundle,
    server_cfg: ServerConfig,
    round_cfg,
    round_index: int,
    share: np.ndarray,
    threads: int = 1,
    eval_ks=(5, 10),
    eval_split: str = "test",
):
    """One synchronous round: update, (perturb), plan, aggregate, evaluate.

    Returns (new bundle, MetricRecord). Client updates may run on a thread
    pool; results are collected in client order and every reduction is
    fixed-order, so the pool degree cannot change the outcome.
    """
    t0 = time.perf_counter()
    n = len(states)
    participants = list(range(n))
    if server_cfg.participation < 1.0:
        count = max(1, int(round(server_cfg.participation * n)))
        rng = stream(round_cfg.seed, "participation", round_index)
        participants = sorted(rng.choice(n, size=count, replace=False).tolist())

    def _update(u):
        return client_update(states[u], bundle.table_for(u), round_cfg, round_index)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_update, participants))
    else:
        results = [_update(u) for u in participants]

    uploads = np.stack([r.upload for r in results])
    if round_cfg.ldp.enabled and round_cfg.ldp.delta > 0:
        for k, u in enumerate(participants):
            rng = stream(round_cfg.seed, "ldp", u, round_index)
            uploads[k] = perturb_upload(uploads[k], round_cfg.ldp.delta, rng)

    part_share = share[participants]
    part_share = part_share / part_share.sum() if len(participants) < n else share

    if server_cfg.aggregation == "fixed" or server_cfg.alpha == 0.0:
        # at alpha = 0 every solved weight row equals the share vector, so
        # similarity aggregation degenerates to the fixed-weight table
        # bit-exactly; route both through the same computation
        new_bundle = aggregate_fixed(part_share, uploads)
    else:
        sigma = pairwise_similarity(
            uploads,
            mode=resolve_similarity_mode(server_cfg.similarity, len(participants)),
            sketch_dim=server_cfg.sketch_dim,
            seed=round_cfg.seed,
        )
        if len(participants) < n:
            plan = AggregationPlan(
                share=part_share,
                sigma=sigma,
                W=np.vstack(
                    [
                        solve_aggregation_weights(
                            part_share, sigma[k], server_cfg.alpha,
                            server_cfg.normalize_weights,
                        )
                        for k in range(len(participants))
                    ]
                ),
                alpha=server_cfg.alpha,
            )
            # only participants get fresh tables; non-participants keep
            # their previous bundle row until they next participate
            fresh = aggregate(plan.W, uploads, lazy=server_cfg.lazy_bundle)
            new_bundle = _merge_partial_bundle(bundle, fresh, participants, n)
        else:
            plan = build_plan(
                share, sigma, server_cfg.alpha, server_cfg.normalize_weights
            )
            new_bundle = aggregate(plan.W, uploads, lazy=server_cfg.lazy_bundle)

    record = evaluate_all(states, ks=eval_ks, which=eval_split)
    record.round_index = round_index
    losses = [r.train_loss for r in results if r.example_count > 0]
    record.train_loss = float(np.mean(losses)) if losses else float("nan")
    record.seconds = time.perf_counter() - t0
    return new_bundle, record


def _merge_partial_bundle(old, fresh, participants, n):
    tables = np.stack([old.table_for(u) for u in range(n)])
    for k, u in enumerate(participants):
        tables[u] = fresh.table_for(k)
    return GlobalBundle(mode="per_client", tables=tables)
