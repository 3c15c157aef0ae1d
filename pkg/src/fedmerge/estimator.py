"""scikit-learn style front end for the federated recommender.

``FederatedMergeRecommender`` wraps the full simulation behind the familiar
estimator API: construct with hyperparameters, ``fit`` on an interaction
table, then ``predict`` scores for (user, item) pairs or ask for ``top_k``
recommendations. ``get_params`` / ``set_params`` come from ``BaseEstimator``
so the model composes with sklearn tooling (``clone``, grid search over the
merge scheme or alpha, pipelines that end in a recommender).

Input format for ``fit``: an array-like of shape (n_ratings, 3) or
(n_ratings, 4) with columns (user, item, value[, timestamp]), or a list of
``RawRating``. Users and items may be arbitrary ids; they are densely
re-indexed internally and mapped back on the way out.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import ExperimentConfig
from .data import RawRating, build_dataset, leave_one_out_split
from .metrics import evaluate_all
from .model import sigmoid
from .runner import Simulation


def canonical_id(x) -> str:
    """Stable external-id key: integral numerics map to their integer form.

    Ratings arrays are often float-typed, which would turn user 1 into
    '1.0' at fit time but '1' at predict time; canonicalizing both sides
    keeps the id space consistent. Non-numeric ids pass through unchanged.
    """
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return str(int(x)) if float(x).is_integer() else str(x)
    s = str(x)
    try:
        f = float(s)
    except ValueError:
        return s
    return str(int(f)) if f.is_integer() else s


def as_ratings(X) -> list:
    """Validate and convert fit input to a list of RawRating."""
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], RawRating):
        return list(X)
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] not in (3, 4):
        raise ValueError(
            "expected (n_ratings, 3) or (n_ratings, 4) array of "
            "(user, item, value[, timestamp]); got shape "
            f"{arr.shape if arr.ndim else 'scalar'}"
        )
    has_ts = arr.shape[1] == 4
    out = []
    for row in arr:
        value = float(row[2])
        ts = int(float(row[3])) if has_ts else None
        out.append(RawRating(canonical_id(row[0]), canonical_id(row[1]), value, ts))
    return out


class FederatedMergeRecommender(BaseEstimator):
    """Personalized federated matrix factorization with elastic merging.

    Each user is a federated client with a private user vector and its own
    item table; per round, clients blend the downloaded global table into
    their local one with learned per-item weights, train locally, and the
    server aggregates uploads with similarity-informed weights.

    Parameters mirror the experiment configuration; see the README for the
    full table. The fitted model keeps one personalized item table per
    client, so predictions are client-specific.
    """

    def __init__(
        self,
        n_factors=16,
        n_rounds=100,
        local_epochs=10,
        batch_size=256,
        n_negatives=4,
        learning_rate=0.1,
        adapter_learning_rate=0.1,
        optimizer="adam",
        scheme="EM",
        scheme_rho=0.5,
        merge_schedule="first_epoch",
        adapter_layers=None,
        aggregation="similarity",
        alpha=1.0,
        normalize_weights=True,
        similarity="auto",
        sketch_dim=256,
        ldp=False,
        ldp_delta=0.3,
        ldp_clip=1.0,
        min_interactions=10,
        init_std=0.01,
        eval_k=(5, 10),
        threads=1,
        seed=0,
    ):
        self.n_factors = n_factors
        self.n_rounds = n_rounds
        self.local_epochs = local_epochs
        self.batch_size = batch_size
        self.n_negatives = n_negatives
        self.learning_rate = learning_rate
        self.adapter_learning_rate = adapter_learning_rate
        self.optimizer = optimizer
        self.scheme = scheme
        self.scheme_rho = scheme_rho
        self.merge_schedule = merge_schedule
        self.adapter_layers = adapter_layers
        self.aggregation = aggregation
        self.alpha = alpha
        self.normalize_weights = normalize_weights
        self.similarity = similarity
        self.sketch_dim = sketch_dim
        self.ldp = ldp
        self.ldp_delta = ldp_delta
        self.ldp_clip = ldp_clip
        self.min_interactions = min_interactions
        self.init_std = init_std
        self.eval_k = eval_k
        self.threads = threads
        self.seed = seed

    def _config(self) -> ExperimentConfig:
        return ExperimentConfig(
            dim=self.n_factors,
            optimizer=self.optimizer,
            init_std=self.init_std,
            adapter_layers=tuple(self.adapter_layers or ()),
            rounds=self.n_rounds,
            local_epochs=self.local_epochs,
            batch_size=self.batch_size,
            negatives=self.n_negatives,
            lr=self.learning_rate,
            adapter_lr=self.adapter_learning_rate,
            merge_schedule=self.merge_schedule,
            scheme=self.scheme,
            scheme_rho=self.scheme_rho,
            aggregation=self.aggregation,
            alpha=self.alpha,
            normalize_weights=self.normalize_weights,
            similarity=self.similarity,
            sketch_dim=self.sketch_dim,
            ldp_enabled=self.ldp,
            ldp_delta=self.ldp_delta,
            ldp_clip=self.ldp_clip,
            min_interactions=self.min_interactions,
            eval_k=tuple(self.eval_k),
            seed=self.seed,
            threads=self.threads,
        ).validate()

    def fit(self, X, y=None):
        """Train on an interaction table; y is ignored (implicit feedback)."""
        cfg = self._config()
        ratings = as_ratings(X)
        self.dataset_ = build_dataset(ratings, cfg.min_interactions)
        self.splits_ = leave_one_out_split(self.dataset_, cfg.seed)
        sim = Simulation(self.dataset_, self.splits_, cfg, cfg.seed)
        self.history_ = sim.run()
        self.states_ = sim.states
        self.n_clients_ = self.dataset_.n
        self.n_items_ = self.dataset_.m
        return self

    def _check_fitted(self):
        if not hasattr(self, "states_"):
            raise NotFittedError("call fit before using the model")

    def _client_index(self, user) -> int:
        try:
            return self.dataset_.user_index_map[canonical_id(user)]
        except KeyError:
            raise KeyError(f"unknown user {user!r} (filtered out or never seen)")

    def _item_index(self, item) -> int:
        try:
            return self.dataset_.item_index_map[canonical_id(item)]
        except KeyError:
            raise KeyError(f"unknown item {item!r}")

    def predict(self, X) -> np.ndarray:
        """Interaction probabilities for an array of (user, item) pairs."""
        self._check_fitted()
        arr = np.asarray(X)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("expected (n_pairs, 2) array of (user, item)")
        out = np.empty(len(arr))
        for k, (user, item) in enumerate(arr):
            state = self.states_[self._client_index(user)]
            i = self._item_index(item)
            out[k] = sigmoid(float(state.local_table[i] @ state.user_vec))
        return out

    def top_k(self, user, k: int = 10, exclude_observed: bool = True):
        """The user's k highest-scored items (external ids), best first."""
        self._check_fitted()
        u = self._client_index(user)
        state = self.states_[u]
        scores = state.local_table @ state.user_vec
        if exclude_observed:
            scores = scores.copy()
            scores[self.dataset_.items[u]] = -np.inf
        order = np.argsort(-scores, kind="stable")[:k]
        index_to_item = {v: key for key, v in self.dataset_.item_index_map.items()}
        return [index_to_item[int(i)] for i in order]

    def evaluate(self, which: str = "test"):
        """Held-out ranking metrics of the fitted personalized models."""
        self._check_fitted()
        record = evaluate_all(self.states_, ks=tuple(self.eval_k), which=which)
        return {
            **{f"hr@{k}": v for k, v in record.hr.items()},
            **{f"ndcg@{k}": v for k, v in record.ndcg.items()},
        }

    def score(self, X=None, y=None) -> float:
        """Mean held-out HR at the largest configured K."""
        return self.evaluate()[f"hr@{max(self.eval_k)}"]
