import os

import numpy as np
import pytest

from fedmerge.config import DATA_ROOT_ENV
from fedmerge.data import RawRating, build_dataset, leave_one_out_split


def make_clustered_ratings(n_users=20, n_items=260, per_user=14, n_clusters=2, seed=7):
    """Synthetic implicit feedback with clustered tastes.

    Users in the same cluster draw from the same item pool, so the instance
    is heterogeneous across clusters: a plain global average mixes tastes
    while per-client models can stay sharp.
    """
    rng = np.random.default_rng(seed)
    pool_size = n_items // n_clusters
    ratings = []
    for u in range(n_users):
        pool = np.arange(pool_size) + (u % n_clusters) * pool_size
        items = rng.choice(pool, size=per_user, replace=False)
        for t, i in enumerate(items):
            ratings.append(RawRating(str(u), str(i), 1.0, 1000 + t))
    return ratings


def write_ml100k_file(path, ratings):
    """Write ratings in the tab-separated movielens-100k layout."""
    with open(path, "w") as fh:
        for r in ratings:
            fh.write(f"{r.user_id}\t{r.item_id}\t{int(r.value)}\t{r.timestamp}\n")


@pytest.fixture
def tiny():
    ds = build_dataset(make_clustered_ratings(), min_interactions=10)
    splits = leave_one_out_split(ds, seed=0)
    return ds, splits


@pytest.fixture
def tiny_file(tmp_path):
    path = tmp_path / "tiny_u.data"
    write_ml100k_file(path, make_clustered_ratings())
    return str(path)


def dataset_file(*relparts):
    """Resolve a benchmark dataset file under the data root, or skip."""
    root = os.environ.get(DATA_ROOT_ENV, os.path.join(os.path.dirname(__file__), "..", "data"))
    path = os.path.join(root, *relparts)
    if not os.path.exists(path):
        pytest.skip(
            f"benchmark dataset file not found: {path} "
            f"(set ${DATA_ROOT_ENV} or place the file; see README)"
        )
    return path


@pytest.fixture
def ml100k_file():
    return dataset_file("ml-100k", "u.data")
