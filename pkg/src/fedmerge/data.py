"""Interaction data: parsing, binarization, filtering, splits, sampling.

Raw rating files are parsed into :class:`RawRating` records, binarized to
implicit positives, filtered (users with fewer than ``min_interactions``
interactions are dropped in a single pass), densely re-indexed, and split
leave-one-out per client: the latest interaction is the test item, the latest
of the remainder the validation item, the rest the train set. Timestamp ties
are broken by the larger dense item index counting as later; formats without
timestamps (filmtrust, lastfm-2k) use file order as temporal order.
"""

from dataclasses import dataclass, field

import numpy as np

from .rng import stream

FORMATS = ("movielens-100k", "movielens-1m", "filmtrust", "lastfm-2k")

CACHE_VERSION = 1


class DatasetFormatError(ValueError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


@dataclass(frozen=True)
class RawRating:
    user_id: str
    item_id: str
    value: float
    timestamp: int | None = None


@dataclass
class InteractionDataset:
    """Binarized implicit-feedback interactions, densely indexed.

    ``items[u]`` holds client u's item indices ordered by (effective time,
    item index) ascending, i.e. chronologically with deterministic
    tie-breaking; all labels are implicitly 1.
    """

    n: int
    m: int
    items: list  # list of np.ndarray[int64], one per client, time-ordered
    user_index_map: dict  # external user id -> dense index
    item_index_map: dict  # external item id -> dense index

    @property
    def interaction_count(self) -> int:
        return sum(len(a) for a in self.items)

    def train_sizes(self, splits) -> np.ndarray:
        return np.array([len(s.train) for s in splits], dtype=np.int64)


@dataclass
class ClientSplit:
    """Leave-one-out split for one client."""

    train: np.ndarray  # item indices, time-ordered
    validation: int
    test: int
    eval_negatives: np.ndarray  # 99 items the client never observed
    unobserved: np.ndarray = field(repr=False, default=None)  # sorted, for sampling

    @property
    def eval_candidates(self) -> np.ndarray:
        """The 100 ranking candidates for the test item (negatives + test)."""
        return np.concatenate([self.eval_negatives, [self.test]])

    def candidates_for(self, which: str) -> np.ndarray:
        """Candidates for 'test' or 'validation' evaluation."""
        held_out = self.test if which == "test" else self.validation
        return np.concatenate([self.eval_negatives, [held_out]])


def _split_line(line, sep, n_fields, path, line_no):
    parts = line.split(sep) if sep is not None else line.split()
    if len(parts) != n_fields:
        raise DatasetFormatError(
            path, line_no, f"expected {n_fields} fields, got {len(parts)}: {line!r}"
        )
    return parts


def parse_dataset(path, format: str) -> list:
    """Parse a raw rating file into a list of RawRating.

    Formats:
      movielens-100k  user<TAB>item<TAB>rating<TAB>timestamp
      movielens-1m    user::item::rating::timestamp
      filmtrust       user item rating          (whitespace, no timestamp)
      lastfm-2k       user<TAB>artist<TAB>weight (one header line skipped)

    Malformed lines raise DatasetFormatError with the line number.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    ratings = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if format == "lastfm-2k" and line_no == 1:
                continue  # header line
            if not line:
                continue
            try:
                if format == "movielens-100k":
                    u, i, v, t = _split_line(line, "\t", 4, path, line_no)
                    ratings.append(RawRating(u, i, float(v), int(t)))
                elif format == "movielens-1m":
                    u, i, v, t = _split_line(line, "::", 4, path, line_no)
                    ratings.append(RawRating(u, i, float(v), int(t)))
                elif format == "filmtrust":
                    u, i, v = _split_line(line, None, 3, path, line_no)
                    ratings.append(RawRating(u, i, float(v)))
                else:  # lastfm-2k
                    u, i, v = _split_line(line, "\t", 3, path, line_no)
                    ratings.append(RawRating(u, i, float(v)))
            except DatasetFormatError:
                raise
            except ValueError as exc:
                raise DatasetFormatError(path, line_no, str(exc)) from exc
    for r in ratings:
        if not r.user_id or not r.item_id:
            raise ValueError("empty identifier in ratings")
        if not np.isfinite(r.value):
            raise ValueError(f"non-finite rating value for ({r.user_id}, {r.item_id})")
    return ratings


def _id_sort_key(external_id: str):
    try:
        return (0, int(external_id), external_id)
    except ValueError:
        return (1, 0, external_id)


def build_dataset(ratings, min_interactions: int = 10) -> InteractionDataset:
    """Binarize, filter, and index raw ratings into an InteractionDataset.

    Values > 0 become implicit positives (label 1); non-positive values are
    dropped as unobserved. Duplicate (user, item) pairs collapse to one
    positive keeping the latest effective time. Users with fewer than
    ``min_interactions`` interactions are removed in one pass, then users and
    items are densely re-indexed (sorted by external id, numerically when the
    ids are integers).
    """
    if not ratings:
        raise ValueError("ratings must be non-empty")

    # effective time = timestamp, or file position for timestamp-free formats
    latest = {}  # (user, item) -> effective time
    for pos, r in enumerate(ratings):
        if r.value <= 0:
            continue
        t = r.timestamp if r.timestamp is not None else pos
        key = (r.user_id, r.item_id)
        if key not in latest or t > latest[key]:
            latest[key] = t

    per_user = {}
    for (u, i), t in latest.items():
        per_user.setdefault(u, []).append((i, t))
    kept_users = [u for u, lst in per_user.items() if len(lst) >= min_interactions]
    if not kept_users:
        raise ValueError(
            f"no users left after filtering (< {min_interactions} interactions each)"
        )
    kept_users.sort(key=_id_sort_key)

    kept_items = sorted(
        {i for u in kept_users for (i, _) in per_user[u]}, key=_id_sort_key
    )
    user_index_map = {u: k for k, u in enumerate(kept_users)}
    item_index_map = {i: k for k, i in enumerate(kept_items)}

    items = []
    for u in kept_users:
        rows = [(t, item_index_map[i]) for (i, t) in per_user[u]]
        rows.sort()  # (effective time, item index): ties -> larger index later
        items.append(np.array([i for (_, i) in rows], dtype=np.int64))

    return InteractionDataset(
        n=len(kept_users),
        m=len(kept_items),
        items=items,
        user_index_map=user_index_map,
        item_index_map=item_index_map,
    )


def leave_one_out_split(ds: InteractionDataset, seed: int) -> list:
    """Split every client leave-one-out and sample its 99 eval negatives.

    The negatives are drawn without replacement from the items the client
    never observed, using the (seed, client) stream, so two runs with the
    same seed produce identical candidate sets.
    """
    splits = []
    all_items = np.arange(ds.m, dtype=np.int64)
    for u in range(ds.n):
        observed = ds.items[u]
        if len(observed) < 3:
            raise ValueError(
                f"client {u} has {len(observed)} interactions; need >= 3 to split"
            )
        test = int(observed[-1])
        validation = int(observed[-2])
        train = observed[:-2].copy()
        unobserved = np.setdiff1d(all_items, observed, assume_unique=False)
        if len(unobserved) < 99:
            raise ValueError(
                f"client {u} has only {len(unobserved)} unobserved items; need >= 99"
            )
        rng = stream(seed, "eval_negatives", u)
        negatives = rng.choice(unobserved, size=99, replace=False)
        splits.append(
            ClientSplit(
                train=train,
                validation=validation,
                test=test,
                eval_negatives=negatives.astype(np.int64),
                unobserved=unobserved,
            )
        )
    return splits


def sample_train_negatives(
    split: ClientSplit, N: int, epoch: int, round_index: int, seed: int, client: int
):
    """Sample N negatives per train positive for one epoch.

    Negatives are drawn uniformly (with replacement across draws) from the
    client's unobserved items on the (seed, client, round, epoch) stream, so
    the per-epoch resample is deterministic and independent of scheduling.
    Returns (positives, negatives) with negatives shaped (len(train), N).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    unobserved = split.unobserved
    if unobserved is None or len(unobserved) == 0:
        raise ValueError("client has no unobserved items to sample negatives from")
    rng = stream(seed, "train_negatives", client, round_index, epoch)
    idx = rng.integers(0, len(unobserved), size=(len(split.train), N))
    return split.train, unobserved[idx]


def epoch_examples(
    split: ClientSplit, N: int, epoch: int, round_index: int, seed: int, client: int
):
    """One epoch's shuffled (items, labels) arrays for a client.

    Each train positive contributes itself (label 1) and N sampled negatives
    (label 0); the flattened example list is shuffled on the
    (seed, client, round, epoch) shuffle stream.
    """
    positives, negatives = sample_train_negatives(
        split, N, epoch, round_index, seed, client
    )
    items = np.concatenate([positives, negatives.ravel()])
    labels = np.concatenate(
        [np.ones(len(positives)), np.zeros(negatives.size)]
    )
    order = stream(seed, "shuffle", client, round_index, epoch).permutation(len(items))
    return items[order], labels[order]


def save_dataset(ds: InteractionDataset, path) -> None:
    """Dump a dataset to a versioned .npz that round-trips losslessly."""
    offsets = np.zeros(ds.n + 1, dtype=np.int64)
    for u, arr in enumerate(ds.items):
        offsets[u + 1] = offsets[u] + len(arr)
    flat = (
        np.concatenate(ds.items) if ds.n else np.zeros(0, dtype=np.int64)
    )
    users = sorted(ds.user_index_map, key=ds.user_index_map.get)
    item_ids = sorted(ds.item_index_map, key=ds.item_index_map.get)
    np.savez(
        path,
        version=np.array([CACHE_VERSION], dtype=np.int64),
        n=np.array([ds.n], dtype=np.int64),
        m=np.array([ds.m], dtype=np.int64),
        offsets=offsets,
        flat_items=flat,
        user_ids=np.array(users, dtype=np.str_),
        item_ids=np.array(item_ids, dtype=np.str_),
    )


def load_dataset(path) -> InteractionDataset:
    with np.load(path) as z:
        version = int(z["version"][0])
        if version != CACHE_VERSION:
            raise ValueError(f"unsupported dataset cache version {version}")
        n = int(z["n"][0])
        m = int(z["m"][0])
        offsets = z["offsets"]
        flat = z["flat_items"]
        users = [str(u) for u in z["user_ids"]]
        item_ids = [str(i) for i in z["item_ids"]]
    items = [flat[offsets[u] : offsets[u + 1]].copy() for u in range(n)]
    return InteractionDataset(
        n=n,
        m=m,
        items=items,
        user_index_map={u: k for k, u in enumerate(users)},
        item_index_map={i: k for k, i in enumerate(item_ids)},
    )
