"""Interaction logs, tag-genome vectors, and cold-start experiment splits.

File parsing is hand-rolled line by line because the malformed-line
accounting is part of the contract: a few bad lines are skipped and
reported, too many are a hard error.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError
from .transport import CostMatrix

__all__ = [
    "InteractionTable",
    "GenomeTable",
    "ColdStartSplit",
    "load_interactions",
    "load_genome",
    "binarize",
    "filter_catalog",
    "build_cost_matrix",
    "cold_start_split",
    "write_split_manifest",
    "read_split_manifest",
]

FORMATS = {"tab": "\t", "double-colon": "::"}

# ratio of cold to interacted items -> (number of subsets in the item
# partition, role a single subset plays in each fold)
RATIOS = {"3:1": (4, "cold"), "1:1": (2, "cold"), "1:3": (4, "interacted")}

MAX_MALFORMED_FRACTION = 0.01


@dataclass(frozen=True)
class InteractionTable:
    """Column-oriented (user, item, rating, timestamp) records."""

    user_ids: np.ndarray
    item_ids: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.user_ids, dtype=np.int64)
        i = np.asarray(self.item_ids, dtype=np.int64)
        r = np.asarray(self.ratings, dtype=np.float64)
        t = np.asarray(self.timestamps, dtype=np.int64)
        if not (u.shape == i.shape == r.shape == t.shape) or u.ndim != 1:
            raise ValueError("table columns must be aligned 1-D arrays")
        object.__setattr__(self, "user_ids", u)
        object.__setattr__(self, "item_ids", i)
        object.__setattr__(self, "ratings", r)
        object.__setattr__(self, "timestamps", t)

    def __len__(self):
        return self.user_ids.size

    @property
    def users(self) -> np.ndarray:
        return np.unique(self.user_ids)

    @property
    def items(self) -> np.ndarray:
        return np.unique(self.item_ids)

    def restrict_items(self, keep) -> "InteractionTable":
        mask = np.isin(self.item_ids, np.asarray(list(keep), dtype=np.int64))
        return InteractionTable(self.user_ids[mask], self.item_ids[mask],
                                self.ratings[mask], self.timestamps[mask])

    def restrict_users(self, keep) -> "InteractionTable":
        mask = np.isin(self.user_ids, np.asarray(list(keep), dtype=np.int64))
        return InteractionTable(self.user_ids[mask], self.item_ids[mask],
                                self.ratings[mask], self.timestamps[mask])

    def by_user(self) -> dict:
        """Map user id -> (item id array, rating array), users ascending."""
        order = np.lexsort((self.item_ids, self.user_ids))
        out = {}
        for k in order:
            out.setdefault(int(self.user_ids[k]), ([], []))
            out[int(self.user_ids[k])][0].append(int(self.item_ids[k]))
            out[int(self.user_ids[k])][1].append(float(self.ratings[k]))
        return {
            u: (np.array(items, dtype=np.int64), np.array(vals))
            for u, (items, vals) in out.items()
        }


def _deduplicate(users, items, ratings, stamps):
    """Keep one record per (user, item): latest timestamp, ties to the
    record seen last in the file."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    ratings = np.asarray(ratings, dtype=np.float64)
    stamps = np.asarray(stamps, dtype=np.int64)
    arrival = np.arange(users.size)
    order = np.lexsort((arrival, stamps, items, users))
    u, i = users[order], items[order]
    last = np.ones(u.size, dtype=bool)
    last[:-1] = (u[:-1] != u[1:]) | (i[:-1] != i[1:])
    keep = order[last]
    keep.sort()  # preserve file order of the survivors
    return InteractionTable(users[keep], items[keep], ratings[keep], stamps[keep])


def load_interactions(path, fmt: str = "tab") -> InteractionTable:
    """Parse a rating log with fields user, item, rating, timestamp.

    ``fmt`` chooses the field separator: "tab" or "double-colon".
    Malformed lines are skipped with a warning carrying the count; if
    more than 1% of the lines are malformed the file is rejected.
    Repeated (user, item) pairs keep the latest timestamp.
    """
    if fmt not in FORMATS:
        raise DataError("unknown interaction format %r (use %s)"
                        % (fmt, sorted(FORMATS)))
    sep = FORMATS[fmt]
    users, items, ratings, stamps = [], [], [], []
    malformed = 0
    total = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if not line:
                continue
            total += 1
            parts = line.split(sep)
            if len(parts) != 4:
                malformed += 1
                continue
            try:
                u = int(parts[0])
                i = int(parts[1])
                r = float(parts[2])
                t = int(parts[3])
            except ValueError:
                malformed += 1
                continue
            if not np.isfinite(r):
                malformed += 1
                continue
            users.append(u)
            items.append(i)
            ratings.append(r)
            stamps.append(t)
    if total == 0:
        raise DataError("no records in %s" % path)
    if malformed > MAX_MALFORMED_FRACTION * total:
        raise DataError(
            "%d of %d lines malformed in %s; above the 1%% budget"
            % (malformed, total, path)
        )
    if malformed:
        warnings.warn("skipped %d malformed line(s) in %s" % (malformed, path))
    return _deduplicate(users, items, ratings, stamps)


def binarize(table: InteractionTable, threshold: float = 4.0) -> InteractionTable:
    """Keep records with rating >= threshold and set their rating to 1."""
    mask = table.ratings >= threshold
    return InteractionTable(
        table.user_ids[mask],
        table.item_ids[mask],
        np.ones(int(mask.sum())),
        table.timestamps[mask],
    )


@dataclass(frozen=True)
class GenomeTable:
    """Dense tag-relevance vectors, one row per item, scores in [0, 1]."""

    item_ids: np.ndarray
    tag_ids: np.ndarray
    relevance: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.item_ids, dtype=np.int64)
        tags = np.asarray(self.tag_ids, dtype=np.int64)
        rel = np.asarray(self.relevance, dtype=np.float64)
        if rel.shape != (ids.size, tags.size):
            raise ValueError("relevance shape %s does not match %d items x %d tags"
                             % ((rel.shape,), ids.size, tags.size))
        if np.any(np.diff(ids) <= 0) or np.any(np.diff(tags) <= 0):
            raise ValueError("item and tag ids must be strictly increasing")
        if np.any(rel < 0) or np.any(rel > 1) or not np.all(np.isfinite(rel)):
            raise ValueError("relevance scores must lie in [0, 1]")
        object.__setattr__(self, "item_ids", ids)
        object.__setattr__(self, "tag_ids", tags)
        object.__setattr__(self, "relevance", rel)

    def __contains__(self, item_id) -> bool:
        k = np.searchsorted(self.item_ids, item_id)
        return k < self.item_ids.size and self.item_ids[k] == item_id

    def vector(self, item_id) -> np.ndarray:
        k = np.searchsorted(self.item_ids, item_id)
        if k >= self.item_ids.size or self.item_ids[k] != item_id:
            raise KeyError("item %r has no genome" % (item_id,))
        return self.relevance[k]

    def restrict(self, keep_ids) -> "GenomeTable":
        keep = np.isin(self.item_ids, np.asarray(list(keep_ids), dtype=np.int64))
        return GenomeTable(self.item_ids[keep], self.tag_ids, self.relevance[keep])


def load_genome(path) -> GenomeTable:
    """Read long-format (movieId, tagId, relevance) triples and pivot.

    The file must carry a header naming those three columns; comma and
    tab delimiters are both accepted.  Pairs absent for an otherwise
    present movie default to relevance 0 with a warning.
    """
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n")
        if not header:
            raise DataError("empty genome file %s" % path)
        delim = "," if "," in header else "\t"
        names = [c.strip() for c in header.split(delim)]
        try:
            cols = (names.index("movieId"), names.index("tagId"),
                    names.index("relevance"))
        except ValueError:
            raise DataError(
                "genome header must name movieId, tagId and relevance; got %r"
                % (names,)
            ) from None
        triples = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split(delim)
            try:
                movie = int(parts[cols[0]])
                tag = int(parts[cols[1]])
                rel = float(parts[cols[2]])
            except (ValueError, IndexError):
                raise DataError("%s line %d is malformed: %r"
                                % (path, lineno, line)) from None
            if not 0.0 <= rel <= 1.0:
                raise DataError("%s line %d: relevance %g outside [0, 1]"
                                % (path, lineno, rel))
            if (movie, tag) in triples:
                raise DataError("%s line %d: duplicate pair (%d, %d)"
                                % (path, lineno, movie, tag))
            triples[(movie, tag)] = rel
    if not triples:
        raise DataError("no genome records in %s" % path)

    items = np.unique(np.array([m for m, _ in triples], dtype=np.int64))
    tags = np.unique(np.array([t for _, t in triples], dtype=np.int64))
    rel = np.zeros((items.size, tags.size))
    item_pos = {int(m): k for k, m in enumerate(items)}
    tag_pos = {int(t): k for k, t in enumerate(tags)}
    for (m, t), v in triples.items():
        rel[item_pos[m], tag_pos[t]] = v
    missing = items.size * tags.size - len(triples)
    if missing:
        warnings.warn(
            "genome %s: %d (movie, tag) pair(s) absent, filled with relevance 0"
            % (path, missing)
        )
    return GenomeTable(items, tags, rel)


def filter_catalog(table: InteractionTable, genome: GenomeTable):
    """Drop interactions on items without genomes, then empty users; repeat.

    Returns the reduced table and the genome restricted to the items
    that still occur.  Rejects the combination outright if nothing
    survives.
    """
    t = table
    while True:
        before = len(t)
        t = t.restrict_items(genome.item_ids)
        # users with no remaining records have no rows left, which is
        # exactly "dropped"; the loop re-checks until the table is stable
        if len(t) == before:
            break
    if len(t) == 0:
        raise DataError("no interactions survive catalog filtering")
    return t, genome.restrict(t.items)


def build_cost_matrix(genome: GenomeTable, row_ids, col_ids) -> CostMatrix:
    """Cosine-distance costs between interacted (rows) and cold (columns) items.

    Every item must have a genome with at least one positive score;
    costs are 1 - cosine similarity, clipped into [0, 2].
    """
    row_ids = [int(i) for i in row_ids]
    col_ids = [int(i) for i in col_ids]

    def gather(ids):
        vecs = np.empty((len(ids), genome.tag_ids.size))
        for k, item in enumerate(ids):
            try:
                v = genome.vector(item)
            except KeyError:
                raise DataError("item %d has no genome vector" % item) from None
            norm = float(np.linalg.norm(v))
            if norm == 0.0:
                raise DataError("item %d has an all-zero genome vector" % item)
            vecs[k] = v / norm
        return vecs

    rows = gather(row_ids)
    cols = gather(col_ids)
    costs = np.clip(1.0 - rows @ cols.T, 0.0, 2.0)
    return CostMatrix(costs, row_ids=tuple(row_ids), col_ids=tuple(col_ids))


@dataclass(frozen=True)
class ColdStartSplit:
    """One fold of an item cold-start experiment.

    ``interacted_items`` (V) and ``cold_items`` (C) partition the item
    catalog; ``train`` holds the interactions on V, ``test`` those on C.
    """

    fold: int
    seed: int
    ratio: str
    interacted_items: tuple
    cold_items: tuple
    train: InteractionTable
    test: InteractionTable

    def __post_init__(self):
        if set(self.interacted_items) & set(self.cold_items):
            raise ValueError("interacted and cold item sets overlap")


def cold_start_split(table: InteractionTable, ratio: str = "3:1",
                     folds: int | None = None, seed: int = 0):
    """Partition the catalog into interacted/cold item sets, per fold.

    One permutation of the item catalog is drawn from ``seed`` and cut
    into equal subsets (4, 2 or 4 for ratios 3:1, 1:1, 1:3).  Fold i
    uses subset i as the cold set (ratios 3:1 and 1:1) or as the
    interacted set (ratio 1:3).  With the full fold count, every item
    is cold exactly once for 3:1 and 1:1, and cold exactly three times
    for 1:3.
    """
    if ratio not in RATIOS:
        raise DataError("unknown ratio %r (use %s)" % (ratio, sorted(RATIOS)))
    n_subsets, fold_role = RATIOS[ratio]
    if folds is None:
        folds = n_subsets
    if not 1 <= folds <= n_subsets:
        raise ValueError("folds must be in 1..%d for ratio %s" % (n_subsets, ratio))
    items = table.items
    if items.size < n_subsets:
        raise DataError(
            "%d items cannot be divided into %d subsets" % (items.size, n_subsets)
        )
    perm = np.random.default_rng(seed).permutation(items)
    subsets = np.array_split(perm, n_subsets)

    splits = []
    for f in range(folds):
        rest = np.concatenate([s for k, s in enumerate(subsets) if k != f])
        if fold_role == "cold":
            cold, interacted = subsets[f], rest
        else:
            interacted, cold = subsets[f], rest
        train = table.restrict_items(interacted)
        test = table.restrict_items(cold)
        if len(train) == 0 or len(test) == 0:
            raise DataError("fold %d of ratio %s has an empty train or test side"
                            % (f, ratio))
        splits.append(ColdStartSplit(
            fold=f,
            seed=seed,
            ratio=ratio,
            interacted_items=tuple(int(i) for i in np.sort(interacted)),
            cold_items=tuple(int(i) for i in np.sort(cold)),
            train=train,
            test=test,
        ))
    return splits


def write_split_manifest(splits, path) -> None:
    """Record ratio, seed and the exact item sets of every fold as JSON."""
    if not splits:
        raise ValueError("no splits to write")
    payload = {
        "ratio": splits[0].ratio,
        "seed": splits[0].seed,
        "folds": [
            {
                "fold": s.fold,
                "interacted": list(s.interacted_items),
                "cold": list(s.cold_items),
            }
            for s in splits
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_split_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    for key in ("ratio", "seed", "folds"):
        if key not in payload:
            raise DataError("split manifest %s lacks %r" % (path, key))
    return payload
