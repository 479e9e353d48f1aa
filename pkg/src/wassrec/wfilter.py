"""Per-user cold-start inference.

A user's history over interacted items becomes a preference histogram;
pushing it through the Gibbs kernel of the interacted-to-cold cost
matrix yields a histogram over the cold items in closed form, which is
then ranked.  The inference step is exactly the conjugate gradient at
a zero potential, so it shares that code path.
"""

from dataclasses import dataclass

import numpy as np

from .transport import GibbsKernel, conjugate_grad, simplex

__all__ = [
    "UserInteractions",
    "RankedList",
    "estimate_preference",
    "infer_cold",
    "rank_items",
]


@dataclass(frozen=True)
class UserInteractions:
    """Sparse nonnegative interaction strengths over the interacted catalog.

    ``item_indices`` are positions in the experiment's interacted-item
    ordering (the rows of the cost matrix), not raw item ids.
    """

    user_id: object
    item_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.item_indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.ndim != 1 or val.shape != idx.shape:
            raise ValueError("item_indices and values must be 1-D and aligned")
        if idx.size == 0:
            raise ValueError("user %r has no interactions" % (self.user_id,))
        if len(np.unique(idx)) != idx.size:
            raise ValueError("duplicate item indices for user %r" % (self.user_id,))
        if np.any(idx < 0):
            raise ValueError("negative item index for user %r" % (self.user_id,))
        if np.any(val <= 0) or not np.all(np.isfinite(val)):
            raise ValueError("interaction values must be positive and finite")
        object.__setattr__(self, "item_indices", idx)
        object.__setattr__(self, "values", val)


@dataclass(frozen=True)
class RankedList:
    """Cold items sorted by predicted preference, best first."""

    item_ids: tuple
    scores: tuple

    def __post_init__(self):
        ids = tuple(self.item_ids)
        scores = tuple(float(s) for s in self.scores)
        if len(ids) != len(scores):
            raise ValueError("item_ids and scores must be aligned")
        if len(set(ids)) != len(ids):
            raise ValueError("ranked list has duplicate items")
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise ValueError("scores must be non-increasing")
        object.__setattr__(self, "item_ids", ids)
        object.__setattr__(self, "scores", scores)

    def __len__(self):
        return len(self.item_ids)


def estimate_preference(interactions: UserInteractions, n_items: int) -> np.ndarray:
    """Dense preference histogram over the n interacted items.

    Interaction strengths are normalized to total mass 1; items the
    user never touched get exactly zero mass.
    """
    if n_items < 1:
        raise ValueError("n_items must be positive")
    if interactions.item_indices.max() >= n_items:
        raise ValueError(
            "interaction index %d out of range for %d items"
            % (int(interactions.item_indices.max()), n_items)
        )
    dense = np.zeros(n_items, dtype=np.float64)
    dense[interactions.item_indices] = interactions.values
    return simplex(dense, name="preference")


def infer_cold(p, M, gamma: float | None = None) -> np.ndarray:
    """Closed-form cold-start histogram K^T (p / K 1) over the cold items.

    ``M`` is a cost matrix (interacted rows, cold columns) with
    smoothing ``gamma``, or an already-built GibbsKernel, in which case
    ``gamma`` must be omitted.  The result is the conjugate gradient at
    a zero potential: each interacted item's mass is softly assigned to
    its cheapest cold items and the assignments are mixed by p.
    """
    if isinstance(M, GibbsKernel):
        if gamma is not None and gamma != M.gamma:
            raise ValueError("gamma %r conflicts with kernel gamma %r" % (gamma, M.gamma))
        kernel = M
    else:
        if gamma is None:
            raise ValueError("gamma is required when M is a cost matrix")
        kernel = GibbsKernel.from_cost(M, gamma)
    return conjugate_grad(p, np.zeros(kernel.shape[1]), kernel)


def rank_items(q, item_ids) -> RankedList:
    """Sort cold items by score, breaking exact ties by ascending item id."""
    q = np.asarray(q, dtype=np.float64)
    ids = list(item_ids)
    if q.ndim != 1 or len(ids) != q.size:
        raise ValueError("scores and item_ids must be aligned 1-D sequences")
    if len(set(ids)) != len(ids):
        raise ValueError("item_ids must be duplicate-free")
    order = sorted(range(q.size), key=lambda j: (-q[j], ids[j]))
    return RankedList(
        item_ids=tuple(ids[j] for j in order),
        scores=tuple(float(q[j]) for j in order),
    )
