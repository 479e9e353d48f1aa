"""Ranking metrics over cold-item recommendation lists.

All three metrics are computed by plain left-to-right accumulation in
rank order, so results are reproducible bit for bit and can be checked
against literal formula translations.
"""

import math
from dataclasses import dataclass

from .exceptions import DataError

__all__ = [
    "UserScores",
    "EvaluationReport",
    "average_precision",
    "ndcg_at",
    "recall_at",
    "evaluate_run",
    "write_report_files",
]


def _ranked_ids(ranked):
    """Accept a RankedList or any sequence of item ids."""
    ids = list(getattr(ranked, "item_ids", ranked))
    if len(set(ids)) != len(ids):
        raise ValueError("ranking contains duplicate items")
    return ids


def _check_positives(ids, positives):
    positives = set(positives)
    if not positives:
        raise ValueError("positives must be nonempty")
    missing = positives.difference(ids)
    if missing:
        raise ValueError("positives %r are missing from the ranking" % (sorted(missing),))
    return positives


def average_precision(ranked, positives) -> float:
    """Mean of precision-at-r over the ranks r that hit a positive.

    Every positive must appear somewhere in the ranking (cold-start
    lists rank the whole cold catalog), so the denominator is the
    number of positives.
    """
    ids = _ranked_ids(ranked)
    pos = _check_positives(ids, positives)
    hits = 0
    total = 0.0
    for r, item in enumerate(ids, start=1):
        if item in pos:
            hits += 1
            total += hits / r
    return total / len(pos)


def ndcg_at(ranked, positives, scope: int) -> float:
    """Binary NDCG truncated at ``scope``: gain 1, discount log2(rank + 1).

    The ideal DCG places min(scope, #positives) hits at the top.
    """
    if scope < 1:
        raise ValueError("scope must be at least 1")
    ids = _ranked_ids(ranked)
    pos = _check_positives(ids, positives)
    dcg = 0.0
    for r, item in enumerate(ids[:scope], start=1):
        if item in pos:
            dcg += 1.0 / math.log2(r + 1)
    ideal = 0.0
    for r in range(1, min(scope, len(pos)) + 1):
        ideal += 1.0 / math.log2(r + 1)
    return dcg / ideal


def recall_at(ranked, positives, scope: int) -> float:
    """Fraction of the positives that appear in the top ``scope`` ranks."""
    if scope < 1:
        raise ValueError("scope must be at least 1")
    ids = _ranked_ids(ranked)
    pos = _check_positives(ids, positives)
    hits = sum(1 for item in ids[:scope] if item in pos)
    return hits / len(pos)


@dataclass(frozen=True)
class UserScores:
    ap: float
    ndcg: float
    recall: float


@dataclass(frozen=True)
class EvaluationReport:
    """Per-user and aggregate ranking quality for one evaluation run."""

    scope: int
    per_user: dict
    mean_ap: float
    mean_ndcg: float
    mean_recall: float
    evaluated_user_count: int
    excluded_user_count: int
    fold: int | None = None


def evaluate_run(predictions, test_interactions, scope: int = 20,
                 fold: int | None = None) -> EvaluationReport:
    """Score every predicted user against their held-out positives.

    ``predictions`` maps user id to a ranking of the cold catalog;
    ``test_interactions`` is an interaction table over cold items.
    Users whose ranking exists but who have no test positives are
    excluded from the means and counted.  A user with test positives
    but no ranking is an error: upstream code must either predict for
    every evaluable user or drop the user from the test table
    deliberately.
    """
    if scope < 1:
        raise ValueError("scope must be at least 1")
    positives = {}
    for u, i in zip(test_interactions.user_ids, test_interactions.item_ids):
        positives.setdefault(int(u), set()).add(int(i))

    unpredicted = sorted(u for u in positives if u not in predictions)
    if unpredicted:
        raise DataError(
            "users %r have test positives but no predictions" % (unpredicted[:5],)
        )

    per_user = {}
    excluded = 0
    for user in predictions:
        pos = positives.get(int(user))
        if not pos:
            excluded += 1
            continue
        ranked = predictions[user]
        per_user[int(user)] = UserScores(
            ap=average_precision(ranked, pos),
            ndcg=ndcg_at(ranked, pos, scope),
            recall=recall_at(ranked, pos, scope),
        )
    if not per_user:
        raise DataError("no evaluable users: every prediction lacks test positives")

    n = len(per_user)
    return EvaluationReport(
        scope=scope,
        per_user=per_user,
        mean_ap=sum(s.ap for _, s in sorted(per_user.items())) / n,
        mean_ndcg=sum(s.ndcg for _, s in sorted(per_user.items())) / n,
        mean_recall=sum(s.recall for _, s in sorted(per_user.items())) / n,
        evaluated_user_count=n,
        excluded_user_count=excluded,
        fold=fold,
    )


def write_report_files(reports, per_user_path, summary_path) -> None:
    """Serialize reports as two TSV files, one user row and one fold row each.

    Rows are sorted and floats fixed-format, so identical runs produce
    byte-identical files.
    """
    reports = sorted(reports, key=lambda r: (r.fold is not None, r.fold))
    with open(per_user_path, "w", encoding="utf-8") as fh:
        fh.write("fold\tuser\tap\tndcg\trecall\n")
        for rep in reports:
            fold = "-" if rep.fold is None else str(rep.fold)
            for user in sorted(rep.per_user):
                s = rep.per_user[user]
                fh.write("%s\t%d\t%.17g\t%.17g\t%.17g\n"
                         % (fold, user, s.ap, s.ndcg, s.recall))
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("fold\tscope\tevaluated_users\texcluded_users\tmap\tndcg\trecall\n")
        for rep in reports:
            fold = "-" if rep.fold is None else str(rep.fold)
            fh.write("%s\t%d\t%d\t%d\t%.17g\t%.17g\t%.17g\n"
                     % (fold, rep.scope, rep.evaluated_user_count,
                        rep.excluded_user_count, rep.mean_ap, rep.mean_ndcg,
                        rep.mean_recall))
