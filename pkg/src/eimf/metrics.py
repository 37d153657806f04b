"""Recall@K, NDCG@K and HR@K over the profile/target evaluation protocol."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from eimf.dataset import UserSequence, profile_target_split
from eimf.retrieval import RetrievalIndex, _behavior, extract_interests_batch, retrieve_topn

log = logging.getLogger(__name__)

DEFAULT_KS = (20, 50)


def recall_at_k(recommended: Sequence[int], truth: Iterable[int], k: int) -> float:
    truth = set(truth)
    if not truth:
        raise ValueError("empty ground truth")
    return len(set(recommended[:k]) & truth) / len(truth)


def ndcg_at_k(recommended: Sequence[int], truth: Iterable[int], k: int) -> float:
    truth = set(truth)
    if not truth:
        raise ValueError("empty ground truth")
    dcg = sum(1.0 / math.log2(i + 2) for i, item in enumerate(recommended[:k]) if item in truth)
    idcg = sum(1.0 / math.log2(i + 2) for i in range(min(len(truth), k)))
    return dcg / idcg


def hr_at_k(hits: Sequence[bool]) -> float:
    if len(hits) == 0:
        raise ValueError("hit rate needs at least one user")
    return sum(bool(h) for h in hits) / len(hits)


@dataclass
class EvalReport:
    ks: tuple[int, ...]
    recall: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    hr: dict[int, float] = field(default_factory=dict)
    users: int = 0
    skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "users": self.users,
            "skipped": self.skipped,
            "metrics": {
                str(k): {"recall": self.recall[k], "ndcg": self.ndcg[k], "hr": self.hr[k]} for k in self.ks
            },
        }


def evaluate(model, users: Sequence[UserSequence], ks: Sequence[int] = DEFAULT_KS, exclude_seen: bool = False, batch_size: int = 256) -> EvalReport:
    """Per user: first 80% as profile, the rest as truth; rank the catalog from
    the profile's interests and average the metrics over users."""
    ks = tuple(sorted(set(int(k) for k in ks)))
    tower = _behavior(model)
    index = RetrievalIndex.build(tower.item_emb.detach().numpy())
    n_rec = min(max(ks), index.n_items)

    cases = []
    skipped = 0
    for u in users:
        if len(u.items) < 2:
            skipped += 1
            continue
        profile, targets = profile_target_split(u)
        known = [i for i in profile if 0 <= i < index.n_items]
        if not known:
            log.warning("user %s has no known items in the profile; skipped", u.user_id)
            skipped += 1
            continue
        cases.append((known, set(targets)))

    report = EvalReport(ks, users=len(cases), skipped=skipped)
    if not cases:
        for k in ks:
            report.recall[k] = report.ndcg[k] = report.hr[k] = 0.0
        return report

    recs = []
    for lo in range(0, len(cases), batch_size):
        chunk = cases[lo:lo + batch_size]
        interests = extract_interests_batch([c[0] for c in chunk], tower)
        for (profile, _), h in zip(chunk, interests):
            exclude = profile if exclude_seen else ()
            n = min(n_rec, index.n_items - len(set(exclude)))
            recs.append([i for i, _ in retrieve_topn(h, index, n, exclude)])

    for k in ks:
        rec = [recall_at_k(r, t, k) for r, (_, t) in zip(recs, cases)]
        nd = [ndcg_at_k(r, t, k) for r, (_, t) in zip(recs, cases)]
        report.recall[k] = float(np.mean(rec))
        report.ndcg[k] = float(np.mean(nd))
        report.hr[k] = hr_at_k([x > 0 for x in rec])
    return report
