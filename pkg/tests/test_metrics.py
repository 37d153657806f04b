import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from eimf.checkpoint import init_params
from eimf.config import TrainConfig
from eimf.dataset import UserSequence, profile_target_split
from eimf.metrics import EvalReport, evaluate, hr_at_k, ndcg_at_k, recall_at_k
from oracles import hr_oracle, ndcg_oracle, recall_oracle


def test_recall_examples():
    assert recall_at_k(["a", "b", "c"], {"b", "c"}, 2) == 0.5
    assert recall_at_k([1, 2, 3], {1, 3}, 3) == 1.0
    assert recall_at_k([1, 2], {5}, 2) == 0.0
    with pytest.raises(ValueError):
        recall_at_k([1], set(), 1)


def test_ndcg_examples():
    assert ndcg_at_k([7, 1, 2], {7}, 3) == 1.0
    assert ndcg_at_k([1, 7, 2], {7}, 2) == pytest.approx(1 / math.log2(3))
    assert round(ndcg_at_k([1, 7, 2], {7}, 2), 4) == 0.6309
    assert ndcg_at_k([1, 2], {9}, 2) == 0.0


def test_hr_examples():
    assert hr_at_k([True, True]) == 1.0
    assert hr_at_k([False, False]) == 0.0
    assert hr_at_k([False, True, False, False]) == 0.25


rankings = st.permutations(list(range(15)))


@settings(max_examples=60, deadline=None)
@given(rankings, st.sets(st.integers(0, 20), min_size=1, max_size=6), st.integers(1, 15))
def test_agrees_with_oracle(ranking, truth, k):
    assert abs(recall_at_k(ranking, truth, k) - recall_oracle(ranking, truth, k)) <= 1e-9
    assert abs(ndcg_at_k(ranking, truth, k) - ndcg_oracle(ranking, truth, k)) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(rankings, st.sets(st.integers(0, 14), min_size=1, max_size=6))
def test_monotone_in_k_and_bounded(ranking, truth):
    rec = [recall_at_k(ranking, truth, k) for k in range(1, 16)]
    nd = [ndcg_at_k(ranking, truth, k) for k in range(1, 16)]
    assert all(0 <= x <= 1 for x in rec + nd)
    assert rec == sorted(rec)
    ideal = sorted(truth) + [i for i in ranking if i not in truth]
    assert all(ndcg_at_k(ideal, truth, k) == pytest.approx(1.0) for k in range(1, 16))


def _model_with_scores(n_items, d=3):
    cfg = TrainConfig(d=d, d_a=2, n_interests=1, max_len=5)
    return init_params(cfg, n_items, 0)


def test_evaluate_constructed_oracle():
    # items 0..2 dominate every direction with positive weight, so they are
    # the global top-3; each user's truth lies inside them
    model = _model_with_scores(8)
    with torch.no_grad():
        model.behavior.item_emb.zero_()
        model.behavior.item_emb[:3] = 1.0
        model.behavior.item_emb[3:] = -1.0
        model.behavior.pos_emb.fill_(2.0)  # keeps every profile vector positive
    users = [UserSequence("a", (4, 5, 6, 7, 0)), UserSequence("b", (3, 4, 5, 6, 1, 2))]
    rep = evaluate(model, users, [3])
    assert rep.recall[3] == 1.0 and rep.hr[3] == 1.0 and rep.users == 2


def test_evaluate_exhaustive_k_and_skips():
    model = _model_with_scores(6)
    users = [UserSequence("a", (1, 2, 3)), UserSequence("b", (4,)), UserSequence("c", (5, 0, 1, 2))]
    rep = evaluate(model, users, [6])
    assert rep.recall[6] == 1.0 and rep.users == 2 and rep.skipped == 1
    doc = rep.to_dict()
    assert set(doc) == {"users", "skipped", "metrics"} and set(doc["metrics"]["6"]) == {"recall", "ndcg", "hr"}


def test_evaluate_agrees_with_brute_force():
    rng = np.random.default_rng(0)
    model = _model_with_scores(30, d=4)
    users = [UserSequence(f"u{i}", tuple(rng.integers(0, 30, size=int(rng.integers(2, 12))).tolist())) for i in range(100)]
    rep = evaluate(model, users, [5, 10])
    emb = model.behavior.item_emb.detach().double().numpy()
    from eimf.retrieval import extract_interests

    for k in (5, 10):
        rankings, truths = [], []
        for u in users:
            profile, target = profile_target_split(u)
            scores = (extract_interests(profile, model) @ emb.T).max(0)
            rankings.append(sorted(range(30), key=lambda i: (-scores[i], i)))
            truths.append(set(target))
        assert abs(rep.recall[k] - np.mean([recall_oracle(r, t, k) for r, t in zip(rankings, truths)])) <= 1e-9
        assert abs(rep.ndcg[k] - np.mean([ndcg_oracle(r, t, k) for r, t in zip(rankings, truths)])) <= 1e-9
        assert abs(rep.hr[k] - hr_oracle(rankings, truths, k)) <= 1e-9


def test_empty_report():
    rep = evaluate(_model_with_scores(4), [UserSequence("x", (1,))], [2])
    assert rep.users == 0 and rep.recall[2] == 0.0
    assert isinstance(rep, EvalReport)
