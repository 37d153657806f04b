import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from eimf.ibim import BehaviorTower, item_logits, mi_extract, pad_prefixes, score_items, target_attention

OWN = math.exp(1 / math.sqrt(2)) / (math.exp(1 / math.sqrt(2)) + 1)


def tower(n_items=7, d=4, d_a=3, m=2, max_len=5, seed=0):
    g = torch.Generator().manual_seed(seed)
    t = BehaviorTower(n_items, d, d_a, m, max_len).double()
    with torch.no_grad():
        for p in t.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float64))
    return t


def test_pad_prefixes_keeps_last_items():
    prefix, mask = pad_prefixes([[1, 2, 3, 4], [5]], 3)
    assert prefix.tolist() == [[2, 3, 4], [5, 0, 0]]
    assert mask.tolist() == [[True, True, True], [True, False, False]]
    with pytest.raises(ValueError):
        pad_prefixes([[]], 3)
    with pytest.raises(IndexError):
        pad_prefixes([[9]], 3, n_items=5)


def test_single_item_prefix():
    t = tower()
    prefix, mask = pad_prefixes([[3]], 5)
    out = t.extract(prefix, mask)[0]
    want = t.item_emb[3] + t.pos_emb[0]
    for row in out:
        assert torch.allclose(row, want)


def test_zero_w2_gives_uniform_attention():
    t = tower()
    with torch.no_grad():
        t.w2.zero_()
    prefix, mask = pad_prefixes([[1, 4, 2]], 5)
    out, w = t.extract(prefix, mask, return_weights=True)
    assert torch.allclose(w[0, :, :3], torch.full((2, 3), 1 / 3, dtype=torch.float64))
    assert not w[0, :, 3:].any()
    mean = (t.item_emb[[1, 4, 2]] + t.pos_emb[:3]).mean(0)
    assert torch.allclose(out[0, 0], mean) and torch.allclose(out[0, 1], mean)


def test_order_sensitivity():
    t = tower()
    a = t.extract(*pad_prefixes([[1, 2]], 5))
    b = t.extract(*pad_prefixes([[2, 1]], 5))
    assert not torch.allclose(a, b)


def test_empty_prefix_rejected():
    t = tower()
    with pytest.raises(ValueError):
        mi_extract(torch.zeros(1, 3, dtype=torch.long), torch.zeros(1, 3, dtype=torch.bool), t.item_emb, t.pos_emb, t.w1, t.w2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_extractor_rows_are_distributions(seed):
    g = torch.Generator().manual_seed(seed)
    t = tower(seed=seed)
    lens = torch.randint(1, 6, (4,), generator=g).tolist()
    prefixes = [torch.randint(0, 7, (n,), generator=g).tolist() for n in lens]
    prefix, mask = pad_prefixes(prefixes, 5)
    _, w = t.extract(prefix, mask, return_weights=True)
    assert torch.allclose(w.sum(-1), torch.ones(4, 2, dtype=torch.float64), atol=1e-9)
    assert (w[~mask.unsqueeze(1).expand(w.shape)] == 0).all()


def test_target_attention_examples():
    h = torch.eye(2, dtype=torch.float64)
    out = target_attention(torch.tensor([1.0, 0.0], dtype=torch.float64), h)
    assert torch.allclose(out, torch.tensor([OWN, 1 - OWN], dtype=torch.float64))
    same = torch.tensor([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]])
    assert torch.allclose(target_attention(torch.tensor([3.0, -1.0]), same), same[0])
    rows = torch.tensor([[1.0, 0.0], [0.0, 4.0]])
    assert torch.allclose(target_attention(torch.zeros(2), rows), rows.mean(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_target_attention_convex(seed):
    g = torch.Generator().manual_seed(seed)
    h = torch.randn(4, 3, generator=g, dtype=torch.float64)
    e = torch.randn(3, generator=g, dtype=torch.float64)
    out, w = target_attention(e, h, return_weights=True)
    assert abs(w.sum().item() - 1) < 1e-9 and (w >= 0).all()
    assert torch.allclose(out, w @ h)


def test_score_items_examples():
    emb = torch.ones(5, 3)
    assert torch.allclose(score_items(torch.tensor([0.2, -1.0, 3.0]), emb), torch.full((5,), 0.2))
    p = score_items(torch.tensor([1.0]), torch.tensor([[1.0], [0.0]]))
    assert round(p[0].item(), 4) == 0.7311 and round(p[1].item(), 4) == 0.2689
    g = torch.Generator().manual_seed(1)
    h, emb = torch.randn(4, generator=g, dtype=torch.float64), torch.randn(9, 4, generator=g, dtype=torch.float64)
    assert abs(score_items(h, emb).sum().item() - 1) < 1e-9
    logits = item_logits(h, emb)
    assert torch.argmax(torch.softmax(logits + 7.5, -1)) == torch.argmax(score_items(h, emb))
