"""Implicit behavioral interests: self-attentive multi-interest extractor,
target-aware attention over interests, and full-catalog scoring."""

from __future__ import annotations

import math
from typing import Sequence

import torch
from torch import nn

from eimf.esim import masked_softmax


class BehaviorTower(nn.Module):
    """Item embeddings + positional embeddings + self-attentive extractor.

    Any module exposing ``item_emb`` and ``extract(prefix, mask)`` returning
    (B, M, d) interests can stand in as the backbone.
    """

    def __init__(self, n_items: int, d: int = 64, d_a: int = 64, n_interests: int = 4, max_len: int = 20):
        super().__init__()
        self.n_items, self.d, self.d_a = n_items, d, d_a
        self.n_interests, self.max_len = n_interests, max_len
        self.item_emb = nn.Parameter(torch.empty(n_items, d))
        self.pos_emb = nn.Parameter(torch.empty(max_len, d))
        self.w1 = nn.Parameter(torch.empty(d, d_a))
        self.w2 = nn.Parameter(torch.empty(d_a, n_interests))

    def extract(self, prefix: torch.Tensor, mask: torch.Tensor, return_weights: bool = False):
        return mi_extract(prefix, mask, self.item_emb, self.pos_emb, self.w1, self.w2, return_weights)


def pad_prefixes(prefixes: Sequence[Sequence[int]], max_len: int, n_items: int | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Keep the last ``max_len`` items of each prefix, left-aligned and
    right-padded with item 0 under a false mask."""
    out = torch.zeros(len(prefixes), max_len, dtype=torch.long)
    mask = torch.zeros(len(prefixes), max_len, dtype=torch.bool)
    for row, p in enumerate(prefixes):
        p = list(p)[-max_len:]
        if not p:
            raise ValueError(f"prefix {row} is empty")
        if n_items is not None:
            bad = [i for i in p if not 0 <= i < n_items]
            if bad:
                raise IndexError(f"prefix {row} has out-of-range item index {bad}")
        out[row, :len(p)] = torch.tensor(p, dtype=torch.long)
        mask[row, :len(p)] = True
    return out, mask


def mi_extract(
    prefix: torch.Tensor,
    mask: torch.Tensor,
    item_emb: torch.Tensor,
    pos_emb: torch.Tensor,
    w1: torch.Tensor,
    w2: torch.Tensor,
    return_weights: bool = False,
):
    """(B, L) padded prefixes -> (B, M, d) interest matrices.

    A = softmax over positions of tanh(H W1) W2, one row per interest;
    interests = A H.
    """
    if prefix.shape[-1] == 0 or not bool(mask.any(-1).all()):
        raise ValueError("every prefix must contain at least one item")
    h = item_emb[prefix] + pos_emb[: prefix.shape[-1]]
    logits = (torch.tanh(h @ w1) @ w2).transpose(-1, -2)  # (B, M, L)
    attn = masked_softmax(logits, mask.unsqueeze(-2).expand(logits.shape))
    interests = attn @ h
    return (interests, attn) if return_weights else interests


def target_attention(e_tar: torch.Tensor, h_im: torch.Tensor, return_weights: bool = False):
    """Target embedding (..., d) attends over interests (..., M, d)."""
    logits = (h_im @ e_tar.unsqueeze(-1)).squeeze(-1) / math.sqrt(h_im.shape[-1])
    w = torch.softmax(logits, dim=-1)
    out = (w.unsqueeze(-1) * h_im).sum(-2)
    return (out, w) if return_weights else out


def item_logits(h: torch.Tensor, item_emb: torch.Tensor) -> torch.Tensor:
    return h @ item_emb.T


def score_items(h: torch.Tensor, item_emb: torch.Tensor) -> torch.Tensor:
    return torch.softmax(item_logits(h, item_emb), dim=-1)
