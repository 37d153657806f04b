"""Training objectives: next-item cross-entropy, semantic prediction,
contrastive/cosine modality alignment and the joint loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

PROB_FLOOR = 1e-12
_MAX_NLL = -math.log(PROB_FLOOR)


class LossConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.4
    beta: float = 0.1
    gamma: float = 0.1
    tau: float = 0.1

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise LossConfigError(f"{name} must be non-negative")
        if self.tau <= 0:
            raise LossConfigError("tau must be positive")
        if abs(2 * (self.alpha + self.beta) - 1) > 1e-9:
            raise LossConfigError(
                f"alpha/beta violate 2*(alpha+beta)=1: got 2*({self.alpha}+{self.beta}) = {2 * (self.alpha + self.beta)}"
            )


def rec_loss(probs: torch.Tensor, target: torch.Tensor | int) -> torch.Tensor:
    """Mean negative log-probability of the targets, floored at 1e-12."""
    probs = torch.as_tensor(probs)
    target = torch.as_tensor(target)
    if probs.dim() == 1:
        return -torch.log(probs[target].clamp_min(PROB_FLOOR))
    picked = probs.gather(-1, target.view(-1, 1)).squeeze(-1)
    return -torch.log(picked.clamp_min(PROB_FLOOR)).mean()


def nll_from_logits(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Same value as ``rec_loss(softmax(logits), target)`` computed stably."""
    logp = torch.log_softmax(logits, dim=-1).gather(-1, target.view(-1, 1)).squeeze(-1)
    return (-logp).clamp_max(_MAX_NLL).mean()


def semantic_scores(h_ex: torch.Tensor, item_text: torch.Tensor) -> torch.Tensor:
    return torch.softmax(h_ex @ item_text.T, dim=-1)


def _unit_rows(x: torch.Tensor, what: str) -> torch.Tensor:
    norms = x.norm(dim=-1, keepdim=True)
    if bool((norms == 0).any()):
        raise ValueError(f"zero-norm row in {what}")
    return x / norms


def paired_cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (_unit_rows(a, "first batch") * _unit_rows(b, "second batch")).sum(-1)


def contrastive(a: torch.Tensor, b: torch.Tensor, tau: float) -> torch.Tensor:
    """In-batch InfoNCE on cosine similarity; row k of ``b`` is the positive
    for row k of ``a``."""
    sim = _unit_rows(a, "first batch") @ _unit_rows(b, "second batch").T / tau
    return -torch.log_softmax(sim, dim=-1).diagonal().mean()


def cosine_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (1.0 - paired_cosine(a, b)).mean()


def alignment_loss(
    h_ex: torch.Tensor,
    h_im: torch.Tensor,
    t_tar: torch.Tensor,
    e_tar: torch.Tensor,
    proj_w: torch.Tensor,
    proj_b: torch.Tensor,
    cfg: LossConfig,
    interest_rows: torch.Tensor | None = None,
) -> torch.Tensor:
    """Both alignment pairs, with text-side vectors mapped by ``x @ P.T + b``.

    ``interest_rows`` selects the examples whose semantic interest set is
    non-empty; the interest pair is only formed on those rows.
    """
    if not (h_ex.shape[0] == h_im.shape[0] == t_tar.shape[0] == e_tar.shape[0]):
        raise ValueError("alignment inputs must share the batch size")
    ex_hat = h_ex @ proj_w.T + proj_b
    tar_hat = t_tar @ proj_w.T + proj_b
    if interest_rows is not None:
        ex_hat, h_im = ex_hat[interest_rows], h_im[interest_rows]
    cl = contrastive(tar_hat, e_tar, cfg.tau)
    cos = cosine_loss(tar_hat, e_tar)
    if ex_hat.shape[0] > 0:
        cl = cl + contrastive(ex_hat, h_im, cfg.tau)
        cos = cos + cosine_loss(ex_hat, h_im)
    return cfg.alpha * cl + cfg.beta * cos


def total_loss(l_rec, l_sem, l_align, gamma: float):
    return l_rec + gamma * (l_sem + l_align)
