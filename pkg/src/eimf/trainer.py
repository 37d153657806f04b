"""Joint training of the behavioral tower with semantic-prediction and
modality-alignment auxiliaries."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from eimf.checkpoint import Checkpoint, EIMFModel, init_params, rng_streams
from eimf.config import TrainConfig
from eimf.dataset import TrainingExample, UserSequence, make_training_examples
from eimf.esim import SemanticInterestSet, masked_softmax, semantic_target_attention
from eimf.ibim import item_logits, pad_prefixes, target_attention
from eimf.objectives import alignment_loss, nll_from_logits, total_loss

log = logging.getLogger(__name__)

__all__ = [
    "Batch", "LossParts", "SemanticData", "TrainingError", "build_semantic_data",
    "compute_losses", "grad_check", "init_params", "make_batch", "train", "train_step",
]


class TrainingError(RuntimeError):
    pass


@dataclass
class SemanticData:
    """Frozen text-side tensors.

    ``groups`` stacks the distinct interest sets, with one trailing all-masked
    set for users that have none; ``user_group`` maps user id to its row.
    """

    groups: torch.Tensor  # (G + 1, M_ex, d_t)
    group_mask: torch.Tensor  # (G + 1, M_ex) bool
    user_group: dict[str, int]
    item_text: torch.Tensor  # (N, d_t)

    def __post_init__(self):
        self.valid_pos = self.group_mask.reshape(-1).nonzero().squeeze(-1)
        self.valid_rows = self.groups.reshape(-1, self.groups.shape[-1])[self.valid_pos]

    @property
    def empty_group(self) -> int:
        return self.groups.shape[0] - 1

    def to(self, dtype: torch.dtype) -> "SemanticData":
        return SemanticData(self.groups.to(dtype), self.group_mask, self.user_group, self.item_text.to(dtype))


def build_semantic_data(user_sets: Mapping[str, SemanticInterestSet], item_text: np.ndarray, max_interests: int | None = None) -> SemanticData:
    distinct: list[SemanticInterestSet] = []
    slot: dict[int, int] = {}
    user_group = {}
    for uid in user_sets:
        s = user_sets[uid]
        if id(s) not in slot:
            slot[id(s)] = len(distinct)
            distinct.append(s)
        user_group[uid] = slot[id(s)]
    d_t = item_text.shape[1]
    m = max_interests or (distinct[0].vectors.shape[0] if distinct else 1)
    groups = np.zeros((len(distinct) + 1, m, d_t), dtype=np.float32)
    mask = np.zeros((len(distinct) + 1, m), dtype=bool)
    for g, s in enumerate(distinct):
        if s.vectors.shape != (m, d_t):
            raise TrainingError(f"interest set shape {s.vectors.shape} != {(m, d_t)}")
        groups[g], mask[g] = s.vectors, s.mask
    return SemanticData(
        torch.from_numpy(groups), torch.from_numpy(mask), user_group,
        torch.from_numpy(np.asarray(item_text, dtype=np.float32)),
    )


@dataclass
class Batch:
    prefix: torch.Tensor  # (B, L) long
    mask: torch.Tensor  # (B, L) bool
    target: torch.Tensor  # (B,) long
    group: torch.Tensor  # (B,) long, row into SemanticData.groups

    def __len__(self) -> int:
        return self.target.shape[0]


def make_batch(examples: Sequence[TrainingExample], max_len: int, semantic: SemanticData | None = None) -> Batch:
    prefix, mask = pad_prefixes([e.prefix for e in examples], max_len)
    target = torch.tensor([e.target for e in examples], dtype=torch.long)
    if semantic is None:
        group = torch.zeros(len(examples), dtype=torch.long)
    else:
        group = torch.tensor([semantic.user_group.get(e.user_id, semantic.empty_group) for e in examples], dtype=torch.long)
    return Batch(prefix, mask, target, group)


@dataclass
class LossParts:
    rec: float
    sem: float
    align: float
    total: float


def compute_losses(model: EIMFModel, batch: Batch, semantic: SemanticData | None, cfg: TrainConfig, auxiliary: bool | None = None) -> dict[str, torch.Tensor]:
    """Forward pass. The auxiliary branch runs only when ``gamma > 0`` and a
    semantic tower is present (or when forced via ``auxiliary``)."""
    tower = model.behavior
    h_im = tower.extract(batch.prefix, batch.mask)
    e_tar = tower.item_emb[batch.target]
    h_im_ref = target_attention(e_tar, h_im)
    l_rec = nll_from_logits(item_logits(h_im_ref, tower.item_emb), batch.target)
    out = {"rec": l_rec, "total": l_rec}

    if auxiliary is None:
        auxiliary = cfg.loss.gamma > 0 and model.semantic is not None and semantic is not None
    if not auxiliary:
        return out

    sem_tower = model.semantic
    # self-attention depends only on the interest set, so run it once per
    # distinct set: over all sets when there are few, else over the batch's
    if semantic.groups.shape[0] <= len(batch):
        g_mask, inv = semantic.group_mask, batch.group
        h_s = sem_tower.packed_self_attention(semantic.valid_rows, semantic.valid_pos, g_mask)
    else:
        uniq, inv = torch.unique(batch.group, return_inverse=True)
        g_mask = semantic.group_mask[uniq]
        h_s = sem_tower.self_attention(semantic.groups[uniq], g_mask)
    mask = g_mask[inv]
    t_tar = semantic.item_text[batch.target]
    h_ex_ref = grouped_target_attention(t_tar, h_s, g_mask, inv)
    l_sem = nll_from_logits(h_ex_ref @ semantic.item_text.T, batch.target)
    l_align = alignment_loss(
        h_ex_ref, h_im_ref, t_tar, e_tar, sem_tower.proj_w, sem_tower.proj_b, cfg.loss,
        interest_rows=mask.any(-1),
    )
    out.update(sem=l_sem, align=l_align, total=total_loss(l_rec, l_sem, l_align, cfg.loss.gamma))
    return out


# above this many valid interest rows a gather beats attending over all rows
_PACKED_ROW_LIMIT = 512


def grouped_target_attention(t_tar: torch.Tensor, h_s: torch.Tensor, g_mask: torch.Tensor, inv: torch.Tensor) -> torch.Tensor:
    """``semantic_target_attention(t_tar, h_s[inv], g_mask[inv])``.

    When the sets hold few valid rows in total, every example attends over
    all of them at once (two GEMMs); rows outside its own set are masked, so
    they get exactly zero weight.
    """
    m, d_t = h_s.shape[-2:]
    flat = g_mask.reshape(-1).nonzero().squeeze(-1)
    if len(flat) > _PACKED_ROW_LIMIT:
        return semantic_target_attention(t_tar, h_s[inv], g_mask[inv])
    rows = h_s.reshape(-1, d_t)[flat]
    own = (flat // m).unsqueeze(0) == inv.unsqueeze(1)
    w = masked_softmax(t_tar @ rows.T / math.sqrt(d_t), own)
    return w @ rows


def make_optimizers(model: EIMFModel, cfg: TrainConfig) -> list[torch.optim.Optimizer]:
    # one optimizer per tower so the behavior update never depends on whether
    # the semantic tower exists
    opts = [torch.optim.Adam(model.behavior.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8, fused=True)]
    if model.semantic is not None:
        opts.append(torch.optim.Adam(model.semantic.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8, fused=True))
    return opts


def train_step(model: EIMFModel, optimizers, batch: Batch, semantic: SemanticData | None, cfg: TrainConfig) -> LossParts:
    for opt in optimizers:
        opt.zero_grad(set_to_none=True)
    losses = compute_losses(model, batch, semantic, cfg)
    for name, val in losses.items():
        if not torch.isfinite(val):
            raise TrainingError(f"non-finite {name} loss ({float(val)})")
    losses["total"].backward()
    for opt in optimizers:
        opt.step()
    vals = {k: v.item() for k, v in losses.items()}
    return LossParts(vals["rec"], vals.get("sem", 0.0), vals.get("align", 0.0), vals["total"])


def _examples(users: Sequence[UserSequence], max_len: int) -> list[TrainingExample]:
    out = []
    for u in users:
        if len(u.items) >= 2:
            out.extend(make_training_examples(u, max_len))
    return out


def train(
    train_users: Sequence[UserSequence],
    n_items: int,
    cfg: TrainConfig,
    semantic: SemanticData | None = None,
    valid_users: Sequence[UserSequence] = (),
    with_semantic: bool | None = None,
    on_step: Callable[[int, LossParts], None] | None = None,
) -> Checkpoint:
    """Run ``cfg.max_steps`` updates over seeded-shuffled mini-batches.

    ``with_semantic=False`` builds the model without any text-side
    parameters; it is only allowed when ``gamma == 0``.
    """
    if with_semantic is None:
        with_semantic = semantic is not None
    if cfg.loss.gamma > 0 and (semantic is None or not with_semantic):
        raise TrainingError("gamma > 0 needs semantic interest data (run cluster + infer, or set gamma = 0)")
    if semantic is not None and semantic.item_text.shape != (n_items, cfg.d_t):
        raise TrainingError(f"item text matrix is {tuple(semantic.item_text.shape)}, expected {(n_items, cfg.d_t)}")

    torch.manual_seed(cfg.seed)
    model = init_params(cfg, n_items, cfg.seed, with_semantic)
    ckpt = Checkpoint(model, cfg, 0, [])
    if cfg.max_steps == 0:
        return ckpt
    examples = _examples(train_users, cfg.max_len)
    if not examples:
        raise TrainingError("no training examples (every user needs at least 2 interactions)")

    everything = make_batch(examples, cfg.max_len, semantic)
    _, _, order_rng = rng_streams(cfg.seed)
    optimizers = make_optimizers(model, cfg)
    model.train()
    t0 = time.perf_counter()
    perm: np.ndarray = np.empty(0, dtype=np.int64)
    cursor = 0
    window: list[float] = []
    for step in range(1, cfg.max_steps + 1):
        if cursor >= len(perm):
            perm, cursor = order_rng.permutation(len(examples)), 0
        idx = perm[cursor:cursor + cfg.batch_size]
        cursor += cfg.batch_size
        sel = torch.from_numpy(idx)
        batch = Batch(everything.prefix[sel], everything.mask[sel], everything.target[sel], everything.group[sel])
        parts = train_step(model, optimizers, batch, semantic, cfg)
        window.append(parts.total)
        if on_step is not None:
            on_step(step, parts)
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            entry = {"step": step, "loss": float(np.mean(window)), "rec": parts.rec, "sem": parts.sem, "align": parts.align}
            window = []
            if valid_users:
                from eimf.metrics import evaluate

                entry["valid_recall@20"] = evaluate(model, valid_users, (20,)).recall[20]
            ckpt.history.append(entry)
            log.info("step %d  %s  (%.1fs)", step, "  ".join(f"{k}={v:.4f}" for k, v in entry.items() if k != "step"), time.perf_counter() - t0)
    ckpt.step = cfg.max_steps
    model.eval()
    return ckpt


# -- gradient checking -------------------------------------------------------

LOSS_NAMES = ("rec", "sem", "align", "total")


def grad_check(
    model: EIMFModel,
    batch: Batch,
    semantic: SemanticData,
    cfg: TrainConfig,
    names: Sequence[str] | None = None,
    step: float = 1e-5,
) -> dict[str, float]:
    """Max relative error between autograd and central differences, per loss.

    Runs in float64 on a copy of the model. For each parameter array the
    error is ``max|g_auto - g_fd|`` over that array's gradient scale, floored
    at 1e-3 of the loss's largest gradient entry so arrays the loss does not
    touch are not judged on finite-difference round-off alone.
    """
    import copy

    model = copy.deepcopy(model).double()
    semantic = semantic.to(torch.float64)
    params = dict(model.named_parameters())
    names = list(names) if names is not None else list(params)

    def losses():
        return compute_losses(model, batch, semantic, cfg, auxiliary=True)

    analytic = {}
    for lname in LOSS_NAMES:
        model.zero_grad(set_to_none=True)
        losses()[lname].backward()
        analytic[lname] = {n: (params[n].grad.detach().clone() if params[n].grad is not None else torch.zeros_like(params[n])) for n in names}

    numeric = {lname: {n: torch.zeros_like(params[n]) for n in names} for lname in LOSS_NAMES}
    with torch.no_grad():
        for n in names:
            flat = params[n].view(-1)
            for j in range(flat.numel()):
                orig = flat[j].item()
                flat[j] = orig + step
                up = {k: v.item() for k, v in losses().items()}
                flat[j] = orig - step
                down = {k: v.item() for k, v in losses().items()}
                flat[j] = orig
                for lname in LOSS_NAMES:
                    numeric[lname][n].view(-1)[j] = (up[lname] - down[lname]) / (2 * step)

    errors = {}
    for lname in LOSS_NAMES:
        overall = max(max(analytic[lname][n].abs().max().item(), numeric[lname][n].abs().max().item()) for n in names)
        worst = 0.0
        for n in names:
            a, f = analytic[lname][n], numeric[lname][n]
            scale = max(a.abs().max().item(), f.abs().max().item(), 1e-3 * overall, 1e-8)
            worst = max(worst, (a - f).abs().max().item() / scale)
        errors[lname] = worst
    return errors


def random_instance(seed: int, batch_size: int = 4, d: int = 6, d_t: int = 5, n_items: int = 10, n_interests: int = 3, max_interests: int = 3, max_len: int = 5):
    """Small seeded model, batch and semantic data for gradient checks."""
    from eimf.objectives import LossConfig

    rng = np.random.default_rng(seed)
    cfg = TrainConfig(
        batch_size=batch_size, d=d, d_t=d_t, d_a=d, n_interests=n_interests,
        max_interests=max_interests, max_len=max_len, seed=seed,
        loss=LossConfig(alpha=0.3, beta=0.2, gamma=0.5, tau=0.5),
    )
    model = init_params(cfg, n_items, seed)
    with torch.no_grad():
        for p in model.parameters():
            if p.dim() == 1:  # nonzero biases so their gradients are exercised
                p.copy_(torch.from_numpy(rng.normal(0, 0.1, size=p.shape).astype(np.float32)))
    item_text = rng.normal(size=(n_items, d_t))
    item_text /= np.linalg.norm(item_text, axis=1, keepdims=True)
    n_groups = 2
    groups = np.zeros((n_groups + 1, max_interests, d_t))
    mask = np.zeros((n_groups + 1, max_interests), dtype=bool)
    for g in range(n_groups):
        k = int(rng.integers(1, max_interests + 1))
        groups[g, :k] = rng.normal(size=(k, d_t))
        mask[g, :k] = True
    users = [f"u{i}" for i in range(batch_size)]
    semantic = SemanticData(
        torch.from_numpy(groups), torch.from_numpy(mask),
        {u: i % n_groups for i, u in enumerate(users)}, torch.from_numpy(item_text),
    )
    examples = []
    for u in users:
        length = int(rng.integers(1, max_len + 3))
        seq = rng.integers(0, n_items, size=length)
        examples.append(TrainingExample(u, tuple(int(x) for x in seq[-max_len:]), int(rng.integers(0, n_items))))
    return model, make_batch(examples, max_len, semantic), semantic, cfg
