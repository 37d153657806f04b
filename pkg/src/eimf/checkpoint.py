"""Model container, seeded initialization and the checkpoint format."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from eimf.blob import read_blob, write_blob
from eimf.config import TrainConfig
from eimf.esim import SemanticTower
from eimf.ibim import BehaviorTower

# fan-in per parameter name; biases are zero-initialized
_FAN_IN = {
    "behavior.item_emb": lambda m: m.behavior.d,
    "behavior.pos_emb": lambda m: m.behavior.d,
    "behavior.w1": lambda m: m.behavior.d,
    "behavior.w2": lambda m: m.behavior.d_a,
    "semantic.wq": lambda m: m.semantic.d_t,
    "semantic.wk": lambda m: m.semantic.d_t,
    "semantic.wv": lambda m: m.semantic.d_t,
    "semantic.proj_w": lambda m: m.semantic.d_t,
}


class EIMFModel(nn.Module):
    def __init__(self, cfg: TrainConfig, n_items: int, with_semantic: bool = True):
        super().__init__()
        self.behavior = BehaviorTower(n_items, cfg.d, cfg.d_a, cfg.n_interests, cfg.max_len)
        self.semantic = SemanticTower(cfg.d_t, cfg.d, cfg.semantic_projections) if with_semantic else None

    @property
    def n_items(self) -> int:
        return self.behavior.n_items


def rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent generators for behavior init, semantic init and batch order.

    Keeping them separate lets an ESIM-free build consume exactly the same
    random numbers for everything it shares with the full model.
    """
    seqs = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(s) for s in seqs)


def _fill(model: EIMFModel, prefix: str, rng: np.random.Generator) -> None:
    with torch.no_grad():
        for name, p in model.named_parameters():
            if not name.startswith(prefix):
                continue
            if name in _FAN_IN:
                bound = 1.0 / math.sqrt(_FAN_IN[name](model))
                vals = rng.uniform(-bound, bound, size=tuple(p.shape))
                p.copy_(torch.from_numpy(vals.astype(np.float32)))
            else:
                p.zero_()


def init_params(cfg: TrainConfig, n_items: int, seed: int | None = None, with_semantic: bool = True) -> EIMFModel:
    seed = cfg.seed if seed is None else seed
    behavior_rng, semantic_rng, _ = rng_streams(seed)
    model = EIMFModel(cfg, n_items, with_semantic)
    _fill(model, "behavior.", behavior_rng)
    if with_semantic:
        _fill(model, "semantic.", semantic_rng)
    return model


@dataclass
class Checkpoint:
    model: EIMFModel
    config: TrainConfig
    step: int = 0
    history: list[dict] = field(default_factory=list)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy().astype(np.float32) for k, v in self.model.state_dict().items()}


def save_checkpoint(directory: str | Path, ckpt: Checkpoint) -> None:
    write_blob(
        directory,
        ckpt.arrays(),
        extra={
            "config": ckpt.config.to_dict(),
            "step": ckpt.step,
            "n_items": ckpt.model.n_items,
            "with_semantic": ckpt.model.semantic is not None,
            "history": ckpt.history,
        },
    )


def load_checkpoint(directory: str | Path) -> Checkpoint:
    arrays, extra = read_blob(directory)
    cfg = TrainConfig.from_dict(extra["config"])
    model = EIMFModel(cfg, int(extra["n_items"]), bool(extra["with_semantic"]))
    state = {k: torch.from_numpy(v.copy()) for k, v in arrays.items()}
    model.load_state_dict(state, strict=True)
    return Checkpoint(model, cfg, int(extra["step"]), list(extra.get("history", [])))
