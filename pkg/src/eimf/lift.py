"""Paired comparison of the full model against the gamma=0 ablation on the
synthetic topic benchmark."""

from __future__ import annotations

import logging
import tempfile
import time
from dataclasses import dataclass, field
from typing import Sequence

from eimf.config import ClusterConfig, TrainConfig
from eimf.dataset import load_interactions, split_users
from eimf.esim import MockLLM
from eimf.metrics import evaluate
from eimf.pipeline import build_semantic_artifacts
from eimf.synth import write_synthetic
from eimf.textenc import HashingEncoder
from eimf.trainer import train

log = logging.getLogger(__name__)


@dataclass
class LiftResult:
    seeds: list[int]
    full: list[float] = field(default_factory=list)
    ablation: list[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ratio(self) -> float:
        base = sum(self.ablation)
        return sum(self.full) / base if base else float("inf")

    @property
    def wins(self) -> int:
        return sum(f > a for f, a in zip(self.full, self.ablation))


def lift_config(seed: int, steps: int = 3000) -> TrainConfig:
    return TrainConfig(d=32, n_interests=4, max_steps=steps, seed=seed, eval_every=10**9)


def run_seed(seed: int, steps: int = 3000, k: int = 20, cluster: ClusterConfig = ClusterConfig(), **gen) -> tuple[float, float]:
    with tempfile.TemporaryDirectory() as tmp:
        ip, cp = write_synthetic(tmp, seed=seed, **gen)
        ds = load_interactions(ip, cp)
    split = split_users(ds, seed)
    cfg = lift_config(seed, steps)
    art = build_semantic_artifacts(ds, split.train, HashingEncoder(cfg.d_t, 0), MockLLM(), cluster, cfg.max_interests)
    full = train(split.train, ds.catalog.n_items, cfg, art.data)
    abl = train(split.train, ds.catalog.n_items, cfg.replace(gamma=0.0), None)
    return evaluate(full, split.test, [k]).recall[k], evaluate(abl, split.test, [k]).recall[k]


def run_lift(seeds: Sequence[int] = (0, 1, 2, 3, 4), steps: int = 3000, **kwargs) -> LiftResult:
    t0 = time.perf_counter()
    res = LiftResult(list(seeds))
    for seed in seeds:
        f, a = run_seed(seed, steps, **kwargs)
        log.info("seed %d: full %.4f ablation %.4f", seed, f, a)
        res.full.append(f)
        res.ablation.append(a)
    res.seconds = time.perf_counter() - t0
    return res
