"""Synthetic benchmark with latent topics that surface in item names, plus
small geometric fixtures used by the clustering checks."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

TOPIC_WORDS = (
    "lipstick", "espresso", "notebook", "shampoo",
    "teapot", "stapler", "candle", "chocolate",
    "sneaker", "headphone", "backpack", "sunscreen",
)
DESCRIPTORS = (
    "classic", "deluxe", "mini", "organic", "premium", "travel", "vintage",
    "matte", "bold", "soft", "bright", "gentle", "rapid", "smooth", "urban",
    "royal", "fresh", "silver", "golden", "daily", "eco", "compact", "pure",
    "rustic", "modern", "velvet", "crisp", "lunar", "coastal", "alpine",
)


def make_synthetic(
    n_users: int = 500,
    n_items: int = 300,
    n_topics: int = 8,
    seed: int = 0,
    min_len: int = 3,
    max_len: int = 8,
    zipf: float = 0.6,
    focus: tuple[float, float] = (0.5, 0.8),
):
    """Users mix two latent topics; items carry their topic word in the name.

    Returns ``(catalog, interactions)`` where catalog is a list of
    ``(raw_id, name, topic)`` and interactions a list of
    ``(user_id, raw_id, timestamp)``.
    """
    if n_topics > len(TOPIC_WORDS):
        raise ValueError(f"at most {len(TOPIC_WORDS)} topics are available")
    rng = np.random.default_rng(seed)
    topics = np.arange(n_items) % n_topics
    rng.shuffle(topics)
    catalog = []
    for k in range(n_items):
        desc = DESCRIPTORS[int(rng.integers(len(DESCRIPTORS)))]
        name = f"{desc.title()} {TOPIC_WORDS[topics[k]].title()} {k}"
        catalog.append((f"i{k:04d}", name, int(topics[k])))

    by_topic = [np.flatnonzero(topics == t) for t in range(n_topics)]
    popularity = []
    for members in by_topic:
        w = 1.0 / np.arange(1, len(members) + 1) ** zipf
        rng.shuffle(w)
        popularity.append(w / w.sum())

    interactions = []
    for u in range(n_users):
        pair = rng.choice(n_topics, size=2, replace=False)
        share = rng.uniform(*focus)
        length = int(rng.integers(min_len, max_len + 1))
        t0 = int(rng.integers(0, 1_000_000))
        for step in range(length):
            topic = pair[0] if rng.random() < share else pair[1]
            item = rng.choice(by_topic[topic], p=popularity[topic])
            interactions.append((f"u{u:04d}", f"i{item:04d}", t0 + 60 * step))
    return catalog, interactions


def write_synthetic(out_dir: str | Path, **kwargs) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    catalog, interactions = make_synthetic(**kwargs)
    cat_path, int_path = out / "catalog.jsonl", out / "interactions.tsv"
    with open(cat_path, "w", encoding="utf-8") as fh:
        for rid, name, _ in catalog:
            fh.write(json.dumps({"id": rid, "name": name}) + "\n")
    with open(int_path, "w", encoding="utf-8") as fh:
        for user, item, ts in interactions:
            fh.write(f"{user}\t{item}\t{ts}\n")
    return int_path, cat_path


def three_blobs(n: int = 90, seed: int = 7, spread: float = 1.0) -> np.ndarray:
    """Three isotropic 2-D blobs on a triangle of side 10."""
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [5.0, 8.66]])
    labels = np.arange(n) % 3
    return centers[labels] + rng.normal(scale=spread, size=(n, 2))
