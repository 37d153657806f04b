"""Glue between the stages: sequence texts -> clusters -> LLM interests ->
per-user semantic sets -> training data."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from eimf.apcluster import ClusterResult, cluster_embeddings
from eimf.config import ClusterConfig
from eimf.dataset import InteractionDataset, UserSequence
from eimf.esim import (
    SemanticInterestSet,
    build_prompt,
    encode_interests,
    infer_exemplar_interests,
    propagate_to_users,
)
from eimf.textenc import TextEncoder
from eimf.trainer import SemanticData, build_semantic_data

log = logging.getLogger(__name__)


def sequence_texts(ds: InteractionDataset, users: Sequence[UserSequence]) -> list[list[str]]:
    names = ds.catalog.names
    return [[names[i] for i in u.items] for u in users]


def embed_sequences(ds: InteractionDataset, users: Sequence[UserSequence], encoder: TextEncoder) -> np.ndarray:
    rows = [encoder.encode_sequence(t) for t in sequence_texts(ds, users)]
    return np.stack(rows) if rows else np.zeros((0, encoder.dim), dtype=np.float32)


def exemplar_prompts(ds: InteractionDataset, users: Sequence[UserSequence], cluster: ClusterResult) -> dict[int, str]:
    cat = ds.catalog
    return {
        e: build_prompt([cat.names[i] for i in users[e].items], [cat.raw_ids[i] for i in users[e].items])
        for e in cluster.exemplars
    }


def item_text_matrix(ds: InteractionDataset, encoder: TextEncoder) -> np.ndarray:
    return encoder.encode_many(ds.catalog.names)


def user_interest_sets(
    users: Sequence[UserSequence],
    cluster: ClusterResult,
    texts: Mapping[int, Sequence[str]],
    encoder: TextEncoder,
    max_interests: int,
) -> dict[str, SemanticInterestSet]:
    table = {e: encode_interests(encoder, list(texts[e])[:max_interests], max_interests) for e in cluster.exemplars}
    per_member = propagate_to_users(cluster, table)
    return {users[m].user_id: s for m, s in per_member.items()}


@dataclass
class SemanticArtifacts:
    cluster: ClusterResult
    texts: dict[int, list[str]]
    data: SemanticData


def build_semantic_artifacts(
    ds: InteractionDataset,
    train_users: Sequence[UserSequence],
    encoder: TextEncoder,
    client,
    cluster_cfg: ClusterConfig = ClusterConfig(),
    max_interests: int = 20,
) -> SemanticArtifacts:
    """Offline ESIM stage end to end, for in-process experiments."""
    embs = embed_sequences(ds, train_users, encoder)
    cluster = cluster_embeddings(embs, cluster_cfg.preference, cluster_cfg.damping, cluster_cfg.max_iter, cluster_cfg.conv_window)
    log.info("%d users -> %d exemplars (converged=%s after %d iterations)",
             len(train_users), cluster.n_clusters, cluster.converged, cluster.iterations_run)
    texts = infer_exemplar_interests(client, exemplar_prompts(ds, train_users, cluster), max_interests)
    sets = user_interest_sets(train_users, cluster, texts, encoder, max_interests)
    data = build_semantic_data(sets, item_text_matrix(ds, encoder), max_interests)
    return SemanticArtifacts(cluster, texts, data)
