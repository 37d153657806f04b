"""Text embedding providers.

The built-in provider is a seeded feature-hashing featurizer over word
unigrams and bigrams. It needs no model download and is deterministic across
processes. Precomputed embeddings (e.g. from a sentence encoder run elsewhere)
are loaded from the manifest + ``vectors.f32`` blob format.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_DIM = 384
SEQUENCE_SEPARATOR = " ; "

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


class EmbeddingFormatError(ValueError):
    pass


class _CallCounter:
    """Process-wide count of encode calls; serving must never move it."""

    def __init__(self):
        self._lock = threading.Lock()
        self.value = 0

    def bump(self):
        with self._lock:
            self.value += 1

    def reset(self):
        with self._lock:
            self.value = 0


ENCODE_CALLS = _CallCounter()


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class TextEncoder:
    """Base provider. Subclasses implement ``_encode``."""

    dim: int

    def encode_text(self, text: str) -> np.ndarray:
        ENCODE_CALLS.bump()
        return self._encode(text)

    def encode_sequence(self, names: Sequence[str]) -> np.ndarray:
        return self.encode_text(SEQUENCE_SEPARATOR.join(names))

    def encode_many(self, texts: Iterable[str]) -> np.ndarray:
        rows = [self.encode_text(t) for t in texts]
        if not rows:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack(rows)

    def _encode(self, text: str) -> np.ndarray:
        raise NotImplementedError


class HashingEncoder(TextEncoder):
    """Signed feature hashing of word 1-2 grams, L2-normalized."""

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=True)

    def _bucket(self, feature: str) -> tuple[int, float]:
        digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8, key=self._key).digest()
        h = int.from_bytes(digest, "little")
        return h % self.dim, (1.0 if (h >> 63) & 1 else -1.0)

    def _encode(self, text: str) -> np.ndarray:
        toks = tokenize(text)
        vec = np.zeros(self.dim, dtype=np.float64)
        feats = toks + [f"{a} {b}" for a, b in zip(toks, toks[1:])]
        for f in feats:
            idx, sign = self._bucket(f)
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec.astype(np.float32)


class TableEncoder(TextEncoder):
    """Lookup provider over precomputed vectors keyed by exact text."""

    def __init__(self, table: Mapping[str, np.ndarray], dim: int | None = None):
        self.table = dict(table)
        if dim is None:
            if not self.table:
                raise ValueError("dim is required for an empty table")
            dim = len(next(iter(self.table.values())))
        self.dim = dim

    def _encode(self, text: str) -> np.ndarray:
        if text == "":
            return np.zeros(self.dim, dtype=np.float32)
        try:
            return self.table[text]
        except KeyError:
            raise KeyError(f"no precomputed embedding for text {text!r}") from None


def make_encoder(kind: str = "builtin", dim: int = DEFAULT_DIM, seed: int = 0, path: str | Path | None = None) -> TextEncoder:
    if kind == "builtin":
        return HashingEncoder(dim, seed)
    if kind == "file":
        if path is None:
            raise ValueError("the file provider needs an embeddings path")
        table = load_embeddings(path)
        return TableEncoder(table, dim=_manifest_dim(path))
    raise ValueError(f"unknown text provider {kind!r}")


# -- blob io -----------------------------------------------------------------

def save_embeddings(path: str | Path, keys: Sequence[str], vectors: np.ndarray) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    vectors = np.asarray(vectors, dtype="<f4")
    if vectors.ndim != 2 or vectors.shape[0] != len(keys):
        raise EmbeddingFormatError("vectors must be count x d_t and match the key list")
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump({"d_t": int(vectors.shape[1]), "count": len(keys), "keys": list(keys)}, fh)
        fh.write("\n")
    (path / "vectors.f32").write_bytes(np.ascontiguousarray(vectors).tobytes())


def _manifest_dim(path: str | Path) -> int:
    manifest = Path(path) / "manifest.json"
    if not manifest.exists():
        raise EmbeddingFormatError(f"missing manifest: {manifest}")
    with open(manifest, encoding="utf-8") as fh:
        return int(json.load(fh)["d_t"])


def load_embeddings_ordered(path: str | Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    manifest = path / "manifest.json"
    if not manifest.exists():
        raise EmbeddingFormatError(f"missing manifest: {manifest}")
    with open(manifest, encoding="utf-8") as fh:
        doc = json.load(fh)
    d_t, count, keys = int(doc["d_t"]), int(doc["count"]), list(doc["keys"])
    if d_t < 1:
        raise EmbeddingFormatError(f"invalid d_t {d_t}")
    if len(keys) != count:
        raise EmbeddingFormatError(f"manifest count {count} != {len(keys)} keys")
    raw = (path / "vectors.f32").read_bytes()
    if len(raw) % 4 or (len(raw) // 4) % d_t:
        raise EmbeddingFormatError(f"vectors.f32 length {len(raw)} bytes is not a multiple of d_t={d_t} floats")
    vecs = np.frombuffer(raw, dtype="<f4").reshape(-1, d_t)
    if vecs.shape[0] != count:
        raise EmbeddingFormatError(f"vectors.f32 holds {vecs.shape[0]} rows, manifest declares {count}")
    return keys, vecs.astype(np.float32)


def load_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    keys, vecs = load_embeddings_ordered(path)
    return {k: vecs[i] for i, k in enumerate(keys)}
