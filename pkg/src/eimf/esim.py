"""Explicit semantic interests: prompts, LLM inference, encoding and the
semantic attention stack."""

from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from eimf.apcluster import ClusterResult
from eimf.textenc import TextEncoder, tokenize

log = logging.getLogger(__name__)

MAX_INTERESTS = 20
DEFAULT_RETRIES = 2
DEFAULT_FALLBACK_K = 5

PROMPT_CONTEXT = "The user's historical click sequence is as follows: "
PROMPT_TASK = (
    "please infer the user's interest preference and output it in the format of JSON, "
    "such as {interest sequence number: interest content;}"
)

STOPWORDS = frozenset(
    "a an and are as at be by for from in into is it of on or the to with "
    "this that these those its your our my set pack pcs oz ml".split()
)


class LLMError(RuntimeError):
    """Transport-level failure talking to the chat endpoint."""


# -- prompts -----------------------------------------------------------------

def build_prompt(item_names: Sequence[str], item_ids: Sequence[int | str]) -> str:
    if not item_names or not item_ids:
        raise ValueError("prompt needs at least one item")
    if len(item_names) != len(item_ids):
        raise ValueError(f"{len(item_names)} names but {len(item_ids)} ids")
    listing = ", ".join(f"{name} ({iid})" for name, iid in zip(item_names, item_ids))
    return f"{PROMPT_CONTEXT}[{listing}]; {PROMPT_TASK}"


_ITEM_RE = re.compile(r"(.+?) \(([^()]*)\)(?:, |$)")


def prompt_item_names(prompt: str) -> list[str]:
    """Recover item names from a prompt built by :func:`build_prompt`."""
    start = prompt.find("[")
    end = prompt.rfind("]; ")
    if start < 0 or end < start:
        return []
    return [m.group(1) for m in _ITEM_RE.finditer(prompt[start + 1:end])]


# -- clients -----------------------------------------------------------------

class _Counter:
    def __init__(self):
        self._lock = threading.Lock()
        self.value = 0

    def bump(self):
        with self._lock:
            self.value += 1

    def reset(self):
        with self._lock:
            self.value = 0


LLM_CALLS = _Counter()


class ChatClient:
    """Minimal chat-completion client (POST, ``choices[0].message.content``)."""

    def __init__(self, endpoint: str, model: str, api_key: str | None = None, timeout: float = 60.0):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get("EIMF_LLM_API_KEY")
        self.timeout = timeout

    def request_body(self, prompt: str) -> dict:
        return {"model": self.model, "messages": [{"role": "user", "content": prompt}]}

    def complete(self, prompt: str) -> str:
        import httpx

        LLM_CALLS.bump()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = httpx.post(self.endpoint, json=self.request_body(prompt), headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
            raise LLMError(f"chat completion failed: {exc}") from exc


class MockLLM:
    """Deterministic offline stand-in for the chat endpoint.

    Ranks item-name tokens by how many listed items contain them, keeps the
    salient ones, and pairs each with a partner token that co-occurs with it
    in most of its items. The groups come back as a numbered JSON object.
    """

    def __init__(self, top_k: int = DEFAULT_FALLBACK_K, min_share: float = 0.25):
        self.top_k = top_k
        self.min_share = min_share

    def complete(self, prompt: str) -> str:
        LLM_CALLS.bump()
        groups = token_groups(prompt_item_names(prompt), self.top_k, self.min_share)
        return json.dumps({str(i + 1): g for i, g in enumerate(groups)})


def _content_tokens(name: str) -> list[str]:
    seen = []
    for tok in tokenize(name):
        if tok in STOPWORDS or tok.isdigit() or tok in seen:
            continue
        seen.append(tok)
    return seen


def token_groups(names: Sequence[str], top_k: int, min_share: float = 0.25) -> list[str]:
    docs = [_content_tokens(n) for n in names]
    df: Counter[str] = Counter()
    first: dict[str, int] = {}
    for doc in docs:
        for tok in doc:
            df[tok] += 1
            first.setdefault(tok, len(first))
    if not df:
        return []
    ranked = sorted(df, key=lambda t: (-df[t], first[t]))
    floor = max(2, math.ceil(min_share * df[ranked[0]]))
    salient = [t for t in ranked if df[t] >= floor] or ranked[:1]

    used: set[str] = set()
    groups = []
    for tok in salient:
        if tok in used:
            continue
        used.add(tok)
        co: Counter[str] = Counter()
        for doc in docs:
            if tok in doc:
                co.update(t for t in doc if t != tok and t not in used)
        group = [tok]
        if co:
            partner, count = min(co.items(), key=lambda kv: (-kv[1], first[kv[0]]))
            if count >= max(2, (df[tok] + 1) // 2):
                group.append(partner)
                used.add(partner)
        groups.append(" ".join(group))
        if len(groups) == top_k:
            break
    return groups


# -- response parsing --------------------------------------------------------

def _balanced_objects(text: str):
    for start in (i for i, ch in enumerate(text) if ch == "{"):
        depth, in_str, esc = 0, False, False
        for j in range(start, len(text)):
            ch = text[j]
            if in_str:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    yield text[start:j + 1]
                    break


_LOOSE_PAIR_RE = re.compile(r"[\"']?(\d+)[\"']?\s*:\s*[\"']?([^;,\"'{}\n]+)")


def extract_interest_object(text: str) -> dict[str, str] | None:
    """First ``{...}`` region that parses as a mapping; tolerates the
    ``{1: foo; 2: bar}`` shape the task sentence itself suggests."""
    for chunk in _balanced_objects(text):
        try:
            obj = json.loads(chunk)
        except json.JSONDecodeError:
            pairs = _LOOSE_PAIR_RE.findall(chunk)
            if pairs:
                return {k: v for k, v in pairs}
            continue
        if isinstance(obj, dict) and obj:
            return obj
    return None


def _key_order(key: str) -> tuple[int, float]:
    m = re.search(r"\d+", str(key))
    return (0, float(m.group())) if m else (1, 0.0)


def parse_interests(obj: Mapping, max_interests: int = MAX_INTERESTS) -> list[str]:
    out = []
    for key in sorted(obj, key=_key_order):  # stable: non-numeric keys keep their order
        val = obj[key]
        if isinstance(val, (list, tuple)):
            val = ", ".join(str(v) for v in val)
        elif isinstance(val, dict):
            val = ", ".join(f"{k}: {v}" for k, v in val.items())
        val = str(val).strip()
        if val:
            out.append(val)
    return out[:max_interests]


def frequency_fallback(prompt: str, k: int = DEFAULT_FALLBACK_K) -> list[str]:
    counts: Counter[str] = Counter()
    first: dict[str, int] = {}
    for name in prompt_item_names(prompt):
        for tok in tokenize(name):
            if tok in STOPWORDS or tok.isdigit():
                continue
            counts[tok] += 1
            first.setdefault(tok, len(first))
    return sorted(counts, key=lambda t: (-counts[t], first[t]))[:k]


def infer_interests(
    client,
    prompt: str,
    max_interests: int = MAX_INTERESTS,
    retries: int = DEFAULT_RETRIES,
    fallback_k: int = DEFAULT_FALLBACK_K,
) -> list[str]:
    for attempt in range(1, retries + 1):
        obj = extract_interest_object(client.complete(prompt))
        if obj is not None:
            interests = parse_interests(obj, max_interests)
            if interests:
                return interests
        log.debug("attempt %d: no interest object in LLM response", attempt)
    log.warning("LLM gave no parseable interests after %d attempts; using token-frequency fallback", retries)
    return frequency_fallback(prompt, fallback_k)[:max_interests]


# -- interest sets -----------------------------------------------------------

@dataclass(frozen=True)
class SemanticInterestSet:
    vectors: np.ndarray  # (max_interests, d_t); invalid rows are zero
    mask: np.ndarray  # (max_interests,) bool
    texts: tuple[str, ...]

    def content_equal(self, other: "SemanticInterestSet") -> bool:
        return (
            self.texts == other.texts
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.vectors, other.vectors)
        )


def encode_interests(encoder: TextEncoder, texts: Sequence[str], max_interests: int = MAX_INTERESTS) -> SemanticInterestSet:
    if len(texts) > max_interests:
        raise ValueError(f"{len(texts)} interests exceed the cap of {max_interests}")
    vecs = np.zeros((max_interests, encoder.dim), dtype=np.float32)
    mask = np.zeros(max_interests, dtype=bool)
    for k, text in enumerate(texts):
        vecs[k] = encoder.encode_text(text)
        mask[k] = True
    return SemanticInterestSet(vecs, mask, tuple(texts))


def propagate_to_users(cluster: ClusterResult, table: Mapping[int, SemanticInterestSet]) -> dict[int, SemanticInterestSet]:
    missing = sorted(set(cluster.exemplars) - set(table))
    if missing:
        raise KeyError(f"no interest set for exemplar(s) {missing}")
    return {u: table[e] for u, e in enumerate(cluster.assignment)}


def infer_exemplar_interests(
    client,
    prompts: Mapping[int, str],
    max_interests: int = MAX_INTERESTS,
    retries: int = DEFAULT_RETRIES,
    max_in_flight: int = 4,
) -> dict[int, list[str]]:
    """Query the LLM for every exemplar prompt with bounded concurrency."""
    keys = sorted(prompts)
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        results = pool.map(lambda k: infer_interests(client, prompts[k], max_interests, retries), keys)
        return dict(zip(keys, results))


def write_interests(path: str | Path, texts: Mapping[int, Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in sorted(texts):
            fh.write(json.dumps({"exemplar": int(ex), "texts": list(texts[ex])}, ensure_ascii=False) + "\n")


def read_interests(path: str | Path) -> dict[int, list[str]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out[int(obj["exemplar"])] = [str(t) for t in obj["texts"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed interests line ({exc})") from None
    return out


# -- semantic attention stack --------------------------------------------------

def masked_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Softmax over the last axis restricted to ``mask``; masked positions get
    exactly zero weight and fully masked rows are all zero."""
    neg = torch.finfo(logits.dtype).min
    w = torch.softmax(logits.masked_fill(~mask, neg), dim=-1)
    return w * mask.to(w.dtype)


def semantic_self_attention(
    h: torch.Tensor,
    mask: torch.Tensor,
    wq: torch.Tensor | None = None,
    bq: torch.Tensor | None = None,
    wk: torch.Tensor | None = None,
    bk: torch.Tensor | None = None,
    wv: torch.Tensor | None = None,
    bv: torch.Tensor | None = None,
    return_weights: bool = False,
):
    """Single-head scaled dot-product self-attention over interest rows.

    ``h`` is (..., M, d_t). Projections are ``x @ W.T + b``; passing no
    weights gives the parameter-free variant.
    """
    d_t = h.shape[-1]
    q = h if wq is None else h @ wq.T + bq
    k = h if wk is None else h @ wk.T + bk
    v = h if wv is None else h @ wv.T + bv
    logits = q @ k.transpose(-1, -2) / math.sqrt(d_t)
    key_mask = mask.unsqueeze(-2).expand(logits.shape)
    w = masked_softmax(logits, key_mask)
    w = w * mask.unsqueeze(-1).to(w.dtype)
    out = w @ v
    return (out, w) if return_weights else out


def semantic_target_attention(t_tar: torch.Tensor, h_s: torch.Tensor, mask: torch.Tensor, return_weights: bool = False):
    """``t_tar`` (..., d_t) attends over ``h_s`` (..., M, d_t)."""
    logits = (h_s @ t_tar.unsqueeze(-1)).squeeze(-1) / math.sqrt(h_s.shape[-1])
    w = masked_softmax(logits, mask)
    out = (w.unsqueeze(-1) * h_s).sum(-2)
    return (out, w) if return_weights else out


class SemanticTower(nn.Module):
    """Self-attention over LLM interests plus the text-to-ID projection."""

    def __init__(self, d_t: int, d: int, projections: bool = True):
        super().__init__()
        self.d_t, self.d = d_t, d
        self.projections = projections
        if projections:
            for name in ("q", "k", "v"):
                self.register_parameter(f"w{name}", nn.Parameter(torch.empty(d_t, d_t)))
                self.register_parameter(f"b{name}", nn.Parameter(torch.zeros(d_t)))
        self.proj_w = nn.Parameter(torch.empty(d, d_t))
        self.proj_b = nn.Parameter(torch.zeros(d))

    def self_attention(self, h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if not self.projections:
            return semantic_self_attention(h, mask)
        # Project only the valid rows; masked rows never reach the output, so
        # this equals the dense computation at a fraction of the cost.
        flat = mask.reshape(-1).nonzero().squeeze(-1)
        return self.packed_self_attention(h.reshape(-1, h.shape[-1])[flat], flat, mask)

    def packed_self_attention(self, rows: torch.Tensor, flat_pos: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Self-attention given only the valid rows and their flat positions
        in the (..., M) layout described by ``mask``."""
        shape = (*mask.shape, rows.shape[-1])
        if not self.projections:
            h = rows.new_zeros(mask.numel(), rows.shape[-1]).index_copy(0, flat_pos, rows).view(shape)
            return semantic_self_attention(h, mask)

        def scatter(x):
            return x.new_zeros(mask.numel(), x.shape[-1]).index_copy(0, flat_pos, x).view(shape)

        q = scatter(rows @ self.wq.T + self.bq)
        k = scatter(rows @ self.wk.T + self.bk)
        v = scatter(rows @ self.wv.T + self.bv)
        logits = q @ k.transpose(-1, -2) / math.sqrt(rows.shape[-1])
        w = masked_softmax(logits, mask.unsqueeze(-2).expand(logits.shape))
        w = w * mask.unsqueeze(-1).to(w.dtype)
        return w @ v

    def project(self, x: torch.Tensor) -> torch.Tensor:
        return x @ self.proj_w.T + self.proj_b
