"""Behavior-only serving: interest extraction and exact maximum-inner-product
retrieval, plus a small threaded HTTP front end."""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Iterable, Sequence

import numpy as np
import torch

from eimf.checkpoint import Checkpoint, EIMFModel
from eimf.dataset import ItemCatalog
from eimf.ibim import BehaviorTower, pad_prefixes

log = logging.getLogger(__name__)


class UnknownItemError(KeyError):
    def __init__(self, offenders: Sequence):
        super().__init__(f"unknown item id(s): {list(offenders)}")
        self.offenders = list(offenders)


@dataclass(frozen=True)
class RetrievalIndex:
    item_emb: np.ndarray  # (N, d), read-only
    raw_ids: tuple[str, ...] = ()
    names: tuple[str, ...] = ()

    @classmethod
    def build(cls, item_emb, catalog: ItemCatalog | None = None) -> "RetrievalIndex":
        emb = np.array(item_emb, dtype=np.float64, copy=True)
        emb.setflags(write=False)
        if catalog is None:
            ids = tuple(str(i) for i in range(emb.shape[0]))
            return cls(emb, ids, ids)
        if catalog.n_items != emb.shape[0]:
            raise ValueError(f"catalog has {catalog.n_items} items but the checkpoint has {emb.shape[0]}")
        return cls(emb, catalog.raw_ids, catalog.names)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, catalog: ItemCatalog | None = None) -> "RetrievalIndex":
        return cls.build(ckpt.model.behavior.item_emb.detach().numpy(), catalog)

    @property
    def n_items(self) -> int:
        return self.item_emb.shape[0]


def _behavior(model) -> BehaviorTower:
    if isinstance(model, Checkpoint):
        model = model.model
    if isinstance(model, EIMFModel):
        model = model.behavior
    return model


def extract_interests_batch(prefixes: Sequence[Sequence[int]], model) -> np.ndarray:
    """(B, M, d) interests for each prefix; no target attention at serving."""
    tower = _behavior(model)
    bad = sorted({i for p in prefixes for i in p if not 0 <= i < tower.n_items})
    if bad:
        raise UnknownItemError(bad)
    prefix, mask = pad_prefixes(prefixes, tower.max_len)
    with torch.no_grad():
        return tower.extract(prefix, mask).double().numpy()


def extract_interests(prefix: Sequence[int], model) -> np.ndarray:
    if len(prefix) == 0:
        raise ValueError("empty behavior sequence")
    return extract_interests_batch([prefix], model)[0]


def retrieve_topn(
    interests: np.ndarray,
    index: RetrievalIndex | np.ndarray,
    n: int,
    exclude: Iterable[int] = (),
) -> list[tuple[int, float]]:
    """Top-n items by max over interests of the inner product; ties go to the
    lower item index. Items in ``exclude`` are never returned."""
    emb = index.item_emb if isinstance(index, RetrievalIndex) else np.asarray(index, dtype=np.float64)
    n_items = emb.shape[0]
    if not 1 <= n <= n_items:
        raise ValueError(f"n must be in [1, {n_items}], got {n}")
    scores = (np.asarray(interests, dtype=np.float64) @ emb.T).max(axis=0)
    order = np.lexsort((np.arange(n_items), -scores))
    excluded = set(exclude)
    if excluded:
        order = np.array([i for i in order if i not in excluded], dtype=np.int64)
        if n > len(order):
            raise ValueError(f"only {len(order)} items remain after excluding seen items")
    top = order[:n]
    return [(int(i), float(scores[i])) for i in top]


class RetrievalService:
    """Read-only recommender over a frozen checkpoint."""

    def __init__(self, ckpt: Checkpoint, catalog: ItemCatalog | None = None, exclude_seen: bool = False):
        self.tower = ckpt.model.behavior
        self.tower.eval()
        self.tower.requires_grad_(False)
        self.index = RetrievalIndex.from_checkpoint(ckpt, catalog)
        self.exclude_seen = exclude_seen
        self._id_to_index = {rid: i for i, rid in enumerate(self.index.raw_ids)}

    def recommend(self, raw_sequence: Sequence[str], n: int) -> list[dict]:
        unknown = [rid for rid in raw_sequence if rid not in self._id_to_index]
        if unknown:
            raise UnknownItemError(unknown)
        prefix = [self._id_to_index[rid] for rid in raw_sequence]
        interests = extract_interests(prefix, self.tower)
        exclude = prefix if self.exclude_seen else ()
        return [
            {"id": self.index.raw_ids[i], "name": self.index.names[i], "score": score}
            for i, score in retrieve_topn(interests, self.index, n, exclude)
        ]


class BadRequest(ValueError):
    pass


def parse_request(body: bytes) -> tuple[list[str], int]:
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadRequest(f"body is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise BadRequest("body must be a JSON object")
    seq, n = doc.get("sequence"), doc.get("n")
    if not isinstance(seq, list) or not seq:
        raise BadRequest("'sequence' must be a non-empty list of item ids")
    if not all(isinstance(x, (str, int)) and not isinstance(x, bool) for x in seq):
        raise BadRequest("'sequence' entries must be strings or integers")
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise BadRequest("'n' must be a positive integer")
    return [str(x) for x in seq], n


def _make_handler(service: RetrievalService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _send(self, status: int, payload, content_type="application/json"):
            data = payload if isinstance(payload, bytes) else json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            if self.path == "/healthz":
                self._send(200, b"ok", "text/plain")
            else:
                self._send(404, {"error": f"no route {self.path}"})

        def do_POST(self):
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length)
            if self.path != "/retrieve":
                self._send(404, {"error": f"no route {self.path}"})
                return
            try:
                seq, n = parse_request(body)
                if n > service.index.n_items:
                    raise BadRequest(f"'n' exceeds catalog size {service.index.n_items}")
                items = service.recommend(seq, n)
            except BadRequest as exc:
                self._send(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
            except UnknownItemError as exc:
                self._send(HTTPStatus.UNPROCESSABLE_ENTITY, {"error": str(exc.args[0]), "unknown": exc.offenders})
            except ValueError as exc:
                self._send(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
            else:
                self._send(200, {"items": items})

        def log_message(self, fmt, *args):
            log.debug("%s - %s", self.address_string(), fmt % args)

    return Handler


def make_server(service: RetrievalService, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), _make_handler(service))
    server.daemon_threads = True
    return server


def serve(ckpt: Checkpoint, catalog: ItemCatalog | None, bind: str = "127.0.0.1:8080", exclude_seen: bool = False) -> None:
    host, _, port = bind.rpartition(":")
    server = make_server(RetrievalService(ckpt, catalog, exclude_seen), host or "127.0.0.1", int(port))
    log.info("serving on http://%s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def serve_in_thread(service: RetrievalService, host: str = "127.0.0.1", port: int = 0) -> tuple[ThreadingHTTPServer, threading.Thread]:
    server = make_server(service, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
