"""Interaction logs, item catalogs, user-level splits and next-item examples."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from eimf.blob import read_blob, write_blob

DEFAULT_MAX_LEN = 20


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ItemCatalog:
    raw_ids: tuple[str, ...]
    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.raw_ids) != len(self.names):
            raise DatasetError("catalog ids and names differ in length")
        if len(set(self.raw_ids)) != len(self.raw_ids):
            raise DatasetError("duplicate item id in catalog")
        for rid, name in zip(self.raw_ids, self.names):
            if not name:
                raise DatasetError(f"item {rid!r} has an empty name")

    @property
    def n_items(self) -> int:
        return len(self.raw_ids)

    def index_of(self) -> dict[str, int]:
        return {rid: i for i, rid in enumerate(self.raw_ids)}


@dataclass(frozen=True)
class UserSequence:
    user_id: str
    items: tuple[int, ...]
    timestamps: tuple[int, ...] | None = None

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class InteractionDataset:
    catalog: ItemCatalog
    users: tuple[UserSequence, ...]

    def by_id(self) -> dict[str, UserSequence]:
        return {u.user_id: u for u in self.users}


@dataclass(frozen=True)
class SplitDataset:
    train: tuple[UserSequence, ...]
    valid: tuple[UserSequence, ...]
    test: tuple[UserSequence, ...]
    seed: int

    def part(self, name: str) -> tuple[UserSequence, ...]:
        if name not in ("train", "valid", "test"):
            raise DatasetError(f"unknown split {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class TrainingExample:
    user_id: str
    prefix: tuple[int, ...]
    target: int


def load_catalog(path: str | Path) -> ItemCatalog:
    raw_ids, names = [], []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rid, name = str(obj["id"]), str(obj["name"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed catalog line ({exc})") from None
            if rid in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate item id {rid!r}")
            if not name.strip():
                raise DatasetError(f"{path}:{lineno}: empty item name")
            seen.add(rid)
            raw_ids.append(rid)
            names.append(name)
    return ItemCatalog(tuple(raw_ids), tuple(names))


def load_interactions(interactions_path: str | Path, catalog_path: str | Path) -> InteractionDataset:
    """Read a TSV event log against a JSONL catalog.

    Item ids are re-indexed densely in catalog order. Each user's events are
    stably sorted by timestamp, so ties keep file order.
    """
    catalog = load_catalog(catalog_path)
    index = catalog.index_of()
    events: dict[str, list[tuple[int | None, int]]] = {}
    with open(interactions_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3) or not parts[0] or not parts[1]:
                raise DatasetError(f"{interactions_path}:{lineno}: expected user<TAB>item[<TAB>timestamp]")
            user, item = parts[0], parts[1]
            ts = None
            if len(parts) == 3 and parts[2] != "":
                try:
                    ts = int(parts[2])
                except ValueError:
                    raise DatasetError(f"{interactions_path}:{lineno}: timestamp {parts[2]!r} is not an integer") from None
            if item not in index:
                raise DatasetError(f"{interactions_path}:{lineno}: unknown item id {item!r}")
            events.setdefault(user, []).append((ts, index[item]))

    users = []
    for user, evs in events.items():
        stamps = [ts for ts, _ in evs]
        if all(ts is not None for ts in stamps):
            evs = sorted(evs, key=lambda e: e[0])
            users.append(UserSequence(user, tuple(i for _, i in evs), tuple(ts for ts, _ in evs)))
        elif all(ts is None for ts in stamps):
            users.append(UserSequence(user, tuple(i for _, i in evs)))
        else:
            raise DatasetError(f"user {user!r} mixes timestamped and untimestamped events")
    return InteractionDataset(catalog, tuple(users))


def split_users(ds: InteractionDataset, seed: int) -> SplitDataset:
    """8:1:1 user-level split; both eval splits get floor(n/10) users."""
    n = len(ds.users)
    n_eval = n // 10
    order = np.random.default_rng(seed).permutation(n)
    valid = tuple(ds.users[i] for i in order[:n_eval])
    test = tuple(ds.users[i] for i in order[n_eval:2 * n_eval])
    train = tuple(ds.users[i] for i in order[2 * n_eval:])
    return SplitDataset(train, valid, test, seed)


def profile_target_split(seq: UserSequence | Sequence[int]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    items = tuple(seq.items if isinstance(seq, UserSequence) else seq)
    n = len(items)
    if n < 2:
        raise DatasetError(f"profile/target split needs at least 2 items, got {n}")
    k = (4 * n + 4) // 5  # ceil(0.8 n) in exact integer arithmetic
    k = min(max(k, 1), n - 1)
    return items[:k], items[k:]


def make_training_examples(seq: UserSequence, max_len: int = DEFAULT_MAX_LEN) -> list[TrainingExample]:
    items = seq.items
    return [
        TrainingExample(seq.user_id, tuple(items[max(0, t - max_len):t]), items[t])
        for t in range(1, len(items))
    ]


# -- persistence ------------------------------------------------------------

def save_prepared(directory: str | Path, ds: InteractionDataset, split: SplitDataset) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    split_doc = {
        "seed": split.seed,
        "train": [u.user_id for u in split.train],
        "valid": [u.user_id for u in split.valid],
        "test": [u.user_id for u in split.test],
    }
    with open(directory / "split.json", "w", encoding="utf-8") as fh:
        json.dump(split_doc, fh, indent=2)
        fh.write("\n")

    lengths = np.array([len(u) for u in ds.users], dtype=np.int64)
    items = np.array([i for u in ds.users for i in u.items], dtype=np.int64)
    timed = [u.timestamps is not None for u in ds.users]
    stamps = np.array([t for u in ds.users if u.timestamps for t in u.timestamps], dtype=np.int64)
    write_blob(
        directory,
        {"lengths": lengths, "items": items, "timestamps": stamps},
        extra={
            "catalog": [[rid, name] for rid, name in zip(ds.catalog.raw_ids, ds.catalog.names)],
            "users": [u.user_id for u in ds.users],
            "timed": timed,
        },
        manifest_name="dataset.json",
        data_name="dataset.bin",
    )


def load_prepared(directory: str | Path) -> tuple[InteractionDataset, SplitDataset]:
    directory = Path(directory)
    arrays, extra = read_blob(directory, "dataset.json", "dataset.bin")
    catalog = ItemCatalog(tuple(r for r, _ in extra["catalog"]), tuple(n for _, n in extra["catalog"]))
    users = []
    pos = tpos = 0
    for uid, length, timed in zip(extra["users"], arrays["lengths"], extra["timed"]):
        length = int(length)
        items = tuple(int(i) for i in arrays["items"][pos:pos + length])
        stamps = None
        if timed:
            stamps = tuple(int(t) for t in arrays["timestamps"][tpos:tpos + length])
            tpos += length
        users.append(UserSequence(uid, items, stamps))
        pos += length
    ds = InteractionDataset(catalog, tuple(users))
    with open(directory / "split.json", encoding="utf-8") as fh:
        doc = json.load(fh)
    by_id = ds.by_id()
    split = SplitDataset(
        tuple(by_id[u] for u in doc["train"]),
        tuple(by_id[u] for u in doc["valid"]),
        tuple(by_id[u] for u in doc["test"]),
        int(doc["seed"]),
    )
    return ds, split
