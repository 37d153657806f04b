"""Training/pipeline configuration and TOML loading."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from eimf.objectives import LossConfig, LossConfigError


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    d: int = 64
    d_t: int = 384
    d_a: int = 64
    n_interests: int = 4
    max_interests: int = 20
    max_len: int = 20
    lr: float = 0.001
    max_steps: int = 5000
    seed: int = 0
    eval_every: int = 500
    semantic_projections: bool = True
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        for name in ("batch_size", "d", "d_t", "d_a", "n_interests", "max_interests", "max_len", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be a positive integer")
        if self.lr <= 0:
            raise ConfigError("lr", "must be positive")
        if self.max_steps < 0:
            raise ConfigError("max_steps", "must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "TrainConfig":
        doc = dict(doc)
        loss_doc = dict(doc.pop("loss", {}) or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown training option")
        lknown = {f.name for f in dataclasses.fields(LossConfig)}
        lunknown = sorted(set(loss_doc) - lknown)
        if lunknown:
            raise ConfigError(f"loss.{lunknown[0]}", "unknown loss option")
        try:
            loss = LossConfig(**loss_doc)
        except LossConfigError as exc:
            raise ConfigError("loss.alpha/loss.beta" if "alpha" in str(exc) else "loss", str(exc)) from None
        return cls(loss=loss, **doc)

    def replace(self, **changes) -> "TrainConfig":
        loss_changes = {k: changes.pop(k) for k in ("alpha", "beta", "gamma", "tau") if k in changes}
        loss = dataclasses.replace(self.loss, **loss_changes) if loss_changes else self.loss
        return dataclasses.replace(self, loss=loss, **changes)


@dataclass(frozen=True)
class ClusterConfig:
    preference: float = -10.0
    damping: float = 0.5
    max_iter: int = 200
    conv_window: int = 15


@dataclass(frozen=True)
class PipelineConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    provider: str = "builtin"
    provider_seed: int = 0
    embeddings_path: str | None = None
    llm_endpoint: str | None = None
    llm_model: str = "qwen-turbo"
    mock: bool = False
    split_seed: int = 0


def read_toml(path: str | Path) -> dict[str, Any]:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(path), f"invalid TOML ({exc})") from None


def load_pipeline_config(path: str | Path | None, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """Sections: ``[train]``, ``[loss]``, ``[cluster]``, ``[text]``, ``[llm]``.

    ``overrides`` are flat ``section.key`` entries applied on top of the file.
    """
    doc: dict[str, Any] = read_toml(path) if path else {}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        doc.setdefault(section, {})[key] = value

    train_doc = dict(doc.get("train", {}))
    train_doc["loss"] = {**train_doc.get("loss", {}), **doc.get("loss", {})}
    train = TrainConfig.from_dict(train_doc)
    try:
        cluster = ClusterConfig(**doc.get("cluster", {}))
    except TypeError as exc:
        raise ConfigError("cluster", str(exc)) from None
    text = doc.get("text", {})
    llm = doc.get("llm", {})
    return PipelineConfig(
        train=train,
        cluster=cluster,
        provider=text.get("provider", "builtin"),
        provider_seed=int(text.get("seed", 0)),
        embeddings_path=text.get("embeddings"),
        llm_endpoint=llm.get("endpoint"),
        llm_model=llm.get("model", "qwen-turbo"),
        mock=bool(llm.get("mock", False)),
        split_seed=int(doc.get("split", {}).get("seed", 0)),
    )
