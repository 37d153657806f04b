import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from eimf.config import TrainConfig  # noqa: E402
from eimf.dataset import load_interactions, split_users  # noqa: E402
from eimf.esim import MockLLM  # noqa: E402
from eimf.pipeline import build_semantic_artifacts  # noqa: E402
from eimf.synth import write_synthetic  # noqa: E402
from eimf.textenc import HashingEncoder  # noqa: E402
from eimf.trainer import train  # noqa: E402

SMALL = dict(n_users=120, n_items=60, n_topics=4, seed=3)


@pytest.fixture(scope="session")
def small_files(tmp_path_factory):
    return write_synthetic(tmp_path_factory.mktemp("synth"), **SMALL)


@pytest.fixture(scope="session")
def small_data(small_files):
    ds = load_interactions(*small_files)
    return ds, split_users(ds, 0)


@pytest.fixture(scope="session")
def small_cfg():
    return TrainConfig(batch_size=32, d=8, d_t=32, d_a=8, n_interests=2, max_interests=4, max_steps=40, eval_every=20, seed=1)


@pytest.fixture(scope="session")
def small_semantic(small_data, small_cfg):
    ds, split = small_data
    art = build_semantic_artifacts(ds, split.train, HashingEncoder(small_cfg.d_t, 0), MockLLM(), max_interests=small_cfg.max_interests)
    return art


@pytest.fixture(scope="session")
def small_ckpt(small_data, small_cfg, small_semantic):
    ds, split = small_data
    return train(split.train, ds.catalog.n_items, small_cfg, small_semantic.data, split.valid)
