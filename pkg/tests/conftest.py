from pathlib import Path

import numpy as np
import pytest

from ucf import datagen
from ucf import numcore as nc
from ucf.data_structures import Dataset, Split
from ucf.downstream import register_all_classifiers
from ucf.encoder import EncoderConfig, init_state

REPO_ROOT = Path(__file__).resolve().parent.parent

# small enough for finite differences, large enough to exercise every block
TINY_ENCODER = EncoderConfig(input_dim=4, token_proj_dim=3, lstm_hidden=4, attention_heads=1, embed_dim=3)


@pytest.fixture(scope="session", autouse=True)
def _classifiers():
    register_all_classifiers()


@pytest.fixture
def tiny_config() -> EncoderConfig:
    return TINY_ENCODER


@pytest.fixture
def tiny_state(tiny_config):
    return init_state(tiny_config, seed=7)


@pytest.fixture
def small_gen_config() -> datagen.GenConfig:
    return datagen.GenConfig(
        n_total=240,
        n_features=4,
        n_labeled_positive=24,
        separation=3.0,
        balanced_val=True,
        seed=11,
    )


@pytest.fixture
def small_dataset(small_gen_config) -> Dataset:
    return datagen.preprocess(datagen.generate(small_gen_config))


def _make_dataset(pu_label, ground_truth, features=None, split=None) -> Dataset:
    """Hand-made dataset with ids s000000.. and random features by default."""
    n = len(pu_label)
    if features is None:
        features = nc.make_rng(0).normal(size=(n, 4))
    return Dataset(
        session_ids=[f"s{i:06d}" for i in range(n)],
        features=np.asarray(features, dtype=np.float64),
        pu_label=np.asarray(pu_label),
        ground_truth=np.asarray(ground_truth),
        split=split or [Split.TRAIN] * n,
    )


@pytest.fixture
def make_dataset():
    return _make_dataset


CLI_CONFIG = """\
# tiny end-to-end configuration
root.seed = 3

gen.n_total = 300
gen.n_features = 4
gen.n_labeled_positive = 30
gen.separation = 3.0
gen.balanced_val = true

encoder.input_dim = 4
encoder.token_proj_dim = 3
encoder.lstm_hidden = 6
encoder.embed_dim = 4

train.lr = 0.003
train.batch_size = 16
train.aux_size = 4
train.stage1_epochs = 1
train.stage2_epochs = 1
train.check_invariants = true

eval.classifiers = logistic-regression,knn,gaussian-nb
eval.folds = 3

tsne.perplexity = 5
tsne.iterations = 60
tsne.exaggeration_iters = 20
tsne.momentum_switch = 20
"""


@pytest.fixture
def cli_config(tmp_path) -> Path:
    path = tmp_path / "tiny.conf"
    path.write_text(CLI_CONFIG, encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def shared_cli_config(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("conf") / "tiny.conf"
    path.write_text(CLI_CONFIG, encoding="utf-8")
    return path
