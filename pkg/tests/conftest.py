import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from driftlab.agents import init_params
from driftlab.autodiff import Rng
from driftlab.config import ExperimentConfig, FinetuneConfig, GameConfig, PretrainConfig
from driftlab.game import DistributionSpec, PairKind, make_game, sample_corpus
from driftlab.runner import build_game_data, finetune_data, pretrain_agents

TINY_VOCAB = 6


@pytest.fixture
def game():
    return make_game(seed=3, vocab_size=TINY_VOCAB)


@pytest.fixture
def task_pairs(game):
    dist = DistributionSpec(length_range=(3, 3))
    return sample_corpus(game, dist, 12, PairKind.SRC_TGT, Rng(5))


@pytest.fixture
def agents():
    sender = init_params(11, TINY_VOCAB, TINY_VOCAB, hidden=8)
    receiver = init_params(12, TINY_VOCAB, TINY_VOCAB, hidden=8)
    return sender, receiver


def tiny_experiment(**finetune) -> ExperimentConfig:
    return ExperimentConfig(
        name="tiny",
        game=GameConfig(
            vocab_size=TINY_VOCAB, length_min=3, length_max=4, pretrain_pairs=120, task_pairs=60,
            valid_pairs=20, eval_pairs=24,
        ),
        pretrain=PretrainConfig(epochs=2, lm_epochs=1, batch_size=16, hidden_size=8),
        finetune=FinetuneConfig(**finetune),
        seeds=[1],
    )


@pytest.fixture(scope="session")
def tiny_world():
    """Game data, pretrained agents and FinetuneData shared by the training tests."""
    config = tiny_experiment()
    data = build_game_data(config.game)
    pretrained = pretrain_agents(config, data, seed=1)
    return config, data, pretrained, finetune_data(data, pretrained)


def tiny_finetune(**overrides) -> FinetuneConfig:
    base = dict(
        batch_size=4, total_steps=12, eval_interval=4, probe_interval=3, grad_cos_window=6,
        teacher_dataset_size=16, seed=7,
    )
    base.update(overrides)
    return FinetuneConfig(**base)
