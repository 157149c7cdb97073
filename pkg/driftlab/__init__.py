# driftlab
# Desk-scale language drift lab: pivot-translation agents, interactive
# finetuning and the countermeasures that keep their language grounded.

from .agents import greedy_decode, gumbel_decode, init_lm, init_params, nll_teacher_forced
from .autodiff import Rng, Tape, Tensor, backward, grad_cosine, gumbel_softmax_st
from .config import ExperimentConfig, FinetuneConfig, load_config, load_preset
from .game import make_game, gold_translate, sample_corpus
from .metrics import MetricsRecord, bleu_corpus, eval_pipeline, real_nll_metric
from .training import finetune, grad_conflict_probe, interactive_loss, pretrain

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "FinetuneConfig",
    "MetricsRecord",
    "Rng",
    "Tape",
    "Tensor",
    "backward",
    "bleu_corpus",
    "eval_pipeline",
    "finetune",
    "gold_translate",
    "grad_conflict_probe",
    "grad_cosine",
    "greedy_decode",
    "gumbel_decode",
    "gumbel_softmax_st",
    "init_lm",
    "init_params",
    "interactive_loss",
    "load_config",
    "load_preset",
    "make_game",
    "nll_teacher_forced",
    "pretrain",
    "real_nll_metric",
    "sample_corpus",
]
