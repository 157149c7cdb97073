"""
Experiment orchestration: game data, cached pretraining, runs and sweeps.

Output layout under the output root:

    game/                         game.json and corpus TSVs (gen-data)
    pretrain/<seed>/              agents.ckpt, pretrain.json (shared by all runs of a seed)
    run/<tag>/<seed>/             config.json, metrics.csv, metrics.jsonl, run.log, ckpt/, plots/
    plots/                        sweep-level figures
    summary.json                  final metrics per run tag
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .agents import LMParams, Seq2SeqParams, init_lm, init_params, train_lm
from .autodiff import Rng
from .checkpoint import load_checkpoint, pack_agents, save_checkpoint, unpack_agents
from .config import ExperimentConfig, GameConfig, RunSpec, expand_runs, save_config, single_run_config
from .errors import CheckpointError
from .game import (
    CorpusPair,
    DistributionSpec,
    EvalExample,
    GameSpec,
    PairKind,
    make_eval_set,
    make_game,
    sample_corpus,
    write_corpus,
    write_game,
)
from .metrics import MetricsRecord, MetricsWriter, eval_pipeline
from .plotting import plot_svg
from .training import FinetuneData, finetune, pretrain

logger = logging.getLogger(__name__)

COLLAPSE_DROP = 20.0


@dataclass
class GameData:
    game: GameSpec
    pretrain_distribution: DistributionSpec
    task_distribution: DistributionSpec
    pretrain_sender_pairs: list[CorpusPair]
    pretrain_receiver_pairs: list[CorpusPair]
    valid_sender_pairs: list[CorpusPair]
    valid_receiver_pairs: list[CorpusPair]
    task_pairs: list[CorpusPair]
    eval_set: list[EvalExample]
    lm_sentences: list[tuple[int, ...]]


@dataclass
class PretrainedAgents:
    sender: Seq2SeqParams
    receiver: Seq2SeqParams
    lm: LMParams
    summary: dict = field(default_factory=dict)


@dataclass
class RunArtifacts:
    """Files of one (tag, seed) run."""
    run_dir: Path

    @property
    def config_path(self) -> Path:
        return self.run_dir / "config.json"

    @property
    def metrics_csv(self) -> Path:
        return self.run_dir / "metrics.csv"

    @property
    def metrics_jsonl(self) -> Path:
        return self.run_dir / "metrics.jsonl"

    @property
    def log_path(self) -> Path:
        return self.run_dir / "run.log"

    @property
    def ckpt_dir(self) -> Path:
        return self.run_dir / "ckpt"

    @property
    def plots_dir(self) -> Path:
        return self.run_dir / "plots"

    def checkpoint_path(self, step: int) -> Path:
        return self.ckpt_dir / f"step-{step:06d}.ckpt"


@dataclass
class RunResult:
    tag: str
    seed: int
    artifacts: RunArtifacts
    records: list[MetricsRecord]


# --------------------------------------------------------------------------- #
# Game data
# --------------------------------------------------------------------------- #
def build_game_data(cfg: GameConfig) -> GameData:
    """Game, distributions and every corpus, deterministic in ``cfg``."""
    game = make_game(cfg.seed, cfg.vocab_size, cfg.reverse_target)
    lengths = (cfg.length_min, cfg.length_max)
    generic = DistributionSpec(cfg.zipf_exponent, None, lengths)
    if cfg.shift:
        task = DistributionSpec.shifted(cfg.vocab_size, cfg.shift_seed, cfg.zipf_exponent, lengths)
    else:
        task = generic
    rng = Rng(cfg.seed).derive("data")
    pretrain_sender = sample_corpus(game, generic, cfg.pretrain_pairs, PairKind.SRC_PVT, rng.derive("pretrain-src-pvt"))
    lm_sentences = [p.target for p in pretrain_sender]
    if cfg.lm_pairs is not None:
        lm_corpus = sample_corpus(game, generic, cfg.lm_pairs, PairKind.SRC_PVT, rng.derive("lm"))
        lm_sentences = [p.target for p in lm_corpus]
    return GameData(
        game=game,
        pretrain_distribution=generic,
        task_distribution=task,
        pretrain_sender_pairs=pretrain_sender,
        pretrain_receiver_pairs=sample_corpus(
            game, generic, cfg.pretrain_pairs, PairKind.PVT_TGT, rng.derive("pretrain-pvt-tgt"),
        ),
        valid_sender_pairs=sample_corpus(game, generic, cfg.valid_pairs, PairKind.SRC_PVT, rng.derive("valid-src-pvt")),
        valid_receiver_pairs=sample_corpus(
            game, generic, cfg.valid_pairs, PairKind.PVT_TGT, rng.derive("valid-pvt-tgt"),
        ),
        task_pairs=sample_corpus(game, task, cfg.task_pairs, PairKind.SRC_TGT, rng.derive("task")),
        eval_set=make_eval_set(game, task, cfg.eval_pairs, rng.derive("eval")),
        lm_sentences=lm_sentences,
    )


def write_game_data(data: GameData, directory: str | Path) -> list[Path]:
    """game.json plus one TSV per corpus; the eval set is stored as its two gold views."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    game_path = directory / "game.json"
    write_game(game_path, data.game)
    corpora = {
        "pretrain_src_pvt.tsv": data.pretrain_sender_pairs,
        "pretrain_pvt_tgt.tsv": data.pretrain_receiver_pairs,
        "valid_src_pvt.tsv": data.valid_sender_pairs,
        "valid_pvt_tgt.tsv": data.valid_receiver_pairs,
        "task_src_tgt.tsv": data.task_pairs,
        "eval_src_pvt.tsv": [CorpusPair(e.src, e.gold_pvt, PairKind.SRC_PVT) for e in data.eval_set],
        "eval_src_tgt.tsv": [CorpusPair(e.src, e.gold_tgt, PairKind.SRC_TGT) for e in data.eval_set],
    }
    written = [game_path]
    for name, pairs in corpora.items():
        write_corpus(directory / name, pairs, data.game)
        written.append(directory / name)
    return written


# --------------------------------------------------------------------------- #
# Pretraining (cached per seed)
# --------------------------------------------------------------------------- #
def _pretrain_key(config: ExperimentConfig, seed: int) -> dict:
    return {"seed": seed, "game": config.game.model_dump(), "pretrain": config.pretrain.model_dump()}


def pretrain_agents(
    config: ExperimentConfig,
    data: GameData,
    seed: int,
    root: Optional[Path] = None,
    progress: bool = False,
) -> PretrainedAgents:
    """
    Pretrain sender, receiver and the frozen pivot LM for ``seed``.

    With ``root`` the result is cached in ``root/pretrain/<seed>/`` and reused
    whenever the game and pretraining settings match.
    """
    key = _pretrain_key(config, seed)
    cache_dir = Path(root) / "pretrain" / str(seed) if root is not None else None
    if cache_dir is not None and (cache_dir / "pretrain.json").exists():
        info = json.loads((cache_dir / "pretrain.json").read_text(encoding="utf-8"))
        if info.get("key") == key:
            try:
                agents = unpack_agents(load_checkpoint(cache_dir / "agents.ckpt"))
                logger.info(f"reusing pretrained agents from {cache_dir}")
                return PretrainedAgents(agents["sender"], agents["receiver"], agents["lm"], info["summary"])
            except (CheckpointError, FileNotFoundError, KeyError) as e:
                logger.warning(f"ignoring pretraining cache in {cache_dir}: {e}")

    p = config.pretrain
    vocab = config.game.vocab_size
    sender = init_params(seed, vocab, vocab, p.hidden_size)
    receiver = init_params(seed + 1, vocab, vocab, p.hidden_size)
    result = pretrain(
        sender, receiver, data.pretrain_sender_pairs, data.pretrain_receiver_pairs, p.epochs,
        Rng(seed).derive("pretrain"), lr=p.lr, batch_size=p.batch_size, grad_clip=p.grad_clip,
        valid_sender=data.valid_sender_pairs, valid_receiver=data.valid_receiver_pairs, progress=progress,
    )
    lm = init_lm(seed, vocab, p.hidden_size)
    freeze_hash = train_lm(
        lm, data.lm_sentences, p.lm_epochs, Rng(seed).derive("lm"), lr=p.lr, batch_size=p.batch_size,
        grad_clip=p.grad_clip,
    )
    summary = {
        "sender_nll": result.sender_nll,
        "receiver_nll": result.receiver_nll,
        "epoch_losses": result.epoch_losses,
        "lm_freeze_hash": freeze_hash,
    }
    if cache_dir is not None:
        save_checkpoint(cache_dir / "agents.ckpt", pack_agents(sender, receiver, lm))
        (cache_dir / "pretrain.json").write_text(
            json.dumps({"key": key, "summary": summary}, indent=2) + "\n", encoding="utf-8",
        )
    return PretrainedAgents(sender, receiver, lm, summary)


def finetune_data(data: GameData, agents: PretrainedAgents) -> FinetuneData:
    return FinetuneData(
        game=data.game,
        task_pairs=data.task_pairs,
        pretrain_sender_pairs=data.pretrain_sender_pairs,
        pretrain_receiver_pairs=data.pretrain_receiver_pairs,
        eval_set=data.eval_set,
        lm=agents.lm,
        task_distribution=data.task_distribution,
        pretrain_sender=agents.sender,
        pretrain_receiver=agents.receiver,
    )


# --------------------------------------------------------------------------- #
# Runs
# --------------------------------------------------------------------------- #
class _RunLog:
    """Per-run log file attached to the package logger for the run's duration."""

    def __init__(self, path: Path):
        self.handler = logging.FileHandler(path, mode="w", encoding="utf-8")
        self.handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
        self.logger = logging.getLogger("driftlab")

    def __enter__(self) -> "_RunLog":
        self.logger.addHandler(self.handler)
        if self.logger.level == logging.NOTSET or self.logger.level > logging.INFO:
            self._previous = self.logger.level
            self.logger.setLevel(logging.INFO)
        else:
            self._previous = None
        return self

    def __exit__(self, *exc) -> None:
        self.logger.removeHandler(self.handler)
        self.handler.close()
        if self._previous is not None:
            self.logger.setLevel(self._previous)


def run_one(
    config: ExperimentConfig,
    run: RunSpec,
    root: str | Path,
    data: Optional[GameData] = None,
    plots: bool = True,
) -> RunResult:
    """
    Finetune one (tag, seed) cell and write its artifacts.

    Checkpoints hold sender, receiver and LM and are written at the first
    and last evaluation and every ``config.checkpoint_every`` evaluations.
    """
    root = Path(root)
    artifacts = RunArtifacts(root / "run" / run.tag / str(run.seed))
    artifacts.run_dir.mkdir(parents=True, exist_ok=True)
    save_config(single_run_config(config, run), artifacts.config_path)

    with _RunLog(artifacts.log_path):
        logger.info(f"run {run.tag} seed {run.seed} -> {artifacts.run_dir}")
        data = data or build_game_data(config.game)
        agents = pretrain_agents(config, data, run.seed, root)
        writer = MetricsWriter(artifacts.run_dir)
        evals = 0

        def on_eval(record: MetricsRecord, sender: Seq2SeqParams, receiver: Seq2SeqParams) -> None:
            nonlocal evals
            writer.append(record)
            if evals == 0 or (config.checkpoint_every and evals % config.checkpoint_every == 0):
                save_checkpoint(artifacts.checkpoint_path(record.step), pack_agents(sender, receiver, agents.lm))
            evals += 1

        result = finetune(finetune_data(data, agents), run.finetune, on_eval)
        final = artifacts.checkpoint_path(result.records[-1].step)
        save_checkpoint(final, pack_agents(result.sender, result.receiver, agents.lm))
        logger.info(f"run {run.tag} seed {run.seed} finished: {len(result.records)} evaluations")

    if plots:
        plot_svg([artifacts.metrics_csv], artifacts.plots_dir, title=f"{run.tag} seed {run.seed}")
    return RunResult(run.tag, run.seed, artifacts, result.records)


def _run_worker(payload: tuple[str, str, str]) -> RunResult:
    config_json, run_json, root = payload
    config = ExperimentConfig.model_validate_json(config_json)
    return run_one(config, RunSpec.model_validate_json(run_json), root)


def run_experiment(
    config: ExperimentConfig,
    root: str | Path,
    workers: Optional[int] = None,
    progress: bool = False,
) -> list[RunResult]:
    """
    Run every (tag, seed) cell of the sweep, then write sweep plots and summary.json.

    Pretraining for each seed happens once, before any finetuning run starts.
    """
    root = Path(root)
    runs = expand_runs(config)
    workers = workers or config.workers
    logger.info(f"experiment {config.name}: {len(runs)} runs, {workers} worker(s)")
    data = build_game_data(config.game)
    for seed in sorted({r.seed for r in runs}):
        pretrain_agents(config, data, seed, root, progress=progress)

    if workers > 1:
        payloads = [(config.model_dump_json(), r.model_dump_json(), str(root)) for r in runs]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_worker, payloads))
    else:
        results = [run_one(config, r, root, data) for r in runs]

    csvs = [r.artifacts.metrics_csv for r in results]
    plot_svg(csvs, root / "plots", labels={r.artifacts.metrics_csv: r.tag for r in results}, title=config.name)
    write_summary(results, root / "summary.json")
    return results


# --------------------------------------------------------------------------- #
# Summary and checkpoint evaluation
# --------------------------------------------------------------------------- #
def detect_collapse(records: list[MetricsRecord], drop: float = COLLAPSE_DROP) -> Optional[MetricsRecord]:
    """First evaluation whose grounding BLEU sits ``drop`` points below the running peak."""
    peak = -np.inf
    for record in records:
        peak = max(peak, record.bleu_pvt)
        if record.bleu_pvt <= peak - drop:
            return record
    return None


def _mean_std(values: list[float]) -> dict:
    return {"mean": float(np.mean(values)), "std": float(np.std(values))}


def summarize(results: list[RunResult]) -> dict:
    by_tag: dict[str, list[RunResult]] = {}
    for result in results:
        by_tag.setdefault(result.tag, []).append(result)
    summary = {}
    for tag, group in sorted(by_tag.items()):
        finals = [r.records[-1] for r in group]
        collapses = {}
        for r in group:
            hit = detect_collapse(r.records)
            collapses[str(r.seed)] = None if hit is None else {
                "step": hit.step, "bleu_pvt": hit.bleu_pvt, "grad_cos_ma100": hit.grad_cos_ma100,
            }
        summary[tag] = {
            "seeds": [r.seed for r in group],
            "final_step": finals[0].step,
            "final": {
                name: _mean_std([getattr(f, name) for f in finals])
                for name in ("bleu_tgt", "bleu_pvt", "nll", "real_nll")
            },
            "peak_bleu_pvt": _mean_std([max(x.bleu_pvt for x in r.records) for r in group]),
            "collapse": collapses,
        }
    return summary


def write_summary(results: list[RunResult], path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(summarize(results), indent=2) + "\n", encoding="utf-8")
    return path


def evaluate_checkpoint(config: ExperimentConfig, ckpt_path: str | Path, root: Optional[Path] = None) -> MetricsRecord:
    """
    Evaluate saved agents on the configured game's evaluation set.

    The LM comes from the checkpoint when present, else from the seed's pretraining.

    Raises:
        CheckpointError: the checkpoint holds no sender or receiver
    """
    agents = unpack_agents(load_checkpoint(ckpt_path))
    if "sender" not in agents or "receiver" not in agents:
        raise CheckpointError(f"{ckpt_path}: checkpoint needs sender and receiver tensors")
    data = build_game_data(config.game)
    lm = agents.get("lm") or pretrain_agents(config, data, config.seeds[0], root).lm
    record = eval_pipeline(agents["sender"], agents["receiver"], data.eval_set, lm)
    record.method = config.finetune.method
    record.seed = config.seeds[0]
    return record
