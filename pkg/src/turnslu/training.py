"""Weak-supervision training: per-turn search, rank-rescaled rewards, a
normalized reward-weighted likelihood objective, Adam updates, warm-up,
the four search/sampling variants, and evaluation."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import curriculum
from .curriculum import (
    BanditState,
    SrgNormalizer,
    TASK_NAMES,
    partition_examples,
    policy_probs,
    rescaled_reward,
    srg_from_rewards,
    update_weights,
)
from .dataio import Example
from .model import Adam, ModelDims, ModelParams, TurnScorer, init_params
from .orders import execute_tokens, rescale_rewards, reward_for_tokens
from .search import (
    BeamConfig,
    ExploredSet,
    ProgramCache,
    ScoredProgram,
    beam_search,
    rbsma_search,
)

# variant -> (randomized memory search, bandit curriculum)
VARIANTS: dict[str, tuple[bool, bool]] = {
    "sbs_uni": (False, False),
    "sbs": (False, True),
    "uni": (True, False),
    "full": (True, True),
}


@dataclass
class TrainConfig:
    """Training hyperparameters; defaults are the trained configuration."""

    variant: str = "full"
    learning_rate: float = 1e-3
    batch_size: int = 8
    beam_width: int = 40
    search_epsilon: float = 0.5
    bandit_eta: float = 0.1
    bandit_epsilon: float = 0.05
    warmup_steps: int = 80
    epochs: int = 100
    seed: int = 0
    max_tokens: int = 24
    max_steps: int = 24
    cache_size: int = 10
    enc_hidden: int = 30
    dec_hidden: int = 50
    grad_clip: float = 5.0
    stop_at_perfect_train: bool = True

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; "
                             f"expected one of {sorted(VARIANTS)}")

    @property
    def use_randomized_memory_search(self) -> bool:
        return VARIANTS[self.variant][0]

    @property
    def use_bandit(self) -> bool:
        return VARIANTS[self.variant][1]

    def model_dims(self) -> ModelDims:
        return ModelDims(enc_hidden=self.enc_hidden, dec_hidden=self.dec_hidden)

    def search_config(self) -> BeamConfig:
        if self.use_randomized_memory_search:
            return BeamConfig(width=self.beam_width, max_steps=self.max_steps,
                              epsilon=self.search_epsilon, use_memory=True,
                              cache_size=self.cache_size, max_tokens=self.max_tokens,
                              seed=self.seed)
        return BeamConfig(width=self.beam_width, max_steps=self.max_steps,
                          epsilon=0.0, use_memory=False,
                          cache_size=self.cache_size, max_tokens=self.max_tokens,
                          seed=self.seed)


@dataclass
class EpochMetrics:
    epoch: int
    train_accuracy: float
    easy_accuracy: float
    hard_accuracy: float
    pi_easy: float
    pi_hard: float
    wall_clock: float  # seconds; kept out of the CSV so reruns match byte-for-byte


@dataclass
class RoundRecord:
    round: int
    epoch: int
    task: str
    srg_raw: float | None
    reward: float | None
    pi_easy: float
    pi_hard: float


@dataclass
class TrainResult:
    params: ModelParams          # best train-accuracy checkpoint
    final_params: ModelParams
    metrics: list[EpochMetrics]
    rounds: list[RoundRecord]
    best_train_accuracy: float
    best_epoch: int
    skipped_examples: int        # rounds where search found no program


def example_weights(scored: Sequence[ScoredProgram]) -> list[tuple[tuple[int, ...], float]]:
    """Per-program weights for one example: rank-rescale raw rewards to
    {0, 1}, then share weight across the rescaled-1 programs in proportion
    to model probability."""
    if not scored:
        return []
    flags = rescale_rewards([sp.reward for sp in scored])
    winners = [sp for sp, flag in zip(scored, flags) if flag == 1.0]
    logprobs = np.array([sp.logprob for sp in winners])
    shifted = np.exp(logprobs - logprobs.max())
    weights = shifted / shifted.sum()
    return [(sp.tokens, float(w)) for sp, w in zip(winners, weights)]


def train_step(batch: Sequence[Example], params: ModelParams, adam: Adam,
               cfg: TrainConfig, memories: dict[str, ExploredSet],
               caches: dict[str, ProgramCache],
               rng: np.random.Generator) -> int:
    """One search-and-update step over a batch; returns how many examples
    contributed no gradient (their search found nothing)."""
    search_cfg = cfg.search_config()
    grads = params.zero_grads()
    skipped = 0
    for example in batch:
        scorer = TurnScorer(example.tags, params, cfg.max_tokens)
        if cfg.use_randomized_memory_search:
            memory = memories.setdefault(example.id, ExploredSet())
            cache = caches.setdefault(example.id, ProgramCache(cfg.cache_size))
            scored = rbsma_search(example.tags, example.target, params,
                                  search_cfg, memory, cache, rng=rng,
                                  scorer=scorer)
        else:
            found = beam_search(example.tags, params, search_cfg, scorer=scorer)
            scored = [ScoredProgram(sp.tokens, sp.logprob,
                                    reward_for_tokens(sp.tokens, example.target))
                      for sp in found]
        weighted = example_weights(scored)
        if not weighted:
            skipped += 1
            continue
        example_grads = scorer.gradients(weighted)
        for name, block in example_grads.items():
            grads[name] += block
    adam.step(grads)
    return skipped


@dataclass
class EvalReport:
    accuracy: float
    per_task: dict[str, float]
    n_examples: int
    n_undecodable: int


def evaluate(examples: Sequence[Example], params: ModelParams,
             beam_width: int = 40, max_steps: int = 24,
             max_tokens: int = 24) -> EvalReport:
    """Exact-match accuracy of the highest-probability decoded program."""
    if not examples:
        raise ValueError("accuracy is undefined on an empty dataset")
    cfg = BeamConfig(width=beam_width, max_steps=max_steps, epsilon=0.0,
                     use_memory=False, max_tokens=max_tokens)
    correct: dict[str, int] = {name: 0 for name in TASK_NAMES}
    totals: dict[str, int] = {name: 0 for name in TASK_NAMES}
    undecodable = 0
    for example in examples:
        totals[example.task] += 1
        found = beam_search(example.tags, params, cfg, stop_when_best_finished=True)
        if not found:
            undecodable += 1
            continue
        top = found[0]
        if execute_tokens(top.tokens) == example.target:
            correct[example.task] += 1
    per_task = {name: (correct[name] / totals[name]) if totals[name] else float("nan")
                for name in TASK_NAMES}
    accuracy = sum(correct.values()) / len(examples)
    return EvalReport(accuracy=accuracy, per_task=per_task,
                      n_examples=len(examples), n_undecodable=undecodable)


def run_training(examples: Sequence[Example], cfg: TrainConfig) -> TrainResult:
    """Full training loop.  Warm-up rounds sample tasks uniformly; after
    warm-up the curriculum variants draw tasks from the bandit policy.
    One epoch is ceil(N / batch) rounds; the best train-accuracy
    checkpoint is retained."""
    if not examples:
        raise ValueError("cannot train on an empty dataset")
    parts = partition_examples(examples)
    task_lists = [parts[name] for name in TASK_NAMES]
    nonempty_tasks = [i for i, lst in enumerate(task_lists) if lst]
    if not nonempty_tasks:
        raise ValueError("no usable training tasks")

    root = np.random.SeedSequence(cfg.seed)
    init_seed, loop_seed = root.spawn(2)
    params = init_params(init_seed, cfg.model_dims())
    rng = np.random.default_rng(loop_seed)
    adam = Adam(params, lr=cfg.learning_rate, clip_norm=cfg.grad_clip)
    bandit = BanditState.fresh(len(TASK_NAMES), eta=cfg.bandit_eta,
                               epsilon=cfg.bandit_epsilon)
    normalizer = SrgNormalizer()
    memories: dict[str, ExploredSet] = {}
    caches: dict[str, ProgramCache] = {}

    rounds_per_epoch = -(-len(examples) // cfg.batch_size)
    metrics: list[EpochMetrics] = []
    rounds: list[RoundRecord] = []
    skipped = 0
    best_params = params.copy()
    best_accuracy = -1.0
    best_epoch = 0
    round_no = 0

    for epoch in range(1, cfg.epochs + 1):
        epoch_start = time.perf_counter()
        for _ in range(rounds_per_epoch):
            round_no += 1
            pi = policy_probs(bandit) if cfg.use_bandit else np.full(len(TASK_NAMES), 0.5)
            if cfg.use_bandit and round_no > cfg.warmup_steps:
                task_idx = int(rng.choice(len(TASK_NAMES), p=pi))
                if not task_lists[task_idx]:
                    task_idx = nonempty_tasks[int(rng.integers(len(nonempty_tasks)))]
            else:
                task_idx = nonempty_tasks[int(rng.integers(len(nonempty_tasks)))]
            pool = task_lists[task_idx]
            batch_ids = rng.choice(len(pool), size=min(cfg.batch_size, len(pool)),
                                   replace=False)
            batch = [pool[i] for i in batch_ids]

            srg_raw: float | None = None
            payoff: float | None = None
            if cfg.use_bandit:
                pre_params = params.copy()
            skipped += train_step(batch, params, adam, cfg, memories, caches, rng)
            if cfg.use_bandit:
                probe = _draw_probe(pool, set(int(i) for i in batch_ids),
                                    cfg.batch_size, rng)
                pre = curriculum.probe_rewards(pre_params, probe,
                                               cfg.max_steps, cfg.max_tokens)
                post = curriculum.probe_rewards(params, probe,
                                                cfg.max_steps, cfg.max_tokens)
                srg_raw = srg_from_rewards(pre, post)
                payoff = normalizer.rescale(srg_raw)
                update_weights(bandit, rescaled_reward(payoff, task_idx, pi))
            rounds.append(RoundRecord(round=round_no, epoch=epoch,
                                      task=TASK_NAMES[task_idx],
                                      srg_raw=srg_raw, reward=payoff,
                                      pi_easy=float(pi[0]), pi_hard=float(pi[1])))

        report = evaluate(examples, params, beam_width=cfg.beam_width,
                          max_steps=cfg.max_steps, max_tokens=cfg.max_tokens)
        pi_now = policy_probs(bandit) if cfg.use_bandit else np.full(len(TASK_NAMES), 0.5)
        metrics.append(EpochMetrics(
            epoch=epoch,
            train_accuracy=report.accuracy,
            easy_accuracy=report.per_task[TASK_NAMES[0]],
            hard_accuracy=report.per_task[TASK_NAMES[1]],
            pi_easy=float(pi_now[0]),
            pi_hard=float(pi_now[1]),
            wall_clock=time.perf_counter() - epoch_start,
        ))
        if report.accuracy > best_accuracy:
            best_accuracy = report.accuracy
            best_params = params.copy()
            best_epoch = epoch
        if cfg.stop_at_perfect_train and report.accuracy >= 1.0:
            break

    return TrainResult(params=best_params, final_params=params, metrics=metrics,
                       rounds=rounds, best_train_accuracy=best_accuracy,
                       best_epoch=best_epoch, skipped_examples=skipped)


def _draw_probe(pool: Sequence[Example], batch_ids: set[int], size: int,
                rng: np.random.Generator) -> list[Example]:
    """Probe batch from the same task, disjoint from the training batch
    whenever the task has enough data."""
    others = [i for i in range(len(pool)) if i not in batch_ids]
    candidates = others if len(others) >= size else list(range(len(pool)))
    take = min(size, len(candidates))
    picks = rng.choice(len(candidates), size=take, replace=False)
    return [pool[candidates[i]] for i in picks]


def _fmt(value: float | None) -> str:
    if value is None:
        return ""
    return f"{value:.12g}"


def write_metrics_csv(path, metrics: Sequence[EpochMetrics]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "train_accuracy", "easy_accuracy",
                         "hard_accuracy", "pi_easy", "pi_hard"])
        for row in metrics:
            writer.writerow([row.epoch, _fmt(row.train_accuracy),
                             _fmt(row.easy_accuracy), _fmt(row.hard_accuracy),
                             _fmt(row.pi_easy), _fmt(row.pi_hard)])


def write_rounds_csv(path, rounds: Sequence[RoundRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["round", "epoch", "task", "srg_raw", "reward",
                         "pi_easy", "pi_hard"])
        for row in rounds:
            writer.writerow([row.round, row.epoch, row.task, _fmt(row.srg_raw),
                             _fmt(row.reward), _fmt(row.pi_easy), _fmt(row.pi_hard)])
