"""Curriculum scheduling with a nonstationary adversarial bandit.

Training data is partitioned into tasks (single-item turns vs multi-item
turns).  An Exp3.S bandit picks which task to sample next; its payoff is
the change in mean decoded reward on a probe batch before vs after one
training step, min-max rescaled into [-1, 1].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataio import Example
from .model import ModelParams
from .orders import Denotation, RewardValue, denotation_distance, execute_tokens
from .search import BeamConfig, beam_search

TASK_EASY = "easy"
TASK_HARD = "hard"
TASK_NAMES = (TASK_EASY, TASK_HARD)


def task_label(target: Denotation) -> str:
    return TASK_EASY if len(target) <= 1 else TASK_HARD


def partition_examples(examples: Sequence[Example]) -> dict[str, list[Example]]:
    """Split a dataset into the fixed task order; every example lands in
    exactly one task."""
    parts: dict[str, list[Example]] = {name: [] for name in TASK_NAMES}
    for example in examples:
        parts[example.task].append(example)
    return parts


@dataclass
class BanditState:
    """Exp3.S weights plus hyperparameters.

    `t` is the index of the weight vector the next update will produce (a
    fresh bandit holds the round-1 weights and will compute the round-2
    weights, so t starts at 2).
    """

    weights: np.ndarray
    eta: float = 0.1
    epsilon: float = 0.05
    t: int = 2

    @classmethod
    def fresh(cls, n_tasks: int, eta: float = 0.1, epsilon: float = 0.05) -> "BanditState":
        return cls(weights=np.zeros(n_tasks), eta=eta, epsilon=epsilon)

    @property
    def n_tasks(self) -> int:
        return len(self.weights)


def policy_probs(state: BanditState) -> np.ndarray:
    """(1 - eps) * softmax(weights) + eps / n_tasks."""
    shifted = state.weights - state.weights.max()
    e = np.exp(shifted)
    soft = e / e.sum()
    return (1.0 - state.epsilon) * soft + state.epsilon / state.n_tasks


def rescaled_reward(reward: float, arm: int, probs: np.ndarray) -> np.ndarray:
    """Importance-weighted per-arm reward: reward / probs[arm] at the chosen
    arm, zero elsewhere."""
    out = np.zeros_like(probs)
    if probs[arm] <= 0.0:
        raise ValueError("chosen arm has zero policy probability")
    out[arm] = reward / probs[arm]
    return out


def update_weights(state: BanditState, rescaled: np.ndarray) -> BanditState:
    """One Exp3.S update, computed in log space; increments the round index.

    w_i <- log[(1 - 1/t) exp(w_i + eta*r_i)
               + (1/t) / (M - 1) * sum_{j != i} exp(w_j + eta*r_j)]
    """
    rescaled = np.asarray(rescaled, dtype=np.float64)
    if rescaled.shape != state.weights.shape:
        raise ValueError("reward vector does not match the number of arms")
    u = state.weights + state.eta * rescaled
    m = len(u)
    if m == 1:
        state.weights = u.copy()
        state.t += 1
        return state
    t = state.t
    keep = 1.0 - 1.0 / t
    mix = (1.0 / t) / (m - 1)
    shift = u.max()
    e = np.exp(u - shift)
    total = e.sum()
    state.weights = shift + np.log(keep * e + mix * (total - e))
    state.t += 1
    return state


class SrgNormalizer:
    """Running min-max rescaler onto [-1, 1]; a single span shared by all
    tasks so payoffs stay comparable across arms."""

    def __init__(self) -> None:
        self.lo: float | None = None
        self.hi: float | None = None

    def rescale(self, raw: float) -> float:
        raw = float(raw)
        self.lo = raw if self.lo is None else min(self.lo, raw)
        self.hi = raw if self.hi is None else max(self.hi, raw)
        if self.hi == self.lo:
            return 0.0
        return 2.0 * (raw - self.lo) / (self.hi - self.lo) - 1.0


def probe_rewards(params: ModelParams, probe: Sequence[Example],
                  max_steps: int = 24, max_tokens: int = 24) -> list[float]:
    """Raw reward of the greedy-decoded program per probe turn (width-1
    beam, no exploration, no memory).  A turn that decodes to nothing
    scores as an empty order."""
    cfg = BeamConfig(width=1, max_steps=max_steps, epsilon=0.0,
                     use_memory=False, max_tokens=max_tokens)
    out: list[float] = []
    for example in probe:
        results = beam_search(example.tags, params, cfg, stop_when_best_finished=True)
        if results:
            top = max(results, key=lambda sp: (sp.logprob, sp.tokens))
            produced = execute_tokens(top.tokens)
        else:
            produced = Denotation()
        out.append(RewardValue(denotation_distance(produced, example.target)).raw)
    return out


def srg_from_rewards(pre: Sequence[float], post: Sequence[float]) -> float:
    """Mean decoded reward after the step minus before it."""
    if len(pre) != len(post) or not pre:
        raise ValueError("probe reward lists must be nonempty and aligned")
    return float(np.mean(post) - np.mean(pre))


def srg(pre_params: ModelParams, post_params: ModelParams,
        probe: Sequence[Example], max_steps: int = 24,
        max_tokens: int = 24) -> float:
    """Self reward gain on a probe batch across one training step."""
    pre = probe_rewards(pre_params, probe, max_steps, max_tokens)
    post = probe_rewards(post_params, probe, max_steps, max_tokens)
    return srg_from_rewards(pre, post)
