"""Program exploration: standard beam search, epsilon-greedy beam selection,
and memory-augmented randomized beam search.

The memory-augmented search keeps, per training turn, a set of fully
explored program prefixes (never expanded again) and a small cache of the
highest-reward complete programs found so far; the cache is merged into
every search result so good programs survive randomized exploration.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from . import grammar
from .model import ModelParams, TurnScorer
from .orders import (
    RewardValue,
    TOKEN_EOS,
    Denotation,
    TagToken,
    reward_for_tokens,
)


@dataclass
class BeamConfig:
    """Knobs for one search: beam width, decode steps, exploration rate,
    memory usage, cache capacity, and the grammar token budget."""

    width: int = 40
    max_steps: int = 24
    epsilon: float = 0.0
    use_memory: bool = True
    cache_size: int = 10
    max_tokens: int = 24
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width < 1:
            raise ValueError("beam width must be at least 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")


@dataclass(frozen=True)
class ScoredProgram:
    tokens: tuple[int, ...]
    logprob: float
    reward: RewardValue | None = None


def _key(tokens: tuple[int, ...]) -> bytes:
    return bytes(tokens)


class ExploredSet:
    """Fully explored program prefixes for one training turn."""

    def __init__(self) -> None:
        self._seen: set[bytes] = set()
        self.insertions = 0

    def __contains__(self, tokens: tuple[int, ...]) -> bool:
        return _key(tokens) in self._seen

    def contains_key(self, key: bytes) -> bool:
        return key in self._seen

    def add(self, tokens: tuple[int, ...]) -> None:
        self.add_key(_key(tokens))

    def add_key(self, key: bytes) -> None:
        if key not in self._seen:
            self._seen.add(key)
            self.insertions += 1

    def __len__(self) -> int:
        return len(self._seen)


class ProgramCache:
    """Top-K complete programs by raw reward, deduplicated, ties kept in
    discovery order."""

    def __init__(self, capacity: int = 10):
        if capacity < 1:
            raise ValueError("cache capacity must be at least 1")
        self.capacity = capacity
        self._entries: dict[bytes, tuple[tuple[int, ...], RewardValue, int]] = {}
        self._counter = 0

    def update(self, programs: Iterable[tuple[tuple[int, ...], RewardValue]]) -> None:
        for tokens, reward_value in programs:
            key = _key(tokens)
            if key not in self._entries:
                self._entries[key] = (tokens, reward_value, self._counter)
                self._counter += 1
        ranked = sorted(self._entries.values(), key=lambda e: (-e[1].raw, e[2]))
        self._entries = {_key(tokens): (tokens, rv, order)
                         for tokens, rv, order in ranked[:self.capacity]}

    def entries(self) -> list[tuple[tuple[int, ...], RewardValue]]:
        ranked = sorted(self._entries.values(), key=lambda e: (-e[1].raw, e[2]))
        return [(tokens, rv) for tokens, rv, _ in ranked]

    @property
    def best_raw(self) -> float | None:
        entries = self.entries()
        return entries[0][1].raw if entries else None

    def __len__(self) -> int:
        return len(self._entries)


def update_cache(cache: ProgramCache,
                 programs: Iterable[tuple[tuple[int, ...], RewardValue]]) -> ProgramCache:
    cache.update(programs)
    return cache


def select_epsilon_greedy(pool: Sequence[tuple[float, Any]], width: int,
                          epsilon: float, rng: np.random.Generator) -> list[Any]:
    """Fill up to `width` slots without replacement: each slot takes a
    uniform pool member with probability epsilon, otherwise the
    highest-scoring member remaining."""
    scores = np.array([score for score, _ in pool], dtype=np.float64)
    items = [item for _, item in pool]
    picks = _select_indices(scores, width, epsilon, rng)
    return [items[i] for i in picks]


def _select_indices(scores: np.ndarray, width: int, epsilon: float,
                    rng: np.random.Generator | None) -> list[int]:
    n = len(scores)
    take = min(width, n)
    if take == 0:
        return []
    order = np.argsort(-scores, kind="stable")  # ties resolved by arrival order
    if epsilon <= 0.0 or rng is None:
        return [int(i) for i in order[:take]]
    taken = np.zeros(n, dtype=bool)
    available = [int(i) for i in order]   # kept sorted; O(1) swap-pop removal
    where = {idx: pos for pos, idx in enumerate(available)}
    rank = 0
    picks: list[int] = []

    def remove(idx: int) -> None:
        pos = where.pop(idx)
        last = available.pop()
        if last != idx:
            available[pos] = last
            where[last] = pos

    for _ in range(take):
        if rng.random() < epsilon:
            choice = available[int(rng.integers(len(available)))]
        else:
            while taken[order[rank]]:
                rank += 1
            choice = int(order[rank])
        taken[choice] = True
        remove(choice)
        picks.append(choice)
    return picks


class _BeamItem:
    __slots__ = ("tokens", "key", "state", "window", "bow", "logprob")

    def __init__(self, tokens, key, state, window, bow, logprob):
        self.tokens = tokens
        self.key = key          # bytes form of tokens, grown incrementally
        self.state = state
        self.window = window
        self.bow = bow
        self.logprob = logprob


_TOKEN_BYTE = [bytes([t]) for t in range(256)]


def _beam_loop(scorer: TurnScorer, cfg: BeamConfig, *, epsilon: float,
               memory: ExploredSet | None, rng: np.random.Generator | None,
               trace: list[dict] | None = None,
               stop_when_best_finished: bool = False) -> list[tuple[tuple[int, ...], float]]:
    """Shared decode loop.  All legal continuations (EOS-terminated ones
    included) compete for the beam slots; selected terminated continuations
    become search results and, with memory on, are marked explored.  A
    prefix with no unexplored continuation left is itself marked explored.

    Per-step log probabilities are never positive, so once the best pool
    member is a terminated program nothing can outscore it; callers that
    only need the top program can stop there."""
    cands = scorer.cands
    eos_col = cands.col_of[TOKEN_EOS]
    cand_bytes = [_TOKEN_BYTE[t] for t in cands.ids]
    root = _BeamItem((), b"", grammar.INITIAL_STATE, scorer.initial_window(),
                     scorer.initial_bow(), 0.0)
    beam = [root]
    finished: dict[tuple[int, ...], float] = {}

    for step in range(cfg.max_steps):
        if not beam:
            break
        windows = np.array([item.window for item in beam], dtype=np.int64)
        bows = np.stack([item.bow for item in beam])
        legal = scorer.legal_rows([item.state for item in beam])
        probs = scorer.step_probs(windows, bows, legal)
        with np.errstate(divide="ignore"):
            logs = np.where(probs > 0.0, np.log(np.where(probs > 0.0, probs, 1.0)), -np.inf)

        rows, cols = np.nonzero(legal)
        parent_lps = np.fromiter((item.logprob for item in beam), dtype=np.float64,
                                 count=len(beam))
        all_scores = parent_lps[rows] + logs[rows, cols]
        inserted = 0
        if memory is None:
            pool_scores = all_scores
            pool_refs = list(zip(rows.tolist(), cols.tolist()))
        else:
            pool_list: list[float] = []
            pool_refs = []
            open_counts = [0] * len(beam)
            contains = memory.contains_key
            for k, (r, c) in enumerate(zip(rows.tolist(), cols.tolist())):
                if contains(beam[r].key + cand_bytes[c]):
                    continue
                open_counts[r] += 1
                pool_list.append(float(all_scores[k]))
                pool_refs.append((r, c))
            for r, count in enumerate(open_counts):
                if count == 0:
                    memory.add_key(beam[r].key)
                    inserted += 1
            pool_scores = np.array(pool_list)

        picks = _select_indices(pool_scores, cfg.width, epsilon, rng)
        next_beam: list[_BeamItem] = []
        new_finished = 0
        best_is_finished = False
        for slot, pick in enumerate(picks):
            r, c = pool_refs[pick]
            parent = beam[r]
            token_id = cands.ids[c]
            child_tokens = parent.tokens + (token_id,)
            child_key = parent.key + cand_bytes[c]
            if c == eos_col:
                if child_tokens not in finished:
                    finished[child_tokens] = pool_scores[pick]
                    new_finished += 1
                if memory is not None:
                    memory.add_key(child_key)
                if slot == 0 and epsilon <= 0.0:
                    best_is_finished = True
                continue
            state = grammar.advance(parent.state, token_id, cfg.max_tokens)
            assert state is not None
            bow = parent.bow.copy()
            bow[token_id] = 1.0
            next_beam.append(_BeamItem(child_tokens, child_key, state,
                                       parent.window[1:] + (token_id,), bow,
                                       pool_scores[pick]))
        if trace is not None:
            trace.append({"step": step + 1, "pool": len(pool_scores),
                          "selected": len(picks), "finished": new_finished,
                          "explored_insertions": inserted})
        if stop_when_best_finished and best_is_finished:
            break
        beam = next_beam

    return sorted(finished.items(), key=lambda kv: (-kv[1], kv[0]))


def beam_search(tags: Sequence["TagToken | int"], params: ModelParams,
                cfg: BeamConfig, scorer: TurnScorer | None = None,
                stop_when_best_finished: bool = False) -> list[ScoredProgram]:
    """Deterministic beam search over syntax-valid continuations; returns
    the complete programs found, ranked by log probability."""
    if scorer is None:
        scorer = TurnScorer(tags, params, cfg.max_tokens)
    found = _beam_loop(scorer, cfg, epsilon=0.0, memory=None, rng=None,
                       stop_when_best_finished=stop_when_best_finished)
    return [ScoredProgram(tokens, logprob) for tokens, logprob in found]


def rbsma_search(tags: Sequence["TagToken | int"], target: Denotation,
                 params: ModelParams, cfg: BeamConfig,
                 memory: ExploredSet | None, cache: ProgramCache | None,
                 rng: np.random.Generator | None = None,
                 trace: list[dict] | None = None,
                 scorer: TurnScorer | None = None) -> list[ScoredProgram]:
    """Randomized beam search with memory: epsilon-greedy slot filling,
    explored-prefix skipping, and a merged-in cache of the best complete
    programs seen on this turn so far."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if scorer is None:
        scorer = TurnScorer(tags, params, cfg.max_tokens)
    found = _beam_loop(scorer, cfg, epsilon=cfg.epsilon, memory=memory,
                       rng=rng, trace=trace)
    merged: dict[tuple[int, ...], ScoredProgram] = {}
    for tokens, logprob in found:
        merged[tokens] = ScoredProgram(tokens, logprob, reward_for_tokens(tokens, target))
    if cache is not None:
        stale = [tokens for tokens, _ in cache.entries() if tokens not in merged]
        if stale:
            logprobs = scorer.sequence_logprobs(stale)
            rewards = dict(cache.entries())
            for tokens, logprob in zip(stale, logprobs):
                merged[tokens] = ScoredProgram(tokens, float(logprob), rewards[tokens])
        cache.update((sp.tokens, sp.reward) for sp in merged.values())
    return sorted(merged.values(),
                  key=lambda sp: (-sp.reward.raw, -sp.logprob, sp.tokens))
