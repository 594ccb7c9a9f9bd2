"""Seeded synthetic session generator.

Each session plans ground-truth items, renders an utterance turn through
template pools (train and test pools overlap only partially), tags the
rendered text with the lexicon, and keeps a witness program whose
execution equals the target order.  Rendered phenomena: contiguous word
repetition, whole-mention repetition and count repairs, number-split
nesting with property copy, trailing product-keyed modification, and
catch-all modification.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import Example, write_dataset, write_json, write_witnesses
from .grammar import MAX_PROGRAM_TOKENS
from .lexicon import Lexicon, default_lexicon
from .orders import (
    ALL_PRODUCT_ID,
    Action,
    ActionKind,
    NUMBER_ONE_ID,
    PROPERTY_VALUES,
    Program,
    PropertyType,
    TagToken,
    execute,
    tag_to_token_id,
)


@dataclass
class GenConfig:
    """Generator knobs: session count, item-count mixture, phenomena rates,
    template pool, and the seed."""

    sessions: int = 100
    mixture: tuple[float, float, float] = (0.47, 0.45, 0.08)
    disfluency_rate: float = 0.2
    nesting_rate: float = 0.15
    global_mod_rate: float = 0.25
    all_mod_rate: float = 0.15
    seed: int = 7
    template_pool: str = "train"
    id_prefix: str = "turn"
    max_tokens: int = MAX_PROGRAM_TOKENS

    def __post_init__(self) -> None:
        if abs(sum(self.mixture) - 1.0) > 1e-9:
            raise ValueError("item-count mixture must sum to 1")
        for rate in (self.disfluency_rate, self.nesting_rate,
                     self.global_mod_rate, self.all_mod_rate):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("phenomena rates must lie in [0, 1]")
        if self.template_pool not in ("train", "test"):
            raise ValueError("template pool must be 'train' or 'test'")


# Within-disfluency mode split: plain word echo, whole-mention echo,
# and count repair (the corrected number wins).
_DISFLUENCY_MODES = ("word_echo", "mention_echo", "count_repair")
_DISFLUENCY_WEIGHTS = (0.4, 0.3, 0.3)

_POLITE = {
    "train": ["i want", "give me", "i would like", "could we get"],
    "test": ["i want", "can i have", "hello i want", "let me get", "we will take"],
}
_SUFFIX = {
    "train": ["please", "thanks"],
    "test": ["please", "thank you", "that is all"],
}
_CONNECT = {
    "train": ["and", "also", "plus"],
    "test": ["and", "then", "and then", "also"],
}
_FILLERS = ["uh", "no wait", "sorry", "actually"]

# Clause word orders; the product-first and flavor-first shapes are held out
# of the training pool.
_CLAUSE_ORDERS = {
    "train": ["num_first", "num_first", "num_first", "comment_early"],
    "test": ["num_first", "num_first", "comment_early", "product_first", "flavor_first"],
}

_OPTIONAL_TYPES = (PropertyType.CUP_SIZE, PropertyType.FLAVOR,
                   PropertyType.HOT, PropertyType.COMMENT, PropertyType.LOCATION)
_PRESENCE = {
    PropertyType.CUP_SIZE: 0.4,
    PropertyType.FLAVOR: 0.25,
    PropertyType.HOT: 0.25,
    PropertyType.COMMENT: 0.2,
    PropertyType.LOCATION: 0.03,
}
_NUMBER_WEIGHTS = (0.55, 0.30, 0.10, 0.03, 0.02)  # one .. five
# per-item cap on optional properties, by session item count
_PROP_CAPS = {1: 3, 2: 2, 3: 1}

_ALL_MOD_TYPES = (PropertyType.LOCATION, PropertyType.CUP_SIZE, PropertyType.HOT)
_ALL_MOD_WEIGHTS = (0.6, 0.25, 0.15)

_DEFER_TYPES = (PropertyType.CUP_SIZE, PropertyType.COMMENT,
                PropertyType.FLAVOR, PropertyType.HOT)


@dataclass
class _ItemPlan:
    product: int
    number: int
    props: dict[PropertyType, int] = field(default_factory=dict)
    deferred: PropertyType | None = None       # rendered as a trailing modify
    decoy_number: int | None = None            # echoed/repaired first mention
    nested_child: bool = False


def _choice(rng: np.random.Generator, seq):
    return seq[int(rng.integers(len(seq)))]


def _weighted(rng: np.random.Generator, seq, weights) -> object:
    probs = np.asarray(weights, dtype=np.float64)
    return seq[int(rng.choice(len(seq), p=probs / probs.sum()))]


class _AliasPicker:
    def __init__(self, lexicon: Lexicon):
        self._by_tag: dict[TagToken, list[str]] = {}
        for entry in lexicon.entries:
            self._by_tag.setdefault(entry.tag, []).append(" ".join(entry.alias))

    def pick(self, rng, ptype: PropertyType, value_id: int, pool: str,
             plural: bool = False) -> str:
        aliases = self._by_tag[TagToken(ptype, value_id)]
        if ptype is PropertyType.PRODUCT and len(aliases) >= 2:
            return aliases[1] if plural else aliases[0]
        if pool == "train" or len(aliases) == 1:
            # training text leans on the primary alias
            return aliases[0] if rng.random() < 0.75 else _choice(rng, aliases)
        return _choice(rng, aliases)


def exact_counts(total: int, mixture: Sequence[float]) -> tuple[int, ...]:
    """Largest-remainder rounding of a mixture into integer counts."""
    raw = [total * m for m in mixture]
    counts = [int(np.floor(x)) for x in raw]
    short = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:short]:
        counts[i] += 1
    return tuple(counts)


def _plan_items(rng, n_items: int, nested: bool,
                forbidden: PropertyType | None = None) -> list[_ItemPlan]:
    n_products = n_items - 1 if nested else n_items
    product_ids = rng.choice(np.arange(1, len(PROPERTY_VALUES[PropertyType.PRODUCT])),
                             size=max(n_products, 1), replace=False)
    items: list[_ItemPlan] = []
    if nested:
        # a same-product pair differing in exactly one distinguishing slot
        product = int(product_ids[0])
        splittable = [pt for pt in (PropertyType.CUP_SIZE, PropertyType.FLAVOR)
                      if pt is not forbidden]
        dtype = _choice(rng, splittable)
        n_values = len(PROPERTY_VALUES[dtype])
        values = rng.choice(n_values, size=2, replace=False)
        shared: dict[PropertyType, int] = {}
        if rng.random() < 0.5:
            stype = PropertyType.HOT if dtype is not PropertyType.HOT else PropertyType.CUP_SIZE
            shared[stype] = int(rng.integers(len(PROPERTY_VALUES[stype])))
        for value in values:
            props = dict(shared)
            props[dtype] = int(value)
            items.append(_ItemPlan(product=product, number=NUMBER_ONE_ID,
                                   props=props, nested_child=True))
        remaining = product_ids[1:]
    else:
        remaining = product_ids[:n_items]
    cap = _PROP_CAPS.get(n_items, 1)
    for product in remaining:
        number = int(_weighted(rng, range(len(_NUMBER_WEIGHTS)), _NUMBER_WEIGHTS))
        props = {}
        for ptype in _OPTIONAL_TYPES:
            if len(props) < cap and rng.random() < _PRESENCE[ptype]:
                props[ptype] = int(rng.integers(len(PROPERTY_VALUES[ptype])))
        items.append(_ItemPlan(product=int(product), number=number, props=props))
    return items


def _witness(items: list[_ItemPlan], all_mod: tuple[PropertyType, int] | None) -> Program:
    actions: list[Action] = []
    deferred: list[Action] = []
    for item in items:
        params: list[TagToken] = []
        if item.number != NUMBER_ONE_ID:
            params.append(TagToken(PropertyType.NUMBER, item.number))
        for ptype in _OPTIONAL_TYPES:
            if ptype in item.props and ptype is not item.deferred:
                params.append(TagToken(ptype, item.props[ptype]))
        key = TagToken(PropertyType.PRODUCT, item.product)
        actions.append(Action(ActionKind.CREATE, key, tuple(params)))
        if item.deferred is not None:
            deferred.append(Action(
                ActionKind.MODIFY, key,
                (TagToken(item.deferred, item.props[item.deferred]),)))
    actions.extend(deferred)
    if all_mod is not None:
        ptype, value = all_mod
        actions.append(Action(ActionKind.MODIFY,
                              TagToken(PropertyType.PRODUCT, ALL_PRODUCT_ID),
                              (TagToken(ptype, value),)))
    return Program(tuple(actions))


def _witness_len(program: Program) -> int:
    return len(program.to_token_ids())


def _render_clause(rng, picker: _AliasPicker, item: _ItemPlan, pool: str,
                   order: str) -> str:
    plural = item.number != NUMBER_ONE_ID
    num = picker.pick(rng, PropertyType.NUMBER, item.number, pool)
    product = picker.pick(rng, PropertyType.PRODUCT, item.product, pool, plural=plural)
    container = ""
    if rng.random() < 0.35:
        container = "cups of" if plural else "cup of"

    words: dict[str, str] = {ptype: picker.pick(rng, ptype, vid, pool)
                             for ptype, vid in item.props.items()
                             if ptype is not item.deferred}
    size = words.get(PropertyType.CUP_SIZE, "")
    hot = words.get(PropertyType.HOT, "")
    flavor = words.get(PropertyType.FLAVOR, "")
    comment = words.get(PropertyType.COMMENT, "")
    location = words.get(PropertyType.LOCATION, "")
    if flavor and rng.random() < 0.6:
        flavor = f"with {flavor}"
    if comment and rng.random() < 0.4:
        comment = f"with {comment}"

    if order == "product_first":
        parts = [size, hot, product, num, container, flavor, comment, location]
    elif order == "flavor_first":
        parts = [num, container, flavor, size, hot, product, comment, location]
    elif order == "comment_early":
        parts = [num, container, size, hot, product, comment, flavor, location]
    else:  # num_first
        parts = [num, container, size, hot, product, flavor, comment, location]
    return " ".join(p for p in parts if p)


def _render_session(rng, picker: _AliasPicker, items: list[_ItemPlan],
                    nested: bool, all_mod, disfluency: str | None,
                    pool: str) -> str:
    chunks: list[str] = []
    if rng.random() < 0.6:
        chunks.append(_choice(rng, _POLITE[pool]))

    clause_order = _choice(rng, _CLAUSE_ORDERS[pool])
    body: list[str] = []
    idx = 0
    if nested:
        pair = items[:2]
        dtype = next(pt for pt in pair[0].props if pair[0].props[pt] != pair[1].props.get(pt))
        shared_types = [pt for pt in pair[0].props if pt is not dtype]
        root_words = []
        root_words.append(picker.pick(rng, PropertyType.NUMBER, 1, pool))  # "two"
        for ptype in shared_types:
            root_words.append(picker.pick(rng, ptype, pair[0].props[ptype], pool))
        root_words.append(picker.pick(rng, PropertyType.PRODUCT, pair[0].product,
                                      pool, plural=True))
        body.append(" ".join(root_words))
        for child in pair:
            child_words = [picker.pick(rng, PropertyType.NUMBER, NUMBER_ONE_ID, pool),
                           picker.pick(rng, dtype, child.props[dtype], pool)]
            if rng.random() < 0.5:
                child_words.append("cup")
            body.append(" ".join(child_words))
        idx = 2

    while idx < len(items):
        item = items[idx]
        clause = _render_clause(rng, picker, item, pool, clause_order)
        if item.decoy_number is not None:
            plural = item.decoy_number != NUMBER_ONE_ID
            decoy = " ".join([
                picker.pick(rng, PropertyType.NUMBER, item.decoy_number, pool),
                picker.pick(rng, PropertyType.PRODUCT, item.product, pool, plural=plural),
            ])
            filler = _choice(rng, _FILLERS) if rng.random() < 0.7 else ""
            clause = " ".join(p for p in (decoy, filler, clause) if p)
        if body and idx > 0:
            body.append(_choice(rng, _CONNECT[pool]))
        body.append(clause)
        idx += 1

    chunks.extend(body)

    trailing: list[str] = []
    for item in items:
        if item.deferred is not None:
            words = [picker.pick(rng, PropertyType.PRODUCT, item.product, pool)]
            words.append(picker.pick(rng, item.deferred, item.props[item.deferred], pool))
            if item.deferred is PropertyType.CUP_SIZE and rng.random() < 0.5:
                words.append("cup")
            prefix = "the" if rng.random() < 0.5 else ""
            trailing.append(" ".join(p for p in ([prefix] + words) if p))
    if all_mod is not None:
        ptype, value = all_mod
        all_word = "all" if rng.random() < 0.7 else "everything"
        trailing.append(f"{all_word} {picker.pick(rng, ptype, value, pool)}")
    chunks.extend(trailing)

    if rng.random() < 0.3:
        chunks.append(_choice(rng, _SUFFIX[pool]))

    text = " ".join(chunks)

    if disfluency == "word_echo":
        words = text.split()
        taggable = [i for i, w in enumerate(words)
                    if any(w == alias for alias in _ECHO_WORDS)]
        if taggable:
            pos = int(_choice(rng, taggable))
            words.insert(pos, words[pos])
            text = " ".join(words)
    return text


# single-word aliases worth echoing (echoes must stay within one tag span)
_ECHO_WORDS = frozenset(
    alias for ptype in (PropertyType.PRODUCT, PropertyType.NUMBER, PropertyType.CUP_SIZE)
    for vid in range(len(PROPERTY_VALUES[ptype]))
    for alias in [PROPERTY_VALUES[ptype][vid]]
    if " " not in alias and alias != "all"
) | frozenset(PROPERTY_VALUES[PropertyType.PRODUCT][i] + "s"
              for i in range(1, len(PROPERTY_VALUES[PropertyType.PRODUCT]))
              if " " not in PROPERTY_VALUES[PropertyType.PRODUCT][i])


def generate_session(cfg: GenConfig, rng: np.random.Generator, session_id: str,
                     n_items: int, lexicon: Lexicon | None = None,
                     picker: _AliasPicker | None = None) -> tuple[Example, Program]:
    """One session: plan items, render, tag, and return the example plus its
    witness program."""
    lexicon = lexicon or default_lexicon()
    picker = picker or _AliasPicker(lexicon)

    nested = n_items >= 2 and rng.random() < cfg.nesting_rate
    all_mod: tuple[PropertyType, int] | None = None
    if rng.random() < cfg.all_mod_rate:
        ptype = _weighted(rng, _ALL_MOD_TYPES, _ALL_MOD_WEIGHTS)
        all_mod = (ptype, int(rng.integers(len(PROPERTY_VALUES[ptype]))))

    items = _plan_items(rng, n_items, nested,
                        forbidden=all_mod[0] if all_mod else None)
    if all_mod is not None:
        for item in items:
            item.props.pop(all_mod[0], None)

    plain = [item for item in items if not item.nested_child]
    global_rate = cfg.global_mod_rate * (0.5 if n_items == 1 else 1.0)
    if plain and rng.random() < global_rate:
        target = plain[0]
        options = [pt for pt in _DEFER_TYPES
                   if all_mod is None or pt is not all_mod[0]]
        present = [pt for pt in options if pt in target.props]
        dtype = _choice(rng, present) if present else _choice(rng, options)
        if dtype not in target.props:
            target.props[dtype] = int(rng.integers(len(PROPERTY_VALUES[dtype])))
        target.deferred = dtype

    if rng.random() < cfg.disfluency_rate:
        mode = _weighted(rng, _DISFLUENCY_MODES, _DISFLUENCY_WEIGHTS)
        echoable = [item for item in plain if item.deferred is None]
        if mode != "word_echo" and echoable:
            victim = echoable[-1]
            if mode == "count_repair":
                decoys = [n for n in range(len(_NUMBER_WEIGHTS)) if n != victim.number]
                victim.decoy_number = int(_choice(rng, decoys))
            else:
                victim.decoy_number = victim.number
            disfluency = None
        else:
            disfluency = "word_echo"
    else:
        disfluency = None

    witness = _witness(items, all_mod)
    while _witness_len(witness) > cfg.max_tokens:
        trimmable = [it for it in items if not it.nested_child and (it.props or it.deferred)]
        if not trimmable:
            break
        richest = max(trimmable, key=lambda it: len(it.props))
        droppable = [pt for pt in richest.props if pt is not richest.deferred]
        if not droppable:
            richest.deferred = None
            droppable = list(richest.props)
        richest.props.pop(_choice(rng, droppable))
        witness = _witness(items, all_mod)

    target = execute(witness)
    text = _render_session(rng, picker, items, nested, all_mod, disfluency,
                           cfg.template_pool)
    tags = tuple(lexicon.tag(text))

    # every witness ingredient must be copyable from the tag sequence
    tag_set = set(tags)
    for action in witness.actions:
        assert action.key in tag_set, (session_id, text, action.key)
        for param in action.params:
            assert param in tag_set, (session_id, text, param)
    assert tags, (session_id, text)

    task = "easy" if len(target) <= 1 else "hard"
    example = Example(id=session_id, text=text, tags=tags, target=target, task=task)
    return example, witness


def generate_dataset(cfg: GenConfig) -> tuple[list[Example], list[tuple[str, Program]], dict]:
    rng = np.random.default_rng(cfg.seed)
    lexicon = default_lexicon()
    picker = _AliasPicker(lexicon)
    counts = exact_counts(cfg.sessions, cfg.mixture)
    buckets = [n for n, count in zip((1, 2, 3), counts) for _ in range(count)]
    order = rng.permutation(len(buckets))
    examples: list[Example] = []
    witnesses: list[tuple[str, Program]] = []
    histogram = {1: 0, 2: 0, 3: 0}
    for i, bucket_idx in enumerate(order):
        n_items = buckets[int(bucket_idx)]
        session_id = f"{cfg.id_prefix}-{i:04d}"
        example, witness = generate_session(cfg, rng, session_id, n_items,
                                            lexicon, picker)
        examples.append(example)
        witnesses.append((session_id, witness))
        histogram[n_items] += 1
    stats = {
        "sessions": cfg.sessions,
        "item_count_histogram": {str(k): v for k, v in histogram.items()},
        "task_histogram": {
            "easy": sum(1 for e in examples if e.task == "easy"),
            "hard": sum(1 for e in examples if e.task == "hard"),
        },
        "mean_tag_length": float(np.mean([len(e.tags) for e in examples])),
        "template_pool": cfg.template_pool,
        "seed": cfg.seed,
    }
    return examples, witnesses, stats


def default_train_config(seed: int = 7) -> GenConfig:
    return GenConfig(sessions=100, mixture=(0.47, 0.45, 0.08), seed=seed,
                     template_pool="train", id_prefix="train")


def default_test_config(seed: int = 7) -> GenConfig:
    return GenConfig(sessions=1144, mixture=(0.62, 0.29, 0.09), seed=seed + 1,
                     template_pool="test", id_prefix="test")


def generate_datasets(cfg_train: GenConfig, cfg_test: GenConfig) -> dict:
    """Both splits plus their stats, keyed 'train' and 'test'."""
    train_examples, train_witnesses, train_stats = generate_dataset(cfg_train)
    test_examples, test_witnesses, test_stats = generate_dataset(cfg_test)
    return {
        "train": (train_examples, train_witnesses, train_stats),
        "test": (test_examples, test_witnesses, test_stats),
    }


def write_generated(out_dir, cfg_train: GenConfig, cfg_test: GenConfig) -> dict:
    """Generate and write both splits; witnesses go to sidecar files that
    the training pipeline never reads."""
    out_dir = Path(out_dir)
    data = generate_datasets(cfg_train, cfg_test)
    stats = {}
    for split, (examples, witnesses, split_stats) in data.items():
        write_dataset(out_dir / f"{split}.jsonl", examples)
        write_witnesses(out_dir / f"witness_{split}.sidecar.jsonl", witnesses)
        stats[split] = split_stats
    write_json(out_dir / "stats.json", stats)
    return stats
