"""Prefix feasibility checking for program token sequences.

A prefix is valid when it can still be extended to a complete EOS-terminated
program within the token budget: every action opens with CREATE or MODIFY,
is keyed by a product tag (create keys exclude the catch-all product), and
carries at most one parameter per property type with no product parameters.
"""
from __future__ import annotations

from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .orders import (
    ALL_PRODUCT_ID,
    PROPERTY_INDEX,
    PropertyType,
    TAG_ID_BASE,
    TOKEN_CREATE,
    TOKEN_EOS,
    TOKEN_MODIFY,
    TagToken,
    is_tag_token_id,
    tag_to_token_id,
    token_id_to_tag,
)

MAX_PROGRAM_TOKENS = 24

# Decoder positions within an action.
MODE_START = 0   # nothing emitted yet
MODE_KEY = 1     # CREATE/MODIFY emitted, key tag expected
MODE_PARAMS = 2  # action has its key; params, a new action, or EOS may follow
MODE_DONE = 3    # EOS emitted

# Cheapest completion from each mode: START needs CREATE+key+EOS, KEY needs
# key+EOS, PARAMS just EOS.
_MIN_COMPLETION = {MODE_START: 3, MODE_KEY: 2, MODE_PARAMS: 1, MODE_DONE: 0}

_PRODUCT_IDX = PROPERTY_INDEX[PropertyType.PRODUCT]


class PrefixState(NamedTuple):
    """Incremental parse state of a program prefix."""

    n_tokens: int = 0
    mode: int = MODE_START
    kind: int = -1        # TOKEN_CREATE or TOKEN_MODIFY for the open action
    used_mask: int = 0    # property types already used as params in the action

    @property
    def terminated(self) -> bool:
        return self.mode == MODE_DONE


INITIAL_STATE = PrefixState()


def advance(state: PrefixState | None, token_id: int,
            max_tokens: int = MAX_PROGRAM_TOKENS) -> PrefixState | None:
    """One-token transition; returns None when the extension is dead."""
    if state is None or state.mode == MODE_DONE:
        return None
    n = state.n_tokens + 1

    if token_id == TOKEN_EOS:
        if state.mode != MODE_PARAMS:
            return None
        return PrefixState(n, MODE_DONE, -1, 0)

    if token_id in (TOKEN_CREATE, TOKEN_MODIFY):
        if state.mode not in (MODE_START, MODE_PARAMS):
            return None
        if n + _MIN_COMPLETION[MODE_KEY] > max_tokens:
            return None
        return PrefixState(n, MODE_KEY, token_id, 0)

    if not is_tag_token_id(token_id):
        return None
    tag = token_id_to_tag(token_id)

    if state.mode == MODE_KEY:
        if tag.ptype is not PropertyType.PRODUCT:
            return None
        if state.kind == TOKEN_CREATE and tag.value_id == ALL_PRODUCT_ID:
            return None
        if n + _MIN_COMPLETION[MODE_PARAMS] > max_tokens:
            return None
        return PrefixState(n, MODE_PARAMS, state.kind, 0)

    if state.mode == MODE_PARAMS:
        if tag.ptype is PropertyType.PRODUCT:
            return None
        bit = 1 << PROPERTY_INDEX[tag.ptype]
        if state.used_mask & bit:
            return None
        if n + _MIN_COMPLETION[MODE_PARAMS] > max_tokens:
            return None
        return PrefixState(n, MODE_PARAMS, state.kind, state.used_mask | bit)

    return None


def fold_prefix(token_ids: Sequence[int],
                max_tokens: int = MAX_PROGRAM_TOKENS) -> PrefixState | None:
    state: PrefixState | None = INITIAL_STATE
    for token_id in token_ids:
        state = advance(state, token_id, max_tokens)
        if state is None:
            return None
    return state


def check_prefix(token_ids: Sequence[int],
                 max_tokens: int = MAX_PROGRAM_TOKENS) -> bool:
    """True when the prefix extends to (or already is) a complete program."""
    return fold_prefix(token_ids, max_tokens) is not None


class CandidateSet:
    """Static per-turn candidate tokens: the function vocabulary plus the
    distinct tags available for copying, with arrays for fast legality."""

    def __init__(self, tag_pool: Iterable["TagToken | int"]):
        pool_ids: list[int] = []
        seen: set[int] = set()
        for tag in tag_pool:
            token_id = tag if isinstance(tag, int) else tag_to_token_id(tag)
            if not is_tag_token_id(token_id):
                raise ValueError(f"tag pool entry {tag!r} is not a tag")
            if token_id not in seen:
                seen.add(token_id)
                pool_ids.append(token_id)

        self.ids: tuple[int, ...] = (TOKEN_CREATE, TOKEN_MODIFY, TOKEN_EOS) + tuple(pool_ids)
        self.col_of = {token_id: col for col, token_id in enumerate(self.ids)}
        n = len(self.ids)
        self.is_func = np.zeros(n, dtype=bool)
        self.is_func[:2] = True
        self.is_eos = np.zeros(n, dtype=bool)
        self.is_eos[2] = True
        self.is_product = np.zeros(n, dtype=bool)
        self.is_all_product = np.zeros(n, dtype=bool)
        self.type_bits = np.zeros(n, dtype=np.int64)
        for col, token_id in enumerate(self.ids):
            if is_tag_token_id(token_id):
                tag = token_id_to_tag(token_id)
                self.type_bits[col] = 1 << PROPERTY_INDEX[tag.ptype]
                if tag.ptype is PropertyType.PRODUCT:
                    self.is_product[col] = True
                    self.is_all_product[col] = tag.value_id == ALL_PRODUCT_ID

    def __len__(self) -> int:
        return len(self.ids)

    def legal_flags(self, state: PrefixState,
                    max_tokens: int = MAX_PROGRAM_TOKENS) -> np.ndarray:
        """Boolean legality per candidate for one prefix state."""
        n = state.n_tokens
        flags = np.zeros(len(self.ids), dtype=bool)
        if state.mode == MODE_DONE:
            return flags
        if state.mode == MODE_START:
            if n + 1 + _MIN_COMPLETION[MODE_KEY] <= max_tokens:
                flags |= self.is_func
            return flags
        if state.mode == MODE_KEY:
            if n + 1 + _MIN_COMPLETION[MODE_PARAMS] <= max_tokens:
                flags |= self.is_product
                if state.kind == TOKEN_CREATE:
                    flags &= ~self.is_all_product
            return flags
        # MODE_PARAMS
        flags |= self.is_eos
        if n + 1 + _MIN_COMPLETION[MODE_KEY] <= max_tokens:
            flags |= self.is_func
        if n + 1 + _MIN_COMPLETION[MODE_PARAMS] <= max_tokens:
            tag_ok = (~self.is_product) & (~self.is_func) & (~self.is_eos)
            tag_ok &= (self.type_bits & state.used_mask) == 0
            flags |= tag_ok
        return flags


def legal_matrix(states: Sequence[PrefixState], cands: CandidateSet,
                 max_tokens: int = MAX_PROGRAM_TOKENS) -> np.ndarray:
    """Vectorized legality over a batch of prefix states; rows align with
    `states`, columns with `cands.ids`.  Matches `legal_flags` row by row."""
    n = len(states)
    modes = np.fromiter((s.mode for s in states), dtype=np.int64, count=n)
    kinds = np.fromiter((s.kind for s in states), dtype=np.int64, count=n)
    masks = np.fromiter((s.used_mask for s in states), dtype=np.int64, count=n)
    lens = np.fromiter((s.n_tokens for s in states), dtype=np.int64, count=n)

    can_open = lens + 3 <= max_tokens   # function + key + EOS still fit
    can_tag = lens + 2 <= max_tokens    # one tag + EOS still fit
    start = modes == MODE_START
    key = modes == MODE_KEY
    params = modes == MODE_PARAMS

    legal = np.zeros((n, len(cands.ids)), dtype=bool)
    legal |= ((start | params) & can_open)[:, None] & cands.is_func[None, :]
    legal |= params[:, None] & cands.is_eos[None, :]
    key_cols = cands.is_product[None, :] & ~(
        cands.is_all_product[None, :] & (kinds == TOKEN_CREATE)[:, None])
    legal |= (key & can_tag)[:, None] & key_cols
    param_cols = ~(cands.is_product | cands.is_func | cands.is_eos)
    unused = (cands.type_bits[None, :] & masks[:, None]) == 0
    legal |= (params & can_tag)[:, None] & param_cols[None, :] & unused
    return legal


def valid_continuations(token_ids: Sequence[int],
                        tag_pool: Iterable["TagToken | int"],
                        max_tokens: int = MAX_PROGRAM_TOKENS) -> set[int]:
    """Exactly the next tokens that keep the prefix valid, with copy
    candidates restricted to the given tag pool."""
    state = fold_prefix(token_ids, max_tokens)
    if state is None:
        raise ValueError("prefix is dead; continuations are undefined")
    cands = CandidateSet(tag_pool)
    flags = cands.legal_flags(state, max_tokens)
    return {cands.ids[col] for col in np.flatnonzero(flags)}
