"""The voice-order world: typed tags, programs, execution, and reward.

An ordered item carries seven property slots.  A program is a sequence of
create/modify actions over tags; executing it yields a multiset of items
(the denotation).  Rewards compare an executed denotation against a target
denotation through minimum-cost item matching.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment


class OrderDomainError(Exception):
    """Base error for the order world."""


class ProgramSyntaxError(OrderDomainError):
    """A token sequence that does not parse into a program."""


class PropertyType(Enum):
    """The seven property categories an ordered item can carry."""

    PRODUCT = "product"
    NUMBER = "number"
    CUP_SIZE = "cup_size"
    FLAVOR = "flavor"
    HOT = "hot"
    LOCATION = "location"
    COMMENT = "comment"


PROPERTY_ORDER: tuple[PropertyType, ...] = (
    PropertyType.PRODUCT,
    PropertyType.NUMBER,
    PropertyType.CUP_SIZE,
    PropertyType.FLAVOR,
    PropertyType.HOT,
    PropertyType.LOCATION,
    PropertyType.COMMENT,
)
PROPERTY_INDEX = {ptype: i for i, ptype in enumerate(PROPERTY_ORDER)}
N_PROPERTY_TYPES = len(PROPERTY_ORDER)

# Fixed value inventories.  The catch-all "all" product (index 0) is the
# modify-every-item key and is never a create key.
PROPERTY_VALUES: dict[PropertyType, tuple[str, ...]] = {
    PropertyType.PRODUCT: (
        "all", "americano", "latte", "mocha", "cappuccino", "espresso",
        "macchiato", "flat-white", "cold-brew", "drip-coffee",
        "hot-chocolate", "black-tea", "green-tea", "milk-tea", "lemonade",
        "smoothie",
    ),
    PropertyType.NUMBER: (
        "one", "two", "three", "four", "five", "six", "seven", "eight",
        "nine", "ten", "eleven", "twelve", "thirteen", "fourteen",
        "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
    ),
    PropertyType.CUP_SIZE: ("small", "middle", "big"),
    PropertyType.FLAVOR: (
        "vanilla", "caramel", "hazelnut", "chocolate", "mint", "coconut",
        "almond", "pumpkin", "cinnamon", "honey",
    ),
    PropertyType.HOT: ("cold", "hot"),
    PropertyType.LOCATION: ("pack", "dine-in"),
    PropertyType.COMMENT: (
        "less-sugar", "no-sugar", "extra-sugar", "little-ice", "no-ice",
        "extra-ice", "less-foam", "no-foam", "extra-shot", "decaf",
        "oat-milk", "soy-milk", "skim-milk", "no-whip", "extra-whip",
        "light-roast", "dark-roast", "double-cup",
    ),
}

ALL_PRODUCT_ID = 0
NUMBER_ONE_ID = 0

_TYPE_OFFSETS: dict[PropertyType, int] = {}
_off = 0
for _ptype in PROPERTY_ORDER:
    _TYPE_OFFSETS[_ptype] = _off
    _off += len(PROPERTY_VALUES[_ptype])
TOTAL_TAGS = _off

# Program token ids: the three function-vocabulary tokens, then one id per
# inventory tag.
TOKEN_CREATE = 0
TOKEN_MODIFY = 1
TOKEN_EOS = 2
TAG_ID_BASE = 3
VOCAB_SIZE = TAG_ID_BASE + TOTAL_TAGS

FUNCTION_TOKEN_NAMES = {TOKEN_CREATE: "CREATE", TOKEN_MODIFY: "MODIFY", TOKEN_EOS: "EOS"}


@dataclass(frozen=True)
class TagToken:
    """A typed lexical unit: a property type plus a value index."""

    ptype: PropertyType
    value_id: int

    def __post_init__(self) -> None:
        n = len(PROPERTY_VALUES[self.ptype])
        if not 0 <= self.value_id < n:
            raise OrderDomainError(
                f"value id {self.value_id} out of range for {self.ptype.value} (size {n})"
            )

    @property
    def value_name(self) -> str:
        return PROPERTY_VALUES[self.ptype][self.value_id]

    @property
    def global_index(self) -> int:
        return _TYPE_OFFSETS[self.ptype] + self.value_id

    @property
    def is_all_product(self) -> bool:
        return self.ptype is PropertyType.PRODUCT and self.value_id == ALL_PRODUCT_ID

    def to_text(self) -> str:
        return f"{self.ptype.value}:{self.value_name}"

    @classmethod
    def from_text(cls, text: str) -> "TagToken":
        try:
            type_name, value_name = text.split(":", 1)
            ptype = PropertyType(type_name)
            value_id = PROPERTY_VALUES[ptype].index(value_name)
        except (ValueError, KeyError) as exc:
            raise OrderDomainError(f"unknown tag {text!r}") from exc
        return cls(ptype, value_id)

    @classmethod
    def make(cls, type_name: str, value_name: str) -> "TagToken":
        return cls.from_text(f"{type_name}:{value_name}")

    def __repr__(self) -> str:
        return f"Tag({self.to_text()})"


def tag_to_token_id(tag: TagToken) -> int:
    return TAG_ID_BASE + tag.global_index


def _build_tag_table() -> tuple["TagToken", ...]:
    out = []
    for ptype in PROPERTY_ORDER:
        for value_id in range(len(PROPERTY_VALUES[ptype])):
            out.append(TagToken(ptype, value_id))
    return tuple(out)


_TAG_BY_INDEX = _build_tag_table()

# (type index, value id) per tag global index, for the token-level executor
_TAG_TYPE_VALUE = tuple((PROPERTY_INDEX[t.ptype], t.value_id) for t in _TAG_BY_INDEX)


def token_id_to_tag(token_id: int) -> TagToken:
    idx = token_id - TAG_ID_BASE
    if not 0 <= idx < TOTAL_TAGS:
        raise OrderDomainError(f"token id {token_id} is not a tag")
    return _TAG_BY_INDEX[idx]


def is_tag_token_id(token_id: int) -> bool:
    return TAG_ID_BASE <= token_id < VOCAB_SIZE


def token_id_to_text(token_id: int) -> str:
    if token_id in FUNCTION_TOKEN_NAMES:
        return FUNCTION_TOKEN_NAMES[token_id]
    return token_id_to_tag(token_id).to_text()


class ActionKind(Enum):
    CREATE = "create"
    MODIFY = "modify"

    @property
    def token_id(self) -> int:
        return TOKEN_CREATE if self is ActionKind.CREATE else TOKEN_MODIFY


@dataclass(frozen=True)
class Action:
    """One create/modify step: a product key plus optional parameter tags.

    Create keys must name a concrete product; modify keys may be the
    catch-all product.  Parameters never include a product and carry at
    most one tag per property type.
    """

    kind: ActionKind
    key: TagToken
    params: tuple[TagToken, ...] = ()

    def __post_init__(self) -> None:
        if self.key.ptype is not PropertyType.PRODUCT:
            raise OrderDomainError("action key must be a product tag")
        if self.kind is ActionKind.CREATE and self.key.is_all_product:
            raise OrderDomainError("create key cannot be the catch-all product")
        seen: set[PropertyType] = set()
        for tag in self.params:
            if tag.ptype is PropertyType.PRODUCT:
                raise OrderDomainError("parameters cannot contain product tags")
            if tag.ptype in seen:
                raise OrderDomainError(f"duplicate {tag.ptype.value} parameter")
            seen.add(tag.ptype)

    def token_ids(self) -> tuple[int, ...]:
        return (self.kind.token_id, tag_to_token_id(self.key)) + tuple(
            tag_to_token_id(t) for t in self.params
        )

    def to_text(self) -> str:
        parts = [self.kind.value, self.key.to_text()] + [t.to_text() for t in self.params]
        return "(" + " ".join(parts) + ")"


@dataclass(frozen=True)
class Program:
    """An ordered action sequence; token form appends a final EOS."""

    actions: tuple[Action, ...] = ()

    def to_token_ids(self) -> tuple[int, ...]:
        out: list[int] = []
        for action in self.actions:
            out.extend(action.token_ids())
        out.append(TOKEN_EOS)
        return tuple(out)

    @classmethod
    def from_token_ids(cls, token_ids: Sequence[int]) -> "Program":
        tokens = list(token_ids)
        if not tokens or tokens[-1] != TOKEN_EOS:
            raise ProgramSyntaxError("program must end with EOS")
        if TOKEN_EOS in tokens[:-1]:
            raise ProgramSyntaxError("EOS inside program body")
        body = tokens[:-1]
        actions: list[Action] = []
        i = 0
        while i < len(body):
            head = body[i]
            if head not in (TOKEN_CREATE, TOKEN_MODIFY):
                raise ProgramSyntaxError(f"expected CREATE/MODIFY at position {i}")
            kind = ActionKind.CREATE if head == TOKEN_CREATE else ActionKind.MODIFY
            i += 1
            if i >= len(body) or not is_tag_token_id(body[i]):
                raise ProgramSyntaxError(f"missing key tag at position {i}")
            key = token_id_to_tag(body[i])
            i += 1
            params: list[TagToken] = []
            while i < len(body) and is_tag_token_id(body[i]):
                params.append(token_id_to_tag(body[i]))
                i += 1
            try:
                actions.append(Action(kind, key, tuple(params)))
            except OrderDomainError as exc:
                raise ProgramSyntaxError(str(exc)) from exc
        return cls(tuple(actions))

    def to_text(self) -> str:
        return "".join(action.to_text() for action in self.actions)

    @classmethod
    def from_text(cls, text: str) -> "Program":
        stripped = text.strip()
        if stripped and not re.fullmatch(r"(\([^()]*\)\s*)+", stripped):
            raise ProgramSyntaxError(f"cannot parse program text {text!r}")
        actions: list[Action] = []
        for group in re.findall(r"\(([^()]*)\)", stripped):
            words = group.split()
            if not words:
                raise ProgramSyntaxError("empty action")
            try:
                kind = ActionKind(words[0])
            except ValueError as exc:
                raise ProgramSyntaxError(f"unknown action kind {words[0]!r}") from exc
            if len(words) < 2:
                raise ProgramSyntaxError("action is missing its key tag")
            key = TagToken.from_text(words[1])
            params = tuple(TagToken.from_text(w) for w in words[2:])
            try:
                actions.append(Action(kind, key, params))
            except OrderDomainError as exc:
                raise ProgramSyntaxError(str(exc)) from exc
        return cls(tuple(actions))

    def __len__(self) -> int:
        return len(self.actions)


_SLOT_FIELDS = ("product", "number", "cup_size", "flavor", "hot", "location", "comment")


@dataclass(frozen=True)
class OrderItem:
    """One ordered item; product is mandatory, number defaults to one, the
    remaining five slots default to unset."""

    product: int
    number: int = NUMBER_ONE_ID
    cup_size: int | None = None
    flavor: int | None = None
    hot: int | None = None
    location: int | None = None
    comment: int | None = None

    def slots(self) -> tuple[int | None, ...]:
        return (self.product, self.number, self.cup_size, self.flavor,
                self.hot, self.location, self.comment)

    def sort_key(self) -> tuple[int, ...]:
        return tuple(-1 if v is None else v for v in self.slots())

    def with_slot(self, ptype: PropertyType, value_id: int) -> "OrderItem":
        updates = {_SLOT_FIELDS[PROPERTY_INDEX[ptype]]: value_id}
        return OrderItem(**{**self.as_dict(), **updates})

    def as_dict(self) -> dict[str, int | None]:
        return {name: value for name, value in zip(_SLOT_FIELDS, self.slots())}

    def to_text(self) -> str:
        parts = []
        for ptype, value in zip(PROPERTY_ORDER, self.slots()):
            if value is not None:
                parts.append(f"{ptype.value}={PROPERTY_VALUES[ptype][value]}")
        return " ".join(parts)

    @classmethod
    def from_text(cls, text: str) -> "OrderItem":
        values: dict[str, int] = {}
        for part in text.split():
            try:
                type_name, value_name = part.split("=", 1)
                ptype = PropertyType(type_name)
                values[_SLOT_FIELDS[PROPERTY_INDEX[ptype]]] = PROPERTY_VALUES[ptype].index(value_name)
            except (ValueError, KeyError) as exc:
                raise OrderDomainError(f"bad item field {part!r}") from exc
        if "product" not in values:
            raise OrderDomainError(f"item text lacks a product: {text!r}")
        return cls(**values)


def item_mismatch(a: OrderItem, b: OrderItem) -> int:
    """Number of property slots (0..7) on which two items differ."""
    return sum(1 for x, y in zip(a.slots(), b.slots()) if x != y)


@dataclass(frozen=True)
class Denotation:
    """A multiset of ordered items, stored in canonical sorted order."""

    items: tuple[OrderItem, ...] = ()

    @classmethod
    def of(cls, items: Iterable[OrderItem]) -> "Denotation":
        return cls(tuple(sorted(items, key=OrderItem.sort_key)))

    def to_lines(self) -> tuple[str, ...]:
        return tuple(item.to_text() for item in self.items)

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Denotation":
        return cls.of(OrderItem.from_text(line) for line in lines)

    def __len__(self) -> int:
        return len(self.items)


UNMATCHED_ITEM_COST = N_PROPERTY_TYPES


def denotation_distance(a: Denotation, b: Denotation) -> int:
    """Minimum-cost matching distance between two item multisets.

    Matched pairs cost their slot mismatch count; unmatched items cost all
    seven slots.  Symmetric, and zero exactly on multiset equality.
    """
    return _distance_slots([item.slots() for item in a.items],
                           [item.slots() for item in b.items])


@dataclass(frozen=True)
class RewardValue:
    """Denotation-match reward: a completion flag minus the match distance."""

    distance: int

    def __post_init__(self) -> None:
        if self.distance < 0:
            raise OrderDomainError("distance must be nonnegative")

    @property
    def completion(self) -> int:
        return 1 if self.distance == 0 else 0

    @property
    def raw(self) -> float:
        return float(self.completion - self.distance)


def execute(program: Program) -> Denotation:
    """Run a program: creates append items, modifies overwrite slots on
    every matching item (catch-all key matches all items).  A modify that
    matches nothing is a no-op."""
    items: list[OrderItem] = []
    for action in program.actions:
        if action.kind is ActionKind.CREATE:
            item = OrderItem(product=action.key.value_id)
            for tag in action.params:
                item = item.with_slot(tag.ptype, tag.value_id)
            items.append(item)
        else:
            for i, item in enumerate(items):
                if action.key.is_all_product or item.product == action.key.value_id:
                    for tag in action.params:
                        item = item.with_slot(tag.ptype, tag.value_id)
                    items[i] = item
    return Denotation.of(items)


_PRODUCT_IDX = PROPERTY_INDEX[PropertyType.PRODUCT]
_NUMBER_IDX = PROPERTY_INDEX[PropertyType.NUMBER]


def _execute_token_slots(token_ids: Sequence[int]) -> list[list[int | None]]:
    """Parse and run a token-form program in one pass, yielding raw item
    slot lists (hot path for search rewards; semantics match `execute`)."""
    tokens = list(token_ids)
    if not tokens or tokens[-1] != TOKEN_EOS or TOKEN_EOS in tokens[:-1]:
        raise ProgramSyntaxError("program must end with exactly one EOS")
    items: list[list[int | None]] = []
    i = 0
    body = tokens[:-1]
    while i < len(body):
        head = body[i]
        if head not in (TOKEN_CREATE, TOKEN_MODIFY):
            raise ProgramSyntaxError(f"expected CREATE/MODIFY at position {i}")
        i += 1
        if i >= len(body) or not TAG_ID_BASE <= body[i] < VOCAB_SIZE:
            raise ProgramSyntaxError(f"missing key tag at position {i}")
        key_type, key_value = _TAG_TYPE_VALUE[body[i] - TAG_ID_BASE]
        if key_type != _PRODUCT_IDX:
            raise ProgramSyntaxError("action key must be a product tag")
        if head == TOKEN_CREATE and key_value == ALL_PRODUCT_ID:
            raise ProgramSyntaxError("create key cannot be the catch-all product")
        i += 1
        params: list[tuple[int, int]] = []
        seen_types = 0
        while i < len(body) and TAG_ID_BASE <= body[i] < VOCAB_SIZE:
            type_idx, value_id = _TAG_TYPE_VALUE[body[i] - TAG_ID_BASE]
            if type_idx == _PRODUCT_IDX:
                raise ProgramSyntaxError("parameters cannot contain product tags")
            bit = 1 << type_idx
            if seen_types & bit:
                raise ProgramSyntaxError("duplicate parameter type")
            seen_types |= bit
            params.append((type_idx, value_id))
            i += 1
        if head == TOKEN_CREATE:
            item: list[int | None] = [key_value, NUMBER_ONE_ID, None, None, None, None, None]
            for type_idx, value_id in params:
                item[type_idx] = value_id
            items.append(item)
        else:
            for item in items:
                if key_value == ALL_PRODUCT_ID or item[_PRODUCT_IDX] == key_value:
                    for type_idx, value_id in params:
                        item[type_idx] = value_id
    return items


def execute_tokens(token_ids: Sequence[int]) -> Denotation:
    return Denotation.of(OrderItem(*item) for item in _execute_token_slots(token_ids))


def _distance_slots(slots_a: Sequence[tuple], slots_b: Sequence[tuple]) -> int:
    na, nb = len(slots_a), len(slots_b)
    n = max(na, nb)
    if n == 0:
        return 0
    if n == 1:
        if na == nb:
            return sum(1 for x, y in zip(slots_a[0], slots_b[0]) if x != y)
        return UNMATCHED_ITEM_COST
    cost = np.full((n, n), UNMATCHED_ITEM_COST, dtype=np.int64)
    cost[na:, nb:] = 0
    for i, sa in enumerate(slots_a):
        row = cost[i]
        for j, sb in enumerate(slots_b):
            row[j] = sum(1 for x, y in zip(sa, sb) if x != y)
    if n == 2:
        return int(min(cost[0, 0] + cost[1, 1], cost[0, 1] + cost[1, 0]))
    rows, cols = linear_sum_assignment(cost)
    return int(cost[rows, cols].sum())


def reward(program: Program, target: Denotation) -> RewardValue:
    return RewardValue(distance=denotation_distance(execute(program), target))


def reward_for_tokens(token_ids: Sequence[int], target: Denotation) -> RewardValue:
    produced = [tuple(item) for item in _execute_token_slots(token_ids)]
    target_slots = [item.slots() for item in target.items]
    return RewardValue(distance=_distance_slots(produced, target_slots))


def rescale_rewards(rewards: Sequence["RewardValue | float"]) -> list[float]:
    """Rank-rescale rewards: every value tied at the maximum becomes 1.0,
    everything else 0.0."""
    if len(rewards) == 0:
        raise ValueError("cannot rescale an empty reward list")
    raws = [r.raw if isinstance(r, RewardValue) else float(r) for r in rewards]
    top = max(raws)
    return [1.0 if raw == top else 0.0 for raw in raws]
