"""Rule-based pipelined interpreter for tag sequences.

Mirrors a deployed-system design: collapse contiguous repeated tags, then
run a deterministic shift-reduce style pass that segments the tag stream
into item mentions (new mention at a number tag, a second product, or the
catch-all product) and decides create vs modify per mention.  Property
mentions split under a product distribute onto each nested sibling; a
trailing product-keyed mention with modifier tags becomes a modification.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .orders import (
    Action,
    ActionKind,
    PROPERTY_ORDER,
    Program,
    PropertyType,
    TagToken,
)


def remove_disfluency(tags: Sequence[TagToken]) -> list[TagToken]:
    """Collapse runs of identical consecutive tags to one occurrence."""
    out: list[TagToken] = []
    for tag in tags:
        if not out or out[-1] != tag:
            out.append(tag)
    return out


@dataclass
class _Group:
    """One contiguous mention: optional product, optional number, props."""

    tags: list[TagToken] = field(default_factory=list)

    @property
    def product(self) -> TagToken | None:
        for tag in self.tags:
            if tag.ptype is PropertyType.PRODUCT:
                return tag
        return None

    @property
    def number(self) -> TagToken | None:
        for tag in self.tags:
            if tag.ptype is PropertyType.NUMBER:
                return tag
        return None

    def props(self, include_number: bool = True) -> list[TagToken]:
        """Non-product tags, first occurrence per type."""
        seen: set[PropertyType] = set()
        out: list[TagToken] = []
        for tag in self.tags:
            if tag.ptype is PropertyType.PRODUCT or tag.ptype in seen:
                continue
            if tag.ptype is PropertyType.NUMBER and not include_number:
                continue
            seen.add(tag.ptype)
            out.append(tag)
        return out


def _segment(tags: Sequence[TagToken]) -> list[_Group]:
    groups: list[_Group] = []
    cur: _Group | None = None
    for tag in tags:
        boundary = cur is None
        if cur is not None:
            if tag.ptype is PropertyType.NUMBER and (cur.product or cur.number):
                boundary = True
            elif tag.ptype is PropertyType.PRODUCT and (tag.is_all_product or cur.product):
                boundary = True
        if boundary:
            cur = _Group()
            groups.append(cur)
        cur.tags.append(tag)
    return groups


_CANONICAL = {ptype: i for i, ptype in enumerate(PROPERTY_ORDER)}


def _canonical(params: list[TagToken]) -> tuple[TagToken, ...]:
    seen: set[PropertyType] = set()
    unique = []
    for tag in params:
        if tag.ptype not in seen:
            seen.add(tag.ptype)
            unique.append(tag)
    return tuple(sorted(unique, key=lambda t: _CANONICAL[t.ptype]))


def pipeline_parse(tags: Sequence[TagToken]) -> Program:
    """Deterministic rule pass from a tag sequence to a program."""
    groups = _segment(list(tags))

    # Leading mentions with no product fold into the first product mention.
    while len(groups) >= 2 and groups[0].product is None and groups[1].product is not None:
        groups[1].tags = groups[0].tags + groups[1].tags
        groups.pop(0)

    actions: list[Action] = []
    created: set[int] = set()
    i = 0
    while i < len(groups):
        group = groups[i]
        product = group.product
        if product is None:
            # orphan mention with nothing to attach to
            i += 1
            continue
        if product.is_all_product:
            actions.append(Action(ActionKind.MODIFY, product,
                                  _canonical(group.props())))
            i += 1
            continue

        # gather trailing product-less mentions (nested structure)
        j = i + 1
        children: list[_Group] = []
        while j < len(groups) and groups[j].product is None:
            children.append(groups[j])
            j += 1

        if len(children) >= 2:
            shared = group.props(include_number=False)
            for child in children:
                params = _canonical(child.props() + shared)
                actions.append(Action(ActionKind.CREATE, product, params))
                created.add(product.value_id)
            i = j
            continue
        if len(children) == 1:
            # a single split-off mention continues the same item
            group = _Group(tags=group.tags + children[0].tags)
            i = j
        else:
            i += 1

        if product.value_id in created and group.number is None:
            params = _canonical(group.props())
            actions.append(Action(ActionKind.MODIFY, product, params))
        else:
            params = _canonical(group.props())
            actions.append(Action(ActionKind.CREATE, product, params))
            created.add(product.value_id)

    return Program(tuple(actions))


def parse_with_disfluency_removal(tags: Sequence[TagToken]) -> Program:
    return pipeline_parse(remove_disfluency(tags))
