import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from turnslu.grammar import (
    CandidateSet,
    INITIAL_STATE,
    MAX_PROGRAM_TOKENS,
    advance,
    check_prefix,
    fold_prefix,
    legal_matrix,
    valid_continuations,
)
from turnslu.orders import (
    Program,
    ProgramSyntaxError,
    TOKEN_CREATE,
    TOKEN_EOS,
    TOKEN_MODIFY,
    TagToken,
    tag_to_token_id,
)


def tid(text):
    return tag_to_token_id(TagToken.from_text(text))


AMERICANO = tid("product:americano")
LATTE = tid("product:latte")
ALL = tid("product:all")
TWO = tid("number:two")
BIG = tid("cup_size:big")
SMALL = tid("cup_size:small")


class TestCheckPrefix:
    def test_plain_create_prefix(self):
        assert check_prefix([TOKEN_CREATE, AMERICANO, TWO])

    def test_first_token_must_open_an_action(self):
        assert not check_prefix([BIG])
        assert not check_prefix([TOKEN_EOS])
        assert check_prefix([TOKEN_CREATE])
        assert check_prefix([TOKEN_MODIFY])

    def test_duplicate_property_type_is_dead(self):
        assert not check_prefix([TOKEN_CREATE, LATTE, BIG, SMALL])

    def test_modify_all_allowed_create_all_dead(self):
        assert check_prefix([TOKEN_MODIFY, ALL])
        assert not check_prefix([TOKEN_CREATE, ALL])

    def test_product_cannot_be_a_param(self):
        assert not check_prefix([TOKEN_CREATE, AMERICANO, LATTE])

    def test_empty_prefix_valid(self):
        assert check_prefix([])

    def test_complete_program_valid_and_closed(self):
        tokens = [TOKEN_CREATE, AMERICANO, TOKEN_EOS]
        assert check_prefix(tokens)
        assert not check_prefix(tokens + [TOKEN_CREATE])

    def test_token_budget(self):
        # 24-token budget: a new action shortly before the limit is dead
        tokens = []
        for _ in range(7):
            tokens += [TOKEN_CREATE, AMERICANO, TWO]  # 21 tokens
        assert check_prefix(tokens, max_tokens=24)
        assert check_prefix(tokens + [TOKEN_CREATE], max_tokens=24)      # 22 + key + eos = 24
        assert not check_prefix(tokens + [TOKEN_CREATE, AMERICANO, TWO], max_tokens=24)

    def test_max_len_blocks_eosless_prefixes(self):
        assert not check_prefix([TOKEN_CREATE, AMERICANO, TWO, BIG], max_tokens=4)
        assert check_prefix([TOKEN_CREATE, AMERICANO, TWO, BIG], max_tokens=5)


def exhaustive_can_complete(prefix, pool, max_tokens):
    """Independent oracle: does any token extension of `prefix` (ending in
    EOS, within the budget, drawing from funcs + pool) parse as a Program
    with at least one action?  (The bare-EOS empty program is executable
    but the decoder grammar never generates it.)"""
    universe = [TOKEN_CREATE, TOKEN_MODIFY, TOKEN_EOS] + list(pool)

    def parses(tokens):
        try:
            return len(Program.from_token_ids(tokens).actions) >= 1
        except ProgramSyntaxError:
            return False

    frontier = [tuple(prefix)]
    while frontier:
        sequence = frontier.pop()
        if sequence and sequence[-1] == TOKEN_EOS:
            if len(sequence) <= max_tokens and parses(sequence):
                return True
            continue
        if TOKEN_EOS in sequence:
            continue
        if len(sequence) >= max_tokens:
            continue
        for token in universe:
            frontier.append(sequence + (token,))
    return False


class TestAgainstExhaustiveOracle:
    def test_continuations_match_exhaustive_search(self):
        # every prefix of length <= 6 over a two-product pool
        pool = [AMERICANO, LATTE]
        universe = [TOKEN_CREATE, TOKEN_MODIFY, TOKEN_EOS] + pool
        max_tokens = 7
        count = 0
        for length in range(0, 6):
            for prefix in itertools.product(universe, repeat=length):
                if fold_prefix(prefix, max_tokens) is None:
                    continue
                count += 1
                got = valid_continuations(prefix, pool, max_tokens)
                want = {t for t in universe
                        if exhaustive_can_complete(list(prefix) + [t], pool, max_tokens)}
                assert got == want, prefix
        assert count > 50

    def test_check_prefix_matches_exhaustive(self):
        pool = [AMERICANO, BIG]
        universe = [TOKEN_CREATE, TOKEN_MODIFY, TOKEN_EOS] + pool
        max_tokens = 6
        for length in range(0, 5):
            for prefix in itertools.product(universe, repeat=length):
                want = (exhaustive_can_complete(prefix, pool, max_tokens)
                        or (len(prefix) <= max_tokens and prefix and prefix[-1] == TOKEN_EOS
                            and _parses(prefix)))
                assert check_prefix(prefix, max_tokens) == want, prefix


def _parses(tokens):
    try:
        return len(Program.from_token_ids(tokens).actions) >= 1
    except ProgramSyntaxError:
        return False


class TestValidContinuations:
    def test_after_create_only_concrete_products(self):
        assert valid_continuations([TOKEN_CREATE], [AMERICANO]) == {AMERICANO}
        assert valid_continuations([TOKEN_CREATE], [AMERICANO, ALL, BIG]) == {AMERICANO}

    def test_action_boundary_offers_funcs_eos_and_params(self):
        got = valid_continuations([TOKEN_CREATE, AMERICANO], [AMERICANO, BIG, TWO])
        assert got == {TOKEN_CREATE, TOKEN_MODIFY, TOKEN_EOS, BIG, TWO}

    def test_dead_prefix_raises(self):
        with pytest.raises(ValueError):
            valid_continuations([BIG], [BIG])

    def test_used_type_excluded(self):
        got = valid_continuations([TOKEN_CREATE, AMERICANO, BIG], [AMERICANO, BIG, SMALL, TWO])
        assert SMALL not in got and BIG not in got and TWO in got


class TestLegalMatrix:
    def test_matches_scalar_flags(self):
        pool = [AMERICANO, LATTE, ALL, TWO, BIG, SMALL]
        cands = CandidateSet(pool)
        prefixes = [
            [],
            [TOKEN_CREATE],
            [TOKEN_MODIFY],
            [TOKEN_CREATE, AMERICANO],
            [TOKEN_CREATE, AMERICANO, BIG],
            [TOKEN_MODIFY, ALL, TWO],
            [TOKEN_CREATE, AMERICANO, TOKEN_EOS],
            [TOKEN_CREATE, AMERICANO] * 7,
        ]
        states = [fold_prefix(p, 24) for p in prefixes]
        states = [s for s in states if s is not None]
        matrix = legal_matrix(states, cands, 24)
        for row, state in zip(matrix, states):
            assert (row == cands.legal_flags(state, 24)).all()

    @given(st.lists(st.integers(0, 6), min_size=0, max_size=10))
    @settings(max_examples=300)
    def test_matrix_agrees_on_random_prefixes(self, picks):
        pool = [AMERICANO, LATTE, ALL, TWO, BIG]
        universe = [TOKEN_CREATE, TOKEN_MODIFY, TOKEN_EOS] + pool
        prefix = [universe[i % len(universe)] for i in picks]
        state = fold_prefix(prefix, 12)
        if state is None:
            return
        cands = CandidateSet(pool)
        assert (legal_matrix([state], cands, 12)[0] == cands.legal_flags(state, 12)).all()


class TestAdvanceConsistency:
    def test_advance_agrees_with_flags(self):
        pool = [AMERICANO, LATTE, ALL, TWO, BIG]
        cands = CandidateSet(pool)
        rng = np.random.default_rng(3)
        for _ in range(300):
            # random walk along legal tokens, checking flags == advance
            state = INITIAL_STATE
            for _ in range(10):
                flags = cands.legal_flags(state, 12)
                for col, token in enumerate(cands.ids):
                    assert flags[col] == (advance(state, token, 12) is not None)
                legal_cols = np.flatnonzero(flags)
                if len(legal_cols) == 0:
                    break
                col = int(legal_cols[rng.integers(len(legal_cols))])
                state = advance(state, cands.ids[col], 12)
