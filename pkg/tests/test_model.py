import numpy as np
import pytest

from turnslu import grammar
from turnslu.model import (
    Adam,
    DeadPrefixError,
    DecoderContext,
    ModelDims,
    ModelParams,
    TurnScorer,
    clip_global_norm,
    decode_step,
    encode,
    gradients,
    init_params,
    load_params,
    param_shapes,
    program_logprob,
    save_params,
    _lstm_scan,
)
from turnslu.orders import (
    Program,
    TOKEN_CREATE,
    TOKEN_EOS,
    TagToken,
    tag_to_token_id,
)

SMALL = ModelDims(enc_hidden=4, dec_hidden=6)


def tags_of(*texts):
    return [TagToken.from_text(t) for t in texts]


BASIC_TAGS = tags_of("number:two", "product:americano", "cup_size:big")
BASIC_PROGRAM = Program.from_text(
    "(create product:americano number:two cup_size:big)")


class TestEncoder:
    def test_shape_contract(self):
        params = init_params(0, SMALL)
        H = encode(BASIC_TAGS, params)
        assert H.shape == (3, 8)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            encode([], init_params(0, SMALL))

    def test_zero_weights_give_zero_states(self):
        params = init_params(0, SMALL)
        for name in params.blocks:
            if name.startswith("enc_"):
                params.blocks[name][:] = 0.0
        # zero pre-activations: gates are constant, the cell update stays at
        # the all-zero fixed point, so every state is zero
        H = encode(BASIC_TAGS, params)
        assert np.allclose(H, 0.0)

    def test_backward_half_is_a_reversed_forward_scan(self):
        params = init_params(3, SMALL)
        X = params["tag_emb"][[t.global_index for t in BASIC_TAGS]]
        H = encode(BASIC_TAGS, params)
        rev_scan, _, _ = _lstm_scan(X[::-1], params["enc_b_Wx"],
                                    params["enc_b_Wh"], params["enc_b_b"])
        assert np.allclose(H[:, 4:], rev_scan[::-1])

    def test_deterministic(self):
        params = init_params(5, SMALL)
        assert np.array_equal(encode(BASIC_TAGS, params), encode(BASIC_TAGS, params))


class TestDecodeStep:
    def test_masked_distribution_sums_to_one(self):
        params = init_params(0, SMALL)
        ctx = DecoderContext(tag_ids=tuple(tag_to_token_id(t) for t in BASIC_TAGS),
                             prefix=(TOKEN_CREATE,))
        dist = decode_step(ctx, params)
        assert dist.probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert dist.mixture.sum() == pytest.approx(1.0, abs=1e-9)

    def test_masking_zeroes_grammar_rejected_tokens(self):
        params = init_params(0, SMALL)
        tag_ids = tuple(tag_to_token_id(t) for t in BASIC_TAGS)
        ctx = DecoderContext(tag_ids=tag_ids, prefix=(TOKEN_CREATE,))
        dist = decode_step(ctx, params)
        legal = grammar.valid_continuations((TOKEN_CREATE,), tag_ids)
        for token, prob in zip(dist.candidate_ids, dist.probs):
            if token not in legal:
                assert prob == 0.0
            else:
                assert prob > 0.0

    def test_dead_prefix_raises(self):
        params = init_params(0, SMALL)
        tag_ids = (tag_to_token_id(TagToken.make("cup_size", "big")),)
        # CREATE requires a product key; the pool has none
        with pytest.raises(DeadPrefixError):
            decode_step(DecoderContext(tag_ids=tag_ids, prefix=(TOKEN_CREATE,)), params)

    def test_duplicate_tag_accumulates_attention(self):
        # mixture arithmetic: p_gen=0 and alpha (.3,.2,.5) on positions 1,3
        # holding the same tag gives that tag probability .8
        alpha = np.array([0.3, 0.2, 0.5])
        M = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        p_gen = 0.0
        copy_mass = (1 - p_gen) * (alpha @ M)
        assert copy_mass[0] == pytest.approx(0.8)

    def test_pure_generation_mixture(self):
        vocab = np.array([0.2, 0.5, 0.3])
        p_gen = 1.0
        mixture = np.concatenate([p_gen * vocab, (1 - p_gen) * np.array([0.7, 0.3])])
        assert mixture[:3] == pytest.approx(vocab)
        assert mixture[3:].sum() == 0.0

    def test_distribution_sums_over_random_params(self):
        rng = np.random.default_rng(0)
        tag_ids = tuple(tag_to_token_id(t) for t in BASIC_TAGS)
        for trial in range(50):
            params = init_params(int(rng.integers(1 << 31)), SMALL)
            ctx = DecoderContext(tag_ids=tag_ids,
                                 prefix=(TOKEN_CREATE, tag_ids[1]))
            dist = decode_step(ctx, params)
            assert dist.mixture.sum() == pytest.approx(1.0, abs=1e-9)


class TestLogprob:
    def test_nonpositive(self):
        params = init_params(0, SMALL)
        assert program_logprob(BASIC_PROGRAM, BASIC_TAGS, params) <= 0.0

    def test_invariant_under_reserialization(self):
        params = init_params(0, SMALL)
        tokens = BASIC_PROGRAM.to_token_ids()
        rebuilt = Program.from_token_ids(tokens)
        assert program_logprob(rebuilt, BASIC_TAGS, params) == pytest.approx(
            program_logprob(tokens, BASIC_TAGS, params))

    def test_copy_outside_input_rejected(self):
        params = init_params(0, SMALL)
        program = Program.from_text("(create product:latte)")
        with pytest.raises(ValueError):
            program_logprob(program, BASIC_TAGS, params)

    def test_unmasked_eos_only_program(self):
        # without the grammar mask, the lone-EOS program scores exactly the
        # first-step EOS probability
        params = init_params(0, SMALL)
        lp = program_logprob((TOKEN_EOS,), BASIC_TAGS, params, masked=False)
        scorer = TurnScorer(BASIC_TAGS, params)
        cache = scorer.rows(np.array([list(scorer.initial_window())]),
                            scorer.initial_bow()[None, :])
        eos_col = scorer.cands.col_of[TOKEN_EOS]
        assert lp == pytest.approx(float(np.log(cache.P[0, eos_col])))

    def test_masked_eos_only_program_is_dead(self):
        params = init_params(0, SMALL)
        with pytest.raises(DeadPrefixError):
            program_logprob((TOKEN_EOS,), BASIC_TAGS, params)

    def test_total_mass_is_one_at_tiny_scale(self):
        # masked probabilities renormalize, so summing exp(logprob) over the
        # whole (tiny) program space must give 1
        params = init_params(2, SMALL)
        tags = tags_of("product:americano")
        space = _enumerate_programs(tags, max_tokens=5)
        scorer = TurnScorer(tags, params, max_tokens=5)
        logprobs = scorer.sequence_logprobs([list(p) for p in space])
        assert np.exp(logprobs).sum() == pytest.approx(1.0, abs=1e-9)


def _enumerate_programs(tags, max_tokens):
    pool = [tag_to_token_id(t) for t in tags]
    cands = grammar.CandidateSet(pool)
    out = []

    def rec(prefix, state):
        flags = cands.legal_flags(state, max_tokens)
        for col in np.flatnonzero(flags):
            token = cands.ids[col]
            child = prefix + (token,)
            if token == TOKEN_EOS:
                out.append(child)
            else:
                rec(child, grammar.advance(state, token, max_tokens))

    rec((), grammar.INITIAL_STATE)
    return out


def finite_difference_check(params, fn, analytic, rng, coords_per_block=6,
                            h=1e-5, tol=1e-4):
    worst = 0.0
    for name, block in params.blocks.items():
        flat = block.reshape(-1)
        idxs = rng.choice(flat.size, size=min(coords_per_block, flat.size),
                          replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            up = fn()
            flat[i] = orig - h
            down = fn()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            an = analytic[name].reshape(-1)[i]
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
            worst = max(worst, rel)
            assert rel < tol, (name, i, an, fd)
    return worst


class TestGradients:
    def test_zero_weights_zero_gradient(self):
        params = init_params(0, SMALL)
        grads = gradients([(BASIC_PROGRAM, 0.0)], BASIC_TAGS, params)
        assert all(np.allclose(g, 0.0) for g in grads.values())

    def test_linearity(self):
        params = init_params(0, SMALL)
        p1 = BASIC_PROGRAM
        p2 = Program.from_text("(modify product:americano cup_size:big)")
        g1 = gradients([(p1, 1.0)], BASIC_TAGS, params)
        g2 = gradients([(p2, 1.0)], BASIC_TAGS, params)
        combined = gradients([(p1, 0.3), (p2, 0.6)], BASIC_TAGS, params)
        for name in combined:
            assert np.allclose(combined[name], 0.3 * g1[name] + 0.6 * g2[name])

    def test_matches_finite_differences_small_dims(self):
        rng = np.random.default_rng(0)
        params = init_params(1, SMALL)
        weighted = [(BASIC_PROGRAM.to_token_ids(), 0.7),
                    (Program.from_text("(create product:americano)").to_token_ids(), 0.3)]
        analytic = gradients(weighted, BASIC_TAGS, params)

        def objective():
            scorer = TurnScorer(BASIC_TAGS, params)
            lps = scorer.sequence_logprobs([t for t, _ in weighted])
            return float(sum(w * lp for (_, w), lp in zip(weighted, lps)))

        finite_difference_check(params, objective, analytic, rng)

    def test_unmasked_gradients_match_finite_differences(self):
        rng = np.random.default_rng(4)
        params = init_params(5, SMALL)
        weighted = [(BASIC_PROGRAM.to_token_ids(), 1.0)]
        analytic = gradients(weighted, BASIC_TAGS, params, masked=False)

        def objective():
            scorer = TurnScorer(BASIC_TAGS, params)
            return float(scorer.sequence_logprobs([weighted[0][0]], masked=False)[0])

        finite_difference_check(params, objective, analytic, rng)


class TestInitAndCheckpoint:
    def test_same_seed_bit_identical(self):
        a, b = init_params(9, SMALL), init_params(9, SMALL)
        assert all(np.array_equal(a[k], b[k]) for k in a.blocks)

    def test_different_seeds_differ(self):
        a, b = init_params(1, SMALL), init_params(2, SMALL)
        assert any(not np.array_equal(a[k], b[k])
                   for k in a.blocks if k != "tag_emb")

    def test_tag_embedding_block_is_the_structured_init(self):
        from turnslu.lexicon import init_tag_embeddings
        params = init_params(0, SMALL)
        assert np.array_equal(params["tag_emb"], init_tag_embeddings())

    def test_other_blocks_within_uniform_range(self):
        params = init_params(0, SMALL)
        for name, block in params.blocks.items():
            if name == "tag_emb":
                continue
            assert block.min() >= -0.08 and block.max() <= 0.08

    def test_checkpoint_round_trip(self, tmp_path):
        params = init_params(3, SMALL)
        path = tmp_path / "model.npz"
        save_params(path, params)
        loaded = load_params(path)
        assert loaded.dims == params.dims
        assert all(np.array_equal(loaded[k], params[k]) for k in params.blocks)


class TestOptimizer:
    def test_clip_global_norm(self):
        grads = {"a": np.full(4, 10.0), "b": np.full(1, 10.0)}
        norm = clip_global_norm(grads, 5.0)
        assert norm == pytest.approx(10.0 * np.sqrt(5))
        total = sum((g * g).sum() for g in grads.values())
        assert np.sqrt(total) == pytest.approx(5.0)

    def test_parameters_stay_finite_under_random_updates(self):
        params = init_params(0, SMALL)
        adam = Adam(params, lr=1e-3, clip_norm=5.0)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            grads = {name: rng.normal(scale=100.0, size=block.shape)
                     for name, block in params.blocks.items()}
            adam.step(grads)
        assert params.all_finite()

    def test_shapes_fixed_after_construction(self):
        params = init_params(0, SMALL)
        shapes = param_shapes(SMALL)
        for name, block in params.blocks.items():
            assert block.shape == shapes[name]
