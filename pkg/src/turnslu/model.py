"""Neural program scorer with hand-written backpropagation.

A bidirectional LSTM encodes the tag sequence; a feedforward decoder reads
the last five decoded tokens plus a bag-of-words vector of everything
decoded so far, attends over the encoder states, and emits a mixture
distribution: a generation gate times a softmax over the function
vocabulary (CREATE/MODIFY/EOS), plus one minus the gate times attention
mass copied onto the input tags.  Tokens rejected by the prefix grammar are
masked out and the remainder renormalized.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from . import grammar
from .lexicon import init_tag_embeddings
from .orders import (
    N_PROPERTY_TYPES,
    TAG_ID_BASE,
    TOKEN_EOS,
    TOTAL_TAGS,
    VOCAB_SIZE,
    Program,
    TagToken,
    is_tag_token_id,
    tag_to_token_id,
)

PAD_TOKEN = VOCAB_SIZE  # window padding id; embeds to zeros

CHECKPOINT_FORMAT = 1


class DeadPrefixError(Exception):
    """Every candidate token was masked out for a prefix."""


@dataclass(frozen=True)
class ModelDims:
    """All size hyperparameters; defaults are the trained configuration."""

    enc_hidden: int = 30
    dec_hidden: int = 50
    func_emb: int = 12
    window: int = 5

    @property
    def tag_emb(self) -> int:
        return 1 + 2 * N_PROPERTY_TYPES

    @property
    def enc_out(self) -> int:
        return 2 * self.enc_hidden

    @property
    def slot(self) -> int:
        # One window slot holds a function embedding or a tag embedding,
        # each zero-padded into its own span.
        return self.func_emb + self.tag_emb

    @property
    def dec_in(self) -> int:
        return self.window * self.slot + VOCAB_SIZE


def param_shapes(dims: ModelDims) -> dict[str, tuple[int, ...]]:
    h, e = dims.enc_hidden, dims.tag_emb
    return {
        "tag_emb": (TOTAL_TAGS, e),
        "func_emb": (3, dims.func_emb),
        "enc_f_Wx": (e, 4 * h),
        "enc_f_Wh": (h, 4 * h),
        "enc_f_b": (4 * h,),
        "enc_b_Wx": (e, 4 * h),
        "enc_b_Wh": (h, 4 * h),
        "enc_b_b": (4 * h,),
        "W_att": (dims.dec_in, dims.enc_out),
        "w_cov": (1,),  # attention bias on positions whose tag was already decoded
        "W1": (dims.dec_in + dims.enc_out, dims.dec_hidden),
        "b1": (dims.dec_hidden,),
        "W_out": (dims.dec_hidden, 3),
        "b_out": (3,),
        "w_gen": (dims.dec_hidden,),
        "b_gen": (1,),
    }


class ModelParams:
    """All learnable parameter blocks, float64 throughout."""

    def __init__(self, dims: ModelDims, blocks: dict[str, np.ndarray]):
        expected = param_shapes(dims)
        if set(blocks) != set(expected):
            raise ValueError("parameter block names do not match the layout")
        for name, shape in expected.items():
            if blocks[name].shape != shape:
                raise ValueError(f"block {name} has shape {blocks[name].shape}, want {shape}")
        self.dims = dims
        self.blocks = {name: np.asarray(block, dtype=np.float64) for name, block in blocks.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, {k: v.copy() for k, v in self.blocks.items()})

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.blocks.items()}

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.blocks.values())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]


def init_params(seed, dims: ModelDims | None = None) -> ModelParams:
    """Tag embeddings follow the structured scheme; everything else is
    uniform in [-0.08, 0.08] from the seeded generator."""
    dims = dims or ModelDims()
    rng = np.random.default_rng(seed)
    blocks: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(dims).items():
        if name == "tag_emb":
            blocks[name] = init_tag_embeddings()
        else:
            blocks[name] = rng.uniform(-0.08, 0.08, size=shape)
    return ModelParams(dims, blocks)


def save_params(path, params: ModelParams) -> None:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "enc_hidden": params.dims.enc_hidden,
        "dec_hidden": params.dims.dec_hidden,
        "func_emb": params.dims.func_emb,
        "window": params.dims.window,
    }
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **params.blocks)


def load_params(path) -> ModelParams:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
        dims = ModelDims(enc_hidden=meta["enc_hidden"], dec_hidden=meta["dec_hidden"],
                         func_emb=meta["func_emb"], window=meta["window"])
        blocks = {name: data[name] for name in data.files if name != "__meta__"}
    return ModelParams(dims, blocks)


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

def _lstm_scan(X: np.ndarray, Wx: np.ndarray, Wh: np.ndarray, b: np.ndarray):
    """LSTM over the rows of X; returns hidden states and the caches needed
    for backpropagation through time."""
    L, _ = X.shape
    h_size = Wh.shape[0]
    XW = X @ Wx + b
    H = np.zeros((L, h_size))
    gates = np.zeros((L, 4 * h_size))
    cells = np.zeros((L, h_size))
    h = np.zeros(h_size)
    c = np.zeros(h_size)
    for t in range(L):
        z = XW[t] + h @ Wh
        i = expit(z[:h_size])
        f = expit(z[h_size:2 * h_size])
        g = np.tanh(z[2 * h_size:3 * h_size])
        o = expit(z[3 * h_size:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, :h_size] = i
        gates[t, h_size:2 * h_size] = f
        gates[t, 2 * h_size:3 * h_size] = g
        gates[t, 3 * h_size:] = o
        cells[t] = c
        H[t] = h
    return H, gates, cells


def _lstm_backward(X, H, gates, cells, Wx, Wh, dH):
    """BPTT for one direction; returns (dX, dWx, dWh, db)."""
    L, h_size = H.shape
    dZ = np.zeros((L, 4 * h_size))
    dh_next = np.zeros(h_size)
    dc_next = np.zeros(h_size)
    for t in range(L - 1, -1, -1):
        i = gates[t, :h_size]
        f = gates[t, h_size:2 * h_size]
        g = gates[t, 2 * h_size:3 * h_size]
        o = gates[t, 3 * h_size:]
        c = cells[t]
        c_prev = cells[t - 1] if t > 0 else np.zeros(h_size)
        tc = np.tanh(c)
        dh = dH[t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dZ[t, :h_size] = di * i * (1.0 - i)
        dZ[t, h_size:2 * h_size] = df * f * (1.0 - f)
        dZ[t, 2 * h_size:3 * h_size] = dg * (1.0 - g * g)
        dZ[t, 3 * h_size:] = do * o * (1.0 - o)
        dh_next = dZ[t] @ Wh.T
    H_prev = np.vstack([np.zeros((1, h_size)), H[:-1]])
    dWx = X.T @ dZ
    dWh = H_prev.T @ dZ
    db = dZ.sum(axis=0)
    dX = dZ @ Wx.T
    return dX, dWx, dWh, db


class EncoderCache:
    def __init__(self, tag_rows, X, Hf, gates_f, cells_f, Xr, Hb_rev, gates_b, cells_b, H):
        self.tag_rows = tag_rows
        self.X = X
        self.Hf, self.gates_f, self.cells_f = Hf, gates_f, cells_f
        self.Xr, self.Hb_rev, self.gates_b, self.cells_b = Xr, Hb_rev, gates_b, cells_b
        self.H = H


def _tags_to_ids(tags: Sequence["TagToken | int"]) -> list[int]:
    out = []
    for tag in tags:
        token_id = tag if isinstance(tag, int) else tag_to_token_id(tag)
        if not is_tag_token_id(token_id):
            raise ValueError(f"{tag!r} is not a tag")
        out.append(token_id)
    return out


def encode_with_cache(tags: Sequence["TagToken | int"], params: ModelParams) -> EncoderCache:
    tag_ids = _tags_to_ids(tags)
    if not tag_ids:
        raise ValueError("cannot encode an empty tag sequence")
    tag_rows = np.array([tid - TAG_ID_BASE for tid in tag_ids], dtype=np.int64)
    X = params["tag_emb"][tag_rows]
    Hf, gates_f, cells_f = _lstm_scan(X, params["enc_f_Wx"], params["enc_f_Wh"], params["enc_f_b"])
    Xr = X[::-1]
    Hb_rev, gates_b, cells_b = _lstm_scan(Xr, params["enc_b_Wx"], params["enc_b_Wh"], params["enc_b_b"])
    H = np.concatenate([Hf, Hb_rev[::-1]], axis=1)
    return EncoderCache(tag_rows, X, Hf, gates_f, cells_f, Xr, Hb_rev, gates_b, cells_b, H)


def encode(tags: Sequence["TagToken | int"], params: ModelParams) -> np.ndarray:
    """One state per input position: forward and backward halves concatenated."""
    return encode_with_cache(tags, params).H


def _encoder_backward(cache: EncoderCache, params: ModelParams, dH: np.ndarray,
                      grads: dict[str, np.ndarray]) -> None:
    h = params.dims.enc_hidden
    dHf = dH[:, :h]
    dHb = dH[:, h:][::-1]
    dXf, dWx, dWh, db = _lstm_backward(cache.X, cache.Hf, cache.gates_f, cache.cells_f,
                                       params["enc_f_Wx"], params["enc_f_Wh"], dHf)
    grads["enc_f_Wx"] += dWx
    grads["enc_f_Wh"] += dWh
    grads["enc_f_b"] += db
    dXb_rev, dWx, dWh, db = _lstm_backward(cache.Xr, cache.Hb_rev, cache.gates_b, cache.cells_b,
                                           params["enc_b_Wx"], params["enc_b_Wh"], dHb)
    grads["enc_b_Wx"] += dWx
    grads["enc_b_Wh"] += dWh
    grads["enc_b_b"] += db
    dX = dXf + dXb_rev[::-1]
    np.add.at(grads["tag_emb"], cache.tag_rows, dX)


# ---------------------------------------------------------------------------
# Decoder
# ---------------------------------------------------------------------------

def _slot_table(params: ModelParams) -> np.ndarray:
    """Window-slot embeddings for every token id plus the padding row."""
    dims = params.dims
    table = np.zeros((VOCAB_SIZE + 1, dims.slot))
    table[:3, :dims.func_emb] = params["func_emb"]
    table[TAG_ID_BASE:VOCAB_SIZE, dims.func_emb:] = params["tag_emb"]
    return table


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class RowsCache:
    """Forward-pass tensors for a batch of decoder steps."""

    def __init__(self, X, A, Cv, U, Hd, V, g, P, cov=None):
        self.X, self.A, self.Cv, self.U = X, A, Cv, U
        self.Hd, self.V, self.g, self.P = Hd, V, g, P
        self.cov = cov


def _rows_forward(params: ModelParams, H: np.ndarray, windows: np.ndarray,
                  bows: np.ndarray, slot_table: np.ndarray, M: np.ndarray,
                  pos_tokens: np.ndarray) -> RowsCache:
    n = windows.shape[0]
    dims = params.dims
    Xw = slot_table[windows].reshape(n, dims.window * dims.slot)
    X = np.concatenate([Xw, bows], axis=1)
    Q = X @ params["W_att"]
    cov = bows[:, pos_tokens]  # 1 where the position's tag is already decoded
    A = _softmax_rows(Q @ H.T + params["w_cov"][0] * cov)
    Cv = A @ H
    U = np.concatenate([X, Cv], axis=1)
    Hd = np.tanh(U @ params["W1"] + params["b1"])
    V = _softmax_rows(Hd @ params["W_out"] + params["b_out"])
    g = expit(Hd @ params["w_gen"] + params["b_gen"][0])
    P = np.concatenate([g[:, None] * V, (1.0 - g)[:, None] * (A @ M)], axis=1)
    return RowsCache(X, A, Cv, U, Hd, V, g, P, cov)


def _rows_backward(params: ModelParams, H: np.ndarray, cache: RowsCache,
                   M: np.ndarray, dP: np.ndarray, windows: np.ndarray,
                   grads: dict[str, np.ndarray]) -> np.ndarray:
    """Backpropagate dLoss/dP through the decoder; returns dLoss/dH."""
    dims = params.dims
    X, A, Cv, U, Hd, V, g = cache.X, cache.A, cache.Cv, cache.U, cache.Hd, cache.V, cache.g
    m = A @ M
    dPf = dP[:, :3]
    dPt = dP[:, 3:]
    dg = (dPf * V).sum(axis=1) - (dPt * m).sum(axis=1)
    dV = g[:, None] * dPf
    dm = (1.0 - g)[:, None] * dPt

    # generation gate (sigmoid of the decoder hidden layer)
    ds = dg * g * (1.0 - g)
    grads["w_gen"] += Hd.T @ ds
    grads["b_gen"][0] += ds.sum()
    dHd = np.outer(ds, params["w_gen"])

    # function-vocabulary softmax
    dlogits = V * (dV - (dV * V).sum(axis=1, keepdims=True))
    grads["W_out"] += Hd.T @ dlogits
    grads["b_out"] += dlogits.sum(axis=0)
    dHd += dlogits @ params["W_out"].T

    # copy mass and attention context
    dA = dm @ M.T
    dZ1 = dHd * (1.0 - Hd * Hd)
    grads["W1"] += U.T @ dZ1
    grads["b1"] += dZ1.sum(axis=0)
    dU = dZ1 @ params["W1"].T
    dX = dU[:, :dims.dec_in].copy()
    dCv = dU[:, dims.dec_in:]
    dA += dCv @ H.T
    dH = A.T @ dCv

    # attention softmax, bilinear scores, and the coverage bias
    dE = A * (dA - (dA * A).sum(axis=1, keepdims=True))
    Q = X @ params["W_att"]
    dQ = dE @ H
    dH += dE.T @ Q
    grads["W_att"] += X.T @ dQ
    grads["w_cov"][0] += float((dE * cache.cov).sum())
    dX += dQ @ params["W_att"].T

    # scatter window-slot gradients into the embedding tables
    n = windows.shape[0]
    dXw = dX[:, :dims.window * dims.slot].reshape(n, dims.window, dims.slot)
    flat_ids = windows.reshape(-1)
    flat_d = dXw.reshape(-1, dims.slot)
    func_rows = flat_ids < 3
    if func_rows.any():
        np.add.at(grads["func_emb"], flat_ids[func_rows], flat_d[func_rows, :dims.func_emb])
    tag_rows = (flat_ids >= TAG_ID_BASE) & (flat_ids < VOCAB_SIZE)
    if tag_rows.any():
        np.add.at(grads["tag_emb"], flat_ids[tag_rows] - TAG_ID_BASE,
                  flat_d[tag_rows, dims.func_emb:])
    return dH


def _masked_probs(P: np.ndarray, legal: np.ndarray) -> np.ndarray:
    """Zero out illegal candidates and renormalize; all-masked rows stay zero."""
    Q = np.where(legal, P, 0.0)
    totals = Q.sum(axis=1, keepdims=True)
    safe = np.where(totals > 0.0, totals, 1.0)
    return Q / safe


@dataclass(frozen=True)
class DecoderContext:
    """Scoring context: the tag sequence plus the decoded prefix."""

    tag_ids: tuple[int, ...]
    prefix: tuple[int, ...] = ()


@dataclass(frozen=True)
class TokenDistribution:
    candidate_ids: tuple[int, ...]
    probs: np.ndarray
    p_gen: float
    p_vocab_func: np.ndarray
    attention: np.ndarray
    mixture: np.ndarray  # pre-mask probabilities


class TurnScorer:
    """Per-turn scoring engine: one encoder pass, batched decoder steps."""

    def __init__(self, tags: Sequence["TagToken | int"], params: ModelParams,
                 max_tokens: int = grammar.MAX_PROGRAM_TOKENS):
        self.params = params
        self.max_tokens = max_tokens
        self.enc = encode_with_cache(tags, params)
        self.tag_ids = tuple(_tags_to_ids(tags))
        self.cands = grammar.CandidateSet(self.tag_ids)
        L, C = len(self.tag_ids), len(self.cands)
        self.M = np.zeros((L, C - 3))
        for pos, token_id in enumerate(self.tag_ids):
            self.M[pos, self.cands.col_of[token_id] - 3] = 1.0
        self.pos_tokens = np.array(self.tag_ids, dtype=np.int64)
        self.slot_table = _slot_table(params)
        self._legal_cache: dict[tuple, np.ndarray] = {}

    @property
    def H(self) -> np.ndarray:
        return self.enc.H

    def initial_window(self) -> tuple[int, ...]:
        return (PAD_TOKEN,) * self.params.dims.window

    def initial_bow(self) -> np.ndarray:
        return np.zeros(VOCAB_SIZE)

    def legal_rows(self, states: Sequence[grammar.PrefixState]) -> np.ndarray:
        # legality depends on the state only through (mode, kind, used_mask)
        # and the two remaining-budget flags, so rows cache well
        rows = []
        cache = self._legal_cache
        max_tokens = self.max_tokens
        for s in states:
            key = (s.mode, s.kind, s.used_mask,
                   s.n_tokens + 3 <= max_tokens, s.n_tokens + 2 <= max_tokens)
            row = cache.get(key)
            if row is None:
                row = self.cands.legal_flags(s, max_tokens)
                cache[key] = row
            rows.append(row)
        return np.array(rows)

    def rows(self, windows: np.ndarray, bows: np.ndarray) -> RowsCache:
        return _rows_forward(self.params, self.enc.H, windows, bows,
                             self.slot_table, self.M, self.pos_tokens)

    def step_probs(self, windows: np.ndarray, bows: np.ndarray,
                   legal: np.ndarray) -> np.ndarray:
        """Masked, renormalized next-token probabilities for a batch of
        prefixes; rows with no legal candidate come back all-zero."""
        return _masked_probs(self.rows(windows, bows).P, legal)

    def _replay(self, token_seqs: Sequence[Sequence[int]], masked: bool = True):
        """Per-step rows (window, bag-of-words, legality, target column) for
        complete or partial token sequences.  Unmasked replay tolerates
        grammar-dead tokens (the mixture is defined for any prefix)."""
        dims = self.params.dims
        n_cands = len(self.cands)
        windows, bows, legals, targets, owners = [], [], [], [], []
        for seq_idx, seq in enumerate(token_seqs):
            state: grammar.PrefixState | None = grammar.INITIAL_STATE
            window = list(self.initial_window())
            bow = self.initial_bow()
            for token_id in seq:
                if is_tag_token_id(token_id) and token_id not in self.cands.col_of:
                    raise ValueError(
                        f"token {token_id} is a tag that does not occur in the input")
                if token_id not in self.cands.col_of:
                    raise ValueError(f"token {token_id} is not a candidate")
                windows.append(tuple(window))
                bows.append(bow.copy())
                if state is not None:
                    legals.append(self.legal_rows([state])[0])
                else:
                    legals.append(np.zeros(n_cands, dtype=bool))
                targets.append(self.cands.col_of[token_id])
                owners.append(seq_idx)
                state = grammar.advance(state, token_id, self.max_tokens)
                if state is None and masked:
                    raise DeadPrefixError(
                        f"token {token_id} is grammatically dead in this prefix")
                window = window[1:] + [token_id]
                bow[token_id] = 1.0
        return (np.array(windows, dtype=np.int64).reshape(-1, dims.window),
                np.array(bows).reshape(-1, VOCAB_SIZE),
                np.array(legals, dtype=bool).reshape(-1, n_cands),
                np.array(targets, dtype=np.int64),
                np.array(owners, dtype=np.int64))

    def sequence_logprobs(self, token_seqs: Sequence[Sequence[int]],
                          masked: bool = True) -> np.ndarray:
        if not token_seqs:
            return np.zeros(0)
        windows, bows, legals, targets, owners = self._replay(token_seqs, masked)
        cache = self.rows(windows, bows)
        P = _masked_probs(cache.P, legals) if masked else cache.P
        step_p = P[np.arange(len(targets)), targets]
        if masked and (step_p <= 0.0).any():
            raise DeadPrefixError("a target token was masked out by the grammar")
        logs = np.log(step_p)
        out = np.zeros(len(token_seqs))
        np.add.at(out, owners, logs)
        return out

    def gradients(self, weighted: Sequence[tuple[Sequence[int], float]],
                  masked: bool = True) -> dict[str, np.ndarray]:
        """Gradient of sum_z weight(z) * log p(z | tags) for every block."""
        grads = self.params.zero_grads()
        if not weighted:
            return grads
        seqs = [tuple(seq) for seq, _ in weighted]
        weights = np.array([w for _, w in weighted])
        windows, bows, legals, targets, owners = self._replay(seqs, masked)
        cache = self.rows(windows, bows)
        row_w = weights[owners]
        rows_idx = np.arange(len(targets))
        if masked:
            Q = np.where(legals, cache.P, 0.0)
            totals = Q.sum(axis=1)
            p_target = Q[rows_idx, targets]
            if (p_target <= 0.0).any():
                raise DeadPrefixError("a target token was masked out by the grammar")
            # d/dP of (log P[t] - log sum_legal P)
            dP = np.where(legals, -(row_w / totals)[:, None], 0.0)
            dP[rows_idx, targets] += row_w / p_target
        else:
            p_target = cache.P[rows_idx, targets]
            dP = np.zeros_like(cache.P)
            dP[rows_idx, targets] = row_w / p_target
        dH = _rows_backward(self.params, self.enc.H, cache, self.M, dP, windows, grads)
        _encoder_backward(self.enc, self.params, dH, grads)
        return grads


def decode_step(ctx: DecoderContext, params: ModelParams,
                max_tokens: int = grammar.MAX_PROGRAM_TOKENS) -> TokenDistribution:
    """Next-token distribution for one prefix, grammar mask applied."""
    scorer = TurnScorer(ctx.tag_ids, params, max_tokens)
    state = grammar.fold_prefix(ctx.prefix, max_tokens)
    if state is None:
        raise DeadPrefixError("prefix is grammatically dead")
    window = list(scorer.initial_window())
    bow = scorer.initial_bow()
    for token_id in ctx.prefix:
        window = window[1:] + [token_id]
        bow[token_id] = 1.0
    windows = np.array([window], dtype=np.int64)
    bows = bow[None, :]
    cache = scorer.rows(windows, bows)
    legal = scorer.legal_rows([state])
    probs = _masked_probs(cache.P, legal)[0]
    if probs.sum() <= 0.0:
        raise DeadPrefixError("all candidate tokens are masked for this prefix")
    return TokenDistribution(
        candidate_ids=scorer.cands.ids,
        probs=probs,
        p_gen=float(cache.g[0]),
        p_vocab_func=cache.V[0],
        attention=cache.A[0],
        mixture=cache.P[0],
    )


def program_logprob(program: "Program | Sequence[int]", tags: Sequence["TagToken | int"],
                    params: ModelParams, masked: bool = True,
                    max_tokens: int = grammar.MAX_PROGRAM_TOKENS) -> float:
    """Sum of per-token log probabilities of a complete program."""
    tokens = program.to_token_ids() if isinstance(program, Program) else tuple(program)
    scorer = TurnScorer(tags, params, max_tokens)
    return float(scorer.sequence_logprobs([tokens], masked=masked)[0])


def gradients(weighted: Sequence[tuple["Program | Sequence[int]", float]],
              tags: Sequence["TagToken | int"], params: ModelParams,
              masked: bool = True,
              max_tokens: int = grammar.MAX_PROGRAM_TOKENS) -> dict[str, np.ndarray]:
    """Gradient of the weighted log-likelihood over a set of programs."""
    scorer = TurnScorer(tags, params, max_tokens)
    pairs = []
    for prog, weight in weighted:
        tokens = prog.to_token_ids() if isinstance(prog, Program) else tuple(prog)
        pairs.append((tokens, float(weight)))
    return scorer.gradients(pairs, masked=masked)


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradient blocks in place so the global norm is at most
    max_norm; returns the pre-clip norm."""
    total = 0.0
    for block in grads.values():
        total += float((block * block).sum())
    norm = total ** 0.5
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for block in grads.values():
            block *= scale
    return norm


class Adam:
    """Adam ascent on the weighted log-likelihood (gradients are maximized)."""

    def __init__(self, params: ModelParams, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: float = 5.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = params.zero_grads()
        self.v = params.zero_grads()

    def step(self, grads: dict[str, np.ndarray]) -> None:
        if self.clip_norm is not None:
            clip_global_norm(grads, self.clip_norm)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, block in self.params.blocks.items():
            grad = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            block += self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if not self.params.all_finite():
            raise FloatingPointError("parameters became non-finite after an update")
