"""Model variants: wiring of encoders, policy and decoder with per-variant parameter sharing.

Every parameter belongs to a group (embeddings, encoder, sentence RNN, policy,
decoder, personal component) and is owned either by "shared" or by one user.
The sharing table of each variant decides the owner of each group.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Parameter, init_uniform
from .data import Dialogue
from .decoders import (
    BIAS_KEYS,
    BasicDecoder,
    DecodeResult,
    PersonalizedDecoder,
    TeacherPass,
    UnknownUserError,
    basic_decoder_param_shapes,
    personal_component_param_shapes,
    shared_component_param_shapes,
)
from .encoders import (
    Policy,
    SentenceRnn,
    WordEncoder,
    pad_batch,
    policy_param_shapes,
    sentence_rnn_param_shapes,
    word_encoder_param_shapes,
)
from .vocab import EOS_ID, SEP, Vocabulary

GROUPS = ("emb_in", "emb_out", "encoder", "sentence", "policy", "decoder", "personal")


@dataclass(frozen=True)
class Variant:
    encoder: str            # "flat" (seq2seq) or "hier" (HRED)
    decoder: str            # "basic" or "personalized"
    per_user: frozenset     # groups owned per user; the rest are shared


_ALL = frozenset(GROUPS)
VARIANTS = {
    "S2S": Variant("flat", "basic", _ALL),
    "ST-S2S": Variant("flat", "basic", frozenset()),
    "ST-E-S2S": Variant("flat", "basic", frozenset({"decoder", "emb_out"})),
    "PT-S2S": Variant("flat", "personalized", frozenset({"personal"})),
    "HRED": Variant("hier", "basic", _ALL),
    "ST-HRED": Variant("hier", "basic", frozenset()),
    "PT-HRED": Variant("hier", "personalized", frozenset({"personal"})),
}
MODEL_KINDS = tuple(VARIANTS)


class UnknownVariantError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_hidden: int = 64
    d_emb: int = 32
    candidate_nonlinearity: str = "sigmoid"
    max_len: int = 30


def _group_shapes(group: str, cfg: ModelConfig, vocab_size: int, decoder: str) -> dict[str, tuple[int, ...]]:
    H, E = cfg.d_hidden, cfg.d_emb
    if group == "emb_in":
        return {"": (vocab_size, E)}
    if group == "emb_out":
        return {"": (vocab_size, H)}
    if group == "encoder":
        return word_encoder_param_shapes(H, E)
    if group == "sentence":
        return sentence_rnn_param_shapes(H)
    if group == "policy":
        return policy_param_shapes(H)
    if group == "decoder":
        return basic_decoder_param_shapes(H, E) if decoder == "basic" else shared_component_param_shapes(H, E)
    if group == "personal":
        return personal_component_param_shapes(H, E)
    raise KeyError(group)


@dataclass
class ContextPass:
    h_ctx: np.ndarray       # (R, H), one row per turn
    h_init: np.ndarray      # (R, H)
    rows: list[tuple[int, int]]   # (dialogue index, turn index) per row
    cache: dict | None


@dataclass
class ModelPass:
    ctx: ContextPass
    dec: TeacherPass
    mask: np.ndarray        # (R, L) valid target positions
    user: str


class DialogueModel:
    def __init__(self, kind: str, vocab: Vocabulary, user_ids: Sequence[str],
                 config: ModelConfig | None = None, seed: int = 0):
        if kind not in VARIANTS:
            raise UnknownVariantError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
        if SEP not in vocab:
            raise ValueError(f"vocabulary lacks the separator token {SEP}")
        self.kind = kind
        self.variant = VARIANTS[kind]
        self.vocab = vocab
        self.user_ids = [str(u) for u in user_ids]
        self.config = config or ModelConfig()
        self.sep_id = vocab.id(SEP)
        self.params: dict[str, Parameter] = {}
        self._index: dict[tuple[str, str], dict[str, Parameter]] = {}
        rng = np.random.default_rng(seed)
        for group in self.groups:
            for owner in self._owners(group):
                for name, shape in _group_shapes(group, self.config, len(vocab), self.variant.decoder).items():
                    full = self.param_name(owner, group, name)
                    value = np.zeros(shape) if name in BIAS_KEYS else init_uniform(rng, shape)
                    p = Parameter(full, value, sparse_rows=(group == "emb_in"))
                    self.params[full] = p
                    self._index.setdefault((owner, group), {})[name] = p
        self._decoders: dict[str, object] = {}
        self._pdecoder: PersonalizedDecoder | None = None

    # ---- ownership

    @property
    def groups(self) -> list[str]:
        out = ["emb_in", "emb_out", "encoder", "policy", "decoder"]
        if self.variant.encoder == "hier":
            out.insert(3, "sentence")
        if self.variant.decoder == "personalized":
            out.append("personal")
        return out

    @property
    def sharing_table(self) -> dict[str, str]:
        return {g: ("user" if g in self.variant.per_user else "shared") for g in self.groups}

    def _owners(self, group: str) -> list[str]:
        return [f"user:{u}" for u in self.user_ids] if group in self.variant.per_user else ["shared"]

    @staticmethod
    def param_name(owner: str, group: str, name: str) -> str:
        return f"{owner}/{group}" + (f".{name}" if name else "")

    def owner(self, group: str, user_id: str) -> str:
        self._check_user(user_id)
        return f"user:{user_id}" if group in self.variant.per_user else "shared"

    def _check_user(self, user_id: str) -> None:
        if user_id not in self.user_ids:
            raise UnknownUserError(user_id, self.user_ids)

    def group_params(self, group: str, user_id: str) -> dict[str, Parameter]:
        return self._index[(self.owner(group, user_id), group)]

    def user_params(self, user_id: str) -> list[Parameter]:
        """Every parameter that a dialogue of this user touches."""
        return [p for g in self.groups for p in self.group_params(g, user_id).values()]

    def shared_params(self) -> list[Parameter]:
        return [p for full, p in self.params.items() if full.startswith("shared/")]

    def all_params(self) -> list[Parameter]:
        return list(self.params.values())

    # ---- components

    def emb_in(self, user_id: str) -> Parameter:
        return self.group_params("emb_in", user_id)[""]

    def emb_out(self, user_id: str) -> Parameter:
        return self.group_params("emb_out", user_id)[""]

    def encoder(self, user_id: str) -> WordEncoder:
        return WordEncoder(self.group_params("encoder", user_id), self.emb_in(user_id))

    def sentence_rnn(self, user_id: str) -> SentenceRnn:
        return SentenceRnn(self.group_params("sentence", user_id))

    def policy(self, user_id: str) -> Policy:
        return Policy(self.group_params("policy", user_id))

    def decoder(self, user_id: str):
        self._check_user(user_id)
        if self.variant.decoder == "personalized":
            if self._pdecoder is None:
                anyone = self.user_ids[0]
                personal = {u: self.group_params("personal", u) for u in self.user_ids}
                self._pdecoder = PersonalizedDecoder(
                    self.group_params("decoder", anyone), personal, self.emb_in(anyone), self.emb_out(anyone),
                    self.config.candidate_nonlinearity)
            return self._pdecoder
        if user_id not in self._decoders:
            self._decoders[user_id] = BasicDecoder(self.group_params("decoder", user_id),
                                                   self.emb_in(user_id), self.emb_out(user_id))
        return self._decoders[user_id]

    @property
    def has_gates(self) -> bool:
        return self.variant.decoder == "personalized"

    # ---- contexts for teacher-forced histories

    def contexts(self, user_id: str, dialogues: Sequence[Dialogue], keep: bool = True) -> ContextPass:
        if self.variant.encoder == "hier":
            return self._hier_contexts(user_id, dialogues, keep)
        return self._flat_contexts(user_id, dialogues, keep)

    def flatten_history(self, dialogue: Dialogue) -> tuple[list[int], list[int]]:
        """Whole dialogue as one id stream plus the stream position after each question."""
        enc = self.vocab.encode
        seq: list[int] = []
        taps = []
        for n, turn in enumerate(dialogue.turns):
            if n:
                seq += [self.sep_id] + enc(dialogue.turns[n - 1].y) + [self.sep_id]
            seq += enc(turn.x)
            taps.append(len(seq))
        return seq, taps

    def _flat_contexts(self, user_id, dialogues, keep):
        enc = self.encoder(user_id)
        pol = self.policy(user_id)
        seqs, taps, rows = [], [], []
        for i, d in enumerate(dialogues):
            s, tp = self.flatten_history(d)
            seqs.append(s)
            taps.append(tp)
            rows += [(i, n) for n in range(len(d.turns))]
        tokens, lengths = pad_batch(seqs)
        states, ecache = enc.forward(tokens, lengths, keep=keep)
        di = np.array([r[0] for r in rows], dtype=np.int64)
        pos = np.array([taps[i][n] for i, n in rows], dtype=np.int64)
        h_ctx = states[di, pos]
        h_init = pol.policy_project(h_ctx)
        cache = {"ecache": ecache, "di": di, "pos": pos, "states_shape": states.shape} if keep else None
        return ContextPass(h_ctx, h_init, rows, cache)

    def _hier_contexts(self, user_id, dialogues, keep):
        enc = self.encoder(user_id)
        sent = self.sentence_rnn(user_id)
        pol = self.policy(user_id)
        enc_ids = self.vocab.encode
        D = len(dialogues)
        N = max(len(d.turns) for d in dialogues)
        seqs, slots = [], []
        rows = []
        for i, d in enumerate(dialogues):
            for n, turn in enumerate(d.turns):
                seqs.append(enc_ids(turn.x))
                slots.append(("q", i, n))
                rows.append((i, n))
                if n + 1 < len(d.turns):
                    seqs.append(enc_ids(turn.y))
                    slots.append(("y", i, n + 1))
        tokens, lengths = pad_batch(seqs)
        states, ecache = enc.forward(tokens, lengths, keep=keep)
        finals = states[np.arange(len(seqs)), lengths]
        H = self.config.d_hidden
        q = np.zeros((D, N, H))
        yprev = np.zeros((D, N, H))
        for k, (kind, i, n) in enumerate(slots):
            (q if kind == "q" else yprev)[i, n] = finals[k]
        ctx_all, scache = sent.forward(q, yprev, keep=keep)
        di = np.array([r[0] for r in rows], dtype=np.int64)
        ni = np.array([r[1] for r in rows], dtype=np.int64)
        h_ctx = ctx_all[di, ni]
        h_init = pol.policy_project(h_ctx)
        cache = None
        if keep:
            cache = {"ecache": ecache, "scache": scache, "slots": slots, "lengths": lengths,
                     "di": di, "ni": ni, "shape": (D, N, H), "states_shape": states.shape}
        return ContextPass(h_ctx, h_init, rows, cache)

    def contexts_backward(self, user_id: str, cp: ContextPass, d_ctx: np.ndarray, d_init: np.ndarray) -> None:
        pol = self.policy(user_id)
        d_ctx = d_ctx + pol.backward(cp.h_ctx, cp.h_init, d_init)
        c = cp.cache
        enc = self.encoder(user_id)
        dstates = np.zeros(c["states_shape"])
        if self.variant.encoder == "flat":
            np.add.at(dstates, (c["di"], c["pos"]), d_ctx)
            enc.backward(c["ecache"], dstates)
            return
        dctx_all = np.zeros(c["shape"])
        np.add.at(dctx_all, (c["di"], c["ni"]), d_ctx)
        dq, dy = self.sentence_rnn(user_id).backward(c["scache"], dctx_all)
        for k, (kind, i, n) in enumerate(c["slots"]):
            dstates[k, c["lengths"][k]] += (dq if kind == "q" else dy)[i, n]
        enc.backward(c["ecache"], dstates)

    # ---- teacher forcing over whole dialogues

    def response_arrays(self, dialogues: Sequence[Dialogue]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ys, os = [], []
        for d in dialogues:
            for turn in d.turns:
                ys.append(self.vocab.encode(turn.y) + [EOS_ID])
                os.append(list(turn.o) + [0])
        targets, lengths = pad_batch(ys)
        gates, _ = pad_batch(os)
        mask = np.arange(targets.shape[1])[None, :] < lengths[:, None]
        return targets, gates, mask

    def teacher_forward(self, user_id: str, dialogues: Sequence[Dialogue], keep: bool = True) -> ModelPass:
        cp = self.contexts(user_id, dialogues, keep)
        targets, gates, mask = self.response_arrays(dialogues)
        tp = self.decoder(user_id).teacher_forward(cp.h_ctx, cp.h_init, targets, gates, user_id, keep)
        tp.word_logp *= mask
        tp.gate_logp *= mask
        return ModelPass(cp, tp, mask, user_id)

    def backward(self, mp: ModelPass, word_w: np.ndarray, gate_w: np.ndarray | None = None) -> None:
        """Accumulate grads of -sum(word_w * word_logp + gate_w * gate_logp)."""
        if gate_w is None:
            gate_w = np.zeros_like(word_w)
        d_ctx, d_init = self.decoder(mp.user).teacher_backward(mp.dec, word_w * mp.mask, gate_w * mp.mask)
        self.contexts_backward(mp.user, mp.ctx, d_ctx, d_init)

    # ---- inference

    def decode(self, user_id: str, h_ctx, h_init, mode: str = "greedy", max_len: int | None = None,
               rng: np.random.Generator | None = None) -> DecodeResult:
        return self.decoder(user_id).decode(h_ctx, h_init, user_id, mode=mode,
                                            max_len=max_len or self.config.max_len, rng=rng)

    def score_sequences(self, user_id: str, h_ctx: np.ndarray, h_init: np.ndarray,
                        responses: Sequence[Sequence[int]], labels: Sequence[Sequence[int]],
                        rows: Sequence[int] | None = None) -> np.ndarray:
        """Length-normalised teacher-forced log-probability of each (response + EOS).

        Response k is scored under context row `rows[k]` (default: row k).
        Responses sharing a context row and a (word, gate) prefix share the
        decoder computation for that prefix.
        """
        dec = self.decoder(user_id)
        rows = np.arange(len(responses)) if rows is None else np.asarray(rows, dtype=np.int64)
        tok, lengths = pad_batch([list(r) + [EOS_ID] for r in responses])
        lab, _ = pad_batch([list(o) + [0] for o in labels])
        V = len(self.vocab)
        emb = dec.emb_in.value
        terms = dec.forced_terms(h_ctx)
        root = dec.forced_carry(h_init)
        score = np.zeros(len(responses))
        prev_node = rows.copy()        # level 0: parents are context rows
        node_c = node_tok = carry = ctx_row = None
        for t in range(tok.shape[1]):
            live = np.flatnonzero(lengths > t)
            # a compute node is a (parent prefix, gate label) pair
            uc, inv_c = np.unique(prev_node[live] * 2 + lab[live, t], return_inverse=True)
            parent, o = uc // 2, uc % 2
            if t == 0:
                c_carry = tuple(x[parent] for x in root)
                c_row = parent
                e = np.zeros((len(uc), emb.shape[1]))
            else:
                pc = node_c[parent]
                c_carry = tuple(x[pc] for x in carry)
                c_row = ctx_row[pc]
                e = emb[node_tok[parent]]
            carry, logp, gl = dec.forced_step(c_carry, tuple(x[c_row] for x in terms), e, o, user_id)
            ctx_row = c_row
            score[live] += logp[inv_c, tok[live, t]] + gl[inv_c]
            un, inv_n = np.unique(inv_c * V + tok[live, t], return_inverse=True)
            node_c, node_tok = un // V, un % V
            prev_node[live] = inv_n
        return score / lengths

    def tracker(self, user_id: str, n: int = 1) -> "ContextTracker":
        return ContextTracker(self, user_id, n)


class ContextTracker:
    """Incremental dialogue context for `n` parallel live dialogues of one user."""

    def __init__(self, model: DialogueModel, user_id: str, n: int):
        self.model = model
        self.user_id = user_id
        H = model.config.d_hidden
        self.enc = model.encoder(user_id)
        self.policy = model.policy(user_id)
        self.hier = model.variant.encoder == "hier"
        self.state = np.zeros((n, H))          # sentence RNN state, or flat encoder state
        self.last_response = np.zeros((n, H))  # hier only
        self.pending: list[list[int]] = [[] for _ in range(n)]  # flat only: tokens not yet consumed

    def _encode(self, seqs, h0=None) -> np.ndarray:
        tokens, lengths = pad_batch(seqs)
        states, _ = self.enc.forward(tokens, lengths, h0=h0, keep=False)
        return states[np.arange(len(seqs)), lengths]

    def observe_user(self, idx: Sequence[int], questions: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
        """Feed the next user utterance of dialogues `idx`; returns their (h_ctx, h_init)."""
        idx = np.asarray(idx, dtype=np.int64)
        if self.hier:
            q = self._encode(questions)
            ctx = self.model.sentence_rnn(self.user_id).advance_dialogue_state(
                self.state[idx], self.last_response[idx], q)
        else:
            seqs = [self.pending[i] + list(x) for i, x in zip(idx, questions)]
            ctx = self._encode(seqs, h0=self.state[idx])
            for i in idx:
                self.pending[i] = []
        self.state[idx] = ctx
        return ctx, self.policy.policy_project(ctx)

    def observe_agent(self, idx: Sequence[int], responses: Sequence[Sequence[int]]) -> None:
        idx = np.asarray(idx, dtype=np.int64)
        if self.hier:
            self.last_response[idx] = self._encode(responses)
        else:
            sep = self.model.sep_id
            for i, y in zip(idx, responses):
                self.pending[i] = [sep] + list(y) + [sep]
