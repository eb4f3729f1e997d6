"""Scalar-loop reference implementations and small random fixtures shared by the tests.

The oracles use plain Python floats and `math`, so they share no code with the
vectorised numpy implementations they check.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from phrasedec.core import Parameter
from phrasedec.data import Dialogue, Turn
from phrasedec.decoders import (BasicDecoder, PersonalizedDecoder, basic_decoder_param_shapes, initial_state,
                                personal_component_param_shapes, shared_component_param_shapes)
from phrasedec.model import DialogueModel, ModelConfig
from phrasedec.vocab import SEP, build_vocab


def mat_vec(W, x):
    return [sum(W[i][j] * x[j] for j in range(len(x))) for i in range(len(W))]


def vadd(*vs):
    return [sum(parts) for parts in zip(*vs)]


def sig(a):
    return 1.0 / (1.0 + math.exp(-a))


def act(name, a):
    return sig(a) if name == "sigmoid" else math.tanh(a)


def softmax_list(logits):
    m = max(logits)
    ex = [math.exp(v - m) for v in logits]
    s = sum(ex)
    return [v / s for v in ex]


def L(a):
    """numpy array -> nested Python lists of floats."""
    return np.asarray(a, dtype=float).tolist()


def oracle_basic_step(W, U, V, h, e, c):
    return [math.tanh(v) for v in vadd(mat_vec(W, h), mat_vec(U, e), mat_vec(V, c))]


def oracle_gru_candidate(P, h, eg, c, nonlin):
    """Shared GRU candidate from a dict of nested-list parameters."""
    z = [sig(v) for v in vadd(mat_vec(P["Wz"], h), mat_vec(P["Uz"], eg), mat_vec(P["Vz"], c), P["bz"])]
    r = [sig(v) for v in vadd(mat_vec(P["Wr"], h), mat_vec(P["Ur"], eg), mat_vec(P["Vr"], c), P["br"])]
    rh = [ri * hi for ri, hi in zip(r, h)]
    hh = [act(nonlin, v) for v in vadd(mat_vec(P["Wh"], rh), mat_vec(P["Uh"], eg), mat_vec(P["Vh"], c), P["bh"])]
    return [zi * hi + (1 - zi) * ti for zi, hi, ti in zip(z, h, hh)]


def oracle_personal(Pu, hu, e, hg, nonlin):
    return [act(nonlin, v) for v in vadd(mat_vec(Pu["W"], hu), mat_vec(Pu["U"], e), mat_vec(Pu["V"], hg))]


def oracle_gate_prob(gate_prev, hg, hu, e, S, Pu):
    if gate_prev == 0:
        a = sum(w * x for w, x in zip(S["gate_W"], hg)) + sum(w * x for w, x in zip(S["gate_U"], e)) + S["gate_b"][0]
    else:
        a = sum(w * x for w, x in zip(Pu["gate_W"], hu)) + sum(w * x for w, x in zip(Pu["gate_U"], e)) + Pu["gate_b"][0]
    return sig(a)


def oracle_output(S, O, hd, e):
    omega = vadd(mat_vec(S["H0"], hd), mat_vec(S["E0"], e), S["bo"])
    return softmax_list([sum(o * w for o, w in zip(row, omega)) for row in O])


def oracle_personalized_decode(S, Pu, emb, O, h_ctx, h_init, words, gates, nonlin):
    """Teacher-forced per-step (word distribution, gate probability) by plain loops."""
    d_emb = len(emb[0])
    hg = list(h_init)
    hu = list(h_init)
    eg = [0.0] * d_emb
    e = [0.0] * d_emb
    g_prev = 0
    out = []
    for w, g in zip(words, gates):
        p = oracle_gate_prob(g_prev, hg, hu, e, S, Pu)
        cand = oracle_gru_candidate(S, hg, eg, h_ctx, nonlin)
        hu_hat = oracle_personal(Pu, hu, e, hg, nonlin)
        if g == 1:
            hg_new, eg_new = hg, eg
            hu_new = hu_hat
            hd = hu_new
        else:
            hg_new, eg_new = cand, e
            hu_new = hg_new
            hd = hg_new
        out.append((oracle_output(S, O, hd, e), p))
        hg, hu, eg, g_prev = hg_new, hu_new, eg_new, g
        e = list(emb[w])
    return out


def shared_only_distributions(S, O, emb_rows, h_ctx, h_init, nonlin):
    """A decoder made only of the shared GRU and the output head (scalar loops)."""
    h = list(h_init)
    e = [0.0] * len(emb_rows[0])
    e_gru = list(e)   # the GRU sees the last word one step later than the output head
    out = []
    for row in emb_rows:
        h = oracle_gru_candidate(S, h, e_gru, h_ctx, nonlin)
        out.append(oracle_output(S, O, h, e))
        e_gru, e = e, list(row)
    return out


def gate_off_matches_shared_only(seed, d=4, E=3, V=6, steps=5):
    rng = np.random.default_rng(seed)
    nonlin = ("sigmoid", "tanh")[seed % 2]
    dec = make_pdec(rng, d, E, V, nonlin=nonlin, scale=1.0)
    h_ctx, h_init = rng.normal(size=d), rng.normal(size=d)
    words = rng.integers(0, V, size=steps)
    state = initial_state(h_init, E)
    got = []
    for w in words:
        state, out = dec.personalized_step(state, h_ctx, "a", gate_override=0)
        got.append(out.word_dist)
        state = replace(state, e_last=dec.emb_in.value[w])
    ref = shared_only_distributions(plist(dec.shared), L(dec.emb_out.value),
                                    [L(dec.emb_in.value[w]) for w in words], L(h_ctx), L(h_init), nonlin)
    return float(np.max(np.abs(np.array(got) - np.array(ref))))


def plist(params):
    """{name: Parameter} -> {name: nested list}."""
    return {k: L(p.value) for k, p in params.items()}


# criterion number -> (passed, one-line detail); printed in the terminal summary
ACCEPTANCE: dict = {}


# ---------------------------------------------------------------- random fixtures

WORDS = [f"w{i}" for i in range(15)]


def fixture_vocab():
    """Exactly 20 entries: 4 reserved, the separator and 15 words."""
    return build_vocab([WORDS], extra_tokens=(SEP,))


def random_dialogues(rng, users, n_dialogues=2, max_turns=3, max_len=4):
    out = []
    for u in users:
        for _ in range(n_dialogues):
            turns = []
            for _ in range(int(rng.integers(1, max_turns + 1))):
                x = [WORDS[i] for i in rng.integers(0, len(WORDS), size=int(rng.integers(1, max_len + 1)))]
                ny = int(rng.integers(1, max_len + 1))
                y = [WORDS[i] for i in rng.integers(0, len(WORDS), size=ny)]
                o = [int(v) for v in rng.integers(0, 2, size=ny)]
                turns.append(Turn(x, y, o, float(rng.uniform(-0.3, 1.2))))
            out.append(Dialogue(u, turns))
    return out


def random_model(kind, seed, d=8, users=("a", "b"), nonlin="sigmoid", scale=0.5):
    """Small model with weights spread wider than the default init, so nonlinearities matter."""
    model = DialogueModel(kind, fixture_vocab(), list(users), ModelConfig(d, d, nonlin, 10), seed=seed)
    rng = np.random.default_rng(seed + 1000)
    for p in model.all_params():
        p.value[...] = rng.uniform(-scale, scale, size=p.shape)
    return model


# ---------------------------------------------------------------- standalone decoders

def _params(shapes, rng, scale=0.5, prefix=""):
    return {k: Parameter(prefix + k, rng.uniform(-scale, scale, size=s)) for k, s in shapes.items()}


def make_pdec(rng, d=2, E=3, V=5, users=("a", "b"), nonlin="sigmoid", scale=0.5):
    shared = _params(shared_component_param_shapes(d, E), rng, scale)
    personal = {u: _params(personal_component_param_shapes(d, E), rng, scale, u + ".") for u in users}
    emb_in = Parameter("emb_in", rng.uniform(-scale, scale, size=(V, E)), sparse_rows=True)
    emb_out = Parameter("emb_out", rng.uniform(-scale, scale, size=(V, d)))
    return PersonalizedDecoder(shared, personal, emb_in, emb_out, nonlin)


def make_bdec(rng, d=2, E=3, V=5, scale=0.5):
    P = _params(basic_decoder_param_shapes(d, E), rng, scale)
    return BasicDecoder(P, Parameter("emb_in", rng.uniform(-scale, scale, size=(V, E)), sparse_rows=True),
                        Parameter("emb_out", rng.uniform(-scale, scale, size=(V, d))))
