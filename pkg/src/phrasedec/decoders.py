"""Response decoders: the basic tanh-RNN decoder and the personalized decoder.

The personalized decoder runs a shared GRU component and a per-user RNN
component side by side.  A binary personal control gate picks, word by word,
which component produces the hidden vector that feeds the output head.  While
the gate is on, the shared hidden state and the shared last-word embedding
are frozen.

All step functions accept a single vector or a (batch, dim) matrix of row
vectors.  Teacher-forced passes keep a cache for the hand-written backward.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .core import Parameter, affine, log_softmax, sigmoid_vec, softmax
from .vocab import EOS_ID

NONLINEARITIES = ("sigmoid", "tanh")


class UnknownUserError(KeyError):
    def __init__(self, user_id, known):
        super().__init__(f"unknown user id {user_id!r}; known users: {sorted(known)}")
        self.user_id = user_id


def _act(name: str, x: np.ndarray) -> np.ndarray:
    return sigmoid_vec(x) if name == "sigmoid" else np.tanh(x)


def _act_grad(name: str, y: np.ndarray) -> np.ndarray:
    # derivative expressed through the activation output
    return y * (1.0 - y) if name == "sigmoid" else 1.0 - y * y


def _log_sigmoid(a: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -a)


def _v(params: Mapping[str, Parameter], key: str) -> np.ndarray:
    return params[key].value


# ---------------------------------------------------------------- basic decoder

def basic_step(h_prev, e_prev, h_ctx, params: Mapping[str, Parameter]) -> np.ndarray:
    return np.tanh(affine(_v(params, "W"), h_prev) + affine(_v(params, "U"), e_prev)
                   + affine(_v(params, "V"), h_ctx))


def output_omega(h_d, e_prev, head: Mapping[str, Parameter]) -> np.ndarray:
    return affine(_v(head, "H0"), h_d) + affine(_v(head, "E0"), e_prev, _v(head, "bo"))


def output_distribution(h_d, e_prev, head: Mapping[str, Parameter], output_embeddings: Parameter) -> np.ndarray:
    """Word distribution: logit of word v is o_v . omega, softmax over the vocabulary."""
    return softmax(output_omega(h_d, e_prev, head) @ output_embeddings.value.T)


# ----------------------------------------------------------- personalized parts

@dataclass
class DecoderState:
    h_shared: np.ndarray
    h_personal: np.ndarray
    gate: np.ndarray          # realized gate of the previous step, 0/1 ints
    e_last: np.ndarray        # embedding of the last emitted word
    e_last_shared: np.ndarray  # last-word embedding seen by the shared GRU


@dataclass
class StepOutput:
    h_out: np.ndarray
    word_dist: np.ndarray
    gate_prob: np.ndarray


def initial_state(h_init: np.ndarray, d_emb: int) -> DecoderState:
    lead = h_init.shape[:-1]
    return DecoderState(
        h_shared=h_init.copy(),
        h_personal=h_init.copy(),
        gate=np.zeros(lead, dtype=np.int64),
        e_last=np.zeros(lead + (d_emb,)),
        e_last_shared=np.zeros(lead + (d_emb,)),
    )


def _ctx_terms(h_ctx, shared: Mapping[str, Parameter]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return tuple(affine(_v(shared, "V" + k), h_ctx, _v(shared, "b" + k)) for k in "zrh")


def _gru_parts(h_prev, e_shared_prev, ctx_terms, shared, nonlin):
    cz, cr, ch = ctx_terms
    z = sigmoid_vec(affine(_v(shared, "Wz"), h_prev) + affine(_v(shared, "Uz"), e_shared_prev) + cz)
    r = sigmoid_vec(affine(_v(shared, "Wr"), h_prev) + affine(_v(shared, "Ur"), e_shared_prev) + cr)
    rh = r * h_prev
    hh = _act(nonlin, affine(_v(shared, "Wh"), rh) + affine(_v(shared, "Uh"), e_shared_prev) + ch)
    cand = z * h_prev + (1.0 - z) * hh
    return z, r, rh, hh, cand


def shared_gru_step(state: DecoderState, h_ctx, shared: Mapping[str, Parameter],
                    nonlin: str = "sigmoid") -> np.ndarray:
    """Tentative shared hidden state from the GRU component."""
    return _gru_parts(state.h_shared, state.e_last_shared, _ctx_terms(h_ctx, shared), shared, nonlin)[-1]


def apply_gate_freeze(state: DecoderState, candidate, gate, e_prev) -> tuple[np.ndarray, np.ndarray]:
    """gate=0 takes the candidate and the last word; gate=1 keeps both shared fields as they were."""
    on = np.asarray(gate)[..., None] == 1
    return np.where(on, state.h_shared, candidate), np.where(on, state.e_last_shared, e_prev)


def personal_step(h_personal_prev, e_prev, h_shared_prev, user: Mapping[str, Parameter],
                  nonlin: str = "sigmoid") -> np.ndarray:
    return _act(nonlin, affine(_v(user, "W"), h_personal_prev) + affine(_v(user, "U"), e_prev)
                + affine(_v(user, "V"), h_shared_prev))


def _gate_logits(h_shared_prev, h_personal_prev, e_prev, shared, user):
    a_s = h_shared_prev @ _v(shared, "gate_W") + e_prev @ _v(shared, "gate_U") + _v(shared, "gate_b")[0]
    a_p = h_personal_prev @ _v(user, "gate_W") + e_prev @ _v(user, "gate_U") + _v(user, "gate_b")[0]
    return a_s, a_p


def gate_predict(gate_prev, h_shared_prev, h_personal_prev, e_prev, shared, user) -> np.ndarray:
    """p(gate=1): shared predictor after a shared word, the user's predictor after a personal word."""
    a_s, a_p = _gate_logits(h_shared_prev, h_personal_prev, e_prev, shared, user)
    return sigmoid_vec(np.where(np.asarray(gate_prev) == 1, a_p, a_s))


# ---------------------------------------------------------------- decode output

@dataclass
class DecodeResult:
    words: list[list[int]]           # per row, EOS excluded
    gates: list[list[int]]           # per row, aligned with the emitted words (EOS excluded)
    word_logps: list[list[float]]    # per step, EOS step included
    gate_logps: list[list[float]]
    truncated: list[bool]            # hit max_len without EOS


def _choose_words(probs: np.ndarray, mode: str, rng) -> np.ndarray:
    if mode == "greedy":
        return np.argmax(probs, axis=-1)
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=-1)
    return np.minimum(idx, probs.shape[1] - 1)


def _collect(words, gates, wlp, glp, max_len) -> DecodeResult:
    B = words.shape[0]
    res = DecodeResult([], [], [], [], [])
    for b in range(B):
        row = words[b]
        ends = np.flatnonzero(row == EOS_ID)
        n = int(ends[0]) if ends.size else max_len
        steps = n + 1 if ends.size else max_len
        res.words.append(row[:n].tolist())
        res.gates.append(gates[b, :n].tolist())
        res.word_logps.append(wlp[b, :steps].tolist())
        res.gate_logps.append(glp[b, :steps].tolist())
        res.truncated.append(not ends.size)
    return res


def _prev_embeddings(emb: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """(B, L, d_emb) embeddings of the previous word; zeros at the first step."""
    B, L = targets.shape
    out = np.zeros((B, L, emb.shape[1]))
    if L > 1:
        out[:, 1:] = emb[targets[:, :-1]]
    return out


def _scatter_rows(grad: np.ndarray, ids: np.ndarray, rows: np.ndarray) -> None:
    np.add.at(grad, ids.reshape(-1), rows.reshape(-1, rows.shape[-1]))


@dataclass
class TeacherPass:
    word_logp: np.ndarray   # (B, L)
    gate_logp: np.ndarray   # (B, L); zeros for decoders without gates
    gate_prob: np.ndarray   # (B, L)
    cache: dict | None


class BasicDecoder:
    """tanh RNN decoder conditioned on the dialogue context at every step."""

    has_gates = False

    def __init__(self, params: Mapping[str, Parameter], emb_in: Parameter, emb_out: Parameter):
        self.params = params
        self.emb_in = emb_in
        self.emb_out = emb_out

    def parameters(self, user_id=None) -> list[Parameter]:
        return list(self.params.values()) + [self.emb_in, self.emb_out]

    def decode(self, h_ctx, h_init, user_id=None, mode: str = "greedy", max_len: int = 30,
               rng: np.random.Generator | None = None) -> DecodeResult:
        h_ctx, h_init = np.atleast_2d(h_ctx), np.atleast_2d(h_init)
        B = h_init.shape[0]
        emb = self.emb_in.value
        h = h_init
        e = np.zeros((B, emb.shape[1]))
        words = np.full((B, max_len), EOS_ID)
        wlp = np.zeros((B, max_len))
        done = np.zeros(B, dtype=bool)
        for t in range(max_len):
            h = basic_step(h, e, h_ctx, self.params)
            logp = log_softmax(output_omega(h, e, self.params) @ self.emb_out.value.T)
            w = _choose_words(np.exp(logp), mode, rng)
            w = np.where(done, EOS_ID, w)
            words[:, t] = w
            wlp[:, t] = np.where(done, 0.0, logp[np.arange(B), w])
            done |= w == EOS_ID
            if done.all():
                break
            e = emb[w]
        return _collect(words, np.zeros_like(words), wlp, np.zeros_like(wlp), max_len)

    def teacher_forward(self, h_ctx, h_init, targets, gates=None, user_id=None, keep: bool = True) -> TeacherPass:
        P = self.params
        W, U, H0, E0, bo = (_v(P, k) for k in ("W", "U", "H0", "E0", "bo"))
        O = self.emb_out.value
        B, L = targets.shape
        E_prev = _prev_embeddings(self.emb_in.value, targets)
        cv = affine(_v(P, "V"), h_ctx)
        h = h_init
        wl = np.zeros((B, L))
        steps = []
        rows = np.arange(B)
        for t in range(L):
            e = E_prev[:, t]
            h_new = np.tanh(h @ W.T + e @ U.T + cv)
            omega = h_new @ H0.T + e @ E0.T + bo
            logp = log_softmax(omega @ O.T)
            wl[:, t] = logp[rows, targets[:, t]]
            if keep:
                steps.append((h, h_new, omega, logp))
            h = h_new
        cache = {"h_ctx": h_ctx, "targets": targets, "E_prev": E_prev, "steps": steps} if keep else None
        return TeacherPass(wl, np.zeros((B, L)), np.zeros((B, L)), cache)

    # ---- single forced step, used for prefix-shared scoring

    def forced_terms(self, h_ctx):
        return (affine(_v(self.params, "V"), h_ctx),)

    def forced_carry(self, h_init):
        return (h_init,)

    def forced_step(self, carry, terms, e, o, user_id=None):
        P = self.params
        h = np.tanh(carry[0] @ _v(P, "W").T + e @ _v(P, "U").T + terms[0])
        omega = h @ _v(P, "H0").T + e @ _v(P, "E0").T + _v(P, "bo")
        return (h,), log_softmax(omega @ self.emb_out.value.T), np.zeros(h.shape[0])

    def teacher_backward(self, tp: TeacherPass, word_w: np.ndarray, gate_w: np.ndarray | None = None):
        """Backprop of -sum(word_w * word_logp). Returns (d_h_ctx, d_h_init)."""
        P = self.params
        c = tp.cache
        W, U, V, H0, E0 = (_v(P, k) for k in ("W", "U", "V", "H0", "E0"))
        O = self.emb_out.value
        targets, E_prev = c["targets"], c["E_prev"]
        B, L = targets.shape
        rows = np.arange(B)
        dW, dU, dH0, dE0 = (np.zeros_like(x) for x in (W, U, H0, E0))
        dbo = np.zeros(H0.shape[0])
        dO = np.zeros_like(O)
        dcv = np.zeros((B, W.shape[0]))
        dE = np.zeros_like(E_prev)
        dh = np.zeros((B, W.shape[0]))
        for t in range(L - 1, -1, -1):
            h_prev, h_new, omega, logp = c["steps"][t]
            e = E_prev[:, t]
            ww = word_w[:, t]
            dlog = np.exp(logp) * ww[:, None]
            dlog[rows, targets[:, t]] -= ww
            dO += dlog.T @ omega
            dom = dlog @ O
            dH0 += dom.T @ h_new
            dE0 += dom.T @ e
            dbo += dom.sum(axis=0)
            da = (dom @ H0 + dh) * (1.0 - h_new * h_new)
            dW += da.T @ h_prev
            dU += da.T @ e
            dcv += da
            dE[:, t] = dom @ E0 + da @ U
            dh = da @ W
        P["W"].grad += dW
        P["U"].grad += dU
        P["V"].grad += dcv.T @ c["h_ctx"]
        P["H0"].grad += dH0
        P["E0"].grad += dE0
        P["bo"].grad += dbo
        self.emb_out.grad += dO
        if L > 1:
            _scatter_rows(self.emb_in.grad, targets[:, :-1], dE[:, 1:])
        return dcv @ V, dh


class PersonalizedDecoder:
    """Shared GRU component + one personal RNN component per user, switched by a control gate."""

    has_gates = True

    def __init__(self, shared: Mapping[str, Parameter], personal: Mapping[str, Mapping[str, Parameter]],
                 emb_in: Parameter, emb_out: Parameter, nonlin: str = "sigmoid"):
        if nonlin not in NONLINEARITIES:
            raise ValueError(f"candidate nonlinearity must be one of {NONLINEARITIES}")
        self.shared = shared
        self.personal = personal
        self.emb_in = emb_in
        self.emb_out = emb_out
        self.nonlin = nonlin

    def user(self, user_id) -> Mapping[str, Parameter]:
        try:
            return self.personal[user_id]
        except KeyError:
            raise UnknownUserError(user_id, self.personal.keys()) from None

    def parameters(self, user_id=None) -> list[Parameter]:
        out = list(self.shared.values()) + [self.emb_in, self.emb_out]
        if user_id is not None:
            out += list(self.user(user_id).values())
        return out

    # ---- single step, used by free-running decode

    def personalized_step(self, state: DecoderState, h_ctx, user_id, gate_override=None,
                          mode: str = "greedy", rng=None, ctx_terms=None) -> tuple[DecoderState, StepOutput]:
        """One decoding step; the caller sets `e_last` once the word is chosen."""
        S, Pu = self.shared, self.user(user_id)
        e = state.e_last
        p_gate = gate_predict(state.gate, state.h_shared, state.h_personal, e, S, Pu)
        if gate_override is not None:
            gate = np.broadcast_to(np.asarray(gate_override, dtype=np.int64), p_gate.shape).copy()
        elif mode == "greedy":
            gate = (p_gate > 0.5).astype(np.int64)
        else:
            gate = (rng.random(p_gate.shape) < p_gate).astype(np.int64)
        terms = ctx_terms if ctx_terms is not None else _ctx_terms(h_ctx, S)
        cand = _gru_parts(state.h_shared, state.e_last_shared, terms, S, self.nonlin)[-1]
        h_shared, e_shared = apply_gate_freeze(state, cand, gate, e)
        hu_hat = personal_step(state.h_personal, e, state.h_shared, Pu, self.nonlin)
        on = gate[..., None] == 1
        h_personal = np.where(on, hu_hat, h_shared)
        h_out = np.where(on, h_personal, h_shared)
        dist = output_distribution(h_out, e, S, self.emb_out)
        new = DecoderState(h_shared, h_personal, gate, e, e_shared)
        return new, StepOutput(h_out, dist, p_gate)

    def decode(self, h_ctx, h_init, user_id, mode: str = "greedy", max_len: int = 30,
               rng: np.random.Generator | None = None, gate_override=None) -> DecodeResult:
        h_ctx, h_init = np.atleast_2d(h_ctx), np.atleast_2d(h_init)
        B = h_init.shape[0]
        emb = self.emb_in.value
        state = initial_state(h_init, emb.shape[1])
        terms = _ctx_terms(h_ctx, self.shared)
        words = np.full((B, max_len), EOS_ID)
        gates = np.zeros((B, max_len), dtype=np.int64)
        wlp = np.zeros((B, max_len))
        glp = np.zeros((B, max_len))
        done = np.zeros(B, dtype=bool)
        rows = np.arange(B)
        for t in range(max_len):
            state, out = self.personalized_step(state, h_ctx, user_id, gate_override, mode, rng, terms)
            w = np.where(done, EOS_ID, _choose_words(out.word_dist, mode, rng))
            p = out.gate_prob
            g_lp = np.log(np.maximum(np.where(state.gate == 1, p, 1.0 - p), 1e-300))
            words[:, t] = w
            gates[:, t] = state.gate
            wlp[:, t] = np.where(done, 0.0, np.log(out.word_dist[rows, w]))
            glp[:, t] = np.where(done, 0.0, g_lp)
            done |= w == EOS_ID
            if done.all():
                break
            state = replace(state, e_last=emb[w])
        return _collect(words, gates, wlp, glp, max_len)

    # ---- teacher forcing

    # ---- single forced step, used for prefix-shared scoring

    def forced_terms(self, h_ctx):
        return _ctx_terms(h_ctx, self.shared)

    def forced_carry(self, h_init):
        B, E = h_init.shape[0], self.emb_in.shape[1]
        return (h_init, h_init, np.zeros((B, E)), np.zeros(B, dtype=np.int64))

    def forced_step(self, carry, terms, e, o, user_id):
        """Same arithmetic as one teacher_forward step: carry is (h_shared, h_personal,
        e_shared, previous gate); returns (carry', word log-probs, gate log-prob)."""
        S, Pu = self.shared, self.user(user_id)
        hg, hu, eg, o_prev = carry
        a_s, a_p = _gate_logits(hg, hu, e, S, Pu)
        a = np.where(o_prev == 1, a_p, a_s)
        gl = np.where(o == 1, _log_sigmoid(a), _log_sigmoid(-a))
        cand = _gru_parts(hg, eg, terms, S, self.nonlin)[-1]
        on = (o == 1)[:, None]
        hg_new = np.where(on, hg, cand)
        eg_new = np.where(on, eg, e)
        hu_new = np.where(on, personal_step(hu, e, hg, Pu, self.nonlin), hg_new)
        hd = np.where(on, hu_new, hg_new)
        logp = log_softmax(output_omega(hd, e, S) @ self.emb_out.value.T)
        return (hg_new, hu_new, eg_new, o), logp, gl

    def teacher_forward(self, h_ctx, h_init, targets, gates, user_id, keep: bool = True) -> TeacherPass:
        """Forced words and forced gates. `targets`, `gates` are (B, L) int arrays."""
        S, Pu = self.shared, self.user(user_id)
        nl = self.nonlin
        O = self.emb_out.value
        B, L = targets.shape
        rows = np.arange(B)
        E_prev = _prev_embeddings(self.emb_in.value, targets)
        terms = _ctx_terms(h_ctx, S)
        hg = h_init
        hu = h_init
        eg = np.zeros((B, E_prev.shape[2]))
        o_prev = np.zeros(B, dtype=np.int64)
        wl = np.zeros((B, L))
        gl = np.zeros((B, L))
        gp = np.zeros((B, L))
        steps = []
        for t in range(L):
            e = E_prev[:, t]
            o = gates[:, t]
            a_s, a_p = _gate_logits(hg, hu, e, S, Pu)
            a = np.where(o_prev == 1, a_p, a_s)
            gp[:, t] = sigmoid_vec(a)
            gl[:, t] = np.where(o == 1, _log_sigmoid(a), _log_sigmoid(-a))
            z, r, rh, hh, cand = _gru_parts(hg, eg, terms, S, nl)
            on = (o == 1)[:, None]
            hg_new = np.where(on, hg, cand)
            eg_new = np.where(on, eg, e)
            hu_hat = personal_step(hu, e, hg, Pu, nl)
            hu_new = np.where(on, hu_hat, hg_new)
            hd = np.where(on, hu_new, hg_new)
            omega = output_omega(hd, e, S)
            logp = log_softmax(omega @ O.T)
            wl[:, t] = logp[rows, targets[:, t]]
            if keep:
                steps.append(dict(hg=hg, hu=hu, eg=eg, o_prev=o_prev, o=o, z=z, r=r, rh=rh, hh=hh,
                                  hu_hat=hu_hat, hd=hd, omega=omega, logp=logp, pg=gp[:, t].copy()))
            hg, hu, eg, o_prev = hg_new, hu_new, eg_new, o
        cache = None
        if keep:
            cache = {"h_ctx": h_ctx, "targets": targets, "E_prev": E_prev, "steps": steps, "user": user_id}
        return TeacherPass(wl, gl, gp, cache)

    def teacher_backward(self, tp: TeacherPass, word_w: np.ndarray, gate_w: np.ndarray):
        """Backprop of -sum(word_w * word_logp + gate_w * gate_logp). Returns (d_h_ctx, d_h_init).

        Realized gates are treated as constants.
        """
        S, Pu = self.shared, self.user(tp.cache["user"])
        nl = self.nonlin
        c = tp.cache
        targets, E_prev = c["targets"], c["E_prev"]
        B, L = targets.shape
        rows = np.arange(B)
        O = self.emb_out.value
        g = {k: np.zeros_like(p.value) for k, p in S.items()}
        gu = {k: np.zeros_like(p.value) for k, p in Pu.items()}
        dO = np.zeros_like(O)
        dE = np.zeros_like(E_prev)
        Hd = g["Wz"].shape[0]
        dterms = {k: np.zeros((B, Hd)) for k in "zrh"}
        dhg = np.zeros((B, Hd))
        dhu = np.zeros((B, Hd))
        deg = np.zeros((B, E_prev.shape[2]))
        sv = {k: p.value for k, p in S.items()}
        uv = {k: p.value for k, p in Pu.items()}
        for t in range(L - 1, -1, -1):
            s = c["steps"][t]
            e = E_prev[:, t]
            hg, hu, eg = s["hg"], s["hu"], s["eg"]
            on = (s["o"] == 1).astype(np.float64)[:, None]
            off = 1.0 - on
            # output head
            ww = word_w[:, t]
            dlog = np.exp(s["logp"]) * ww[:, None]
            dlog[rows, targets[:, t]] -= ww
            dO += dlog.T @ s["omega"]
            dom = dlog @ O
            g["H0"] += dom.T @ s["hd"]
            g["E0"] += dom.T @ e
            g["bo"] += dom.sum(axis=0)
            de = dom @ sv["E0"]
            dhd = dom @ sv["H0"]
            # gate selections and freezing
            d_hu_hat = on * (dhd + dhu)
            dhg_new = dhg + off * dhu
            dcand = off * (dhd + dhg_new)
            dhg_prev = on * dhg_new
            deg_prev = on * deg
            de += off * deg
            # personal component
            da = d_hu_hat * _act_grad(nl, s["hu_hat"])
            gu["W"] += da.T @ hu
            gu["U"] += da.T @ e
            gu["V"] += da.T @ hg
            dhu_prev = da @ uv["W"]
            de += da @ uv["U"]
            dhg_prev += da @ uv["V"]
            # shared GRU
            z, r, hh = s["z"], s["r"], s["hh"]
            dz = dcand * (hg - hh)
            dhg_prev += dcand * z
            dah = dcand * (1.0 - z) * _act_grad(nl, hh)
            g["Wh"] += dah.T @ s["rh"]
            drh = dah @ sv["Wh"]
            dr = drh * hg
            dhg_prev += drh * r
            g["Uh"] += dah.T @ eg
            deg_prev += dah @ sv["Uh"]
            dterms["h"] += dah
            daz = dz * z * (1.0 - z)
            g["Wz"] += daz.T @ hg
            g["Uz"] += daz.T @ eg
            dhg_prev += daz @ sv["Wz"]
            deg_prev += daz @ sv["Uz"]
            dterms["z"] += daz
            dar = dr * r * (1.0 - r)
            g["Wr"] += dar.T @ hg
            g["Ur"] += dar.T @ eg
            dhg_prev += dar @ sv["Wr"]
            deg_prev += dar @ sv["Ur"]
            dterms["r"] += dar
            # gate predictor: d(-log Bernoulli)/dlogit = p - o
            dga = (s["pg"] - s["o"]) * gate_w[:, t]
            use_p = (s["o_prev"] == 1).astype(np.float64)
            das = (1.0 - use_p) * dga
            dap = use_p * dga
            g["gate_W"] += das @ hg
            g["gate_U"] += das @ e
            g["gate_b"] += das.sum()
            dhg_prev += das[:, None] * sv["gate_W"]
            de += das[:, None] * sv["gate_U"]
            gu["gate_W"] += dap @ hu
            gu["gate_U"] += dap @ e
            gu["gate_b"] += dap.sum()
            dhu_prev += dap[:, None] * uv["gate_W"]
            de += dap[:, None] * uv["gate_U"]
            dE[:, t] = de
            dhg, dhu, deg = dhg_prev, dhu_prev, deg_prev
        h_ctx = c["h_ctx"]
        d_ctx = np.zeros_like(h_ctx)
        for k in "zrh":
            g["V" + k] += dterms[k].T @ h_ctx
            g["b" + k] += dterms[k].sum(axis=0)
            d_ctx += dterms[k] @ sv["V" + k]
        for k, p in S.items():
            p.grad += g[k]
        for k, p in Pu.items():
            p.grad += gu[k]
        self.emb_out.grad += dO
        if L > 1:
            _scatter_rows(self.emb_in.grad, targets[:, :-1], dE[:, 1:])
        return d_ctx, dhg + dhu


def basic_decoder_param_shapes(d_hidden: int, d_emb: int) -> dict[str, tuple[int, ...]]:
    return {"W": (d_hidden, d_hidden), "U": (d_hidden, d_emb), "V": (d_hidden, d_hidden),
            "H0": (d_hidden, d_hidden), "E0": (d_hidden, d_emb), "bo": (d_hidden,)}


def shared_component_param_shapes(d_hidden: int, d_emb: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for k in "zrh":
        shapes["W" + k] = (d_hidden, d_hidden)
        shapes["U" + k] = (d_hidden, d_emb)
        shapes["V" + k] = (d_hidden, d_hidden)
        shapes["b" + k] = (d_hidden,)
    shapes.update({"gate_W": (d_hidden,), "gate_U": (d_emb,), "gate_b": (1,),
                   "H0": (d_hidden, d_hidden), "E0": (d_hidden, d_emb), "bo": (d_hidden,)})
    return shapes


def personal_component_param_shapes(d_hidden: int, d_emb: int) -> dict[str, tuple[int, ...]]:
    return {"W": (d_hidden, d_hidden), "U": (d_hidden, d_emb), "V": (d_hidden, d_hidden),
            "gate_W": (d_hidden,), "gate_U": (d_emb,), "gate_b": (1,)}


BIAS_KEYS = frozenset({"bo", "bz", "br", "bh", "gate_b", "b"})
