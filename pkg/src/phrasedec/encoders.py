"""Word-level utterance encoder, sentence-level dialogue state RNN and the linear policy."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .core import Parameter, affine


def pad_batch(seqs: Sequence[Sequence[int]], pad: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """(B, T) padded ids and the (B,) lengths."""
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    T = int(lengths.max()) if len(seqs) else 0
    out = np.full((len(seqs), T), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


class WordEncoder:
    """tanh RNN over word embeddings, zero initial state. Used for questions and responses alike."""

    def __init__(self, params: Mapping[str, Parameter], emb_in: Parameter):
        self.params = params
        self.emb_in = emb_in

    def parameters(self) -> list[Parameter]:
        return list(self.params.values()) + [self.emb_in]

    @property
    def d_hidden(self) -> int:
        return self.params["W"].shape[0]

    def encode_utterance(self, ids: Sequence[int]) -> np.ndarray:
        h = np.zeros(self.d_hidden)
        W, U = self.params["W"].value, self.params["U"].value
        emb = self.emb_in.value
        for i in ids:
            h = np.tanh(affine(W, h) + affine(U, emb[i]))
        return h

    def forward(self, tokens: np.ndarray, lengths: np.ndarray, h0: np.ndarray | None = None,
                keep: bool = True):
        """All hidden states (B, T+1, H); rows hold their state once past their length."""
        B, T = tokens.shape
        W, U = self.params["W"].value, self.params["U"].value
        emb = self.emb_in.value
        states = np.zeros((B, T + 1, W.shape[0]))
        if h0 is not None:
            states[:, 0] = h0
        h = states[:, 0]
        for t in range(T):
            hn = np.tanh(h @ W.T + emb[tokens[:, t]] @ U.T)
            h = np.where((t < lengths)[:, None], hn, h)
            states[:, t + 1] = h
        cache = {"tokens": tokens, "lengths": lengths, "states": states} if keep else None
        return states, cache

    def backward(self, cache, dstates: np.ndarray) -> np.ndarray:
        """Accumulate grads given dL/dstates; returns dL/dh0."""
        tokens, lengths, states = cache["tokens"], cache["lengths"], cache["states"]
        B, T = tokens.shape
        W, U = self.params["W"].value, self.params["U"].value
        dW = np.zeros_like(W)
        dU = np.zeros_like(U)
        dEmb_rows = np.zeros((B, T, U.shape[1]))
        emb = self.emb_in.value
        dh = dstates[:, T].copy()
        for t in range(T - 1, -1, -1):
            live = (t < lengths)[:, None]
            h_prev = states[:, t]
            hn = states[:, t + 1]
            da = np.where(live, dh, 0.0) * (1.0 - hn * hn)
            dW += da.T @ h_prev
            dU += da.T @ emb[tokens[:, t]]
            dEmb_rows[:, t] = da @ U
            dh = np.where(live, da @ W, dh) + dstates[:, t]
        self.params["W"].grad += dW
        self.params["U"].grad += dU
        if T:
            np.add.at(self.emb_in.grad, tokens.reshape(-1), dEmb_rows.reshape(-1, U.shape[1]))
        return dh


class SentenceRnn:
    """Dialogue state tracker: one intermediate update with the previous response
    encoding, then one with the current question encoding."""

    def __init__(self, params: Mapping[str, Parameter]):
        self.params = params

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def advance_dialogue_state(self, ctx, prev_response_vec, question_vec) -> np.ndarray:
        W, U = self.params["W"].value, self.params["U"].value
        mid = np.tanh(affine(W, ctx) + affine(U, prev_response_vec))
        return np.tanh(affine(W, mid) + affine(U, question_vec))

    def forward(self, q: np.ndarray, yprev: np.ndarray, keep: bool = True):
        """q, yprev: (D, N, H). yprev[:, n] encodes the response of turn n-1 (zeros at n=0)."""
        W, U = self.params["W"].value, self.params["U"].value
        D, N, H = q.shape
        ctx = np.zeros((D, N, H))
        mids = np.zeros((D, N, H))
        c = np.zeros((D, H))
        for n in range(N):
            mid = np.tanh(c @ W.T + yprev[:, n] @ U.T)
            c = np.tanh(mid @ W.T + q[:, n] @ U.T)
            mids[:, n] = mid
            ctx[:, n] = c
        cache = {"q": q, "yprev": yprev, "mids": mids, "ctx": ctx} if keep else None
        return ctx, cache

    def backward(self, cache, dctx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        W, U = self.params["W"].value, self.params["U"].value
        q, yprev, mids, ctx = cache["q"], cache["yprev"], cache["mids"], cache["ctx"]
        D, N, H = q.shape
        dW = np.zeros_like(W)
        dU = np.zeros_like(U)
        dq = np.zeros_like(q)
        dy = np.zeros_like(yprev)
        dc = np.zeros((D, H))
        for n in range(N - 1, -1, -1):
            c_prev = ctx[:, n - 1] if n else np.zeros((D, H))
            da2 = (dc + dctx[:, n]) * (1.0 - ctx[:, n] ** 2)
            dW += da2.T @ mids[:, n]
            dU += da2.T @ q[:, n]
            dq[:, n] = da2 @ U
            da1 = (da2 @ W) * (1.0 - mids[:, n] ** 2)
            dW += da1.T @ c_prev
            dU += da1.T @ yprev[:, n]
            dy[:, n] = da1 @ U
            dc = da1 @ W
        self.params["W"].grad += dW
        self.params["U"].grad += dU
        return dq, dy


class Policy:
    """Linear dialogue policy: action vector = tanh(D0 . state + b0)."""

    def __init__(self, params: Mapping[str, Parameter]):
        self.params = params

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def policy_project(self, h_ctx) -> np.ndarray:
        return np.tanh(affine(self.params["D"].value, h_ctx, self.params["b"].value))

    def backward(self, h_ctx: np.ndarray, h_init: np.ndarray, d_init: np.ndarray) -> np.ndarray:
        da = d_init * (1.0 - h_init * h_init)
        self.params["D"].grad += da.T @ h_ctx
        self.params["b"].grad += da.sum(axis=0)
        return da @ self.params["D"].value


def seq2seq_context(encoder: WordEncoder, policy: Policy, history_ids: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Single-level context for a flattened history (turns already joined by the separator)."""
    h_ctx = encoder.encode_utterance(history_ids)
    return h_ctx, policy.policy_project(h_ctx)


def word_encoder_param_shapes(d_hidden: int, d_emb: int) -> dict[str, tuple[int, ...]]:
    return {"W": (d_hidden, d_hidden), "U": (d_hidden, d_emb)}


def sentence_rnn_param_shapes(d_hidden: int) -> dict[str, tuple[int, ...]]:
    return {"W": (d_hidden, d_hidden), "U": (d_hidden, d_hidden)}


def policy_param_shapes(d_hidden: int) -> dict[str, tuple[int, ...]]:
    return {"D": (d_hidden, d_hidden), "b": (d_hidden,)}
