"""Rewards, discounted returns and REINFORCE training over logged dialogues."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .core import AdamState, adam_step, zero_grads
from .data import Dialogue, Turn, by_user
from .model import DialogueModel, ModelConfig
from .simulator import REWARDS, inventory_tokens
from .vocab import SEP, build_vocab

REWARD_KINDS = tuple(REWARDS)


@dataclass(frozen=True)
class RewardEvent:
    kind: str

    def __post_init__(self):
        if self.kind not in REWARDS:
            raise ValueError(f"unknown reward event {self.kind!r}")

    @property
    def value(self) -> float:
        return REWARDS[self.kind]


def turn_reward(events: Sequence[str | RewardEvent]) -> float:
    return float(sum(REWARDS[e.kind if isinstance(e, RewardEvent) else e] for e in events))


def returns(rewards: Sequence[float], gamma: float) -> list[float]:
    """J_n = r_n + gamma * J_{n+1}, computed backwards."""
    out = [0.0] * len(rewards)
    acc = 0.0
    for n in range(len(rewards) - 1, -1, -1):
        acc = rewards[n] + gamma * acc
        out[n] = acc
    return out


@dataclass
class TrainConfig:
    model_kind: str = "PT-HRED"
    gamma: float = 0.95
    lambda_gate: float = 1.0
    lr: float = 2e-3
    epochs: int = 250
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma={self.gamma} must lie in (0, 1]")
        if self.lambda_gate < 0:
            raise ValueError(f"lambda_gate={self.lambda_gate} must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def trajectory_log_prob(model: DialogueModel, dialogue: Dialogue) -> tuple[float, list[float]]:
    """Teacher-forced log-probability of the responses and gate labels, per turn and in total."""
    if not dialogue.turns:
        return 0.0, []
    mp = model.teacher_forward(dialogue.user_id, [dialogue], keep=False)
    per_turn = (mp.dec.word_logp + mp.dec.gate_logp).sum(axis=1)
    return float(per_turn.sum()), per_turn.tolist()


def _turn_returns(dialogues: Sequence[Dialogue], gamma: float) -> np.ndarray:
    return np.array([j for d in dialogues for j in returns(d.rewards, gamma)])


def _weights(dialogues, config: TrainConfig, L: int) -> tuple[np.ndarray, np.ndarray]:
    J = _turn_returns(dialogues, config.gamma)[:, None]
    word_w = np.repeat(J, L, axis=1)
    return word_w, word_w + config.lambda_gate


def surrogate_loss(model: DialogueModel, batch: Sequence[Dialogue], config: TrainConfig) -> float:
    """-sum_n J_n log pi_n  -  lambda_gate * sum log p(gate labels), with returns held fixed."""
    total = 0.0
    for user, dialogues in by_user(batch).items():
        mp = model.teacher_forward(user, dialogues, keep=False)
        word_w, gate_w = _weights(dialogues, config, mp.mask.shape[1])
        total -= float((word_w * mp.dec.word_logp).sum() + (gate_w * mp.dec.gate_logp).sum())
    return total


@dataclass
class StepStats:
    loss: float = 0.0
    nll: float = 0.0          # summed word negative log-likelihood
    tokens: int = 0
    gate_correct: int = 0
    gate_total: int = 0
    return_sum: float = 0.0   # sum of first-turn returns
    trajectories: int = 0

    def add(self, other: "StepStats") -> None:
        for k, v in asdict(other).items():
            setattr(self, k, getattr(self, k) + v)

    @property
    def mean_nll(self) -> float:
        return self.nll / max(self.tokens, 1)

    @property
    def gate_accuracy(self) -> float | None:
        return self.gate_correct / self.gate_total if self.gate_total else None

    @property
    def mean_return(self) -> float:
        return self.return_sum / max(self.trajectories, 1)


def _gate_counts(model: DialogueModel, mp, dialogues) -> tuple[int, int]:
    if not model.has_gates:
        return 0, 0
    _, gates, mask = model.response_arrays(dialogues)
    pred = mp.dec.gate_prob > 0.5
    return int(((pred == (gates == 1)) & mask).sum()), int(mask.sum())


def accumulate_gradients(model: DialogueModel, batch: Sequence[Dialogue], config: TrainConfig) -> StepStats:
    """Add the surrogate-loss gradient of `batch` into the parameters' grads."""
    if not batch:
        raise ValueError("empty batch")
    stats = StepStats()
    for user, dialogues in by_user(batch).items():
        mp = model.teacher_forward(user, dialogues, keep=True)
        word_w, gate_w = _weights(dialogues, config, mp.mask.shape[1])
        model.backward(mp, word_w, gate_w)
        correct, total = _gate_counts(model, mp, dialogues)
        stats.add(StepStats(
            loss=-float((word_w * mp.dec.word_logp).sum() + (gate_w * mp.dec.gate_logp).sum()),
            nll=-float(mp.dec.word_logp.sum()), tokens=int(mp.mask.sum()),
            gate_correct=correct, gate_total=total,
            return_sum=float(sum(returns(d.rewards, config.gamma)[0] for d in dialogues if d.turns)),
            trajectories=len(dialogues)))
    return stats


def batch_params(model: DialogueModel, batch: Sequence[Dialogue]):
    """Union of the parameters every user in the batch can reach, in a fixed order."""
    seen = {}
    for user in sorted({d.user_id for d in batch}):
        for p in model.user_params(user):
            seen.setdefault(p.name, p)
    return list(seen.values())


def reinforce_update(model: DialogueModel, batch: Sequence[Dialogue], config: TrainConfig,
                     adam: AdamState) -> StepStats:
    """One Adam step on the REINFORCE surrogate plus the supervised gate term."""
    stats = accumulate_gradients(model, batch, config)
    params = batch_params(model, batch)
    adam_step(params, adam)
    zero_grads(params)
    return stats


def gate_accuracy(model: DialogueModel, dialogues: Sequence[Dialogue]) -> float | None:
    """Teacher-forced accuracy of thresholded gate predictions against the labels."""
    correct = total = 0
    for user, ds in by_user(dialogues).items():
        mp = model.teacher_forward(user, ds, keep=False)
        c, t = _gate_counts(model, mp, ds)
        correct, total = correct + c, total + t
    return correct / total if total else None


def corpus_vocab(corpus: Sequence[Dialogue]):
    """Training tokens plus every token the simulator can produce."""
    texts = [t.x for d in corpus for t in d.turns] + [t.y for d in corpus for t in d.turns]
    return build_vocab(texts, extra_tokens=(SEP,) + inventory_tokens())


def check_corpus(model: DialogueModel, corpus: Sequence[Dialogue]) -> None:
    known = set(model.user_ids)
    for d in corpus:
        if d.user_id not in known:
            raise ValueError(f"corpus user {d.user_id!r} not in the model's users")
        for t in d.turns:
            missing = [w for w in t.x + t.y if w not in model.vocab]
            if missing:
                raise ValueError(f"tokens {missing[:5]} of user {d.user_id!r} missing from vocabulary")


def new_model(corpus: Sequence[Dialogue], config: TrainConfig,
              model_config: ModelConfig | None = None, user_ids: Sequence[str] | None = None) -> DialogueModel:
    users = list(user_ids) if user_ids is not None else sorted({d.user_id for d in corpus})
    return DialogueModel(config.model_kind, corpus_vocab(corpus), users, model_config, seed=config.seed)


def train(corpus: Sequence[Dialogue], config: TrainConfig, model_config: ModelConfig | None = None,
          model: DialogueModel | None = None, adam: AdamState | None = None,
          log: Callable[[dict], None] | None = None, start_epoch: int = 0):
    """Round-robin REINFORCE epochs, one batch per user in a seeded order.

    Returns (model, adam state, per-epoch metric records). Passing a model and
    its Adam state with `start_epoch` resumes a run.
    """
    model = model or new_model(corpus, config, model_config)
    check_corpus(model, corpus)
    adam = adam or AdamState(lr=config.lr)
    groups = by_user(corpus)
    users = sorted(groups)
    history = []
    for epoch in range(start_epoch, config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(users))
        stats = StepStats()
        for k in order:
            stats.add(reinforce_update(model, groups[users[k]], config, adam))
        rec = {"epoch": epoch + 1, "model_kind": model.kind, "seed": config.seed,
               "nll": stats.mean_nll, "gate_accuracy": stats.gate_accuracy,
               "mean_return": stats.mean_return}
        history.append(rec)
        if log:
            log(rec)
    return model, adam, history


def metrics_line(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True)


def bandit_surrogate(n_updates: int = 2000, lr: float = 1e-2, seed: int = 0, threshold: float = 0.95,
                     model_kind: str = "ST-S2S"):
    """Two-armed bandit: the response "good" earns 1, anything else 0.

    Each update samples a response from the model, scores it, and applies
    `reinforce_update`. Returns the number of updates until the rewarded
    word's probability exceeded `threshold` (None if it never did) and the
    probability trajectory.
    """
    good = Dialogue("u", [Turn(["go"], ["good"], [0], 1.0)])
    config = TrainConfig(model_kind=model_kind, lambda_gate=0.0, lr=lr, seed=seed)
    model = DialogueModel(model_kind, build_vocab([["go", "good", "bad"]], extra_tokens=(SEP,)), ["u"],
                          ModelConfig(d_hidden=8, d_emb=8), seed=seed)
    adam = AdamState(lr=lr)
    rng = np.random.default_rng(seed)

    def p_good() -> float:
        return float(np.exp(model.teacher_forward("u", [good], keep=False).dec.word_logp[0, 0]))

    probs = [p_good()]
    for step in range(1, n_updates + 1):
        cp = model.contexts("u", [good], keep=False)
        res = model.decode("u", cp.h_ctx, cp.h_init, mode="sample", max_len=1, rng=rng)
        word = model.vocab.decode(res.words[0])
        reward = 1.0 if word == ["good"] else 0.0
        reinforce_update(model, [Dialogue("u", [Turn(["go"], word, [0] * len(word), reward)])], config, adam)
        probs.append(p_good())
        if probs[-1] > threshold:
            return step, probs
    return None, probs
