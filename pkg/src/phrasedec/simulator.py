"""Rule-based coffee-ordering user, scripted ground-truth agent, corpus generation
and template-based online evaluation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from typing import Protocol, Sequence

import numpy as np

from .data import Dialogue, Turn

SLOTS = ("type", "temp", "size")
SLOT_ORDER = ("type", "temp", "size", "addr")
SLOT_VALUES = {
    "type": ("latte", "macchiato", "mocha", "americano", "espresso"),
    "temp": ("hot", "iced"),
    "size": ("short", "tall", "grande"),
}
# one pool per address position; every token appears in exactly one pool
ADDRESS_POOLS = (
    ("11", "23", "37", "42", "58", "64", "71", "86", "93", "105", "118", "127"),
    ("maple", "cedar", "pine", "oak", "birch", "elm", "willow", "aspen", "hazel", "alder", "spruce", "rowan"),
    ("street", "road", "avenue", "lane", "drive", "court", "way", "place", "terrace", "row", "crescent", "boulevard"),
    ("north", "south", "east", "west", "central", "harbor", "hill", "park", "bay", "river", "market", "garden"),
)
ADDRESS_LEN = len(ADDRESS_POOLS)

P_FAVORITE = 0.8
P_BEST_REPLY = 0.8
MAX_EXCHANGES = 12
MAX_REJECTIONS = 2

REWARDS = {
    "confirm_personal": 0.3,
    "provide_info": 0.1,
    "task_success": 1.0,
    "reject": -0.2,
    "turn_penalty": -0.05,
}


def _load_templates(name: str) -> dict[str, list[str]]:
    text = resources.files(__package__).joinpath(f"data/{name}").read_text(encoding="utf-8")
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        act, template = line.split("\t", 1)
        out[act] = template.split()
    return out


AGENT_TEMPLATES = _load_templates("agent_templates.txt")
USER_TEMPLATES = _load_templates("user_templates.txt")
AGENT_ACTS = tuple(AGENT_TEMPLATES)


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    favorite_type: str
    favorite_temp: str
    favorite_size: str
    address: tuple[str, ...]

    def favorite(self, slot: str):
        return self.address if slot == "addr" else getattr(self, f"favorite_{slot}")

    def to_json(self) -> dict:
        return {"user_id": self.user_id, "type": self.favorite_type, "temp": self.favorite_temp,
                "size": self.favorite_size, "addr": list(self.address)}

    @classmethod
    def from_json(cls, obj: dict) -> "UserProfile":
        return cls(obj["user_id"], obj["type"], obj["temp"], obj["size"], tuple(obj["addr"]))


@dataclass(frozen=True)
class OrderGoal:
    type: str
    temp: str
    size: str
    addr: tuple[str, ...]
    is_favorite: bool

    def value(self, slot: str):
        return getattr(self, slot)

    def to_json(self) -> dict:
        return {"type": self.type, "temp": self.temp, "size": self.size,
                "addr": list(self.addr), "is_favorite": self.is_favorite}

    @classmethod
    def from_json(cls, obj: dict) -> "OrderGoal":
        return cls(obj["type"], obj["temp"], obj["size"], tuple(obj["addr"]), bool(obj["is_favorite"]))


@dataclass(frozen=True)
class SlotInventory:
    """Values a template placeholder may be filled with."""
    values: dict
    addresses: tuple[tuple[str, ...], ...]

    @classmethod
    def for_profiles(cls, profiles: Sequence[UserProfile]) -> "SlotInventory":
        return cls(dict(SLOT_VALUES), tuple(p.address for p in profiles))

    def slot_of(self, token: str) -> str | None:
        for slot in SLOTS:
            if token in self.values[slot]:
                return slot
        return None

    @property
    def address_tokens(self) -> frozenset[str]:
        return frozenset(itertools.chain.from_iterable(ADDRESS_POOLS))


@dataclass(frozen=True)
class Utterance:
    act: str
    tokens: tuple[str, ...]
    labels: tuple[int, ...]
    random_pick: bool = False


def render(template: Sequence[str], fill: dict, act: str = "") -> Utterance:
    """Fill placeholders; tokens produced by a placeholder get label 1."""
    tokens, labels = [], []
    for tok in template:
        if tok.startswith("{") and tok.endswith("}"):
            val = fill[tok[1:-1]]
            vals = list(val) if isinstance(val, (tuple, list)) else [val]
            tokens += vals
            labels += [1] * len(vals)
        else:
            tokens.append(tok)
            labels.append(0)
    return Utterance(act, tuple(tokens), tuple(labels))


def render_agent(act: str, fill: dict | None = None) -> Utterance:
    return render(AGENT_TEMPLATES[act], fill or {}, act)


def render_user(act: str, fill: dict | None = None) -> Utterance:
    return render(USER_TEMPLATES[act], fill or {}, act)


def parse_agent(tokens: Sequence[str]) -> tuple[str, dict] | None:
    """Match an agent utterance against the template inventory; None when nothing matches.

    Slot placeholders accept one token from their value set; {addr} accepts
    ADDRESS_LEN address-pool tokens.
    """
    tokens = list(tokens)
    addr_tokens = frozenset(itertools.chain.from_iterable(ADDRESS_POOLS))
    for act, template in AGENT_TEMPLATES.items():
        fill, i, ok = {}, 0, True
        for tok in template:
            if tok == "{addr}":
                span = tokens[i:i + ADDRESS_LEN]
                if len(span) != ADDRESS_LEN or any(t not in addr_tokens for t in span):
                    ok = False
                    break
                fill["addr"] = tuple(span)
                i += ADDRESS_LEN
            elif tok.startswith("{"):
                slot = tok[1:-1]
                if i >= len(tokens) or tokens[i] not in SLOT_VALUES[slot]:
                    ok = False
                    break
                fill[slot] = tokens[i]
                i += 1
            else:
                if i >= len(tokens) or tokens[i] != tok:
                    ok = False
                    break
                i += 1
        if ok and i == len(tokens):
            return act, fill
    return None


def sample_profile(rng: np.random.Generator, user_id: str = "u0",
                   taken_addresses: Sequence[Sequence[str]] = ()) -> UserProfile:
    """Uniform favorites; address tokens avoid those already used by `taken_addresses`
    at the same position while the pools allow it, and the address is never reused."""
    fav = {s: SLOT_VALUES[s][rng.integers(len(SLOT_VALUES[s]))] for s in SLOTS}
    taken = {tuple(a) for a in taken_addresses}
    while True:
        addr = []
        for k, pool in enumerate(ADDRESS_POOLS):
            used = {a[k] for a in taken}
            free = [t for t in pool if t not in used] or list(pool)
            addr.append(free[rng.integers(len(free))])
        if tuple(addr) not in taken:
            break
    return UserProfile(user_id, fav["type"], fav["temp"], fav["size"], tuple(addr))


def sample_profiles(n_users: int, rng: np.random.Generator) -> list[UserProfile]:
    out: list[UserProfile] = []
    width = len(str(max(n_users - 1, 0)))
    for k in range(n_users):
        out.append(sample_profile(rng, f"u{k:0{max(width, 2)}d}", [p.address for p in out]))
    return out


def sample_goal(profile: UserProfile, rng: np.random.Generator) -> OrderGoal:
    if rng.random() < P_FAVORITE:
        return OrderGoal(profile.favorite_type, profile.favorite_temp, profile.favorite_size,
                         profile.address, True)
    favorite = tuple(profile.favorite(s) for s in SLOTS)
    while True:
        vals = tuple(SLOT_VALUES[s][rng.integers(len(SLOT_VALUES[s]))] for s in SLOTS)
        if vals != favorite:
            return OrderGoal(*vals, profile.address, False)


@dataclass(frozen=True)
class SimState:
    profile: UserProfile
    goal: OrderGoal
    provided: frozenset = frozenset()    # slots the user has answered
    named: tuple = ()                     # (slot, value) pairs the user stated explicitly
    turns: int = 0
    rejections: int = 0
    success: bool = False
    terminal: bool = False
    events: tuple = ()                    # one tuple of event kinds per exchange

    @property
    def total_reward(self) -> float:
        return sum(REWARDS[k] for turn in self.events for k in turn)


def new_state(profile: UserProfile, goal: OrderGoal) -> SimState:
    return SimState(profile, goal)


def opening_utterance() -> Utterance:
    return render_user("open")


class TerminalStateError(RuntimeError):
    pass


def user_respond(state: SimState, agent_tokens: Sequence[str]) -> tuple[Utterance, list[str], SimState]:
    """React to one agent utterance: (user utterance, event kinds, next state)."""
    if state.terminal:
        raise TerminalStateError("dialogue already finished")
    events: list[str] = []
    provided, named = set(state.provided), dict(state.named)
    rejections, success = state.rejections, False
    parsed = parse_agent(agent_tokens)
    act, fill = parsed if parsed else (None, {})

    if act is None:
        reply = render_user("pardon")
        events.append("reject")
    elif act.startswith("ask_"):
        slot = act[4:]
        if slot == "addr":
            reply = render_user("give_addr")
        elif state.goal.value(slot) == state.profile.favorite(slot):
            reply = render_user("usual")
        else:
            reply = render_user(f"give_{slot}", {slot: state.goal.value(slot)})
            named[slot] = state.goal.value(slot)
        if slot not in provided:
            events.append("provide_info")
            provided.add(slot)
    elif act == "confirm":
        if all(fill[s] == state.goal.value(s) for s in SLOT_ORDER):
            reply = render_user("yes")
            events += ["confirm_personal", "task_success"]
            success = True
        else:
            reply = render_user("no")
            events.append("reject")
    elif act == "greet":
        reply = render_user("open")
    elif act == "wait":
        reply = render_user("ok")
    else:  # close before the order is placed
        reply = render_user("not_done")
        events.append("reject")
    events.append("turn_penalty")

    rejections += events.count("reject")
    turns = state.turns + 1
    terminal = success or rejections >= MAX_REJECTIONS or turns >= MAX_EXCHANGES
    nxt = replace(state, provided=frozenset(provided), named=tuple(sorted(named.items())),
                  turns=turns, rejections=rejections, success=success, terminal=terminal,
                  events=state.events + (tuple(events),))
    return reply, events, nxt


def best_reply(state: SimState) -> Utterance:
    for slot in SLOT_ORDER:
        if slot not in state.provided:
            return render_agent(f"ask_{slot}")
    return render_agent("confirm", state.goal.to_json())


def ground_truth_reply(state: SimState, rng: np.random.Generator) -> Utterance:
    """Best reply with probability 0.8, otherwise a uniformly drawn template filled with the goal."""
    if rng.random() < P_BEST_REPLY:
        return best_reply(state)
    act = AGENT_ACTS[rng.integers(len(AGENT_ACTS))]
    return replace(render_agent(act, state.goal.to_json()), random_pick=True)


def simulate_dialogue(profile: UserProfile, rng: np.random.Generator) -> Dialogue:
    """Roll the ground-truth agent against the user until the dialogue ends."""
    state = new_state(profile, sample_goal(profile, rng))
    question = opening_utterance()
    turns, events = [], []
    while not state.terminal:
        response = ground_truth_reply(state, rng)
        reaction, ev, state = user_respond(state, response.tokens)
        turns.append(Turn(list(question.tokens), list(response.tokens), list(response.labels),
                          turn_reward(ev)))
        events.append(ev)
        question = reaction
    return Dialogue(profile.user_id, turns, state.goal.to_json(), events)


def turn_reward(events: Sequence[str]) -> float:
    return float(sum(REWARDS[k] for k in events))


def generate_corpus(n_users: int = 10, train_per_user: int = 5, test_per_user: int = 200,
                    seed: int = 0) -> tuple[list[UserProfile], list[Dialogue], list[Dialogue]]:
    """Profiles plus ground-truth-agent train and test dialogues, drawn from independent streams."""
    prof_ss, train_ss, test_ss = np.random.SeedSequence(seed).spawn(3)
    profiles = sample_profiles(n_users, np.random.default_rng(prof_ss))
    train_rng, test_rng = np.random.default_rng(train_ss), np.random.default_rng(test_ss)
    train = [simulate_dialogue(p, train_rng) for p in profiles for _ in range(train_per_user)]
    test = [simulate_dialogue(p, test_rng) for p in profiles for _ in range(test_per_user)]
    return profiles, train, test


# ---------------------------------------------------------------- online evaluation

def candidate_replies(state: SimState, inventory: SlotInventory) -> list[Utterance]:
    """Every agent template, filled with what the user stated explicitly; slots the
    user has not named are enumerated over the inventory."""
    return _candidates(state.named, inventory.addresses)


@lru_cache(maxsize=256)
def _candidates(named: tuple, addresses: tuple) -> list[Utterance]:
    inventory = SlotInventory(dict(SLOT_VALUES), addresses)
    named = dict(named)
    out = []
    for act, template in AGENT_TEMPLATES.items():
        if act != "confirm":
            out.append(render(template, {}, act))
            continue
        choices = [[named[s]] if s in named else list(inventory.values[s]) for s in SLOTS]
        for t, tp, sz, addr in itertools.product(*choices, inventory.addresses):
            out.append(render(template, {"type": t, "temp": tp, "size": sz, "addr": addr}, act))
    return out


class EmptyCandidatesError(ValueError):
    pass


def _best_per_segment(scores: np.ndarray, sizes: Sequence[int]) -> list[int]:
    # argmax returns the first maximum, which is the tie-break rule
    out, start = [], 0
    for n in sizes:
        out.append(int(np.argmax(scores[start:start + n])))
        start += n
    return out


def score_candidates(model, user_id: str, h_ctx: np.ndarray, h_init: np.ndarray,
                     groups: Sequence[Sequence[Utterance]]) -> np.ndarray:
    """Length-normalised log-probability of every candidate; row i of h_ctx/h_init
    is the context of groups[i]."""
    vocab = model.vocab
    rows, responses, labels = [], [], []
    for i, cands in enumerate(groups):
        for c in cands:
            rows.append(i)
            responses.append(vocab.encode(c.tokens))
            labels.append(list(c.labels))
    return model.score_sequences(user_id, h_ctx, h_init, responses, labels, rows=rows)


def template_select(model, user_id: str, h_ctx: np.ndarray, h_init: np.ndarray,
                    candidates: Sequence[Utterance]) -> Utterance:
    """Highest-scoring candidate for one dialogue context; ties go to the earliest."""
    if not candidates:
        raise EmptyCandidatesError("no candidate replies")
    if len(candidates) == 1:
        return candidates[0]
    scores = score_candidates(model, user_id, np.atleast_2d(h_ctx), np.atleast_2d(h_init), [candidates])
    return candidates[int(np.argmax(scores))]


class Agent(Protocol):
    def begin(self, user_id: str, n: int) -> None: ...

    def act(self, idx: Sequence[int], user_utterances: Sequence[Utterance],
            states: Sequence[SimState]) -> list[Utterance]: ...


class ModelAgent:
    """Drives `n` concurrent dialogues of one user with template selection.

    The choice is a deterministic function of the dialogue so far, so
    dialogues with identical histories are scored once.
    """

    def __init__(self, model, inventory: SlotInventory):
        self.model = model
        self.inventory = inventory

    def begin(self, user_id: str, n: int) -> None:
        self.user_id = user_id
        self.tracker = self.model.tracker(user_id, n)
        self.history = [()] * n

    def act(self, idx, user_utterances, states):
        vocab = self.model.vocab
        h_ctx, h_init = self.tracker.observe_user(idx, [vocab.encode(u.tokens) for u in user_utterances])
        reps: dict = {}
        owner = []
        for k, (i, u, s) in enumerate(zip(idx, user_utterances, states)):
            self.history[i] = self.history[i] + (u.tokens,)
            owner.append(reps.setdefault((self.history[i], s.named), k))
        firsts = list(dict.fromkeys(owner))
        groups = [candidate_replies(states[k], self.inventory) for k in firsts]
        scores = score_candidates(self.model, self.user_id, h_ctx[firsts], h_init[firsts], groups)
        chosen = {k: g[j] for k, g, j in zip(firsts, groups, _best_per_segment(scores, [len(g) for g in groups]))}
        picks = [chosen[k] for k in owner]
        for i, p in zip(idx, picks):
            self.history[i] = self.history[i] + (p.tokens,)
        self.tracker.observe_agent(idx, [vocab.encode(p.tokens) for p in picks])
        return picks


class OracleAgent:
    """Cheating policy that follows the best-reply script with the true goal."""

    def begin(self, user_id: str, n: int) -> None:
        pass

    def act(self, idx, user_utterances, states):
        return [best_reply(s) for s in states]


@dataclass
class OnlineReport:
    per_user: dict = field(default_factory=dict)   # user_id -> {"mean", "std", "success"}
    rewards: list = field(default_factory=list)    # total reward per dialogue
    successes: list = field(default_factory=list)

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards))

    @property
    def std_reward(self) -> float:
        return float(np.std(self.rewards))

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.successes))


def run_online_eval(agent, profiles: Sequence[UserProfile], n_orders_per_user: int = 200,
                    seed: int = 0, inventory: SlotInventory | None = None) -> OnlineReport:
    """Fresh dialogues per user; each user's dialogues advance in lockstep so the agent can batch."""
    if not hasattr(agent, "act"):
        agent = ModelAgent(agent, inventory or SlotInventory.for_profiles(profiles))
    report = OnlineReport()
    streams = np.random.SeedSequence(seed).spawn(len(profiles))
    for profile, ss in zip(profiles, streams):
        rng = np.random.default_rng(ss)
        states = [new_state(profile, sample_goal(profile, rng)) for _ in range(n_orders_per_user)]
        utter = [opening_utterance()] * n_orders_per_user
        agent.begin(profile.user_id, n_orders_per_user)
        live = list(range(n_orders_per_user))
        while live:
            replies = agent.act(live, [utter[i] for i in live], [states[i] for i in live])
            for i, rep in zip(live, replies):
                utter[i], _, states[i] = user_respond(states[i], rep.tokens)
            live = [i for i in live if not states[i].terminal]
        totals = [s.total_reward for s in states]
        succ = [s.success for s in states]
        report.per_user[profile.user_id] = {"mean": float(np.mean(totals)), "std": float(np.std(totals)),
                                            "success": float(np.mean(succ))}
        report.rewards += totals
        report.successes += succ
    return report


@lru_cache(maxsize=1)
def inventory_tokens() -> tuple[str, ...]:
    """Every token the simulator can emit, for vocabulary construction."""
    toks = set(itertools.chain.from_iterable(ADDRESS_POOLS))
    toks.update(itertools.chain.from_iterable(SLOT_VALUES.values()))
    for t in itertools.chain(AGENT_TEMPLATES.values(), USER_TEMPLATES.values()):
        toks.update(x for x in t if not x.startswith("{"))
    return tuple(sorted(toks))
