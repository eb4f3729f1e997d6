"""Offline metrics (sentence BLEU, slot error rate) and aggregation over seeds."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dialogue, by_user
from .simulator import ADDRESS_POOLS, SLOT_VALUES, SLOTS

METRICS = ("bleu", "reward", "success", "slot_error")


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Sequence[str], references: Sequence[Sequence[str]], max_n: int = 2) -> float:
    """Sentence BLEU: clipped n-gram precisions for n = 1..max_n, geometric mean,
    brevity penalty against the closest reference length. No smoothing.

    A candidate shorter than max_n has no n-grams of the higher orders; the
    mean then runs over the orders it does have.
    """
    if not references:
        raise ValueError("at least one reference is required")
    c = len(candidate)
    if c == 0:
        return 0.0
    orders = min(max_n, c)
    log_p = 0.0
    for n in range(1, orders + 1):
        cand = _ngrams(candidate, n)
        total = sum(cand.values())
        best: Counter = Counter()
        for ref in references:
            best |= _ngrams(ref, n)
        clipped = sum(min(cnt, best[g]) for g, cnt in cand.items())
        if clipped == 0:
            return 0.0
        log_p += math.log(clipped / total) / orders
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


_ADDRESS_TOKENS = frozenset(t for pool in ADDRESS_POOLS for t in pool)
_SLOT_OF = {v: s for s in SLOTS for v in SLOT_VALUES[s]}


def slot_mentions(tokens: Sequence[str]) -> list[tuple[str, object]]:
    """(slot, value) for each slot token; a maximal run of address tokens is one address mention."""
    out, run = [], []
    for tok in list(tokens) + [None]:
        if tok in _ADDRESS_TOKENS:
            run.append(tok)
            continue
        if run:
            out.append(("addr", tuple(run)))
            run = []
        if tok in _SLOT_OF:
            out.append((_SLOT_OF[tok], tok))
    return out


def slot_error_rate(tokens: Sequence[str], goal: dict) -> float | None:
    """Wrong slot mentions over all slot mentions; None when the sentence has none."""
    mentions = slot_mentions(tokens)
    if not mentions:
        return None
    want = {s: goal[s] for s in SLOTS}
    want["addr"] = tuple(goal["addr"])
    wrong = sum(value != want[slot] for slot, value in mentions)
    return wrong / len(mentions)


@dataclass
class OfflineReport:
    bleu: float
    slot_error: float | None
    n_responses: int
    n_slot_responses: int


def evaluate_offline(model, test: Sequence[Dialogue], n_samples: int = 5, seed: int = 0,
                     mode: str = "sample") -> OfflineReport:
    """Sample responses for every test turn given its reference history; average BLEU
    against the reference and slot error rate against the dialogue goal."""
    rng = np.random.default_rng(seed)
    bleus, errors = [], []
    vocab = model.vocab
    for user, dialogues in sorted(by_user(test).items()):
        cp = model.contexts(user, dialogues, keep=False)
        h_ctx = np.repeat(cp.h_ctx, n_samples, axis=0)
        h_init = np.repeat(cp.h_init, n_samples, axis=0)
        res = model.decode(user, h_ctx, h_init, mode=mode, rng=rng)
        for k, words in enumerate(res.words):
            i, n = cp.rows[k // n_samples]
            d = dialogues[i]
            tokens = vocab.decode(words)
            bleus.append(bleu(tokens, [d.turns[n].y]))
            if d.goal is not None:
                e = slot_error_rate(tokens, d.goal)
                if e is not None:
                    errors.append(e)
    return OfflineReport(float(np.mean(bleus)) if bleus else 0.0,
                         float(np.mean(errors)) if errors else None, len(bleus), len(errors))


@dataclass
class MetricReport:
    """Per-seed metric values for one model; aggregates are derived."""
    model_kind: str
    seeds: list = field(default_factory=list)
    values: dict = field(default_factory=dict)   # metric -> list aligned with seeds

    def add(self, seed: int, **metrics) -> None:
        self.seeds.append(seed)
        for k, v in metrics.items():
            self.values.setdefault(k, []).append(v)

    def mean(self, metric: str) -> float | None:
        vals = [v for v in self.values.get(metric, []) if v is not None]
        return float(np.mean(vals)) if vals else None

    def std(self, metric: str) -> float | None:
        vals = [v for v in self.values.get(metric, []) if v is not None]
        return float(np.std(vals, ddof=1)) if len(vals) >= 2 else None

    def to_json(self) -> dict:
        return {"model_kind": self.model_kind, "seeds": self.seeds, "values": self.values,
                "mean": {m: self.mean(m) for m in self.values},
                "std": {m: self.std(m) for m in self.values}}


def aggregate_seeds(reports: Sequence[dict], model_kind: str = "") -> MetricReport:
    """Combine per-seed metric dicts (each with a "seed" key) into one report."""
    if not reports:
        raise ValueError("no reports to aggregate")
    out = MetricReport(model_kind)
    for k, rep in enumerate(reports):
        metrics = {m: v for m, v in rep.items() if m != "seed"}
        out.add(rep.get("seed", k), **metrics)
    return out


def _cell(report: MetricReport, metric: str) -> str:
    m = report.mean(metric)
    if m is None:
        return "-"
    s = report.std(metric)
    return f"{m:.4f}" if s is None else f"{m:.4f} ± {s:.4f}"


def format_table(reports: Sequence[MetricReport], metrics: Sequence[str] = METRICS) -> str:
    """Plain-text table: one row per model, mean ± std per metric column."""
    headers = {"bleu": "BLEU", "reward": "Reward", "success": "SuccessRate", "slot_error": "SlotError"}
    cols = ["Model"] + [headers.get(m, m) for m in metrics]
    rows = [[r.model_kind] + [_cell(r, m) for m in metrics] for r in reports]
    widths = [max(len(str(x)) for x in col) for col in zip(cols, *rows)]
    line = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    return "\n".join([line(cols), line(["-" * w for w in widths])] + [line(r) for r in rows])


def report_lines(reports: Sequence[MetricReport]) -> str:
    return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in reports)
