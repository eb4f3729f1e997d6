"""Dialogue records and the line-delimited JSON corpus format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable


@dataclass
class Turn:
    x: list[str]          # user question tokens
    y: list[str]          # agent response tokens
    o: list[int]          # personal word label per response token
    r: float = 0.0        # reward received for the response

    def __post_init__(self):
        if len(self.o) != len(self.y):
            raise ValueError(f"label length {len(self.o)} != response length {len(self.y)}")
        if any(v not in (0, 1) for v in self.o):
            raise ValueError("personal word labels must be 0 or 1")


@dataclass
class Dialogue:
    user_id: str
    turns: list[Turn]
    # simulator goal (slot values, address, is_favorite); only used by evaluation
    goal: dict | None = None
    events: list[list[str]] = field(default_factory=list, repr=False)

    @property
    def rewards(self) -> list[float]:
        return [t.r for t in self.turns]

    def to_json(self) -> dict:
        out = {"user_id": self.user_id,
               "turns": [{"x": t.x, "y": t.y, "o": t.o, "r": t.r} for t in self.turns]}
        if self.goal is not None:
            out["goal"] = self.goal
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Dialogue":
        turns = [Turn(list(t["x"]), list(t["y"]), [int(v) for v in t["o"]], float(t["r"])) for t in obj["turns"]]
        return cls(str(obj["user_id"]), turns, obj.get("goal"))


def write_corpus(path: str | Path, dialogues: Iterable[Dialogue]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(d.to_json(), separators=(",", ":")) + "\n")


def read_corpus(path: str | Path) -> list[Dialogue]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(Dialogue.from_json(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad dialogue record ({exc})") from exc
    return out


def by_user(dialogues: Iterable[Dialogue]) -> dict[str, list[Dialogue]]:
    out: dict[str, list[Dialogue]] = {}
    for d in dialogues:
        out.setdefault(d.user_id, []).append(d)
    return out
