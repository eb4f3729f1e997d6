"""Corpus files, per-(model, seed) training and evaluation runs."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .core import AdamState
from .data import Dialogue, read_corpus, write_corpus
from .evaluation import MetricReport, aggregate_seeds, evaluate_offline
from .simulator import SlotInventory, UserProfile, generate_corpus, run_online_eval
from .training import metrics_line, new_model, train


def write_corpus_dir(out: str | Path, profiles, train_set, test_set) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(out / "train.jsonl", train_set)
    write_corpus(out / "test.jsonl", test_set)
    (out / "profiles.json").write_text(json.dumps([p.to_json() for p in profiles], indent=1) + "\n",
                                       encoding="utf-8")


def gen_data(cfg: RunConfig, out: str | Path | None = None) -> Path:
    out = Path(out or cfg.data_dir)
    profiles, tr, te = generate_corpus(cfg.n_users, cfg.train_per_user, cfg.test_per_user, cfg.data_seed)
    write_corpus_dir(out, profiles, tr, te)
    return out


def load_corpus_dir(path: str | Path) -> tuple[list[UserProfile], list[Dialogue], list[Dialogue]]:
    path = Path(path)
    for name in ("profiles.json", "train.jsonl", "test.jsonl"):
        if not (path / name).exists():
            raise FileNotFoundError(f"missing corpus file {path / name}")
    profiles = [UserProfile.from_json(o) for o in json.loads((path / "profiles.json").read_text(encoding="utf-8"))]
    return profiles, read_corpus(path / "train.jsonl"), read_corpus(path / "test.jsonl")


def checkpoint_path(out_dir: str | Path, kind: str, seed: int) -> Path:
    return Path(out_dir) / kind / f"seed{seed}.ckpt"


def train_run(cfg: RunConfig, kind: str, seed: int, train_set: Sequence[Dialogue],
              user_ids: Sequence[str] | None = None, out_dir: str | Path | None = None,
              resume: bool = False):
    """Train one (model, seed); with `out_dir`, write its checkpoint and metrics log."""
    tcfg = cfg.train_config(kind, seed)
    model = adam = None
    start = 0
    ckpt = checkpoint_path(out_dir, kind, seed) if out_dir is not None else None
    if resume and ckpt is not None and ckpt.exists():
        c = load_checkpoint(ckpt)
        model, adam, start = c.model, c.adam, c.epoch
    if model is None:
        model = new_model(train_set, tcfg, cfg.model_config(), user_ids)
    log_fh = None
    if ckpt is not None:
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        log_fh = open(ckpt.with_suffix(".metrics.jsonl"), "a" if start else "w", encoding="utf-8")
    try:
        adam = adam or AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
        log = (lambda rec: log_fh.write(metrics_line(rec) + "\n")) if log_fh else None
        model, adam, history = train(train_set, tcfg, model=model, adam=adam, log=log, start_epoch=start)
    finally:
        if log_fh:
            log_fh.close()
    if ckpt is not None:
        save_checkpoint(ckpt, model, adam, epoch=max(cfg.epochs, start), seed=seed)
    return model, adam, history


def evaluate_run(cfg: RunConfig, model, seed: int, test_set: Sequence[Dialogue],
                 profiles: Sequence[UserProfile], online: bool = True) -> dict:
    off = evaluate_offline(model, test_set, n_samples=cfg.n_samples, seed=seed)
    rec = {"seed": seed, "bleu": off.bleu, "slot_error": off.slot_error}
    if online:
        on = run_online_eval(model, profiles, cfg.online_orders, seed=seed,
                             inventory=SlotInventory.for_profiles(profiles))
        rec.update(reward=on.mean_reward, reward_std=on.std_reward, success=on.success_rate)
    return rec


def evaluate_models(cfg: RunConfig, corpus_dir: str | Path, out_dir: str | Path,
                    online: bool = True) -> list[MetricReport]:
    profiles, _, test_set = load_corpus_dir(corpus_dir)
    reports = []
    for kind in cfg.models:
        recs = []
        for seed in cfg.seeds:
            path = checkpoint_path(out_dir, kind, seed)
            if not path.exists():
                raise FileNotFoundError(f"missing checkpoint {path}")
            recs.append(evaluate_run(cfg, load_checkpoint(path).model, seed, test_set, profiles, online))
        reports.append(aggregate_seeds(recs, kind))
    return reports
