"""Command-line entry point: gen-data, train, evaluate, simulate, chat."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .decoders import UnknownUserError
from .evaluation import format_table, report_lines
from .experiment import (checkpoint_path, evaluate_models, gen_data, load_corpus_dir, train_run)
from .simulator import (ModelAgent, OracleAgent, SlotInventory, new_state, opening_utterance,
                        run_online_eval, sample_goal, user_respond)
from .vocab import tokenize


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if getattr(args, "model", None):
        out["models"] = args.model
    if getattr(args, "seed", None) is not None:
        out["seeds"] = str(args.seed)
    if getattr(args, "data", None):
        out["data_dir"] = args.data
    if getattr(args, "out", None):
        out["out_dir" if args.command != "gen-data" else "data_dir"] = args.out
    return out


def cmd_gen_data(args, cfg) -> int:
    if args.seed is not None:
        cfg.data_seed = args.seed
    out = gen_data(cfg)
    print(f"wrote {out}/train.jsonl, test.jsonl, profiles.json")
    return 0


def cmd_train(args, cfg) -> int:
    profiles, train_set, _ = load_corpus_dir(cfg.data_dir)
    users = [p.user_id for p in profiles]
    for kind in cfg.models:
        for seed in cfg.seeds:
            _, _, history = train_run(cfg, kind, seed, train_set, users, cfg.out_dir, resume=args.resume)
            last = history[-1] if history else {}
            print(f"{kind} seed={seed} -> {checkpoint_path(cfg.out_dir, kind, seed)} "
                  f"nll={last.get('nll', float('nan')):.4f}")
    return 0


def cmd_evaluate(args, cfg) -> int:
    reports = evaluate_models(cfg, cfg.data_dir, cfg.out_dir, online=not args.offline_only)
    metrics = ("bleu", "slot_error") if args.offline_only else ("bleu", "reward", "success", "slot_error")
    print(format_table(reports, metrics))
    Path(cfg.out_dir, "report.jsonl").write_text(report_lines(reports), encoding="utf-8")
    return 0


def _load_model(args, cfg):
    path = Path(args.checkpoint) if args.checkpoint else checkpoint_path(cfg.out_dir, cfg.models[0], cfg.seeds[0])
    return load_checkpoint(path).model


def _show(tokens, gates=None) -> str:
    """Join tokens, bracketing each run of personal-gate tokens."""
    if gates is None:
        return " ".join(tokens)
    out, run = [], []
    for tok, g in zip(list(tokens) + [None], list(gates) + [0]):
        if g == 1:
            run.append(tok)
            continue
        if run:
            out.append("[" + " ".join(run) + "]")
            run = []
        if tok is not None:
            out.append(tok)
    return " ".join(out)


def cmd_simulate(args, cfg) -> int:
    profiles, _, _ = load_corpus_dir(cfg.data_dir)
    seed = cfg.seeds[0]
    if args.agent == "oracle":
        agent = OracleAgent()
    else:
        agent = ModelAgent(_load_model(args, cfg), SlotInventory.for_profiles(profiles))
    if args.transcripts:
        rng = np.random.default_rng(seed)
        for profile in profiles[: args.transcripts]:
            state = new_state(profile, sample_goal(profile, rng))
            agent.begin(profile.user_id, 1)
            utter = opening_utterance()
            print(f"# user {profile.user_id} goal {state.goal.to_json()}")
            while not state.terminal:
                print(f"user : {' '.join(utter.tokens)}")
                reply = agent.act([0], [utter], [state])[0]
                print(f"agent: {_show(reply.tokens, reply.labels)}")
                utter, events, state = user_respond(state, reply.tokens)
                print(f"       events {events}")
            print(f"# total reward {state.total_reward:.2f} success={state.success}\n")
    rep = run_online_eval(agent, profiles, args.orders if args.orders is not None else cfg.online_orders, seed=seed)
    print(f"mean reward {rep.mean_reward:.4f} ± {rep.std_reward:.4f}  success rate {rep.success_rate:.4f}")
    for uid, r in rep.per_user.items():
        print(f"  {uid}: reward {r['mean']:.4f} ± {r['std']:.4f} success {r['success']:.4f}")
    return 0


def cmd_chat(args, cfg, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    model = _load_model(args, cfg)
    user = args.user or model.user_ids[0]
    if user not in model.user_ids:
        raise UnknownUserError(user, model.user_ids)
    tracker = model.tracker(user, 1)
    vocab = model.vocab
    print(f"chatting as user {user}; end input to quit", file=stdout)
    while True:
        print("> ", end="", file=stdout, flush=True)
        line = stdin.readline()
        if not line:
            print(file=stdout)
            break
        tokens = tokenize(line)
        if not tokens:
            continue
        h_ctx, h_init = tracker.observe_user([0], [vocab.encode(tokens)])
        res = model.decode(user, h_ctx, h_init, mode="greedy")
        words = vocab.decode(res.words[0])
        print(_show(words, res.gates[0] if model.has_gates else None), file=stdout, flush=True)
        tracker.observe_agent([0], [res.words[0]])
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "evaluate": cmd_evaluate,
            "simulate": cmd_simulate, "chat": cmd_chat}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phrasedec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="seed (data seed for gen-data)")
        p.add_argument("--model", help="model kind(s), comma-separated")
        p.add_argument("--out", help="output directory")
        p.add_argument("--data", help="corpus directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        if name == "train":
            p.add_argument("--resume", action="store_true", help="continue from existing checkpoints")
        if name == "evaluate":
            p.add_argument("--offline-only", action="store_true", help="skip the online simulator columns")
        if name in ("simulate", "chat"):
            p.add_argument("--checkpoint", help="checkpoint file (default: from --out/--model/--seed)")
        if name == "simulate":
            p.add_argument("--agent", choices=("model", "oracle"), default="model")
            p.add_argument("--orders", type=int, help="online dialogues per user")
            p.add_argument("--transcripts", type=int, default=0, help="print this many example dialogues")
        if name == "chat":
            p.add_argument("--user", help="user id to personalise for")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](args, cfg)
    except UnknownUserError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return 2
    except (ConfigError, CheckpointError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
