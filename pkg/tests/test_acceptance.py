"""Acceptance criteria, each run at its stated tolerance.

Every test records a one-line verdict that the terminal summary prints as
`criterion N: PASS|FAIL ...`.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from phrasedec.checkpoint import load_checkpoint, save_checkpoint
from phrasedec.config import RunConfig
from phrasedec.core import finite_difference_check, zero_grads
from phrasedec.decoders import initial_state
from phrasedec.evaluation import aggregate_seeds, bleu, slot_error_rate
from phrasedec.experiment import evaluate_run, train_run
from phrasedec.simulator import (REWARDS, generate_corpus, ground_truth_reply, new_state, sample_goal,
                                 sample_profile)
from phrasedec.training import (TrainConfig, accumulate_gradients, bandit_surrogate, returns, surrogate_loss)

from helpers import (ACCEPTANCE, gate_off_matches_shared_only, make_bdec, make_pdec, random_dialogues,
                     random_model)


def record(key, ok, detail):
    ACCEPTANCE[key] = (bool(ok), detail)
    assert ok, detail


# ---------------------------------------------------------------- 1. gradient suite

def _decoder_losses(dec, rng, user, gated):
    B, L = 3, 5
    targets = rng.integers(0, 20, size=(B, L))
    gates = rng.integers(0, 2, size=(B, L)) if gated else None
    h_ctx, h_init = rng.normal(size=(B, 8)), np.tanh(rng.normal(size=(B, 8)))
    J = rng.uniform(-0.5, 1.5, size=(B, 1)).repeat(L, axis=1)
    lam = 0.5
    weightings = {"nll": (np.ones((B, L)), np.ones((B, L))), "surrogate": (J, J + lam)}
    out = {}
    for name, (ww, gw) in weightings.items():
        def loss():
            tp = dec.teacher_forward(h_ctx, h_init, targets, gates, user, keep=False)
            return -float((ww * tp.word_logp).sum() + (gw * tp.gate_logp).sum())
        params = dec.parameters(user) if user else dec.parameters()
        zero_grads(params)
        tp = dec.teacher_forward(h_ctx, h_init, targets, gates, user)
        dec.teacher_backward(tp, ww, gw)
        out[name] = finite_difference_check(loss, params, max_coords=10)
    return out


def _stack_losses(kind, seed):
    m = random_model(kind, seed)
    data = random_dialogues(np.random.default_rng(seed), ["a", "b"])
    params = m.all_params()
    out = {}

    def nll():
        total = 0.0
        for u in ("a", "b"):
            mp = m.teacher_forward(u, [d for d in data if d.user_id == u], keep=False)
            total -= float(mp.dec.word_logp.sum() + mp.dec.gate_logp.sum())
        return total

    zero_grads(params)
    for u in ("a", "b"):
        mp = m.teacher_forward(u, [d for d in data if d.user_id == u])
        m.backward(mp, np.ones(mp.mask.shape), np.ones(mp.mask.shape))
    out["nll"] = finite_difference_check(nll, params, max_coords=6)
    cfg = TrainConfig(model_kind=kind, gamma=0.9, lambda_gate=0.5)
    zero_grads(params)
    accumulate_gradients(m, data, cfg)
    out["surrogate"] = finite_difference_check(lambda: surrogate_loss(m, data, cfg), params, max_coords=6)
    return out


def test_criterion_1_gradient_suite():
    t0 = time.perf_counter()
    worst = {}
    for seed in range(5):
        rng = np.random.default_rng(seed)
        runs = {
            "basic decoder": _decoder_losses(make_bdec(rng, 8, 8, 20), rng, None, False),
            "personalized decoder": _decoder_losses(make_pdec(rng, 8, 8, 20), rng, "a", True),
            "HRED stack (PT-HRED)": _stack_losses("PT-HRED", seed),
            "HRED stack (HRED)": _stack_losses("HRED", seed),
            "seq2seq stack (PT-S2S)": _stack_losses("PT-S2S", seed),
            "seq2seq stack (S2S)": _stack_losses("S2S", seed),
        }
        for name, errs in runs.items():
            for loss, e in errs.items():
                worst[(name, loss)] = max(worst.get((name, loss), 0.0), e)
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    detail = f"max rel err {top:.2e} over {len(worst)} (variant, loss) pairs x 5 fixtures; {elapsed:.0f}s"
    record(1, top < 1e-4 and elapsed < 120, detail)


# ---------------------------------------------------------------- 2. gate degeneracy and freeze

def test_criterion_2_gate_degeneracy():
    t0 = time.perf_counter()
    worst = max(gate_off_matches_shared_only(seed, d=8, E=8, V=20) for seed in range(100))
    frozen_ok = True
    for seed in range(100):
        rng = np.random.default_rng(10_000 + seed)
        dec = make_pdec(rng, 8, 8, 20, scale=1.0)
        state = initial_state(rng.normal(size=8), 8)
        h_ctx = rng.normal(size=8)
        for t in range(6):
            g = int(rng.integers(0, 2))
            new, _ = dec.personalized_step(state, h_ctx, "a", gate_override=g)
            if g == 1:
                frozen_ok &= np.array_equal(new.h_shared, state.h_shared)
                frozen_ok &= np.array_equal(new.e_last_shared, state.e_last_shared)
            state = replace(new, e_last=dec.emb_in.value[rng.integers(0, 20)])
    elapsed = time.perf_counter() - t0
    detail = f"max abs diff {worst:.1e} over 100 fixtures; freeze bitwise={frozen_ok}; {elapsed:.1f}s"
    record(2, worst < 1e-12 and frozen_ok and elapsed < 30, detail)


# ---------------------------------------------------------------- 3. metric oracles

def test_criterion_3_metric_oracles():
    checks = [
        abs(bleu(["a", "b", "c"], [["a", "b", "c"]]) - 1.0) < 1e-9,
        abs(bleu(["a", "a"], [["a", "b"]]) - 0.0) < 1e-9,
        abs(bleu(["a", "b", "c"], [["a", "b", "c", "d"]]) - math.exp(1 - 4 / 3)) < 1e-9,
    ]
    rng = np.random.default_rng(0)
    ret_err = 0.0
    for _ in range(200):
        r = rng.normal(size=int(rng.integers(1, 15))).tolist()
        g = float(rng.uniform(0.05, 1.0))
        J = returns(r, g)
        for n in range(len(r)):
            ret_err = max(ret_err, abs(J[n] - sum(g ** (k - n) * r[k] for k in range(n, len(r)))))
    goal = {"type": "latte", "temp": "hot", "size": "tall", "addr": ["11", "oak", "street", "north"]}
    slot_ok = (slot_error_rate("tall hot latte".split(), goal) == 0.0
               and slot_error_rate("tall iced latte".split(), goal) == 1 / 3
               and slot_error_rate("one moment please .".split(), goal) is None)
    detail = f"BLEU examples {sum(checks)}/3; returns max err {ret_err:.1e}; slot error exact={slot_ok}"
    record(3, all(checks) and ret_err < 1e-12 and slot_ok, detail)


# ---------------------------------------------------------------- 4. bandit

def test_criterion_4_bandit():
    t0 = time.perf_counter()
    step, probs = bandit_surrogate(2000, lr=1e-2, seed=0)
    elapsed = time.perf_counter() - t0
    detail = f"p(rewarded) > 0.95 after {step} updates (final {probs[-1]:.3f}); {elapsed:.1f}s"
    record(4, step is not None and step <= 2000 and elapsed < 10, detail)


# ---------------------------------------------------------------- 5. simulator statistics

def test_criterion_5_simulator_statistics():
    rng = np.random.default_rng(0)
    profile = sample_profile(rng)
    fav = np.mean([sample_goal(profile, rng).is_favorite for _ in range(10_000)])
    state = new_state(profile, sample_goal(profile, rng))
    best = np.mean([not ground_truth_reply(state, rng).random_pick for _ in range(10_000)])
    profiles, train, test = generate_corpus()
    sums_ok = all(
        math.isclose(sum(t.r for t in d.turns), sum(REWARDS[e] for ev in d.events for e in ev), abs_tol=1e-12)
        for d in train + test)
    detail = (f"favorite {fav:.4f}, best reply {best:.4f}, reward sums ok={sums_ok}, "
              f"{len(train)} train / {len(test)} test")
    record(5, abs(fav - 0.8) <= 0.02 and abs(best - 0.8) <= 0.02 and sums_ok
           and len(train) == 50 and len(test) == 2000, detail)


# ---------------------------------------------------------------- 6 and 7. directional reproduction

SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="module")
def simulated():
    return generate_corpus()


def _sweep(kind, corpus, cfg):
    profiles, train, test = corpus
    users = [p.user_id for p in profiles]
    recs = []
    for seed in SEEDS:
        model, _, _ = train_run(cfg, kind, seed, train, users)
        recs.append(evaluate_run(cfg, model, seed, test, profiles, online=True))
    return aggregate_seeds(recs, kind)


@pytest.fixture(scope="module")
def hred_sweep(simulated):
    cfg = RunConfig()
    t0 = time.perf_counter()
    reports = {k: _sweep(k, simulated, cfg) for k in ("PT-HRED", "ST-HRED")}
    return reports, time.perf_counter() - t0


@pytest.fixture(scope="module")
def s2s_sweep(simulated):
    cfg = RunConfig()
    return {k: _sweep(k, simulated, cfg) for k in ("PT-S2S", "ST-S2S")}


def _fmt(rep, metric):
    return f"{rep.mean(metric):.4f}±{rep.std(metric):.4f}"


def test_criterion_6_pt_hred_beats_st_hred(hred_sweep):
    reports, elapsed = hred_sweep
    pt, st = reports["PT-HRED"], reports["ST-HRED"]
    ok_bleu = pt.mean("bleu") >= st.mean("bleu") + 0.02
    ok_slot = pt.mean("slot_error") <= st.mean("slot_error") - 0.02
    ok_succ = pt.mean("success") >= st.mean("success") + 0.02
    detail = (f"BLEU {_fmt(pt, 'bleu')} vs {_fmt(st, 'bleu')}; slot error {_fmt(pt, 'slot_error')} vs "
              f"{_fmt(st, 'slot_error')}; success {_fmt(pt, 'success')} vs {_fmt(st, 'success')}; "
              f"{elapsed / 60:.1f} min")
    record(6, ok_bleu and ok_slot and ok_succ and elapsed < 3600, detail)


def test_criterion_7_pt_s2s_beats_st_s2s(s2s_sweep):
    pt, st = s2s_sweep["PT-S2S"], s2s_sweep["ST-S2S"]
    detail = (f"BLEU {_fmt(pt, 'bleu')} vs {_fmt(st, 'bleu')} (margin {pt.mean('bleu') - st.mean('bleu'):+.4f}); "
              f"per seed {[round(v, 3) for v in pt.values['bleu']]} vs {[round(v, 3) for v in st.values['bleu']]}")
    record(7, pt.mean("bleu") >= st.mean("bleu") + 0.02, detail)


# ---------------------------------------------------------------- 8. determinism and persistence

def test_criterion_8_determinism_and_round_trip(tmp_path, simulated):
    profiles, train, test = simulated
    users = [p.user_id for p in profiles]
    cfg = RunConfig(d_hidden=16, d_emb=8, epochs=3)
    paths = []
    for run in ("a", "b"):
        model, adam, _ = train_run(cfg, "PT-HRED", 7, train, users)
        paths.append(tmp_path / f"{run}.ckpt")
        save_checkpoint(paths[-1], model, adam, epoch=cfg.epochs, seed=7)
    identical = paths[0].read_bytes() == paths[1].read_bytes()
    loaded = load_checkpoint(paths[0]).model
    same = True
    for u in users[:3]:
        ds = [d for d in test if d.user_id == u][:5]
        a = model.teacher_forward(u, ds, keep=False)
        b = loaded.teacher_forward(u, ds, keep=False)
        same &= np.array_equal(a.dec.word_logp, b.dec.word_logp) and np.array_equal(a.dec.gate_logp, b.dec.gate_logp)
        ra = model.decode(u, a.ctx.h_ctx, a.ctx.h_init, mode="sample", rng=np.random.default_rng(1))
        rb = loaded.decode(u, b.ctx.h_ctx, b.ctx.h_init, mode="sample", rng=np.random.default_rng(1))
        same &= ra == rb
    record(8, identical and same, f"checkpoints byte-identical={identical}; round-trip forward bitwise={same}")
