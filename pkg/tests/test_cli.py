import io
import json

import numpy as np
import pytest

from phrasedec import cli
from phrasedec.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from phrasedec.config import ConfigError, RunConfig, load_config, parse_config_text
from phrasedec.core import AdamState
from phrasedec.data import read_corpus
from phrasedec.experiment import checkpoint_path

from helpers import random_dialogues, random_model

SMALL = ["--set", "d_hidden=8", "--set", "d_emb=8", "--set", "epochs=2", "--set", "max_len=12",
         "--set", "online_orders=2", "--set", "n_samples=1"]


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr() if capsys else None
    return code, out


# ---------------------------------------------------------------- config

def test_parse_config_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nmodels = PT-HRED, ST-HRED\nseeds = 0,1,2\nlr = 0.002\n\nd_hidden = 16\n")
    cfg = load_config(path, {"epochs": "7"})
    assert cfg.models == ["PT-HRED", "ST-HRED"] and cfg.seeds == [0, 1, 2]
    assert cfg.lr == 0.002 and cfg.d_hidden == 16 and cfg.epochs == 7
    assert load_config(None) == RunConfig()


def test_config_round_trip_dump():
    cfg = RunConfig(models=["PT-S2S"], seeds=[3, 4], lr=0.01)
    again = RunConfig().update(parse_config_text(cfg.dump()))
    assert again == cfg


@pytest.mark.parametrize("text", ["learning_rate = 0.1\n", "models = XYZ\n", "d_hidden = abc\n",
                                  "just a line\n", "gamma = 0\n"])
def test_config_rejects_bad_input(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


# ---------------------------------------------------------------- checkpoints

def _forward(model, data):
    mp = model.teacher_forward("a", [d for d in data if d.user_id == "a"], keep=False)
    return mp.dec.word_logp, mp.dec.gate_logp, mp.ctx.h_init


@pytest.mark.parametrize("kind", ["PT-HRED", "S2S", "ST-E-S2S"])
def test_checkpoint_round_trip_bitwise(tmp_path, kind):
    m = random_model(kind, 0)
    data = random_dialogues(np.random.default_rng(0), ["a"])
    adam = AdamState(lr=0.01)
    from phrasedec.training import TrainConfig, reinforce_update
    reinforce_update(m, data, TrainConfig(model_kind=kind), adam)
    save_checkpoint(tmp_path / "m.ckpt", m, adam, epoch=3, seed=9)
    c = load_checkpoint(tmp_path / "m.ckpt")
    assert c.epoch == 3 and c.meta["rng"]["seed"] == 9 and c.model.kind == kind
    for a, b in zip(_forward(m, data), _forward(c.model, data)):
        assert np.array_equal(a, b)
    assert c.adam.steps == adam.steps and all(np.array_equal(c.adam.m[k], adam.m[k]) for k in adam.m)
    save_checkpoint(tmp_path / "again.ckpt", c.model, c.adam, epoch=3, seed=9)
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "again.ckpt").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


# ---------------------------------------------------------------- commands

@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert cli.main(["gen-data", "--out", str(data), "--seed", "3", "--set", "n_users=2",
                     "--set", "train_per_user=2", "--set", "test_per_user=2"]) == 0
    return root, data


def test_gen_data_default_sizes(tmp_path):
    assert cli.main(["gen-data", "--out", str(tmp_path)]) == 0
    assert len(read_corpus(tmp_path / "train.jsonl")) == 50
    assert len(read_corpus(tmp_path / "test.jsonl")) == 2000


def test_gen_data_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["gen-data", "--out", str(tmp_path / name), "--seed", "5", "--set", "n_users=3",
                         "--set", "test_per_user=3"]) == 0
    for f in ("train.jsonl", "test.jsonl", "profiles.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_gen_data_single_user(tmp_path):
    assert cli.main(["gen-data", "--out", str(tmp_path), "--set", "n_users=1", "--set", "test_per_user=2"]) == 0
    ids = {d.user_id for d in read_corpus(tmp_path / "train.jsonl") + read_corpus(tmp_path / "test.jsonl")}
    assert len(ids) == 1
    lines = (tmp_path / "train.jsonl").read_text().splitlines()
    assert set(json.loads(lines[0])) >= {"user_id", "turns"}
    assert set(json.loads(lines[0])["turns"][0]) == {"x", "y", "o", "r"}


def test_train_seeds_and_byte_identical_checkpoints(workdir, tmp_path):
    root, data = workdir
    for name in ("r1", "r2"):
        assert cli.main(["train", "--data", str(data), "--out", str(tmp_path / name), "--model", "PT-HRED",
                         "--set", "seeds=0,1"] + SMALL) == 0
    for seed in (0, 1):
        a = checkpoint_path(tmp_path / "r1", "PT-HRED", seed).read_bytes()
        b = checkpoint_path(tmp_path / "r2", "PT-HRED", seed).read_bytes()
        assert a == b
    assert checkpoint_path(tmp_path / "r1", "PT-HRED", 0).read_bytes() != \
        checkpoint_path(tmp_path / "r1", "PT-HRED", 1).read_bytes()
    log = checkpoint_path(tmp_path / "r1", "PT-HRED", 0).with_suffix(".metrics.jsonl").read_text().splitlines()
    assert [json.loads(x)["epoch"] for x in log] == [1, 2]


def test_resume_continues_deterministically(workdir, tmp_path):
    root, data = workdir
    common = ["train", "--data", str(data), "--model", "PT-S2S", "--seed", "2"]
    small = [a if a != "epochs=2" else "epochs=4" for a in SMALL]
    assert cli.main(common + ["--out", str(tmp_path / "full")] + small) == 0
    assert cli.main(common + ["--out", str(tmp_path / "part")] + SMALL) == 0
    assert cli.main(common + ["--out", str(tmp_path / "part"), "--resume"] + small) == 0
    full = checkpoint_path(tmp_path / "full", "PT-S2S", 2)
    part = checkpoint_path(tmp_path / "part", "PT-S2S", 2)
    assert full.read_bytes() == part.read_bytes()
    assert full.with_suffix(".metrics.jsonl").read_text() == part.with_suffix(".metrics.jsonl").read_text()


def test_s2s_checkpoint_holds_per_user_models(workdir, tmp_path):
    root, data = workdir
    assert cli.main(["train", "--data", str(data), "--out", str(tmp_path), "--model", "S2S"] + SMALL) == 0
    c = load_checkpoint(checkpoint_path(tmp_path, "S2S", 0))
    owners = {n.split("/")[0] for n in c.model.params}
    assert owners == {f"user:{u}" for u in c.model.user_ids} and len(owners) == 2


@pytest.fixture(scope="module")
def trained(workdir):
    root, data = workdir
    out = root / "runs"
    assert cli.main(["train", "--data", str(data), "--out", str(out), "--model", "PT-HRED,ST-HRED",
                     "--set", "seeds=0,1"] + SMALL) == 0
    return out, data


def test_evaluate_table_and_determinism(trained, capsys):
    out, data = trained
    args = ["evaluate", "--data", data, "--out", out, "--model", "PT-HRED,ST-HRED", "--set", "seeds=0,1"] + SMALL
    code, first = run(args, capsys)
    assert code == 0
    lines = first.out.strip().splitlines()
    assert lines[0].split() == ["Model", "BLEU", "Reward", "SuccessRate", "SlotError"]
    assert [l.split()[0] for l in lines[2:]] == ["PT-HRED", "ST-HRED"] and "±" in lines[2]
    report = (out / "report.jsonl").read_text()
    code, second = run(args, capsys)
    assert second.out == first.out and (out / "report.jsonl").read_text() == report


def test_evaluate_offline_only(trained, capsys):
    out, data = trained
    code, res = run(["evaluate", "--data", data, "--out", out, "--model", "PT-HRED", "--offline-only"] + SMALL,
                    capsys)
    assert code == 0
    assert res.out.splitlines()[0].split() == ["Model", "BLEU", "SlotError"]


def test_simulate_oracle(trained, capsys):
    out, data = trained
    code, res = run(["simulate", "--data", data, "--agent", "oracle", "--orders", "3", "--transcripts", "1"],
                    capsys)
    assert code == 0 and "success rate 1.0000" in res.out and "agent: what coffee" in res.out


def test_simulate_model(trained, capsys):
    out, data = trained
    code, res = run(["simulate", "--data", data, "--out", out, "--model", "PT-HRED", "--orders", "2"], capsys)
    assert code == 0 and "mean reward" in res.out


def test_show_marks_gated_runs():
    assert cli._show(["a", "tall", "hot", "latte", "to", "x", "y"], [0, 1, 1, 0, 0, 1, 1]) == \
        "a [tall hot] latte to [x y]"
    assert cli._show(["a", "b"], None) == "a b"


def test_chat_session(trained, monkeypatch, capsys):
    out, data = trained
    ckpt = checkpoint_path(out, "PT-HRED", 0)
    model = load_checkpoint(ckpt).model
    user = model.user_ids[1]
    monkeypatch.setattr("sys.stdin", io.StringIO("i want a cup of coffee .\n\nthe usual , please .\n"))
    code, res = run(["chat", "--checkpoint", ckpt, "--user", user], capsys)
    assert code == 0
    prompts = res.out.count("> ")
    assert prompts == 4   # three lines (one empty, re-prompted) plus the prompt that meets end of input
    replies = [l for l in res.out.splitlines()[1:] if l.startswith("> ") and len(l) > 2]
    # expected first reply, decoded directly
    tr = model.tracker(user, 1)
    h_ctx, h_init = tr.observe_user([0], [model.vocab.encode("i want a cup of coffee .".split())])
    r = model.decode(user, h_ctx, h_init)
    assert replies[0][2:] == cli._show(model.vocab.decode(r.words[0]), r.gates[0])


@pytest.mark.parametrize("argv", [
    ["train", "--data", "/nonexistent/dir"],
    ["train", "--set", "nope=1"],
    ["chat", "--checkpoint", "/nonexistent.ckpt"],
    ["evaluate", "--model", "BOGUS"],
])
def test_errors_exit_nonzero(argv, capsys):
    code, res = run(argv, capsys)
    assert code == 2 and res.err.startswith("error:")


def test_chat_unknown_user(trained, capsys):
    out, _ = trained
    code, res = run(["chat", "--checkpoint", checkpoint_path(out, "PT-HRED", 0), "--user", "zz"], capsys)
    assert code == 2 and "zz" in res.err and "u00" in res.err
