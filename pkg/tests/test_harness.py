import json
import random

import numpy as np
import pytest

from ocvqa import diffcore as dc
from ocvqa import ocrl
from ocvqa.data import Dataset, write_dataset
from ocvqa.harness import cli
from ocvqa.harness.ablation import format_table, run_ablation, variant_overrides
from ocvqa.harness.config import TINY, ConfigError, RunConfig, load_config, parse_pairs
from ocvqa.harness.training import (CHECKPOINT, TrainingError, build_model, evaluate, load_checkpoint,
                                    save_checkpoint, train)
from ocvqa.model import Model

from _builders import random_video

TINY_SET = [f"{k}={v}" for k, v in TINY.items()]


def tiny_cfg(**over) -> RunConfig:
    return RunConfig(**{**TINY, **over}).validate()


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    path = tmp_path_factory.mktemp("data")
    cfg = tiny_cfg(num_scenes=10, data=str(path))
    write_dataset(path, cfg.generate_spec())
    return cfg, Dataset(path)


def _files(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.is_file()}


# -- configuration ------------------------------------------------------------

def test_config_precedence(tmp_path, monkeypatch):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nseed=3\nlr=0.5\nepochs = 7\nno_gating=yes\n")
    cfg = load_config(path, {"lr": "0.1"})
    assert (cfg.seed, cfg.lr, cfg.epochs, cfg.no_gating) == (3, 0.1, 7, True)
    seen = {}
    monkeypatch.setitem(cli.COMMANDS, "generate", lambda c, a: seen.setdefault("cfg", c) and 0)
    cli.main(["generate", "--config", str(path), "--set", "seed=5", "--seed", "9"])
    assert seen["cfg"].seed == 9 and seen["cfg"].lr == 0.5


@pytest.mark.parametrize("text", ["nokey", "bogus=1", "epochs=ten", "no_gating=maybe"])
def test_bad_config_lines_rejected(text):
    with pytest.raises(ConfigError):
        parse_pairs([text])


@pytest.mark.parametrize("over", [dict(d=0), dict(L=-1), dict(lr=-1.0), dict(K=1, t=4, T=8),
                                  dict(categories="exist,bogus"), dict(gradcheck_reference="half")])
def test_invalid_config_rejected(over):
    with pytest.raises(ConfigError):
        tiny_cfg(**over)


def test_sub_seeds_are_distinct_and_stable():
    a, b = RunConfig(seed=1), RunConfig(seed=2)
    tags = ("data", "init", "shuffle")
    assert len({a.sub_seed(t) for t in tags} | {b.sub_seed(t) for t in tags}) == 6
    assert a.sub_seed("init") == RunConfig(seed=1).sub_seed("init")


# -- generate -----------------------------------------------------------------

def test_generate_is_byte_identical_and_verified(tmp_path, capsys):
    args = ["generate", "--set", "num_scenes=10", "--set", "qa_per_category=1"] + sum(
        (["--set", s] for s in TINY_SET if not s.startswith(("num_scenes", "qa_per"))), [])
    assert cli.main(args + ["--data", str(tmp_path / "a")]) == 0
    assert "re-verified by interpreter: 50/50" in capsys.readouterr().out
    assert cli.main(args + ["--data", str(tmp_path / "b")]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    assert cli.main(args + ["--data", str(tmp_path / "c"), "--seed", "1"]) == 0
    assert _files(tmp_path / "a")["qa.jsonl"] != _files(tmp_path / "c")["qa.jsonl"]
    ds = Dataset(tmp_path / "a")
    assert len(ds.items) == 50
    scenes = {split: {it.scene_id for it in ds.split(split)} for split in ds.splits}
    assert sum(len(s) for s in scenes.values()) == 10
    assert not (scenes["train"] & scenes["test"])


def test_generate_unwritable_path_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["generate", "--data", str(blocker / "sub"), *sum((["--set", s] for s in TINY_SET), [])]) == 3


# -- train --------------------------------------------------------------------

def test_zero_learning_rate_leaves_parameters_unchanged(tiny_data):
    cfg, ds = tiny_data
    before = build_model(cfg, ds).store.state_arrays()
    model, curve = train(cfg.replace(lr=0.0, epochs=1, batch_size=4), ds)
    after = model.store.state_arrays()
    assert len(curve) == 1
    for name, arr in before.items():
        if name.startswith("param/"):
            assert np.array_equal(arr, after[name]), name


def test_single_example_loss_is_monotone(tiny_data):
    cfg, ds = tiny_data
    _, curve = train(cfg.replace(epochs=50, lr=1e-3, batch_size=1), ds, items=ds.split("train")[:1])
    assert len(curve) == 50
    assert np.all(np.diff(curve) <= 0.0), curve
    assert curve[-1] < curve[0]


def test_resume_reproduces_uninterrupted_run(tiny_data, tmp_path):
    cfg, ds = tiny_data
    cfg = cfg.replace(epochs=4, batch_size=3, lr=3e-3)
    train(cfg, ds, out_dir=tmp_path / "full")
    train(cfg.replace(epochs=2), ds, out_dir=tmp_path / "part")
    train(cfg, ds, out_dir=tmp_path / "part", resume=tmp_path / "part" / CHECKPOINT)
    assert (tmp_path / "full" / CHECKPOINT).read_bytes() == (tmp_path / "part" / CHECKPOINT).read_bytes()


def test_checkpoint_save_load_save_is_byte_identical(tiny_data, tmp_path):
    cfg, ds = tiny_data
    model, curve = train(cfg.replace(epochs=1), ds)
    save_checkpoint(tmp_path / "a.ckpt", model, cfg, 1, curve)
    back, back_cfg, epoch, back_curve = load_checkpoint(tmp_path / "a.ckpt", ds)
    save_checkpoint(tmp_path / "b.ckpt", back, back_cfg, epoch, back_curve)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_non_finite_loss_aborts_naming_batch(tiny_data, monkeypatch):
    cfg, ds = tiny_data
    monkeypatch.setattr(Model, "loss", lambda self, batch: dc.Tensor(np.nan))
    with pytest.raises(TrainingError, match="epoch 0 batch 0"):
        train(cfg.replace(epochs=1), ds)


def test_empty_training_split_rejected(tiny_data):
    cfg, ds = tiny_data
    with pytest.raises(TrainingError):
        train(cfg, ds, items=[])


def test_early_stop_callback(tiny_data):
    cfg, ds = tiny_data
    _, curve = train(cfg.replace(epochs=10), ds, on_epoch=lambda e, m, c: e == 2)
    assert len(curve) == 3


# -- eval ---------------------------------------------------------------------

def test_eval_is_invariant_to_record_order(tiny_data):
    cfg, ds = tiny_data
    model = build_model(cfg, ds)
    items = ds.split("train")
    shuffled = items[:]
    random.Random(0).shuffle(shuffled)
    a, b = evaluate(model, ds, items, cfg), evaluate(model, ds, shuffled, cfg, batch_size=2)
    assert a.records() == b.records()
    assert a.overall == a.correct / a.total
    assert sum(n for _, n in a.counts.values()) == len(items)


def test_zero_decoder_accuracy_equals_label_marginal(tiny_data):
    cfg, ds = tiny_data
    model = build_model(cfg, ds)
    for name in ("decode.w2", "decode.b2"):
        model.store[name].data[...] = 0.0
    items = ds.split("train") + ds.split("test")
    report = evaluate(model, ds, items, cfg)
    expected = sum(it.answer == 0 for it in items)
    assert report.correct == expected
    for cat, (c, n) in report.counts.items():
        assert c == sum(it.answer == 0 for it in items if it.category == cat)


def test_eval_rejects_incompatible_checkpoint(tiny_data, tmp_path):
    cfg, ds = tiny_data
    model, curve = train(cfg.replace(epochs=1), ds)
    save_checkpoint(tmp_path / "a.ckpt", model, cfg.replace(d_a=6), 1, curve)
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "a.ckpt", ds)


def test_cli_train_then_eval_agree(tiny_data, tmp_path, capsys):
    cfg, _ = tiny_data
    base = ["--data", cfg.data, "--out", str(tmp_path), *sum((["--set", s] for s in TINY_SET), [])]
    assert cli.main(["train", *base, "--set", "epochs=2"]) == 0
    assert cli.main(["eval", *base, "--split", "train"]) == 0
    capsys.readouterr()
    train_rows = [json.loads(l) for l in (tmp_path / "train_report.jsonl").read_text().splitlines()]
    eval_rows = [json.loads(l) for l in (tmp_path / "eval_train.jsonl").read_text().splitlines()]
    assert train_rows[0]["accuracy"] == eval_rows[0]["accuracy"]
    assert [r["loss"] for r in train_rows if "loss" in r] != []
    for name in ("train_loss.png", "train_accuracy.png", "eval_train.png", "train_report.txt"):
        assert (tmp_path / name).exists()
    assert cli.main(["eval", *base, "--set", "d_a=6", "--split", "train"]) == 0  # checkpoint config wins


def test_cli_error_exit_codes(tiny_data, tmp_path, monkeypatch, capsys):
    cfg, _ = tiny_data
    tiny = sum((["--set", s] for s in TINY_SET), [])
    assert cli.main(["train", "--set", "bogus=1"]) == 2
    assert cli.main(["train", "--set", "novalue"]) == 2
    assert cli.main(["train", "--data", str(tmp_path / "missing"), *tiny]) == 3
    assert cli.main(["eval", "--data", cfg.data, "--checkpoint", str(tmp_path / "none.ckpt"), *tiny]) == 3
    assert cli.main(["train", "--data", cfg.data, "--out", str(tmp_path), *tiny, "--set", "d_a=6"]) == 2
    monkeypatch.setattr(Model, "loss", lambda self, batch: dc.Tensor(np.inf))
    assert cli.main(["train", "--data", cfg.data, "--out", str(tmp_path), *tiny]) == 4
    err = capsys.readouterr().err
    assert "configuration error" in err and "I/O error" in err and "training error" in err


def test_gradcheck_cli_requires_tiny_config():
    assert cli.main(["gradcheck", "--set", "d=32"]) == 2


# -- ablation -----------------------------------------------------------------

def test_ablation_with_no_variants_has_only_default(tiny_data):
    cfg, ds = tiny_data
    rows = run_ablation(cfg.replace(epochs=1), ds, variants=[], seeds=[0])
    assert [r["variant"] for r in rows] == ["default"]
    assert "default" in format_table(rows)


def test_ablation_rows_and_seeds(tiny_data, tmp_path, capsys):
    cfg, ds = tiny_data
    base = ["--data", cfg.data, "--out", str(tmp_path), *sum((["--set", s] for s in TINY_SET), [])]
    code = cli.main(["ablate", *base, "--set", "epochs=1", "--set", "ablate_seeds=0,1",
                     "--variant", "gcn0,no_gating", "--variant", "no_context"])
    assert code == 0
    rows = [json.loads(l) for l in (tmp_path / "ablation.jsonl").read_text().splitlines()]
    assert [r["variant"] for r in rows] == ["default", "gcn0", "no_gating", "no_context"]
    for r in rows:
        assert r["seeds"] == [0, 1] and r["mean_accuracy"] == pytest.approx(np.mean(r["accuracies"]))
    assert (tmp_path / "ablation.png").exists()
    assert cli.main(["ablate", *base, "--variant", "gcnX"]) == 2


def test_variant_names():
    assert variant_overrides("gcn8") == {"L": 8}
    assert variant_overrides("no_bilstm") == {"no_bilstm": True}
    with pytest.raises(ConfigError):
        variant_overrides("nope")


@pytest.mark.parametrize("flag,target,kwarg,npos", [
    ("no_gating", "position_gated_encoding", "no_gating", 3),
    ("no_temporal_attention", "temporal_part_summary", "no_attention", 4),
    ("no_context", "gcn_refine", "no_context", 5),
    ("no_bilstm", "temporal_link", "no_bilstm", 4),
])
def test_ablation_switch_is_behavior_local(flag, target, kwarg, npos, monkeypatch):
    """Forcing only the ablated stage inside the default pipeline reproduces
    the ablated pipeline exactly, so the switch touches nothing else."""
    rng = np.random.default_rng(0)
    vid = random_video(rng, 2, 3, 2, 3, 5, 4)
    abl = ocrl.Ablations(**{flag: True})
    store = dc.ParamStore()
    ocrl.init_ocrl(store, np.random.default_rng(1), 5, 4, 6, 3, 2, 6, abl)
    q = dc.Tensor(rng.normal(size=(2, 6)))
    ablated = ocrl.represent_video(vid, q, store, 2, abl)
    original = getattr(ocrl, target)

    def forced(*args, **kw):
        kw.pop(kwarg, None)
        return original(*args[:npos], **{**kw, kwarg: True})

    monkeypatch.setattr(ocrl, target, forced)
    default = ocrl.represent_video(vid, q, store, 2, ocrl.Ablations())
    assert ablated.resumes.data.tobytes() == default.resumes.data.tobytes()
