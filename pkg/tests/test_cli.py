import argparse
import inspect
import json
import re
import subprocess
import sys

import numpy as np
import pytest

from deskvid import cli
from deskvid.cli import COMMANDS, build_parser, run, substream


def files(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def subparsers():
    parser = build_parser()
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices


def test_token_count(capsys):
    assert run(["token-count", "--frames", "129", "--size", "768", "--spec", "hunyuan"]) == 0
    assert capsys.readouterr().out.strip() == "76032"
    assert run(["token-count", "--frames", "129", "--height", "768", "--width", "768", "--spec", "dcae"]) == 65


def test_cost_outputs(tmp_path, capsys):
    assert run(["cost", "--stages", "reference", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    for s in ("$107.5k", "$18.4k", "$73.7k", "$199.6k"):
        assert s in out
    rows = json.loads((tmp_path / "cost.json").read_text())
    assert rows[-1]["usd"] == 199_680
    assert (tmp_path / "cost.csv").exists() and (tmp_path / "cost.png").stat().st_size > 0


def test_exit_codes(tmp_path):
    assert run(["no-such-command"]) == 64
    assert run(["cost", "--bogus"]) == 64
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [unclosed\n")
    assert run(["cost", "--config", str(bad), "--out", str(tmp_path)]) == 65
    assert run(["filter", "--corpus", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 66
    assert run(["cost", "--config", str(tmp_path / "none.yaml")]) == 66


def test_numeric_failure_exit_code(monkeypatch, tmp_path):
    from deskvid.gradcheck import GradCheckReport

    monkeypatch.setattr("deskvid.gradcheck.check_all", lambda *a, **k: [GradCheckReport("add", [(1,)], "float64", 1.0, 1e-5)])
    assert run(["grad-check", "--out", str(tmp_path)]) == 70


def test_help_for_every_subcommand(capsys):
    for name in COMMANDS:
        with pytest.raises(SystemExit) as e:
            run([name, "--help"])
        assert e.value.code == 0
        assert f"usage: deskvid {name}" in capsys.readouterr().out


def _helpers(fn, seen=None):
    seen = seen if seen is not None else set()
    src = inspect.getsource(fn)
    yield src
    for name in re.findall(r"\b(_\w+)\(o\b", src):
        if name not in seen and hasattr(cli, name):
            seen.add(name)
            yield from _helpers(getattr(cli, name), seen)


def test_help_lists_every_consumed_flag(capsys):
    parsers = subparsers()
    for name, fn in COMMANDS.items():
        dests = {a.dest for a in parsers[name]._actions}
        consumed = set()
        for src in _helpers(fn):
            consumed |= set(re.findall(r"o\.get\(\"(\w+)\"", src))
            consumed |= set(re.findall(r"getattr\(o\.args, \"(\w+)\"", src))
        if name == "sample":
            consumed -= {"row", "col"}  # read only on the image-conditioned path
        assert consumed <= dests, (name, consumed - dests)
        with pytest.raises(SystemExit):
            run([name, "--help"])
        text = capsys.readouterr().out
        for a in parsers[name]._actions:
            for opt in a.option_strings:
                assert opt in text, (name, opt)


def test_seed_resolution(monkeypatch, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 7\n")
    parser = build_parser()

    def seed(argv, config):
        return cli.Options(parser.parse_args(argv), config).seed

    monkeypatch.setenv("OS2_SEED", "5")
    assert seed(["cost", "--seed", "3"], {"seed": 7}) == 3
    assert seed(["cost"], {"seed": 7}) == 7
    assert seed(["cost"], {"cost": {"seed": 9}, "seed": 7}) == 9
    assert seed(["cost"], {}) == 5
    monkeypatch.delenv("OS2_SEED")
    assert seed(["cost"], {}) == 0


def test_config_flags_win(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("token-count:\n  frames: 1\n  size: 256\n  spec: hunyuan\n")
    assert run(["token-count", "--config", str(cfg)]) == 0
    assert capsys.readouterr().out.strip() == "256"
    assert run(["token-count", "--config", str(cfg), "--frames", "129", "--size", "768"]) == 0
    assert capsys.readouterr().out.strip() == "76032"


def test_substreams_are_independent_and_stable():
    a = substream(3, "sample").standard_normal(4)
    assert np.array_equal(a, substream(3, "sample").standard_normal(4))
    assert not np.array_equal(a, substream(3, "scaling").standard_normal(4))


def test_filter_is_deterministic(tmp_path, corpus_dir, capsys):
    for name in ("a", "b"):
        assert run(["filter", "--corpus", str(corpus_dir), "--tier", "2", "--out", str(tmp_path / name)]) == 0
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a == b and {"records.jsonl", "rejected.jsonl", "tier1.txt", "tier2.txt", "tier3.txt"} <= set(a)
    assert "tier 2 keeps" in capsys.readouterr().out


def test_stats_and_synth(tmp_path, capsys):
    assert run(["synth-corpus", "--clips", "25", "--seed", "1", "--out", str(tmp_path / "c")]) == 0
    for name in ("a", "b"):
        assert run(["stats", "--corpus", str(tmp_path / "c"), "--out", str(tmp_path / name)]) == 0
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a == b and {"stats.json", "stats.csv", "word_frequency.csv", "stats.png"} <= set(a)


def test_batch_search_and_bucket_plan(tmp_path):
    assert run(["batch-search", "--tokens", "8448,6400,4352,2304", "--memory-cap", "50000",
                "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "batch_sizes.json").read_text())
    assert res["reference_index"] == 0 and res["rows"][0]["batch_size"] == 5
    samples = tmp_path / "s.jsonl"
    samples.write_text("".join(json.dumps({"id": f"v{i}", "frames": f, "height": 256, "width": 256}) + "\n"
                               for i, f in enumerate([1, 20, 40, 130, 100, 1])))
    for name in ("p", "q"):
        assert run(["bucket-plan", "--samples", str(samples), "--seed", "4", "--out", str(tmp_path / name)]) == 0
    assert files(tmp_path / "p") == files(tmp_path / "q")
    rejected = (tmp_path / "p" / "plan_rejected.jsonl").read_text()
    assert "v3" in rejected


def test_scale_search_cli(tmp_path):
    args = ["scale-search", "--inject", "1,3", "--variations", "3", "--metric", "motion_smoothness",
            "--steps", "8", "--evals-per-step", "3", "--seed", "2"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")
    summary = json.loads((tmp_path / "a" / "scaling.json").read_text())
    assert summary["evaluations"] == summary["closed_form"]
    assert len((tmp_path / "a" / "trace.jsonl").read_text().splitlines()) == 2


def test_train_then_sample(tmp_path):
    out = tmp_path / "train"
    assert run(["train-toy", "--steps", "6", "--batch", "4", "--seed", "1", "--out", str(out)]) == 0
    assert {"weights/index.json", "weights/model.json", "losses.csv", "train.json", "loss.png"} <= set(files(out))
    for name in ("a", "b"):
        assert run(["i2v-sample", "--weights", str(out / "weights"), "--steps", "4", "--oscillation",
                    "--dynamic", "linear", "--seed", "3", "--out", str(tmp_path / name)]) == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")
    assert run(["sample", "--weights", str(out / "weights"), "--steps", "3", "--out", str(tmp_path / "t")]) == 0
    assert np.load(tmp_path / "t" / "t2v_sample.npy").shape == (1, 2, 8, 8)
    assert run(["sample", "--weights", str(tmp_path / "nope"), "--out", str(tmp_path / "t")]) == 66


def test_grad_check_cli(tmp_path):
    assert run(["grad-check", "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "gradcheck.csv").read_text().splitlines()) == 15


def test_console_script_runs():
    proc = subprocess.run([sys.executable, "-m", "deskvid.cli", "token-count", "--frames", "1", "--size", "1024"],
                          capture_output=True, text=True, check=True)
    assert proc.stdout.strip() == "4096"
