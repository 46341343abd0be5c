import json
import subprocess
import sys

import pytest

from patrolmarl.cli import main


def small_config(tmp_path, **train):
    cfg = {
        "eval": {"horizon": 150, "episodes": 2, "n_agents": 2},
        "train": dict({
            "horizon": 15, "num_batches": 2, "checkpoint_every": 0,
            "curriculum": [[0, [1, 2]]],
            "net": {"conv_channels": [2], "dense": [8], "n_messages": 4},
        }, **train),
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate_is_byte_identical(tmp_path, capsys):
    cfg = small_config(tmp_path)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code, _, _ = run(["simulate", "--strategy", "cr", "--map", "sample8", "--episodes", "3", "--seed", "7",
                          "--config", cfg, "--out", str(out), "--events", "--csv"], capsys)
        assert code == 0
        outs.append(out)
    for f in ("metrics.json", "episodes.jsonl", "events.jsonl", "idleness.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_compare_rows(tmp_path, capsys):
    cfg = small_config(tmp_path)
    code, stdout, _ = run(["compare", "--strategies", "cr,sebs", "--agents", "2", "--map", "sample8",
                           "--config", cfg, "--out", str(tmp_path / "cmp")], capsys)
    assert code == 0
    report = (tmp_path / "cmp" / "report.md").read_text()
    assert "| cr | 2 |" in report and "| sebs | 2 |" in report
    assert report.count("μ:") >= 6 and report == stdout
    rows = json.loads((tmp_path / "cmp" / "metrics.json").read_text())["rows"]
    assert [r["strategy"] for r in rows] == ["cr", "sebs"]


def test_train_then_evaluate_deterministic(tmp_path, capsys):
    cfg = small_config(tmp_path)
    for name in ("a", "b"):
        code, _, _ = run(["train", "--map", "scene6", "--config", cfg, "--episodes", "2", "--seed", "1",
                          "--out", str(tmp_path / f"train_{name}")], capsys)
        assert code == 0
    a, b = tmp_path / "train_a", tmp_path / "train_b"
    assert (a / "metrics.jsonl").read_bytes() == (b / "metrics.jsonl").read_bytes()
    assert len((a / "metrics.jsonl").read_text().splitlines()) == 2
    assert (a / "checkpoints" / "final.bin").read_bytes() == (b / "checkpoints" / "final.bin").read_bytes()
    for name in ("a", "b"):
        code, _, _ = run(["evaluate", "--map", "scene6", "--config", cfg, "--checkpoint",
                          str(a / "checkpoints" / "final"), "--episodes", "2", "--horizon", "50",
                          "--out", str(tmp_path / f"eval_{name}")], capsys)
        assert code == 0
    assert (tmp_path / "eval_a" / "metrics.json").read_bytes() == (tmp_path / "eval_b" / "metrics.json").read_bytes()


def test_map_validate_and_generate(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("C.#.\n..#.\n")
    code, _, err = run(["map", "validate", str(bad)], capsys)
    assert code == 1
    assert json.loads(err)["error"] == "DisconnectedGraph"
    glyph = tmp_path / "glyph.txt"
    glyph.write_text("C.\n.x\n")
    code, _, err = run(["map", "validate", str(glyph)], capsys)
    assert code == 1 and json.loads(err)["row"] == 1 and json.loads(err)["col"] == 1
    out = tmp_path / "gen.txt"
    code, _, _ = run(["map", "generate", "--height", "7", "--width", "9", "--seed", "3", "--out", str(out)], capsys)
    assert code == 0
    code, stdout, _ = run(["map", "validate", str(out)], capsys)
    assert code == 0 and json.loads(stdout)["height"] == 7
    code, again, _ = run(["map", "generate", "--height", "7", "--width", "9", "--seed", "3"], capsys)
    assert again == out.read_text()


def test_runtime_error_is_exit_1(tmp_path, capsys):
    code, _, err = run(["simulate", "--strategy", "rl", "--map", "sample8", "--out", str(tmp_path)], capsys)
    assert code == 1 and "checkpoint" in json.loads(err)["message"]


def test_usage_error_is_exit_2():
    proc = subprocess.run([sys.executable, "-m", "patrolmarl", "simulate", "--strategy", "nope"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
