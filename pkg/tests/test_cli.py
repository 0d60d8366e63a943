import json
import subprocess
import sys

import pytest

from pathrgcn.cli import run
from pathrgcn.model import load_checkpoint

TINY_FLAGS = ["--d", "8", "--layers", "1", "--embed-dim", "8", "--max-docs", "3", "--log-level", "ERROR"]


def test_help_exits_zero(capsys):
    assert run(["--help"]) == 0
    assert "sweep-layers" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "pathrgcn", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gradcheck" in proc.stdout


@pytest.mark.parametrize(
    "argv",
    [[], ["train"], ["bogus"], ["synth", "--samples", "x"], ["eval", "--input", "a.jsonl"]],
)
def test_usage_errors_exit_two(argv):
    assert run(argv) == 2


def test_synth_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run(["synth", "--samples", "10", "--seed", "7", "--out", str(a), "--log-level", "ERROR"]) == 0
    assert run(["synth", "--samples", "10", "--seed", "7", "--out", str(b), "--log-level", "ERROR"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.jsonl.meta.json").exists()
    assert len(a.read_text().splitlines()) == 10


def test_synth_default_path(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(["synth", "--samples", "2", "--seed", "3", "--log-level", "ERROR"]) == 0
    assert (tmp_path / "synth_3.jsonl").exists()


def test_pipeline(tmp_path, capsys):
    raw, dev = tmp_path / "raw.jsonl", tmp_path / "dev.jsonl"
    run(["synth", "--samples", "12", "--seed", "1", "--out", str(raw), "--log-level", "ERROR"])
    run(["synth", "--samples", "6", "--seed", "2", "--out", str(dev), "--log-level", "ERROR"])
    tok, graph, ckpt = tmp_path / "tok.jsonl", tmp_path / "graph.jsonl", tmp_path / "m.json"
    assert run(["ingest", "--input", str(raw), "--out", str(tok), "--log-level", "ERROR"]) == 0
    assert json.loads(tok.read_text().splitlines()[0])["kind"] == "tokenized"
    assert run(["build-graph", "--input", str(tok), "--out", str(graph), "--max-docs", "3",
                "--log-level", "ERROR"]) == 0
    assert json.loads(graph.read_text().splitlines()[0])["kind"] == "graph"
    metrics = tmp_path / "metrics.jsonl"
    assert run(["train", "--input", str(graph), "--dev", str(dev), "--out", str(ckpt), "--epochs", "2",
                "--lr", "0.01", "--batch", "4", "--metrics", str(metrics), *TINY_FLAGS]) == 0
    records = [json.loads(line) for line in metrics.read_text().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2] and "dev_accuracy" in records[0]
    model = load_checkpoint(ckpt)
    assert model.config.d == 8 and model.config.L == 1
    capsys.readouterr()
    report_path = tmp_path / "report.json"
    assert run(["eval", "--input", str(dev), "--checkpoint", str(ckpt), "--out", str(report_path),
                "--threads", "2", "--log-level", "ERROR"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report == json.loads(report_path.read_text())
    assert report["scored"] == 6 and 0.0 <= report["accuracy"] <= 1.0
    assert run(["analyze", "--input", str(dev), "--checkpoint", str(ckpt), "--bucket", "hop_count",
                "--log-level", "ERROR"]) == 0
    buckets = json.loads(capsys.readouterr().out)["per_bucket"]
    assert buckets == {"3": {"count": 6, "accuracy": buckets["3"]["accuracy"]}}
    # ablation flags at evaluation time
    assert run(["eval", "--input", str(dev), "--checkpoint", str(ckpt), "--no-reasoning-entities",
                "--log-level", "ERROR"]) == 0


def test_sweep_layers_command(tmp_path):
    raw = tmp_path / "raw.jsonl"
    run(["synth", "--samples", "6", "--seed", "1", "--out", str(raw), "--log-level", "ERROR"])
    out = tmp_path / "sweep.json"
    assert run(["sweep-layers", "--input", str(raw), "--dev", str(raw), "--L-values", "1,2", "--epochs", "1",
                "--out", str(out), "--metrics", str(tmp_path / "m.jsonl"), *TINY_FLAGS]) == 0
    result = json.loads(out.read_text())
    assert set(result) == {"1", "2"} and result["1"]["parameters"] == result["2"]["parameters"]
    assert run(["sweep-layers", "--input", str(raw), "--L-values", "1", *TINY_FLAGS]) == 2
    assert run(["sweep-layers", "--input", str(raw), "--dev", str(raw), "--L-values", "0", *TINY_FLAGS]) == 2


def test_gradcheck_command(capsys):
    assert run(["gradcheck", "--log-level", "ERROR"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["pass"] and out["max_relative_error"] < 1e-3 and out["nodes"] == 6


def test_data_errors_exit_one(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "x", "query": "r a"}\n')
    assert run(["ingest", "--input", str(bad), "--out", str(tmp_path / "o"), "--log-level", "ERROR"]) == 1
    bad.write_text("{not json\n")
    assert run(["ingest", "--input", str(bad), "--out", str(tmp_path / "o"), "--log-level", "ERROR"]) == 1
    missing = tmp_path / "missing.jsonl"
    assert run(["ingest", "--input", str(missing), "--out", str(tmp_path / "o"), "--log-level", "ERROR"]) == 1
    assert run(["eval", "--input", str(missing), "--checkpoint", str(bad), "--log-level", "ERROR"]) == 1
    assert run(["synth", "--samples", "1", "--vocab-size", "5", "--out", str(tmp_path / "s.jsonl"),
                "--log-level", "ERROR"]) == 1


def test_word_vector_file(tmp_path):
    raw, vecs, ckpt = tmp_path / "raw.jsonl", tmp_path / "v.txt", tmp_path / "m.json"
    run(["synth", "--samples", "4", "--seed", "1", "--out", str(raw), "--log-level", "ERROR"])
    vecs.write_text("2 4\nthe 0.1 0.2 0.3 0.4\nis 0.0 1.0 0.0 1.0\n")
    assert run(["train", "--input", str(raw), "--out", str(ckpt), "--epochs", "1", "--embeddings", str(vecs),
                "--d", "8", "--layers", "1", "--max-docs", "3", "--log-level", "ERROR"]) == 0
    assert load_checkpoint(ckpt).config.embed_dim == 4
    # the hash fallback at width 8 does not fit a width-4 checkpoint
    assert run(["eval", "--input", str(raw), "--checkpoint", str(ckpt), "--embed-dim", "8",
                "--log-level", "ERROR"]) == 1
