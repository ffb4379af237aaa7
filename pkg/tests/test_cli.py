import json

import numpy as np
import pytest

from hta.cli import run
from hta.masks import TokenLayout, mask_to_csv, slt_mask
from hta.tensor_io import write_tensor


def test_mask_dump_csv_stdout(capsys):
    assert run(["mask", "dump", "--layout", "2,4,1,1,2", "--family", "slt"]) == 0
    out = capsys.readouterr().out
    assert out == mask_to_csv(slt_mask(TokenLayout(T=2, N=4, U=1, V=1, r=2)))


def test_mask_dump_pgm_file(tmp_path, capsys):
    out = tmp_path / "m.pgm"
    assert run(["mask", "dump", "--layout", "4,4,2,1,2", "--family", "gst",
                "--format", "pgm", "--out", str(out)]) == 0
    text = out.read_text()
    lay = TokenLayout(T=4, N=4, U=2, V=1, r=2)
    assert text.startswith("P2\n")
    assert f"{lay.seq_len} {lay.seq_len}" in text.splitlines()[1]
    manifest = json.loads((tmp_path / "m.pgm.manifest.json").read_text())
    assert {"config_hash", "seed", "version"} <= set(manifest)


def test_mask_dump_bad_layout_exits_1(capsys):
    assert run(["mask", "dump", "--layout", "2,4", "--family", "slt"]) == 1
    assert "error:" in capsys.readouterr().err


def test_eval_command(tmp_path, capsys):
    rng = np.random.default_rng(0)
    v = rng.normal(size=(4, 8))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    write_tensor(tmp_path / "v.hta", v)
    write_tensor(tmp_path / "t.hta", v)      # perfect retrieval
    out = tmp_path / "report.json"
    assert run(["eval", "--video-emb", str(tmp_path / "v.hta"),
                "--text-emb", str(tmp_path / "t.hta"), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["R@1"] == 100.0 and report["MdR"] == 1


def test_eval_dsl_flag(tmp_path, capsys):
    rng = np.random.default_rng(1)
    v = rng.normal(size=(3, 5))
    write_tensor(tmp_path / "v.hta", v)
    write_tensor(tmp_path / "t.hta", v)
    assert run(["eval", "--video-emb", str(tmp_path / "v.hta"),
                "--text-emb", str(tmp_path / "t.hta"),
                "--dsl", "--alpha", "10", "--direction", "v2t"]) == 0
    assert "R@1" in capsys.readouterr().out


def test_eval_missing_file_exits_2(tmp_path, capsys):
    assert run(["eval", "--video-emb", str(tmp_path / "nope.hta"),
                "--text-emb", str(tmp_path / "nope.hta")]) == 2


def test_curate_end_to_end(tmp_path, capsys):
    rng = np.random.default_rng(2)
    t, sentences = 0.0, []
    for i in range(120):
        d = float(rng.exponential(6.0))
        sentences.append({"text": f"word{i} word{i}.", "t0": t, "t1": t + d})
        t += d
    src = tmp_path / "in"
    src.mkdir()
    (src / "vid0.jsonl").write_text(
        json.dumps({"video_id": "vid0", "sentences": sentences}) + "\n")
    out = tmp_path / "out"
    assert run(["curate", "--in", str(src), "--out", str(out),
                "--placeholder-captions", "--fps", "0.2"]) == 0
    lines = (out / "vid0.jsonl").read_text().strip().splitlines()
    clips = [json.loads(l) for l in lines]
    assert {c["scale"] for c in clips} == {"short", "medium", "long"}
    assert all(c["caption"].startswith("frame at") for c in clips)
    short = [c for c in clips if c["scale"] == "short"]
    assert all(c["summarized_subtitle"] == c["subtitle"] for c in short)
    table = json.loads((out / "stats.json").read_text())
    assert table["long"]["mean_duration"] > table["short"]["mean_duration"]


def test_curate_empty_dir_exits_1(tmp_path, capsys):
    src = tmp_path / "in"
    src.mkdir()
    assert run(["curate", "--in", str(src), "--out", str(tmp_path / "o")]) == 1


def test_train_smoke_and_config_precedence(tmp_path, capsys):
    rng = np.random.default_rng(3)
    b = 4
    clips = rng.normal(size=(b, 2, 8, 8, 3))
    data = tmp_path / "data"
    data.mkdir()
    write_tensor(data / "clips.hta", clips)
    (data / "texts.json").write_text(json.dumps({
        "subtitles": [[i + 1] for i in range(b)],
        "captions": [[i + 10] for i in range(b)],
    }))
    cfg = tmp_path / "train.cfg"
    cfg.write_text("steps = 400   # overridden by the flag\nbase_lr = 1e-3\n"
                   "final_lr = 1e-4\nbatch_size = 4\n")
    out = tmp_path / "ckpt"
    assert run(["train", "--config", str(cfg), "--data", str(data),
                "--out", str(out), "--steps", "3",
                "--width", "8", "--layers", "1", "--heads", "2",
                "--embed-dim", "4", "--hierarchies", "1",
                "--vocab", "16", "--context", "4"]) == 0
    trace = (out / "trace.csv").read_text().strip().splitlines()
    assert trace[0] == "step,loss,lr,tau"
    assert len(trace) == 4                    # flag beat the file's 400
    assert float(trace[1].split(",")[2]) == pytest.approx(1e-3)  # file lr used
    manifest = json.loads((out / "manifest.json").read_text())
    assert "layer0.gst.wq" in manifest["params"]
    assert manifest["config"]["video"]["layout"] == [2, 4, 1, 1, 2]
    assert (tmp_path / "ckpt.manifest.json").exists()


def test_train_bad_clip_rank_exits_1(tmp_path, capsys):
    data = tmp_path / "data"
    data.mkdir()
    write_tensor(data / "clips.hta", np.zeros((2, 8, 8, 3)))   # rank 4
    (data / "texts.json").write_text(json.dumps(
        {"subtitles": [[1], [2]], "captions": [[1], [2]]}))
    assert run(["train", "--data", str(data), "--out", str(tmp_path / "o")]) == 1


def test_selftest_command(capsys):
    assert run(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
