import json
import subprocess
import sys

import numpy as np
import pytest

from motok.cli import RunManifest, main
from motok.motion import read_motion, write_motion
from motok.tokenizer import TokenFile, read_tokens, write_tokens


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--count", "4", "--frames", "33", "--seed", "2", "--out", str(d / "data")]) == 0
    assert main(["train", "--data", str(d / "data"), "--out", str(d / "m.4dmt"), "--preset", "tiny",
                 "--steps", "5", "--report", str(d / "r.csv")]) == 0
    return d


def test_gen_data_files(workdir):
    files = sorted((workdir / "data").glob("*.mseq"))
    assert len(files) == 4 and (workdir / "data" / "stats.json").exists()
    assert (workdir / "data" / "gen-data.manifest.json").exists()


def test_gen_data_deterministic(workdir, tmp_path):
    assert main(["gen-data", "--count", "4", "--frames", "33", "--seed", "2", "--out", str(tmp_path)]) == 0
    for f in (workdir / "data").glob("*.mseq"):
        assert (tmp_path / f.name).read_bytes() == f.read_bytes()


def test_gen_data_rejects_length(tmp_path, capsys):
    assert main(["gen-data", "--count", "1", "--frames", "34", "--out", str(tmp_path / "x")]) == 1
    assert "33, 49, 81, 97, 129" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_train_outputs(workdir):
    assert (workdir / "r.csv").read_text().splitlines()[0] == "step,recon,commit,perplexity,active_fraction"
    man = RunManifest.from_json((workdir / "m.4dmt.manifest.json").read_text())
    assert man.command == "train" and man.checkpoint_sha256 and man.config["train"]["steps"] == 5


def test_roundtrip_prints_token_count(workdir, capsys):
    assert main(["roundtrip", "--ckpt", str(workdir / "m.4dmt"), "--in", str(workdir / "data" / "seq_00000.mseq")]) == 0
    out = capsys.readouterr().out
    assert "tokens: 216" in out and "mpjpe:" in out


def test_encode_decode(workdir):
    src = workdir / "data" / "seq_00001.mseq"
    assert main(["encode", "--ckpt", str(workdir / "m.4dmt"), "--in", str(src), "--out", str(workdir / "a.mtok")]) == 0
    tok = read_tokens(workdir / "a.mtok")
    assert tok.indices.shape == (9, 24) and tok.frames == 33
    assert main(["decode", "--ckpt", str(workdir / "m.4dmt"), "--in", str(workdir / "a.mtok"), "--out", str(workdir / "a.mseq")]) == 0
    seq = read_motion(workdir / "a.mseq")
    assert seq.coords.shape == (33, 24, 3)


def test_decode_rejects_foreign_tokens(workdir, capsys):
    tok = TokenFile(np.zeros((9, 24), int), 33, "00" * 31 + "01")
    write_tokens(workdir / "bad.mtok", tok)
    assert main(["decode", "--ckpt", str(workdir / "m.4dmt"), "--in", str(workdir / "bad.mtok"), "--out", str(workdir / "b.mseq")]) == 2
    assert "00" * 31 + "01" in capsys.readouterr().err


def test_format_error_exit_code(workdir, tmp_path):
    (tmp_path / "junk.4dmt").write_bytes(b"nope")
    assert main(["roundtrip", "--ckpt", str(tmp_path / "junk.4dmt"), "--in", str(workdir / "data" / "seq_00000.mseq")]) == 2


def test_analyze(workdir, capsys):
    assert main(["analyze", "--ckpt", str(workdir / "m.4dmt"), "--data", str(workdir / "data"), "--out", str(workdir / "an")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert abs(sum(summary["categories"].values()) - 1) < 1e-12
    assert (workdir / "an" / "usage.csv").exists() and (workdir / "an" / "cosine.csv").exists()


def test_replay(workdir, capsys):
    assert main(["replay", str(workdir / "m.4dmt.manifest.json")]) == 0
    assert "bit-exactly" in capsys.readouterr().out


def test_replay_detects_changed_input(workdir, tmp_path):
    data = tmp_path / "d"
    assert main(["gen-data", "--count", "2", "--frames", "33", "--out", str(data)]) == 0
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "m.4dmt"), "--preset", "tiny", "--steps", "2"]) == 0
    seq = read_motion(data / "seq_00000.mseq")
    write_motion(data / "seq_00000.mseq", seq.translated([1.0, 0.0, 0.0]))
    assert main(["replay", str(tmp_path / "m.4dmt.manifest.json")]) == 2


def test_config_file_and_flag_override(workdir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "tiny", "train": {"steps": 3, "seed": 4}}))
    assert main(["train", "--data", str(workdir / "data"), "--config", str(cfg), "--steps", "2",
                 "--out", str(tmp_path / "m.4dmt")]) == 0
    man = RunManifest.from_json((tmp_path / "m.4dmt.manifest.json").read_text())
    assert man.config["train"]["steps"] == 2 and man.config["train"]["seed"] == 4


def test_bad_config(workdir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "tiny", "tokenizer": {"code_dimension": 3}}))
    assert main(["train", "--data", str(workdir / "data"), "--config", str(cfg), "--out", str(tmp_path / "m")]) == 1


def test_gradcheck_attention(capsys):
    assert main(["gradcheck", "--part", "attention"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_attn_demo(capsys):
    assert main(["attn-demo", "--seed", "1"]) == 0
    assert "output shape (48, 64)" in capsys.readouterr().out


def test_usage_error_exit_code():
    assert main(["encode"]) == 1
    assert main(["no-such-command"]) == 1


def test_threads_env(tmp_path):
    env = {"MOTOK_THREADS": "zero", "PATH": "/usr/bin:/bin"}
    r = subprocess.run([sys.executable, "-m", "motok.cli", "attn-demo"], env=env, capture_output=True, text=True)
    assert r.returncode == 1 and "MOTOK_THREADS" in r.stderr
    env["MOTOK_THREADS"] = "1"
    r = subprocess.run([sys.executable, "-m", "motok.cli", "attn-demo"], env=env, capture_output=True, text=True)
    assert r.returncode == 0
