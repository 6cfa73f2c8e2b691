import json
import logging

import jsonschema
import numpy as np
import pytest

from flowtok import cli
from flowtok.geometry import SS_HELIX, assign_secondary_structure, ca_trace
from flowtok.metrics import SCHEMA_PATH
from flowtok.structio import read_pdb
from flowtok.tokenizer import Tokenizer, preset


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_synth_geometry_and_determinism(tmp_path):
    assert run("synth", "--out", tmp_path / "a", "--kind", "helix", "--n", 3, "--min-len", 30, "--max-len", 40, "--seed", 4) == 0
    assert run("synth", "--out", tmp_path / "b", "--kind", "helix", "--n", 3, "--min-len", 30, "--max-len", 40, "--seed", 4) == 0
    files = sorted((tmp_path / "a").glob("*.pdb"))
    assert len(files) == 3
    for f in files:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
        s = read_pdb(f, ca_only=True).structures[0]
        d = np.linalg.norm(np.diff(ca_trace(s.coords), axis=0), axis=-1)
        assert np.abs(d - 3.8).max() < 1e-3
        assert np.mean(assign_secondary_structure(s.coords) == SS_HELIX) >= 0.9
    cfg = json.loads((tmp_path / "a" / "config.json").read_text())
    assert cfg == {"kind": "helix", "n": 3, "min_len": 30, "max_len": 40, "seed": 4, "atoms": 1}


def test_config_precedence(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"n": 3, "max_len": 20, "min_len": 15}))
    assert run("synth", "--out", tmp_path / "file", "--config", conf) == 0
    assert len(list((tmp_path / "file").glob("*.pdb"))) == 3
    assert run("synth", "--out", tmp_path / "flag", "--config", conf, "--n", 2) == 0
    assert len(list((tmp_path / "flag").glob("*.pdb"))) == 2
    saved = json.loads((tmp_path / "flag" / "config.json").read_text())
    assert saved["n"] == 2 and saved["max_len"] == 20 and saved["kind"] == "any"
    # the persisted config reproduces the run
    assert run("synth", "--out", tmp_path / "again", "--config", tmp_path / "flag" / "config.json") == 0
    for f in (tmp_path / "flag").glob("*.pdb"):
        assert f.read_bytes() == (tmp_path / "again" / f.name).read_bytes()


def test_user_errors_exit_one(tmp_path, caplog):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"bogus": 1}))
    assert run("synth", "--out", tmp_path / "x", "--config", conf) == 1
    assert run("synth", "--out", tmp_path / "x", "--config", tmp_path / "missing.json") == 1
    assert run("tokenize", "--checkpoint", tmp_path / "nope.ckpt", "--data", tmp_path, "--out", tmp_path / "t.tsv") == 1
    assert run("synth", "--out", tmp_path / "x", "--n", 0) == 1
    with pytest.raises(SystemExit) as err:
        run("synth", "--kind", "helix")  # missing --out
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        run("frobnicate")
    assert err.value.code == 1


def _corpus(tmp_path, n=3):
    run("synth", "--out", tmp_path / "data", "--n", n, "--min-len", 10, "--max-len", 14)
    model = Tokenizer(preset("tiny"))
    model.save(tmp_path / "tok.ckpt")
    return tmp_path / "data", tmp_path / "tok.ckpt"


def test_tokenize_records_and_byte_identity(tmp_path):
    data, ckpt = _corpus(tmp_path)
    assert run("tokenize", "--checkpoint", ckpt, "--data", data, "--out", tmp_path / "a.tsv") == 0
    assert run("tokenize", "--checkpoint", ckpt, "--data", data, "--out", tmp_path / "b.tsv") == 0
    a = (tmp_path / "a.tsv").read_bytes()
    assert a == (tmp_path / "b.tsv").read_bytes()
    lines = a.decode().splitlines()
    assert len(lines) == 3
    for line in lines:
        codes = [int(c) for c in line.split("\t")[1].split()]
        assert all(0 <= c < 1000 for c in codes)
    assert (tmp_path / "a.tsv.config.json").is_file()


def test_tokenize_incompatible_checkpoint(tmp_path, caplog):
    data, _ = _corpus(tmp_path, n=1)
    Tokenizer(preset("tiny", atoms=3)).save(tmp_path / "a3.ckpt")
    with caplog.at_level(logging.ERROR, logger="flowtok"):
        assert run("tokenize", "--checkpoint", tmp_path / "a3.ckpt", "--data", data, "--out", tmp_path / "t.tsv") == 1
    assert "config mismatch" in caplog.text


def test_numerical_failure_exits_two(tmp_path, monkeypatch):
    data, _ = _corpus(tmp_path, n=2)

    def boom(self, steps, callback=None):
        raise FloatingPointError("non-finite loss at step 0")

    monkeypatch.setattr(cli.Trainer, "run", boom)
    assert run("train-tokenizer", "--data", data, "--out", tmp_path / "tok", "--preset", "tiny", "--steps", 1) == 2


def test_reconstruct_writes_pdbs_and_sidecar(tmp_path):
    data, ckpt = _corpus(tmp_path, n=2)
    assert run("reconstruct", "--checkpoint", ckpt, "--data", data, "--out", tmp_path / "rec", "--steps", 4, "--sampler", "starred") == 0
    side = json.loads((tmp_path / "rec" / "sampler.json").read_text())
    assert side["steps"] == 4 and side["eta"] == 0.45 and side["gamma"] == 1.0
    for f in sorted((tmp_path / "data").glob("*.pdb")):
        out = read_pdb(tmp_path / "rec" / f.name, ca_only=True).structures[0]
        assert len(out) == len(read_pdb(f, ca_only=True).structures[0])


def test_end_to_end_ci_profile(tmp_path):
    out = tmp_path / "run"
    assert run("report", "--profile", "ci", "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    jsonschema.validate(report, json.loads(SCHEMA_PATH.read_text()))
    assert report["aggregates"]["n"] == 5
    pdbs = list(out.rglob("*.pdb"))
    assert len(pdbs) == 5 + 5 + 2
    for f in pdbs:
        assert read_pdb(f, ca_only=True).structures
    for sub in ("data", "ingest", "tokenizer", "prior", "recon", "samples"):
        assert (out / sub / "config.json").is_file()
    assert (out / "report.csv").read_text().startswith("id,length,rmsd,tm,ss_class")


def test_stage_failure_names_stage_and_keeps_logs(tmp_path, monkeypatch, caplog):
    def broken(args):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "cmd_tokenize", broken)
    with caplog.at_level(logging.ERROR, logger="flowtok"):
        assert run("report", "--profile", "ci", "--out", tmp_path / "run") == 2
    assert "stage 'tokenize' failed" in caplog.text
    logs = (tmp_path / "run" / "tokenizer" / "train_log.jsonl").read_text().splitlines()
    assert len(logs) == 20
