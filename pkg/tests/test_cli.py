import json

import pytest

from chainmarks.cli import main
from chainmarks.trigger_chain import generate_chain, InputShape, read_chain, verify_chain

SHAPE = "2x4x4"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "seed.bin").write_bytes(b"cli owner seed")
    return d


def _common(d):
    return ["--seed-file", str(d / "seed.bin"), "--owner", "carol", "--shape", SHAPE, "-L", "40"]


@pytest.fixture(scope="module")
def trained(workdir):
    d = workdir
    rc = main(["embed", *_common(d), "--epochs", "40", "--rng-seed", "0",
               "-o", str(d / "model.bin"), "--report", str(d / "embed.json")])
    assert rc == 0
    rc = main(["estimate", "--model", str(d / "model.bin"), "-N", "20000", "--budget", "20000",
               "--owner", "carol", "-L", "40", "--p-target", "1e-4", "--rng-seed", "1",
               "-o", str(d / "est.json")])
    assert rc == 0
    return d


def test_chain_command(workdir, monkeypatch):
    monkeypatch.setenv("CHAINMARKS_SEED", "env seed")
    out = workdir / "c.bin"
    assert main(["chain", "--shape", "8", "-L", "5", "-o", str(out)]) == 0
    chain = read_chain(out)
    assert chain == generate_chain(b"env seed", InputShape((8,)), 5)
    assert main(["chain", "--shape", "8", "-L", "5", "--prefix", "2", "-o", str(out)]) == 0
    pre = read_chain(out)
    assert pre.length == 2 and verify_chain(pre.blocks)
    assert pre.blocks == chain.blocks[:2]


def test_missing_seed(workdir, monkeypatch, capsys):
    monkeypatch.delenv("CHAINMARKS_SEED", raising=False)
    assert main(["chain", "-o", str(workdir / "x.bin")]) == 2
    assert "missing seed" in capsys.readouterr().err


def test_seed_never_on_argv():
    with pytest.raises(SystemExit) as exc:
        main(["chain", "--seed", "abc", "-o", "x"])
    assert exc.value.code == 2


def test_embed_report(trained):
    rep = json.loads((trained / "embed.json").read_text())
    assert rep["wm_accuracy"] == 1.0
    assert "seed" not in json.dumps(rep["watermark"])
    assert rep["watermark"]["L"] == 40


def test_estimate_output(trained):
    est = json.loads((trained / "est.json").read_text())
    for key in ("version", "C", "N", "counts", "probs", "U", "p_U", "fingerprint", "decision", "config"):
        assert key in est
    assert est["decision"]["L"] == 40
    assert sum(est["counts"]) == 20000


def test_verify_seed_mode(trained, capsys):
    d = trained
    rc = main(["verify", "--model", str(d / "model.bin"), *_common(d),
               "--decision", str(d / "est.json"), "-o", str(d / "ver.json")])
    assert rc == 0
    rep = json.loads((d / "ver.json").read_text())
    assert rep["decision"] == "accepted" and rep["hamming"] == 0


def test_verify_wrong_seed_rejects(trained, tmp_path):
    d = trained
    (tmp_path / "wrong.bin").write_bytes(b"some other seed")
    args = _common(d)
    args[1] = str(tmp_path / "wrong.bin")
    rc = main(["verify", "--model", str(d / "model.bin"), *args,
               "--decision", str(d / "est.json"), "-o", str(tmp_path / "v.json")])
    assert rc == 1
    assert json.loads((tmp_path / "v.json").read_text())["decision"] == "rejected"


def test_verify_disclosed_chain(trained, tmp_path):
    d = trained
    assert main(["chain", "--seed-file", str(d / "seed.bin"), "--shape", SHAPE, "-L", "40",
                 "--prefix", "40", "-o", str(tmp_path / "pre.bin")]) == 0
    rc = main(["verify", "--model", str(d / "model.bin"), "--chain", str(tmp_path / "pre.bin"),
               "--owner", "carol", "--shape", SHAPE, "-L", "40",
               "--decision", str(d / "est.json"), "-o", str(tmp_path / "v.json")])
    rep = json.loads((tmp_path / "v.json").read_text())
    assert rep["mode"] == "disclosed" and rep["chain_valid"]
    assert rc == (0 if rep["decision"] == "accepted" else 1)


def test_attack_identity_battery(trained, tmp_path):
    d = trained
    rc = main(["attack", "--model", str(d / "model.bin"), *_common(d),
               "--decision", str(d / "est.json"), "--attack", "identity",
               "--rng-seed", "0", "-o", str(tmp_path / "a.json"), "--table", str(tmp_path / "a.txt")])
    assert rc == 0
    out = json.loads((tmp_path / "a.json").read_text())
    assert len(out["rows"]) == 4 and not any(r["success"] for r in out["rows"])
    assert "Robust (-) or Vulnerable (V)" in (tmp_path / "a.txt").read_text()


def test_bad_inputs_exit_2(trained, tmp_path, capsys):
    d = trained
    assert main(["verify", "--model", str(tmp_path / "none.bin"), *_common(d),
                 "--p-target", "1e-4"]) == 2
    (tmp_path / "junk.bin").write_bytes(b"junk")
    assert main(["verify", "--model", str(tmp_path / "junk.bin"), *_common(d),
                 "--p-target", "1e-4"]) == 2
    assert main(["estimate", "--model", str(d / "model.bin"), "--p-target", "2",
                 "--rng-seed", "0"]) == 2
    assert main(["attack", "--model", str(d / "model.bin"), *_common(d),
                 "--attack", "bogus", "--rng-seed", "0"]) == 2
    assert "error" in capsys.readouterr().err
