import json

import numpy as np
import pytest

from dflis import cli
from dflis import config as cfgmod
from dflis.io import ArtifactError, load_projector, read_chain, read_csv, save_projector, write_chain
from dflis.linalg import RankRProjector
from dflis.samplers import ChainRecord


def _cfg(**over):
    base = {
        "name": "lg",
        "problem": {"type": "linear_gaussian", "params": {"d": 6, "m": 3, "seed": 1}},
        "data": {"seed": 4},
        "reduction": {"kind": "data_free", "K": 50, "epsilon": 1e-6},
        "sampler": {"method": "OL", "K_steps": 400, "N": 2, "replicates": 2, "step": 0.5},
    }
    return cfgmod.deep_merge(base, over)


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def _run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, cap.out, cap.err


@pytest.fixture
def pipeline(tmp_path, capsys):
    cfg = _write(tmp_path / "cfg.json", _cfg())
    assert _run(capsys, "simulate-data", "--config", cfg, "--out", tmp_path / "data")[0] == 0
    assert _run(capsys, "build-subspace", "--config", cfg, "--out", tmp_path / "sub")[0] == 0
    return tmp_path, cfg


def test_schema_rejects_unknown_keys():
    with pytest.raises(cfgmod.ConfigError, match="sampler"):
        cfgmod.load_config(_cfg(sampler={"method": "OL", "stepsize": 1.0}))
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.load_config({"problem": {"type": "heat"}})
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.load_config(_cfg(reduction={"kind": "data_free", "epsilon": -1}))


def test_defaults_and_includes(tmp_path):
    _write(tmp_path / "base.json", {"problem": {"type": "exp_toy"}, "sampler": {"method": "PM", "N": 3}})
    child = _write(tmp_path / "child.json", {"include": ["base.json"], "sampler": {"N": 7}})
    cfg = cfgmod.load_config(child)
    assert cfg["sampler"]["N"] == 7 and cfg["sampler"]["method"] == "PM"
    assert cfg["sampler"]["K_steps"] == 10000 and cfg["data"]["seed"] == 0
    _write(tmp_path / "a.json", {"include": ["b.json"], "problem": {"type": "exp_toy"}})
    _write(tmp_path / "b.json", {"include": ["a.json"]})
    with pytest.raises(cfgmod.ConfigError, match="cycle"):
        cfgmod.load_config(tmp_path / "a.json")


def test_hashes_track_sections():
    a = cfgmod.load_config(_cfg())
    b = cfgmod.load_config(_cfg(sampler={"N": 9}))
    c = cfgmod.load_config(_cfg(reduction={"K": 51}))
    assert cfgmod.subspace_hash(a) == cfgmod.subspace_hash(b) != cfgmod.subspace_hash(c)
    assert cfgmod.problem_hash(a) == cfgmod.problem_hash(c)
    assert cfgmod.data_hash(a) != cfgmod.data_hash(cfgmod.load_config(_cfg(data={"seed": 5})))


def test_projector_roundtrip_and_checksum(tmp_path, rng):
    v = rng.standard_normal((5, 2))
    w = np.linalg.pinv(v).T
    proj = RankRProjector(v, w, kind="test", eigenvalues=np.array([2.0, 1.0]))
    save_projector(tmp_path / "p", proj, config_hash="abc")
    back, side = load_projector(tmp_path / "p.bin")
    assert np.array_equal(back.basis, v) and np.array_equal(back.cobasis, w)
    assert side["config_hash"] == "abc" and side["rank"] == 2
    raw = bytearray((tmp_path / "p.bin").read_bytes())
    raw[3] ^= 1
    (tmp_path / "p.bin").write_bytes(bytes(raw))
    with pytest.raises(ArtifactError):
        load_projector(tmp_path / "p")


def test_chain_roundtrip(tmp_path, rng):
    rec = ChainRecord(rng.standard_normal((7, 3)), rng.standard_normal(7), rng.random(7) < 0.5, "m",
                      seed=3, info={"kernel": "rw", "N": 2, "rank": 1})
    write_chain(tmp_path / "c.bin", rec)
    back, hdr = read_chain(tmp_path / "c.bin")
    assert np.array_equal(back.states, rec.states) and np.array_equal(back.accepted, rec.accepted)
    assert {"dim", "K", "kernel", "seed", "N", "rank"} <= set(hdr)
    data = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-8])
    with pytest.raises(ArtifactError):
        read_chain(tmp_path / "t.bin")


def test_pipeline_outputs_and_reproducibility(pipeline, capsys):
    tmp, cfg = pipeline
    rep = json.loads((tmp / "sub" / "report.json").read_text())
    assert rep["kind"] == "data_free" and rep["selected_rank"] == 3
    header, rows = read_csv(tmp / "sub" / "spectrum.csv")
    assert header == ["index", "lambda"] and rows[0][0] == "1"
    args = ["sample", "--config", cfg, "--data", tmp / "data" / "data.csv", "--projector", tmp / "sub" / "projector.bin"]
    assert _run(capsys, *args, "--out", tmp / "r1")[0] == 0
    assert _run(capsys, *args, "--out", tmp / "r2", "--workers", 2, "--csv")[0] == 0
    for name in ("chain_r0.bin", "lifted_r0.bin", "chain_r1.bin"):
        assert (tmp / "r1" / name).read_bytes() == (tmp / "r2" / name).read_bytes()
    assert (tmp / "r1" / "chain_r0.bin").read_bytes() != (tmp / "r1" / "chain_r1.bin").read_bytes()
    assert (tmp / "r2" / "lifted_r0.csv").exists()
    assert _run(capsys, "diagnose", tmp / "r1")[0] == 0
    code, out, _ = _run(capsys, "compare", tmp / "r1", "--out", tmp / "cmp")
    assert code == 0
    header, rows = read_csv(tmp / "cmp" / "iact_table.csv")
    assert rows[0][0] == "OL" and rows[0][-1] == "2"


def test_linear_gaussian_spectrum_matches_exact(pipeline):
    tmp, cfg = pipeline
    c = cfgmod.load_config(cfg)
    prob = cfgmod.build_problem(c)
    A, S = prob.extras["A"], prob.likelihood.noise.matrix
    H = A.T @ np.linalg.solve(S, A)
    L = np.linalg.cholesky(prob.prior.cov.matrix)
    exact = np.sort(np.linalg.eigvalsh(L.T @ H @ L))[::-1]
    _, rows = read_csv(tmp / "sub" / "spectrum.csv")
    got = np.array([float(r[1]) for r in rows])
    assert np.allclose(got[:3], exact[:3], rtol=1e-9)


def test_hash_mismatch_refuses(pipeline, capsys):
    tmp, _ = pipeline
    other = _write(tmp / "other.json", _cfg(reduction={"K": 60}))
    code, _, err = _run(capsys, "sample", "--config", other, "--data", tmp / "data" / "data.csv",
                        "--projector", tmp / "sub" / "projector.bin", "--out", tmp / "bad")
    assert code == 3 and json.loads(err)["error"] == "HashMismatch"


def test_error_json(tmp_path, capsys):
    code, _, err = _run(capsys, "sample", "--config", tmp_path / "missing.json", "--data", "x", "--out", tmp_path)
    msg = json.loads(err)
    assert code == 2 and msg["exit_code"] == 2 and "not found" in msg["message"]
    code, _, err = _run(capsys, "bogus-command")
    assert code == 2 and json.loads(err)["error"] == "UsageError"
    cfg = _write(tmp_path / "c.json", _cfg())
    code, _, err = _run(capsys, "build-subspace", "--config", cfg, "--out", tmp_path / "s", "--data", "d.csv")
    assert code == 2
    code, _, err = _run(capsys, "diagnose", tmp_path / "nowhere")
    assert code == 4 and json.loads(err)["error"] == "ArtifactError"


def test_infinite_epsilon_and_prior_based(tmp_path, capsys):
    cfg = _write(tmp_path / "c.json", _cfg(reduction={"epsilon": "inf"}))
    code, out, _ = _run(capsys, "build-subspace", "--config", cfg, "--out", tmp_path / "s")
    assert code == 0 and json.loads(out)["rank"] == 1
    cfg = _write(tmp_path / "p.json", _cfg(reduction={"kind": "prior_based", "rank": 2}))
    code, out, _ = _run(capsys, "build-subspace", "--config", cfg, "--out", tmp_path / "p")
    assert code == 0 and json.loads(out)["rank"] == 2
    side = json.loads((tmp_path / "p" / "projector.json").read_text())
    assert side["kind"] == "prior_based"
