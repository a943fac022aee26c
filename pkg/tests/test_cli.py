"""End-to-end checks of the command-line surface.

Each test drives `main` with an argv list, so exit codes and artifact
bytes are exercised exactly as a shell user would see them.
"""

import csv
import json

import numpy as np
import pytest

from gchain.chain import Trajectory, config_digest, run
from gchain.cli import ParseError, UsageError, load_config, main
from gchain.gfun import PastWindow, evaluate
from gchain.params import PRESETS, SpecConfig, build_scales
from gchain.report import file_digest
from gchain.rng import fair_signs, philox_generator

SMALL = {"epsilon": 0.3, "K": 4, "k_max": 6, "window_depth": 512,
         "clamp_enabled": True}


@pytest.fixture()
def small_cfg(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL), encoding="utf-8")
    return str(path)


def _signs_text(row) -> str:
    return "".join("+" if v > 0 else "-" for v in row)


def _rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_scales_stdout(capsys):
    assert main(["scales", "--eps", "0.3", "--K", "7", "--kmax", "10"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == ("k,ell,beta,nu,begin_count,good_len_bound,"
                        "good_open_bound,upsilon")
    by_k = {int(ln.split(",")[0]): ln.split(",") for ln in lines[1:]}
    assert by_k[7][1] == "7" and by_k[7][2] == "128"
    assert by_k[10][2] == "16384" and by_k[12][2] == "16777216"
    assert by_k[8][4] == "2"  # begin_count appears from K+1 up
    assert by_k[1][3] == ""   # nu undefined at the first scale


def test_scales_validation_exit_code(capsys):
    assert main(["scales", "--eps", "0.6", "--K", "7", "--kmax", "10"]) == 1
    err = capsys.readouterr().err
    assert "0.5" in err or "(0, 0.5)" in err
    assert main(["definitely-not-a-subcommand"]) == 1
    assert main([]) == 1


def test_load_config_strict(tmp_path, small_cfg):
    cfg = load_config(small_cfg)
    assert cfg == SpecConfig(**SMALL)
    bad = tmp_path / "bad.json"
    bad.write_text('{"K": 4}', encoding="utf-8")
    with pytest.raises(ParseError, match="epsilon"):
        load_config(bad)
    bad.write_text(json.dumps({**SMALL, "foo": 1}), encoding="utf-8")
    with pytest.raises(ParseError, match="foo"):
        load_config(bad)
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ParseError):
        load_config(bad)
    with pytest.raises(UsageError):
        load_config(tmp_path / "missing.json")


def test_eval_matches_library(tmp_path, capsys, small_cfg):
    gen = philox_generator(11, 3)
    x = fair_signs(gen, 600)
    y = fair_signs(gen, 600)
    win_file = tmp_path / "win.txt"
    win_file.write_text(_signs_text(x) + "\n" + _signs_text(y) + "\n",
                        encoding="utf-8")
    assert main(["eval", "--config", small_cfg, str(win_file)]) == 0
    got = json.loads(capsys.readouterr().out)
    table = build_scales(SpecConfig(**SMALL))
    want = evaluate(PastWindow(x, y, start=-600), table)
    assert got["p11"] == pytest.approx(want.p11, abs=0)
    assert got["pm1m1"] == pytest.approx(want.pm1m1, abs=0)
    assert got["k0"] == want.k0_used
    assert got["s_size"] == want.S_size
    # too-short window: strict evaluation refuses, lenient accepts
    short = tmp_path / "short.txt"
    short.write_text("+" * 40 + "\n" + "-" * 40 + "\n", encoding="utf-8")
    assert main(["eval", "--config", small_cfg, str(short)]) == 1
    assert main(["eval", "--config", small_cfg, "--lenient",
                 str(short)]) == 0


def test_blocks_csv_matches_index(tmp_path, capsys, small_cfg):
    from gchain.blockscan import WindowIndex

    y = fair_signs(philox_generator(21, 5), 700)
    seq = tmp_path / "seq.txt"
    seq.write_text(_signs_text(y) + "\n", encoding="utf-8")
    out = tmp_path / "blocks.csv"
    assert main(["blocks", "--config", small_cfg, str(seq),
                 "--out", str(out)]) == 0
    rows = _rows(out)
    table = build_scales(SpecConfig(**SMALL))
    index = WindowIndex.scan(y, table, start=0)
    for k in range(table.K, table.k_max + 1):
        blocks = list(reversed(index.blocks(k)))
        got = [r for r in rows if int(r["k"]) == k]
        assert len(got) == len(blocks)
        for r, blk in zip(got, blocks):
            assert int(r["a"]) == blk.a and int(r["b"]) == blk.b
            assert r["kind"] in ("Complete", "Partial", "WallTruncated")
            assert int(r["opening_size"]) == index.opening(blk).size


def test_simulate_artifacts_and_determinism(tmp_path, small_cfg):
    out = tmp_path / "t.bin"
    recs = tmp_path / "r.csv"
    man = tmp_path / "m.json"
    argv = ["simulate", "--config", small_cfg, "--boundary", "minus",
            "--steps", "2000", "--seed", "9", "--out", str(out),
            "--records", str(recs), "--manifest", str(man)]
    assert main(argv) == 0
    traj = Trajectory.read(out)
    table = build_scales(SpecConfig(**SMALL))
    want, _stats, _state = run(table, "MinusWall", 9, 2000)
    assert traj.boundary == "MinusWall" and traj.seed == 9
    assert traj.config_sha256 == config_digest(table)
    assert np.array_equal(traj.x_row(), want.x_row())
    assert np.array_equal(traj.y_row(), want.y_row())
    with open(recs, encoding="utf-8") as f:
        assert sum(1 for _ in f) == 2001
    manifest = json.loads(man.read_text(encoding="utf-8"))
    assert manifest["command"] == "simulate"
    for name, digest in manifest["outputs"].items():
        assert file_digest(tmp_path / name) == digest
    sidecar = json.loads((tmp_path / "t.bin.json").read_text())
    assert sidecar["trajectory_sha256"] == file_digest(out)
    assert sidecar["stats"]["steps"] == 2000

    first = out.read_bytes()
    assert main(argv) == 0
    assert out.read_bytes() == first


def test_blockstats_report(tmp_path, small_cfg):
    out = tmp_path / "bs.csv"
    assert main(["blockstats", "--config", small_cfg, "--k", "4",
                 "--samples", "20000", "--seed", "3",
                 "--out", str(out)]) == 0
    rows = {r["stat"]: r for r in _rows(out)}
    assert set(rows) >= {"mean_length", "ytilde", "good_prob", "len_ratio",
                         "tail_j0", "tail_j5"}
    mean = float(rows["mean_length"]["value"])
    assert mean == pytest.approx(8.0, rel=0.03)
    assert rows["mean_length"]["flag"] == "ok"
    assert 0.5 < float(rows["ytilde"]["value"]) < 1.0
    for name, r in rows.items():
        assert r["flag"] in ("ok", "off"), name
        assert float(r["bound_lo"]) <= float(r["bound_hi"])
    assert (tmp_path / "bs.png").exists()


def test_var_modes(tmp_path, capsys, small_cfg):
    assert main(["var", "--preset", "A", "--mode", "bound",
                 "--jmax", "4096"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    caps = [float(ln.split(",")[2]) for ln in lines[1:]]
    assert caps == sorted(caps, reverse=True)

    assert main(["var", "--config", small_cfg, "--mode", "exact",
                 "--j", "2", "--depth", "6"]) == 0
    exact_row = capsys.readouterr().out.strip().splitlines()[1].split(",")
    exact_val = float(exact_row[1])
    assert exact_val <= float(exact_row[2]) + 1e-12

    assert main(["var", "--config", small_cfg, "--mode", "search",
                 "--j", "2", "--budget", "300", "--seed", "2",
                 "--depth", "6"]) == 0
    search_row = capsys.readouterr().out.strip().splitlines()[1].split(",")
    assert float(search_row[1]) <= exact_val + 1e-12

    out = tmp_path / "rep.json"
    assert main(["var", "--preset", "A", "--mode", "report", "--p", "9.45",
                 "--jmax", "65536", "--out", str(out)]) == 0
    rep = json.loads(out.read_text(encoding="utf-8"))
    assert rep["p_star"] == pytest.approx(8.45)
    assert (tmp_path / "rep.csv").exists()
    assert (tmp_path / "rep.png").exists()

    # enumeration guard trips as a runtime failure, not a crash
    assert main(["var", "--config", small_cfg, "--mode", "exact",
                 "--j", "2", "--depth", "30"]) == 2


def test_phase_artifacts(tmp_path, small_cfg):
    out = tmp_path / "ph.json"
    assert main(["phase", "--config", small_cfg, "--steps", "2500",
                 "--seeds", "2,1", "--out", str(out),
                 "--nboot", "150"]) == 0
    rep = json.loads(out.read_text(encoding="utf-8"))
    assert rep["seeds"] == [1, 2]
    assert rep["separation"] == pytest.approx(
        rep["plus_mean"] - rep["minus_mean"], abs=1e-12)
    rows = _rows(tmp_path / "ph.csv")
    table = build_scales(SpecConfig(**SMALL))
    n_scales = table.k_max - table.K + 1
    assert len(rows) == 2 * 2 * n_scales
    assert (tmp_path / "ph.png").exists()
    assert main(["phase", "--config", small_cfg, "--steps", "2500",
                 "--seeds", "", "--out", str(out)]) == 1


def test_threads_and_manifest_flags(tmp_path, capsys, small_cfg):
    man = tmp_path / "man.json"
    assert main(["scales", "--config", small_cfg, "--threads", "2",
                 "--out", str(tmp_path / "s.csv"),
                 "--manifest", str(man)]) == 0
    manifest = json.loads(man.read_text(encoding="utf-8"))
    assert manifest["notes"]["threads"] == 2
    assert "s.csv" in manifest["outputs"]
    assert main(["scales", "--config", small_cfg, "--threads", "0"]) == 1
