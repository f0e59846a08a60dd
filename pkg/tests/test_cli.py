import csv
import json
import subprocess
import sys

import pytest

from eventimportance import cli


def run(*argv):
    return cli.main([str(a) for a in argv])


def rows(path):
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def test_primaries_writes_manifest_and_summary(tmp_path):
    out = tmp_path / "p.csv"
    per = tmp_path / "per.csv"
    assert run("primaries", "--samples", 2, "--n-mc", 200, "--seed", 3, "--out", out, "--per-sample", per) == 0
    meta = cli.read_manifest(out)
    assert meta["command"] == "primaries"
    assert meta["seed"] == 3 and meta["n_mc"] == 200
    assert "threads" not in meta["args"]
    body = rows(out)
    assert len(body) == 57
    assert {"state", "mean_ei", "sd_ei"} <= set(body[0])
    assert len(rows(per)) == 2 * 57


def test_primaries_positional(tmp_path):
    out = tmp_path / "pos.csv"
    code = run("primaries", "--samples", 2, "--n-mc", 100, "--state", "Iowa", "--positions", "1,20", "--out", out)
    assert code == 0
    assert [r["position"] for r in rows(out)] == ["1", "1", "20", "20"]
    assert run("primaries", "--samples", 2, "--state", "Iowa", "--out", out) == cli.EXIT_USAGE


def test_bad_arguments_exit_with_usage_code(tmp_path, capsys):
    out = tmp_path / "x.csv"
    assert run("primaries", "--samples", 0, "--out", out) == cli.EXIT_USAGE
    assert "--samples must be >= 1" in capsys.readouterr().err
    assert run("league", "--n-mc", "many", "--out", out) == cli.EXIT_USAGE
    assert not out.exists()


def test_output_is_byte_identical_and_rerunnable(tmp_path):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    args = ["primaries", "--samples", 2, "--n-mc", 150, "--seed", 9, "--timestamp", "2020-01-01T00:00:00Z"]
    assert run(*args, "--out", a, "--threads", 1) == 0
    assert run(*args, "--out", b, "--threads", 4) == 0
    assert a.read_bytes() == b.read_bytes()
    assert run("rerun", a, "--out", c) == 0
    assert a.read_bytes() == c.read_bytes()


def test_league_on_bundled_data(tmp_path):
    jsd, tv = tmp_path / "jsd.csv", tmp_path / "tv.csv"
    common = ["league", "--n-mc", 300, "--iterations", 1, "--matchday", 34]
    assert run(*common, "--out", jsd) == 0
    assert run(*common, "--distance", "tv", "--out", tv) == 0
    a, b = rows(jsd), rows(tv)
    assert len(a) == 9
    for x, y in zip(a, b):
        for side in ("ei_home", "ei_away"):
            assert (float(x[side]) == 0.0) == (float(y[side]) == 0.0)
    bayern = next(r for r in a if r["home"] == "Bayern M.")
    assert float(bayern["ei_home"]) == 0.0


def test_league_iterations_and_final_only(tmp_path):
    out = tmp_path / "it.csv"
    code = run(
        "league", "--n-mc", 200, "--iterations", 2, "--matchday", 34, "--ei-coef", 0.5, "--final-only", "--out", out
    )
    assert code == 0
    assert {r["iteration"] for r in rows(out)} == {"2"}


def test_unknown_reward_code_lists_vocabulary(tmp_path, capsys):
    rewards = tmp_path / "r.txt"
    rewards.write_text("code = 9/9/XYZ\n")
    code = run("league", "--n-mc", 10, "--matchday", 34, "--rewards", rewards, "--out", tmp_path / "o.csv")
    assert code == cli.EXIT_DATA
    err = capsys.readouterr().err
    assert "4/3/PDD" in err and "2/2/PPD" in err


def test_bad_fixtures_give_a_diagnostic(tmp_path, capsys):
    fx = tmp_path / "fx.csv"
    fx.write_text("matchday,home,away\n1,a,b\n1,a,c\n1,d,e\n")
    code = run("league", "--n-mc", 10, "--matchday", 1, "--fixtures", fx, "--out", tmp_path / "o.csv")
    assert code == cli.EXIT_DATA
    assert "a plays twice" in capsys.readouterr().err


def test_oracle_passes_and_fails_honestly(tmp_path, capsys):
    out = tmp_path / "o.csv"
    assert run("oracle", "--n-mc", 20_000, "--out", out) == 0
    assert "PASS" in capsys.readouterr().err
    body = rows(out)
    assert len(body) == 6 * 3 * 4
    assert all(r["pass"] == "True" for r in body)
    assert run("oracle", "--n-mc", 10, "--out", out) == cli.EXIT_ORACLE_FAIL
    assert "FAIL" in capsys.readouterr().err


def test_oracle_deterministic_model_has_no_gap(tmp_path):
    cfg = tmp_path / "toy.cfg"
    cfg.write_text("deterministic = true\n")
    out = tmp_path / "o.csv"
    assert run("oracle", "--config", cfg, "--n-mc", 500, "--out", out) == 0
    assert all(float(r["tv_gap"]) == 0.0 for r in rows(out))


def test_oracle_with_cup(tmp_path):
    cfg = tmp_path / "toy.cfg"
    cfg.write_text("cup.finalists = South|West\ncup.weights = 0.7|0.3\n")
    assert run("oracle", "--config", cfg, "--n-mc", 20_000, "--out", tmp_path / "o.csv") == 0


def test_thread_count_does_not_change_league_output(tmp_path):
    outs = []
    for threads in (1, 4, 8):
        out = tmp_path / f"t{threads}.csv"
        args = ["league", "--n-mc", 300, "--iterations", 1, "--matchday", 34, "--timestamp", "x"]
        assert run(*args, "--threads", threads, "--out", out) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_config_file_supplies_defaults(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# study defaults\nn-mc = 120\nseed = 5\nsamples = 2\nmode = rank-increase\n")
    out = tmp_path / "c.csv"
    assert run("primaries", "--config", cfg, "--seed", 6, "--out", out) == 0
    meta = cli.read_manifest(out)
    assert meta["n_mc"] == 120
    assert meta["seed"] == 6
    assert meta["args"]["mode"] == "rank-increase"
    assert meta["config"] == str(cfg)


def test_config_file_errors(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("n-mc 120\n")
    assert run("primaries", "--config", cfg, "--out", tmp_path / "o.csv") == cli.EXIT_USAGE
    assert run("primaries", "--config", tmp_path / "missing.cfg", "--out", tmp_path / "o.csv") == cli.EXIT_USAGE


def test_timestamp_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    out = tmp_path / "o.csv"
    assert run("oracle", "--n-mc", 100, "--tolerance", 1.0, "--out", out) == 0
    assert cli.read_manifest(out)["timestamp"] == "1970-01-01T00:00:00Z"
    assert json.loads(out.read_text().splitlines()[0][len("# manifest: "):])["version"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "eventimportance.cli", "--version"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "eventimportance" in proc.stdout


@pytest.mark.parametrize("argv", [[], ["bogus"]])
def test_missing_or_unknown_command(argv):
    assert cli.main(argv) == cli.EXIT_USAGE
