import csv
import json
import math

import pytest

from slwejump.cli import main, parse_grid
from slwejump.text import synthetic_corpus


def run(tmp_path, monkeypatch, *argv):
    monkeypatch.chdir(tmp_path)
    return main(list(argv))


def rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


class TestSimulate:
    def test_columns_and_sidecar(self, tmp_path, monkeypatch):
        assert run(tmp_path, monkeypatch, "simulate", "--env", "large-jumps", "--lambda", "0.96",
                   "--z", "3", "--steps", "2000", "--seed", "7", "--out", "s.csv") == 0
        data = rows(tmp_path / "s.csv")
        assert list(data[0]) == ["step", "truth", "observation", "jump", "slwe", "mean",
                                 "tested", "jumped"]
        assert len(data) == 2000 and data[-1]["step"] == "2000"
        meta = json.loads((tmp_path / "s.csv.meta.json").read_text())
        assert meta["argv"][0] == "simulate"
        assert meta["config"]["estimator"]["lambda"] == 0.96
        assert meta["config"]["env"]["seed"] == 7

    def test_rerun_from_metadata(self, tmp_path, monkeypatch):
        run(tmp_path, monkeypatch, "simulate", "--steps", "500", "--seed", "3", "--out", "a.csv")
        argv = json.loads((tmp_path / "a.csv.meta.json").read_text())["argv"]
        argv[argv.index("a.csv")] = "b.csv"
        assert main(argv) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_multinomial(self, tmp_path, monkeypatch):
        assert run(tmp_path, monkeypatch, "simulate", "--env", "spike", "--chi2", "25",
                   "--steps", "300", "--out", "m.csv") == 0
        head = rows(tmp_path / "m.csv")[0]
        assert "truth_4" in head and "jump_4" in head and "mean_1" in head

    def test_resume_equals_uninterrupted(self, tmp_path, monkeypatch):
        run(tmp_path, monkeypatch, "simulate", "--steps", "3000", "--seed", "4", "--out", "full.csv")
        main(["simulate", "--steps", "1200", "--seed", "4", "--out", "a.csv", "--save-state", "s.json"])
        main(["simulate", "--steps", "1800", "--seed", "4", "--out", "b.csv", "--resume", "s.json"])
        a = (tmp_path / "a.csv").read_text().splitlines()
        b = (tmp_path / "b.csv").read_text().splitlines()
        assert a + b[1:] == (tmp_path / "full.csv").read_text().splitlines()

    def test_config_file(self, tmp_path, monkeypatch):
        (tmp_path / "c.json").write_text(json.dumps({"lambda": 0.9, "z": 2.0, "test-every": 5}))
        assert run(tmp_path, monkeypatch, "simulate", "--config", "c.json", "--steps", "10",
                   "--out", "o.csv") == 0
        est = json.loads((tmp_path / "o.csv.meta.json").read_text())["config"]["estimator"]
        assert (est["lambda"], est["threshold"], est["cadence"]) == (0.9, 2.0, 5)

    def test_alpha_sets_threshold(self, tmp_path, monkeypatch):
        run(tmp_path, monkeypatch, "simulate", "--alpha", "0.05", "--steps", "10", "--out", "o.csv")
        est = json.loads((tmp_path / "o.csv.meta.json").read_text())["config"]["estimator"]
        assert est["threshold"] == pytest.approx(1.959964, abs=1e-6)


@pytest.mark.parametrize("argv", [
    ["simulate", "--alpha", "0.01", "--z", "3"],
    ["simulate", "--lambda", "1.5"],
    ["simulate", "--env", "spike", "--z", "3"],
    ["simulate", "--env", "large-jumps", "--chi2", "25"],
    ["simulate", "--test-every", "0"],
    ["simulate", "--warmup", "1"],
    ["simulate", "--env", "nope"],
    ["simulate", "--steps", "0"],
    ["simulate", "--env-params", "{\"bogus\": 1}"],
    ["sweep", "--grid", "6:1:1"],
    ["sweep", "--param", "chi2"],
    ["sweep", "--steps", "100"],
    ["dist-check", "--n", "1"],
    ["track", "--k", "0"],
    ["track", "--corpus", "missing.jsonl"],
    ["frobnicate"],
    [],
])
def test_invalid_config_exits_1(tmp_path, monkeypatch, capsys, argv):
    assert run(tmp_path, monkeypatch, *argv) == 1
    assert capsys.readouterr().err


def test_unknown_config_key(tmp_path, monkeypatch, capsys):
    (tmp_path / "c.json").write_text('{"bogus": 1}')
    assert run(tmp_path, monkeypatch, "simulate", "--config", "c.json") == 1
    assert "bogus" in capsys.readouterr().err


def test_nan_exits_2(tmp_path, monkeypatch, capsys):
    import slwejump.cli as cli

    def broken(*args, **kwargs):
        raise cli.NumericError("NaN in sweep report")
    monkeypatch.setattr(cli, "cmd_sweep", broken)
    monkeypatch.setitem(cli.COMMANDS, "sweep", broken)
    assert run(tmp_path, monkeypatch, "sweep") == 2
    assert "NaN" in capsys.readouterr().err


def test_nan_detection_in_dist_check(tmp_path, monkeypatch, capsys):
    import slwejump.cli as cli
    from slwejump import harness

    real = harness.dist_check

    def nan_check(*args, **kwargs):
        d = real(*args, **kwargs)
        d.skewness = math.nan
        return d
    monkeypatch.setattr(cli, "dist_check", nan_check)
    assert run(tmp_path, monkeypatch, "dist-check", "--reps", "200") == 2


def test_parse_grid():
    g = parse_grid("1:6:0.25")
    assert len(g) == 21 and g[0] == 1.0 and g[-1] == 6.0 and g[8] == 3.0
    assert parse_grid("0.9,0.95") == (0.9, 0.95)


def test_sweep_output(tmp_path, monkeypatch):
    assert run(tmp_path, monkeypatch, "sweep", "--env", "small-jumps", "--param", "z",
               "--grid", "1,3,6", "--steps", "6000", "--reps", "2", "--workers", "2",
               "--out", "w.csv") == 0
    data = rows(tmp_path / "w.csv")
    assert len(data) == 9 and set(data[0]) == {"param", "estimator", "mae", "stderr", "reps", "seed"}
    meta = json.loads((tmp_path / "w.csv.meta.json").read_text())
    assert meta["config"]["spec"]["grid"] == [1.0, 3.0, 6.0]


def test_dist_check_output(tmp_path, monkeypatch, capsys):
    assert run(tmp_path, monkeypatch, "dist-check", "--n", "50", "--p", "0.3", "--lambda", "0.95",
               "--reps", "10000", "--out", "h.csv") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["mean_ok"] and abs(summary["mean"]) < 3 * summary["mean_se"]
    assert rows(tmp_path / "h.csv")[0].keys() == {"bin_low", "bin_high", "count", "normal_expected"}


def test_track_output(tmp_path, monkeypatch, capsys):
    assert run(tmp_path, monkeypatch, "track", "--out", "t.csv", "--write-keywords", "kw") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["mae_jump"] < summary["mae_slwe"]
    assert sorted(p.name for p in (tmp_path / "kw").iterdir()) == \
        ["economy.txt", "entertainment.txt", "eu.txt", "sports.txt"]
    head = rows(tmp_path / "t.csv")[0]
    assert list(head)[:3] == ["word_idx", "topic", "jump_est_1"]
    # the written lists reload and give the same scores
    assert main(["track", "--keywords", "kw", "--topics", "eu,economy,sports,entertainment",
                 "--out", "t2.csv"]) == 0
    assert (tmp_path / "t.csv").read_bytes() == (tmp_path / "t2.csv").read_bytes()


def test_track_custom_corpus_and_cv(tmp_path, monkeypatch):
    synthetic_corpus(seed=5, n_articles=40).write_jsonl(tmp_path / "c.jsonl")
    assert run(tmp_path, monkeypatch, "track", "--corpus", "c.jsonl", "--k", "20", "--cv",
               "--out", "cv.csv") == 0
    data = rows(tmp_path / "cv.csv")
    assert [d["fold"] for d in data] == ["1", "2"]


def test_track_skips_keywordless_articles(tmp_path, monkeypatch, capsys):
    lines = ['{"label": "a", "tokens": ["goal", "goal"]}', '{"label": "b", "tokens": ["zzz"]}',
             '{"label": "b", "tokens": ["bank"]}']
    (tmp_path / "c.jsonl").write_text("\n".join(lines) + "\n")
    (tmp_path / "kw").mkdir()
    (tmp_path / "kw" / "a.txt").write_text("goal\n")
    (tmp_path / "kw" / "b.txt").write_text("bank\n")
    assert run(tmp_path, monkeypatch, "track", "--corpus", "c.jsonl", "--keywords", "kw",
               "--out", "t.csv") == 0
    out = capsys.readouterr()
    assert json.loads(out.out)["skipped_articles"] == 1
    assert "skipped 1" in out.err
