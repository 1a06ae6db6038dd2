import json

import pytest

from deepsight import cli, properties
from deepsight.harness import dump_config, parse_value, reference_config
from deepsight.properties import PropertyResult

TINY = ["--set", "rounds=2", "--set", "federation.n_clients=8", "--set", "clients_per_round=8",
        "--set", "attack_start_round=1", "--set", "defense.ddif_samples=100",
        "--set", "model.hidden=[8]", "--set", "eval.benign_size=200", "--set", "eval.trigger_size=50"]


class TestRun:
    def test_writes_jsonl_and_csv(self, tmp_path):
        out = tmp_path / "r.jsonl"
        assert cli.main(["run", *TINY, "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert [json.loads(s)["round"] for s in lines] == [0, 1]
        assert out.with_suffix(".csv").read_text().startswith("round,ba,ma")

    def test_stdout_and_mode_flag(self, capsys):
        assert cli.main(["run", *TINY, "--mode", "none"]) == 0
        rows = [json.loads(s) for s in capsys.readouterr().out.splitlines()]
        assert all(r["n_rejected"] == 0 and r["boundary"] is None for r in rows)

    def test_config_file_matches_flags(self, tmp_path):
        # the same settings given as --set flags or as a config file give the same bytes
        assert cli.main(["run", *TINY, "--out", str(tmp_path / "a.jsonl")]) == 0
        flat = dict(a.split("=", 1) for a in TINY[1::2])
        cfg = tmp_path / "c.cfg"
        cfg.write_text(dump_config(reference_config(**{k: parse_value(v) for k, v in flat.items()})))
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "b.jsonl")]) == 0
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_invalid_configuration(self, capsys):
        assert cli.main(["run", "--set", "defense.nonsense=1"]) == 2
        assert "invalid configuration" in capsys.readouterr().err

    def test_bad_set_syntax(self):
        with pytest.raises(SystemExit):
            cli.main(["run", "--set", "no-equals"])


class TestOtherCommands:
    def test_ablate_rows(self, tmp_path):
        out = tmp_path / "a.jsonl"
        assert cli.main(["ablate", *TINY, "--modes", "none,clipping_only", "--complexities", "1,2",
                         "--out", str(out)]) == 0
        rows = [json.loads(s) for s in out.read_text().splitlines()]
        assert [(r["complexity"], r["mode"]) for r in rows] == [
            (1, "none"), (1, "clipping_only"), (2, "none"), (2, "clipping_only")]

    def test_ablate_unknown_mode(self):
        assert cli.main(["ablate", *TINY, "--modes", "krum"]) == 2

    def test_sweep_tf(self, capsys):
        assert cli.main(["sweep-tf", *TINY, "--factors", "0.01,0.1"]) == 0
        rows = [json.loads(s) for s in capsys.readouterr().out.splitlines()]
        assert [r["tf"] for r in rows] == [0.01, 0.1]


class TestProve:
    def test_passing_suite(self, capsys):
        assert cli.main(["prove", "--only", "tf_monotonicity"]) == 0
        assert "PASS tf_monotonicity" in capsys.readouterr().err

    def test_failure_gives_nonzero_exit(self, monkeypatch, capsys):
        def broken(seed=0):
            return PropertyResult("broken", trials=10, failures=1, max_error=1.0, detail="forced")

        monkeypatch.setitem(properties.SUITE, "tf_monotonicity", broken)
        assert cli.main(["prove", "--only", "tf_monotonicity"]) == 1
        assert "FAIL broken" in capsys.readouterr().err
