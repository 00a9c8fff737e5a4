import json

import pytest

from levyfluid.cli import main

BASE = """
experiment = audit
fluid.kappa0 = 0.5
fluid.p = 1.5
disc.level = 8
disc.dt = 0.002
disc.horizon = 0.5
noise.kind = additive
noise.gains = [0.4, 0.2]
ensemble.paths = 32
ensemble.seed = 6
ensemble.initial = gaussian
ensemble.scale = 0.4
"""


def write_cfg(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestBasisCommand:
    def test_dumps_mode_table(self, capsys):
        assert main(["basis", "--m", "8", "--d", "2"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["size"] == 8
        assert doc["lambda1"] == pytest.approx(0.5)

    def test_writes_file(self, tmp_path):
        out = tmp_path / "basis.json"
        assert main(["basis", "--m", "4", "--d", "3", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["dim"] == 3

    def test_rejects_bad_dimension(self, capsys):
        assert main(["basis", "--m", "4", "--d", "5"]) == 2
        assert "error" in capsys.readouterr().err


class TestValidateCommand:
    def test_ok(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, BASE)
        assert main(["validate", "--config", cfg]) == 0
        assert "ok: audit" in capsys.readouterr().out

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, BASE.replace("fluid.p = 1.5", "fluid.p = 2.5"))
        assert main(["validate", "--config", cfg]) == 2
        err = capsys.readouterr().err
        assert "fluid.p" in err and "(1, 2]" in err

    def test_duplicate_key_reports_both_lines(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, BASE + "fluid.p = 1.9\n")
        assert main(["validate", "--config", cfg]) == 2
        assert "duplicate key" in capsys.readouterr().err

    def test_missing_file(self, capsys):
        assert main(["validate", "--config", "/nonexistent.cfg"]) == 2


class TestRunCommand:
    def test_pass_writes_bundle(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, BASE)
        out = tmp_path / "bundle"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["verdict"] == "PASS"
        assert summary["config_hash"]
        assert (out / "gronwall.csv").exists()
        assert (out / "run_meta.json").exists()
        assert (out / "trajectory0.csv").exists()
        assert (out / "ledger0.jsonl").exists()
        assert (out / "jumps0.jsonl").exists()

    def test_seed_override_changes_hash(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE)
        o1, o2 = tmp_path / "a", tmp_path / "b"
        main(["run", "--config", cfg, "--out", str(o1)])
        main(["run", "--config", cfg, "--out", str(o2), "--seed", "123"])
        s1 = json.loads((o1 / "summary.json").read_text())
        s2 = json.loads((o2 / "summary.json").read_text())
        assert s1["config_hash"] != s2["config_hash"]
        assert s2["seed"] == 123

    def test_verdict_failure_exit_one(self, tmp_path):
        # zero forcing degenerates the invariant bound to a decay floor the
        # short transient cannot reach: deterministic verdict failure
        text = (
            "experiment = invariant-bound\n"
            "disc.level = 8\n"
            "disc.dt = 0.005\n"
            "disc.horizon = 2.0\n"
            "noise.kind = zero\n"
            "ensemble.paths = 2\n"
            "ensemble.initial = mode1\n"
            "ensemble.scale = 1.0\n"
            "occupation.schedule = [1.0, 1.5, 2.0]\n"
            "occupation.burn_in = 0.5\n"
        )
        cfg = write_cfg(tmp_path, text)
        out = tmp_path / "fail"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 1
        summary = json.loads((out / "summary.json").read_text())
        assert summary["verdict"] == "FAIL"
        assert summary["bound"] == 0.0
        assert summary["measured"] > 1e-6

    def test_blowup_exit_three_with_truncation_marker(self, tmp_path):
        text = (
            "experiment = audit\n"
            "fluid.kappa1 = 50.0\n"
            "disc.level = 8\n"
            "disc.dt = 0.25\n"
            "disc.horizon = 5.0\n"
            "disc.scheme = explicit\n"
            "disc.convection = false\n"
            "disc.stress = false\n"
            "noise.kind = zero\n"
            "ensemble.paths = 4\n"
            "ensemble.initial = mode1\n"
            "ensemble.scale = 1.0\n"
        )
        cfg = write_cfg(tmp_path, text)
        out = tmp_path / "boom"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 3
        assert (out / "TRUNCATED").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["truncated"] is True
        assert "blow_up" in summary

    def test_regime_violation_rejected_at_parse(self, tmp_path, capsys):
        text = (
            "experiment = invariant-bound\n"
            "noise.kind = linear\n"
            "noise.gains = [2.0, 2.0]\n"
        )
        cfg = write_cfg(tmp_path, text)
        assert main(["run", "--config", cfg]) == 2
        assert "dissipative regime" in capsys.readouterr().err


class TestWorkersEnv:
    def test_env_var_sets_default(self, monkeypatch):
        from levyfluid.experiments import default_workers

        monkeypatch.setenv("LEVYFLUID_WORKERS", "3")
        assert default_workers() == 3
        monkeypatch.setenv("LEVYFLUID_WORKERS", "not-a-number")
        assert default_workers() == 1
        monkeypatch.delenv("LEVYFLUID_WORKERS")
        assert default_workers() == 1
