import csv
import json

import pytest

from wmkit.cli import main
from wmkit.keying import SecretKey


@pytest.fixture
def model_file(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(
        json.dumps({"vocab_size": 100, "order": 2, "concentration": 1.0, "model_seed": 42})
    )
    return str(path)


@pytest.fixture
def key_hex():
    return SecretKey.from_seed(2024).to_hex()


def run_generate(tmp_path, model_file, key_hex, rule="beta:0", seed=0, length=200, trace=False):
    out = tmp_path / f"tokens_{rule.replace(':', '_')}_{seed}.json"
    argv = [
        "generate", "--rule", rule, "--sampler", "ngram:5", "--key", key_hex,
        "--model", model_file, "--len", str(length), "--seed", str(seed),
        "--prompt", "1,2,3,4,5", "--out", str(out),
    ]
    if trace:
        argv += ["--trace", str(tmp_path / "trace.json")]
    assert main(argv) == 0
    return out


class TestGenerateDetectRoundTrip:
    def test_detects_with_matching_key(self, tmp_path, model_file, key_hex, capsys):
        out = run_generate(tmp_path, model_file, key_hex)
        result_path = tmp_path / "det.json"
        code = main(
            ["detect", str(out), "--key", key_hex, "--fpr", "0.01", "--out", str(result_path)]
        )
        assert code == 0
        payload = json.loads(result_path.read_text())
        assert payload["decision"] is True
        assert payload["scored_count"] == 199
        assert payload["version"]
        assert payload["config"]["ngram"] == 5
        assert payload["config_hash"]

    def test_rejects_with_unrelated_key(self, tmp_path, model_file, key_hex):
        out = run_generate(tmp_path, model_file, key_hex)
        other = SecretKey.from_seed(999).to_hex()
        result_path = tmp_path / "det2.json"
        code = main(["detect", str(out), "--key", other, "--fpr", "0.01", "--out", str(result_path)])
        assert code == 0  # decision is data, not an exit code
        assert json.loads(result_path.read_text())["decision"] is False

    def test_detection_power_across_trials(self, tmp_path, model_file, key_hex):
        # End-to-end MC: matched keys detected, unrelated keys not.
        other = SecretKey.from_seed(31337).to_hex()
        matched = 0
        false_pos = 0
        trials = 40
        for seed in range(trials):
            out = run_generate(tmp_path, model_file, key_hex, seed=seed)
            res = tmp_path / "r.json"
            main(["detect", str(out), "--key", key_hex, "--fpr", "0.01", "--out", str(res)])
            matched += json.loads(res.read_text())["decision"]
            main(["detect", str(out), "--key", other, "--fpr", "0.01", "--out", str(res)])
            false_pos += json.loads(res.read_text())["decision"]
        assert matched >= int(0.95 * trials)
        assert false_pos <= 1

    def test_from_trace_round_trip(self, tmp_path, model_file, key_hex):
        out = run_generate(tmp_path, model_file, key_hex, trace=True)
        trace_path = tmp_path / "trace.json"
        trace = json.loads(trace_path.read_text())
        assert trace["config"]["key"] == key_hex
        assert len(trace["steps"]) == 200
        assert all(s["context"]["type"] == "ngram" for s in trace["steps"])
        res = tmp_path / "res.json"
        code = main(["detect", str(out), "--from-trace", str(trace_path), "--out", str(res)])
        assert code == 0
        assert json.loads(res.read_text())["decision"] is True

    def test_multikey_detection(self, tmp_path, model_file, key_hex):
        out = run_generate(tmp_path, model_file, key_hex)
        keyfile = tmp_path / "keys.txt"
        keyfile.write_text(
            "\n".join([SecretKey.from_seed(5).to_hex(), key_hex, SecretKey.from_seed(6).to_hex()])
        )
        res = tmp_path / "mk.json"
        code = main(["detect", str(out), "--keys", str(keyfile), "--fpr", "0.01", "--out", str(res)])
        assert code == 0
        payload = json.loads(res.read_text())
        assert payload["key_index"] == 1
        assert payload["n_keys"] == 3
        assert payload["decision"] is True

    def test_dirac_rule_regeneration_is_identical(self, tmp_path, model_file, key_hex):
        a = run_generate(tmp_path, model_file, key_hex, rule="inverse", seed=1, length=50)
        tokens_a = json.loads(a.read_text())["tokens"]
        b_path = tmp_path / "again.json"
        main([
            "generate", "--rule", "inverse", "--key", key_hex, "--model", model_file,
            "--len", "50", "--seed", "2", "--prompt", "1,2,3,4,5", "--out", str(b_path),
        ])
        assert tokens_a == json.loads(b_path.read_text())["tokens"]


class TestExitCodes:
    def test_bad_flags_exit_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["detect"])  # missing required positional
        assert exc.value.code == 2

    def test_unknown_rule_exits_one(self, tmp_path, model_file, key_hex):
        code = main(
            ["generate", "--rule", "bogus", "--key", key_hex, "--model", model_file,
             "--len", "5", "--out", str(tmp_path / "x.json")]
        )
        assert code == 1

    def test_missing_file_exits_one(self, key_hex):
        assert main(["detect", "/nonexistent/tokens.json", "--key", key_hex]) == 1


class TestBiasCommand:
    def test_exact_report(self, tmp_path, capsys):
        dist = tmp_path / "dist.json"
        dist.write_text(json.dumps({"probs": [0.6, 0.4]}))
        out = tmp_path / "bias.json"
        code = main(["bias", "--dist", str(dist), "--rule", "pr", "--exact", "--out", str(out)])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["exact"] == pytest.approx(0.4, abs=1e-12)
        assert payload["bounds"] == pytest.approx([0.2, 0.4], abs=1e-12)

    def test_mc_report_stdout(self, tmp_path, capsys):
        dist = tmp_path / "dist.json"
        dist.write_text(json.dumps({"probs": [0.25, 0.25, 0.25, 0.25]}))
        code = main(["bias", "--dist", str(dist), "--rule", "inverse", "--mc", "1e4", "--seed", "3"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["closed_form"] == pytest.approx(0.75, abs=1e-12)
        assert abs(payload["mc"]["estimate"] - 0.75) <= 4 * payload["mc"]["stderr"] + 1e-9


class TestVerifyTheoremsCommand:
    def test_all_pass(self, capsys):
        assert main(["verify-theorems", "--trials", "100", "--nmax", "6", "--seed", "1"]) == 0
        assert "all-pass" in capsys.readouterr().out


class TestExperimentCommands:
    def test_delta_csv(self, tmp_path, capsys):
        out = tmp_path / "delta.csv"
        code = main([
            "experiment", "--kind", "delta", "--rules", "inverse,beta:0",
            "--vocab", "30", "--order", "1", "--alpha", "0.1",
            "--prompts", "15", "--responses", "8", "--length", "5",
            "--out", str(out),
        ])
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert [r["rule"] for r in rows] == ["none", "inverse", "beta"]
        sidecar = json.loads((tmp_path / "delta.csv.config.json").read_text())
        assert sidecar["config"]["prompts"] == 15
        assert sidecar["version"]

    def test_detection_csv(self, tmp_path):
        out = tmp_path / "det.csv"
        code = main([
            "experiment", "--kind", "detection", "--rules", "beta:0,soft:delta=1.5",
            "--vocab", "40", "--order", "1", "--prompts", "40", "--responses", "1",
            "--length", "20", "--fprs", "0.1,0.01", "--calibrate", "--out", str(out),
        ])
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 4
        assert {r["rule"] for r in rows} == {"beta", "soft"}
        sidecar = json.loads((tmp_path / "det.csv.config.json").read_text())
        assert sidecar["config"]["thresholds"] == "calibrated"

    def test_attack_csv(self, tmp_path):
        out = tmp_path / "attack.csv"
        code = main([
            "attack", "--rule", "beta:0.1", "--epsilons", "0,0.3",
            "--vocab", "40", "--order", "1", "--prompts", "30", "--responses", "1",
            "--length", "15", "--out", str(out),
        ])
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 2
        assert float(rows[0]["auc"]) >= float(rows[1]["auc"]) - 0.25


class TestConfigPrecedence:
    def test_flags_beat_config_beat_defaults(self, tmp_path, model_file, key_hex):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"rule": "beta:0", "len": 30, "seed": 7, "key": key_hex,
                                   "model": model_file, "sampler": "ngram:5", "prompt": "1,2"}))
        out = tmp_path / "t.json"
        code = main(["generate", "--config", str(cfg), "--len", "12", "--out", str(out)])
        assert code == 0
        payload = json.loads(out.read_text())
        assert len(payload["tokens"]) == 12  # flag wins over config's 30
        assert payload["config"]["seed"] == 7  # config wins over default 0
