"""Command-line contract: exit codes, JSON output, determinism, files."""
import json

import jsonschema
import numpy as np
import pytest

from laqkd.cli import EXIT_OK, EXIT_RESOURCE, EXIT_USAGE, EXIT_VERIFY, main

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

AGGREGATE_SCHEMA = {
    "type": "object",
    "required": ["type", "trials", "completed", "aborts", "success_rate",
                 "abort_rate", "key_agreement_rate", "abort_reasons",
                 "adversary", "protocol", "seed"],
    "properties": {
        "type": {"const": "aggregate"},
        "trials": {"type": "integer", "minimum": 1},
        "completed": {"type": "integer", "minimum": 0},
        "aborts": {"type": "integer", "minimum": 0},
        "success_rate": {"type": "number", "minimum": 0, "maximum": 1},
        "abort_rate": {"type": "number", "minimum": 0, "maximum": 1},
        "key_agreement_rate": {"type": ["number", "null"]},
        "abort_reasons": {"type": "object"},
        "adversary": {"type": "string"},
        "protocol": {"enum": ["p1", "p2", "p3"]},
        "seed": {"type": "integer"},
    },
}

ATTACK_SCHEMA = {
    "type": "object",
    "required": ["protocol", "strategy", "trials", "samples", "detection_rate",
                 "key_agreement_rate", "per_position_disturbance",
                 "mi_estimate", "mi_bias_bound", "max_trace_distance",
                 "residual", "guess_accuracy"],
    "properties": {
        "detection_rate": {"type": "number"},
        "per_position_disturbance": {"type": ["number", "null"]},
        "mi_estimate": {"type": ["number", "null"]},
        "guess_accuracy": {"type": ["number", "null"]},
    },
}


def run_cli(capsys, *argv):
    rc = main(list(argv))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


# ---------------------------------------------------------------------------
# verify-tables

def test_verify_tables_command(capsys):
    rc, out, err = run_cli(capsys, "verify-tables")
    assert rc == EXIT_OK
    doc = json.loads(out)
    assert doc["total"] == 28 and doc["all_ok"] is True
    assert len(doc["rows"]) == 28
    assert "28 code-table rows verified" in err


def test_verify_tables_writes_the_same_doc_to_a_file(tmp_path, capsys):
    path = tmp_path / "tables.json"
    rc, out, _ = run_cli(capsys, "verify-tables", "--out", str(path))
    assert rc == EXIT_OK
    assert path.read_text() == out


# ---------------------------------------------------------------------------
# run

def test_run_emits_trial_lines_then_aggregate(capsys):
    rc, out, err = run_cli(capsys, "run", "--protocol", "p1", "--n", "16",
                           "--m", "8", "--trials", "4", "--seed", "3")
    assert rc == EXIT_OK
    lines = out.strip().splitlines()
    assert len(lines) == 5
    for t, line in enumerate(lines[:4]):
        doc = json.loads(line)
        assert doc["trial"] == t
        assert doc["aborted"] is False
        assert doc["config"]["n"] == 16
    aggregate = json.loads(lines[-1])
    jsonschema.validate(aggregate, AGGREGATE_SCHEMA)
    assert aggregate["abort_rate"] == 0.0
    assert "abort rate" in err


def test_run_stdout_is_byte_deterministic(capsys):
    argv = ("run", "--protocol", "p2", "--n", "16", "--m", "4",
            "--trials", "3", "--seed", "9")
    _, first, _ = run_cli(capsys, *argv)
    _, second, _ = run_cli(capsys, *argv)
    assert first == second


def test_run_out_file_and_aggregate_echo(tmp_path, capsys):
    path = tmp_path / "runs.jsonl"
    rc, out, _ = run_cli(capsys, "run", "--n", "16", "--m", "8", "--trials", "3",
                         "--seed", "4", "--out", str(path))
    assert rc == EXIT_OK
    # stdout carries only the aggregate once a file takes the full stream
    assert len(out.strip().splitlines()) == 1
    assert json.loads(out)["type"] == "aggregate"
    file_lines = path.read_text().strip().splitlines()
    assert len(file_lines) == 4
    assert json.loads(file_lines[-1]) == json.loads(out)


def test_run_out_files_are_identical_across_invocations(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    run_cli(capsys, "run", "--n", "16", "--m", "8", "--trials", "3",
            "--seed", "5", "--out", str(a))
    run_cli(capsys, "run", "--n", "16", "--m", "8", "--trials", "3",
            "--seed", "5", "--out", str(b))
    assert a.read_bytes() == b.read_bytes()


def test_run_results_do_not_depend_on_jobs(tmp_path, capsys):
    serial, parallel = tmp_path / "s.jsonl", tmp_path / "p.jsonl"
    common = ("run", "--n", "16", "--m", "8", "--trials", "6", "--seed", "6")
    run_cli(capsys, *common, "--jobs", "1", "--out", str(serial))
    run_cli(capsys, *common, "--jobs", "2", "--out", str(parallel))
    assert serial.read_bytes() == parallel.read_bytes()


def test_run_transcript_out(tmp_path, capsys):
    path = tmp_path / "transcript.jsonl"
    run_cli(capsys, "run", "--n", "16", "--m", "8", "--trials", "2",
            "--seed", "7", "--transcript-out", str(path))
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 2 * (16 + 8 + 1)
    first = json.loads(lines[0])
    assert first["trial"] == 0 and first["type"] == "position" and first["pos"] == 0
    assert json.loads(lines[24])["type"] == "summary"
    for line in lines:
        json.loads(line)


def test_run_figures(tmp_path, capsys):
    out = tmp_path / "runs.jsonl"
    rc, _, _ = run_cli(capsys, "run", "--n", "16", "--m", "8", "--trials", "2",
                       "--seed", "8", "--out", str(out), "--figures")
    assert rc == EXIT_OK
    png = tmp_path / "runs.png"
    assert png.read_bytes()[:8] == PNG_MAGIC


def test_figures_require_an_output_path(capsys):
    rc, _, err = run_cli(capsys, "run", "--trials", "2", "--figures")
    assert rc == EXIT_USAGE
    assert "error" in err


def test_key_file_round_trip(tmp_path, capsys):
    keys = tmp_path / "session.keys"
    argv = ("run", "--n", "16", "--m", "8", "--trials", "3", "--seed", "11")
    _, baseline, _ = run_cli(capsys, *argv, "--keys-out", str(keys))
    assert keys.read_text().startswith("laqkd-keys v1 protocol=p1 n=16 m=8")
    _, reloaded, _ = run_cli(capsys, *argv, "--keys", str(keys))
    assert reloaded == baseline


def test_key_file_protocol_mismatch(tmp_path, capsys):
    keys = tmp_path / "session.keys"
    run_cli(capsys, "run", "--n", "16", "--m", "8", "--trials", "1",
            "--seed", "12", "--keys-out", str(keys))
    rc, _, err = run_cli(capsys, "run", "--protocol", "p2", "--n", "16",
                         "--m", "8", "--trials", "1", "--keys", str(keys))
    assert rc == EXIT_USAGE
    assert "key file is for p1" in err


# ---------------------------------------------------------------------------
# attack

def test_attack_passive_baseline(capsys):
    rc, out, _ = run_cli(capsys, "attack", "--protocol", "p2", "--n", "16",
                         "--m", "4", "--trials", "5", "--samples", "2000",
                         "--seed", "13")
    assert rc == EXIT_OK
    doc = json.loads(out)
    jsonschema.validate(doc, ATTACK_SCHEMA)
    assert doc["detection_rate"] == 0.0
    assert doc["per_position_disturbance"] == 0.0
    assert doc["mi_estimate"] is None
    assert doc["guess_accuracy"] is None


def test_attack_intercept_z(capsys):
    rc, out, _ = run_cli(capsys, "attack", "--protocol", "p1", "--n", "16",
                         "--m", "8", "--adversary", "intercept:z",
                         "--trials", "10", "--samples", "20000", "--seed", "14")
    assert rc == EXIT_OK
    doc = json.loads(out)
    jsonschema.validate(doc, ATTACK_SCHEMA)
    assert doc["detection_rate"] == 1.0
    assert abs(doc["per_position_disturbance"] - 0.25) < 0.02
    assert abs(doc["guess_accuracy"] - 0.75) < 0.02


def test_attack_breidbart_guess_accuracy(capsys):
    _, out, _ = run_cli(capsys, "attack", "--protocol", "p1", "--n", "16",
                        "--m", "8", "--adversary", "intercept:breidbart",
                        "--trials", "5", "--samples", "30000", "--seed", "15")
    doc = json.loads(out)
    assert abs(doc["guess_accuracy"] - 0.8536) < 0.01


def test_attack_random_intercept_has_no_fixed_angle(capsys):
    _, out, _ = run_cli(capsys, "attack", "--protocol", "p1", "--n", "16",
                        "--m", "8", "--adversary", "intercept:random",
                        "--trials", "5", "--samples", "5000", "--seed", "16")
    assert json.loads(out)["guess_accuracy"] is None


def test_attack_probe(capsys):
    rc, out, _ = run_cli(capsys, "attack", "--protocol", "p3", "--n", "16",
                         "--m", "8", "--adversary", "probe:5", "--trials", "5",
                         "--samples", "20000", "--seed", "17")
    assert rc == EXIT_OK
    doc = json.loads(out)
    assert doc["probe_dim"] == 5
    assert doc["conditions_satisfied"] is True
    assert doc["residual"] < 1e-9
    assert doc["detection_rate"] == 0.0
    assert doc["mi_estimate"] < 0.01
    assert doc["max_trace_distance"] < 1e-6


def test_attack_malicious_tp_rejected_on_pair_source(capsys):
    rc, _, err = run_cli(capsys, "attack", "--protocol", "p2", "--n", "16",
                         "--m", "4", "--adversary", "malicious_tp:uniform",
                         "--trials", "2")
    assert rc == EXIT_USAGE
    assert "error" in err


# ---------------------------------------------------------------------------
# metrics

def test_metrics_single_protocol(capsys):
    rc, out, err = run_cli(capsys, "metrics", "--protocol", "p1",
                           "--n", "128", "--m", "64")
    assert rc == EXIT_OK
    doc = json.loads(out)
    assert len(doc["reports"]) == 1
    assert len(doc["references"]) == 3
    rep = doc["reports"][0]
    assert rep["recycling"]["basis"] == 0.89
    assert rep["transmission_time_cost"] == 2
    assert "QE" in err


def test_metrics_all_protocols(capsys):
    _, out, _ = run_cli(capsys, "metrics", "--all", "--n", "128", "--m", "64")
    doc = json.loads(out)
    assert [r["protocol"] for r in doc["reports"]] == ["p1", "p2", "p3"]
    assert [r["transmission_time_cost"] for r in doc["reports"]] == [2, 2, 3]
    assert doc["reports"][1]["qubit_efficiency"] == 0.5


def test_metrics_exact_flag(capsys):
    _, out, _ = run_cli(capsys, "metrics", "--protocol", "p1", "--n", "128",
                        "--m", "64", "--exact")
    rep = json.loads(out)["reports"][0]
    assert rep["recycling"]["basis"] == (1000 * 128 + 672 * 64) / 192000


def test_metrics_schedule_out(tmp_path, capsys):
    path = tmp_path / "schedules.json"
    run_cli(capsys, "metrics", "--all", "--schedule", str(path))
    schedules = json.loads(path.read_text())
    assert set(schedules) == {"p1", "p2", "p3"}
    assert "announcement" in schedules["p3"]


# ---------------------------------------------------------------------------
# sweep

def test_sweep_json_and_csv(tmp_path, capsys):
    csv = tmp_path / "sweep.csv"
    rc, out, err = run_cli(capsys, "sweep", "--out", str(csv))
    assert rc == EXIT_OK
    doc = json.loads(out)
    assert abs(doc["max_probability"] - np.cos(np.pi / 8) ** 2) < 1e-12
    assert abs(doc["argmax_angle"] - np.pi / 8) < 1e-12
    assert doc["max_probability"] == doc["closed_form_max"]
    lines = csv.read_text().strip().splitlines()
    assert lines[0] == "angle_rad,probability"
    assert len(lines) == 721
    angle, prob = lines[1].split(",")
    assert float(angle) == 0.0 and float(prob) == 0.75
    assert "sweep max" in err


def test_sweep_figures(tmp_path, capsys):
    csv = tmp_path / "sweep.csv"
    run_cli(capsys, "sweep", "--out", str(csv), "--figures")
    assert (tmp_path / "sweep.png").read_bytes()[:8] == PNG_MAGIC


def test_sweep_rejects_a_coarse_grid(capsys):
    rc, _, _ = run_cli(capsys, "sweep", "--grid", "100")
    assert rc == EXIT_USAGE


# ---------------------------------------------------------------------------
# config files and exit codes

def test_config_file_fields_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "scenario.json"
    cfg.write_text(json.dumps({"n": 16, "m": 8, "trials": 4, "seed": 5}))
    _, out, _ = run_cli(capsys, "run", "--config", str(cfg), "--trials", "6")
    lines = out.strip().splitlines()
    aggregate = json.loads(lines[-1])
    assert aggregate["trials"] == 6  # flag beats file
    assert json.loads(lines[0])["config"]["n"] == 16  # file beats default


def test_config_file_rejects_unknown_fields(tmp_path, capsys):
    cfg = tmp_path / "scenario.json"
    cfg.write_text(json.dumps({"banana": 1}))
    rc, _, err = run_cli(capsys, "run", "--config", str(cfg))
    assert rc == EXIT_USAGE and "banana" in err
    cfg.write_text("{not json")
    rc, _, _ = run_cli(capsys, "run", "--config", str(cfg))
    assert rc == EXIT_USAGE


def test_depleted_backup_exits_with_the_resource_code(capsys):
    rc, _, err = run_cli(capsys, "run", "--n", "16", "--m", "4", "--l", "0",
                         "--trials", "2", "--adversary", "intercept:z",
                         "--seed", "18")
    assert rc == EXIT_RESOURCE
    assert "depleted" in err


def test_config_errors_exit_64(capsys):
    assert run_cli(capsys, "run", "--trials", "0")[0] == EXIT_USAGE
    assert run_cli(capsys, "run", "--adversary", "banana")[0] == EXIT_USAGE
    assert run_cli(capsys, "run", "--jobs", "0")[0] == EXIT_USAGE
    assert run_cli(capsys, "run", "--keys", "/no/such/file")[0] == EXIT_USAGE


def test_usage_errors_exit_64(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["run", "--protocol", "p9"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["run", "--n", "abc"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_USAGE
    capsys.readouterr()


def test_exit_code_constants():
    assert (EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_RESOURCE) == (0, 1, 64, 65)
