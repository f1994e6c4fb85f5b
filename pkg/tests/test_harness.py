import csv
import json
from pathlib import Path

import pytest

from bergman_lab import __version__
from bergman_lab.harness import (EXIT_CONFIG, EXIT_FAIL, EXIT_NUMERICAL, EXIT_PASS, ConfigError,
                                 ExperimentConfig, ReportError, load_config, main, parse_config,
                                 report, run, save)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

KERNEL_INI = """
[experiment]
tag = kernel_growth
ks = 8, 16, 32, 64, 128
precision_bits = 64

[set]
tag = circle

[kernel]
pinned = 1; -1
expected_exponent = 1
exponent_tolerance = 0.03
"""


def test_parse_kernel_config():
    cfg = parse_config(KERNEL_INI)
    assert cfg.experiment == "kernel_growth"
    assert cfg.ks == (8, 16, 32, 64, 128)
    assert cfg.set_spec == {"tag": "circle"}
    assert cfg.opt("pinned") == "1; -1"


def test_shipped_configs_parse():
    files = sorted(CONFIGS.glob("*.ini"))
    assert len(files) >= 8
    for f in files:
        cfg = load_config(f)
        assert cfg.fingerprint == load_config(f).fingerprint


def test_set_syntax_for_arc_unions():
    cfg = parse_config("[experiment]\ntag = markov\nks = 4, 8\n[set]\ntag = arc_union\n"
                       "segments = 0:1, 0:1j\ncircular_arcs = 0|1|0|1.5\n")
    arcs = cfg.set_spec["arcs"]
    assert arcs[0] == {"a": 0j, "b": 1 + 0j} and arcs[1]["b"] == 1j
    assert arcs[2]["radius"] == 1.0


@pytest.mark.parametrize("text, field, line", [
    ("[experiment]\ntag = kernel_growth\nks = 16, 8\n", "experiment.ks", 3),
    ("[experiment]\ntag = kernel_growth\nks = 16, x\n", "experiment.ks", 3),
    ("[experiment]\ntag = kernel_growth\nbogus = 1\n", "experiment.bogus", 3),
    ("[experiment]\ntag = wrong\n", "experiment.tag", 2),
    ("[experiment\n", None, 1),
])
def test_config_errors_name_field_and_line(text, field, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == field
    assert info.value.line == line


def test_unknown_set_is_a_config_error():
    with pytest.raises(ConfigError):
        parse_config("[experiment]\ntag = kernel_growth\n[set]\ntag = blob\n")


def test_subcommand_mismatch_is_rejected():
    with pytest.raises(ConfigError):
        parse_config(KERNEL_INI, expect="markov")


def test_fingerprint_ignores_workers():
    a = parse_config(KERNEL_INI)
    b = parse_config(KERNEL_INI, {"workers": 3})
    c = parse_config(KERNEL_INI, {"precision_bits": 128})
    assert a.fingerprint == b.fingerprint != c.fingerprint


def test_kernel_run_passes_and_persists(tmp_path):
    rec = run(parse_config(KERNEL_INI))
    assert rec.passed
    tags = {v.tag for v in rec.verdicts}
    assert {"sharp_sup_growth", "sup_growth_exponent"} <= tags
    csv_path, json_path = save(rec, tmp_path)
    rows = list(csv.reader(open(csv_path, newline="", encoding="utf-8")))
    assert rows[0][:3] == ["k", "d_k", "sup_on_K"] and len(rows) == 6
    text = json_path.read_text()
    summary = json.loads(text)
    assert list(summary) == sorted(summary)
    assert summary["version"] == __version__ and summary["schema_version"] == 1
    assert len(summary["config_sha256"]) == 64


def test_rows_are_bit_identical_across_runs_and_workers():
    cfg = parse_config(KERNEL_INI)
    a = run(cfg)
    b = run(parse_config(KERNEL_INI, {"workers": 2}))
    assert a.rows_sha256 == b.rows_sha256


def test_markov_run_on_interval():
    cfg = ExperimentConfig("markov", {"tag": "interval"}, ks=(8, 16, 32, 64), options={"trials": "20"})
    rec = run(cfg)
    assert rec.passed
    for row in rec.rows:
        assert 0.99 <= row["source:chebyshev_T_k"] / row["k"] ** 2 <= 1.01


def test_zeros_row_count_contract():
    cfg = ExperimentConfig("zeros_deviation", {"tag": "circle"}, ks=(8, 12, 16, 24), trials=200,
                           precision_bits=64, seeds=(1,))
    rec = run(cfg)
    assert len(rec.rows) == 800
    curve = rec.extra["deviation_curve"]
    assert [p["k"] for p in curve["points"]] == [8, 12, 16, 24]


def test_zeros_split_across_workers_is_identical():
    base = dict(experiment="zeros_deviation", set_spec={"tag": "circle"}, ks=(8, 16), trials=6,
                precision_bits=64, seeds=(4, 5))
    a = run(ExperimentConfig(**base))
    b = run(ExperimentConfig(**base, workers=3))
    assert a.rows_sha256 == b.rows_sha256


def test_envelope_run():
    cfg = ExperimentConfig("envelope_rate", {"tag": "circle"}, ks=(16, 32, 64, 128), precision_bits=64,
                           options={"chebyshev_max_k": "32"})
    rec = run(cfg)
    assert rec.passed
    assert {"log_k_over_k_rate", "approximant_monotone"} <= {v.tag for v in rec.verdicts}


def test_cli_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.ini"
    good.write_text(KERNEL_INI)
    assert main(["kernel", "--config", str(good), "--out", str(tmp_path / "o")]) == EXIT_PASS
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\ntag = kernel_growth\nks = 3, 2\n")
    assert main(["kernel", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    strict = tmp_path / "strict.ini"
    strict.write_text(KERNEL_INI.replace("expected_exponent = 1", "expected_exponent = 3"))
    assert main(["kernel", "--config", str(strict), "--out", str(tmp_path / "o")]) == EXIT_FAIL
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" in out


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    from bergman_lab import harness
    from bergman_lab.orthogonalization import PrecisionExhausted

    def boom(cfg):
        raise PrecisionExhausted("k=999: orthonormalization failed")

    monkeypatch.setattr(harness, "run", boom)
    assert main(["kernel", "--out", str(tmp_path)]) == EXIT_NUMERICAL


def test_report_pass_through_and_precision_diff(tmp_path):
    p1 = save(run(parse_config(KERNEL_INI)), tmp_path / "a")[1]
    p2 = save(run(parse_config(KERNEL_INI, {"precision_bits": 128})), tmp_path / "b")[1]
    one = report([p1], tmp_path / "r1")
    assert len(one["table"]) == 1 and "sup|dB_k|" not in one["table"][0]
    two = report([p1, p2], tmp_path / "r2")
    assert len(two["table"]) == 2
    assert 0 <= two["table"][1]["sup|dB_k|"] < 1e-8
    plot = list(csv.DictReader(open(tmp_path / "r2" / "plot_data.csv", newline="")))
    assert set(plot[0]) == {"x", "y", "series"}


def test_report_rejects_other_schema(tmp_path):
    p = save(run(parse_config(KERNEL_INI)), tmp_path)[1]
    s = json.loads(p.read_text())
    s["schema_version"] = 99
    p.write_text(json.dumps(s))
    with pytest.raises(ReportError):
        report([p], tmp_path / "r")
    assert main(["report", str(p), "--out", str(tmp_path / "r")]) == EXIT_CONFIG


def test_power_exponent_key_survives_lowercasing():
    cfg = load_config(CONFIGS / "circle_power_half.ini")
    from bergman_lab.harness import resolve_measure
    assert resolve_measure(cfg).density.power == 0.5
