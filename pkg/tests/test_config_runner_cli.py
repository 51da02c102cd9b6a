"""Configuration parsing, scenario runs, sweeps, report files and the CLI."""

import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from qlut import cli, runner
from qlut.config import ConfigError, evaluate, load_config, parse_config, with_overrides

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = {
    "scenario": "tone",
    "samples": 4000,
    "seed": 3,
    "desired": {"amplitude": "1 - delta/2", "frequency": "pi/10"},
    "estimator": {"kinds": ["ml", "mmse"], "window": 2, "quadrature": {"x0_nodes": 128}},
    "metrics": {"sfdr_offset": 0.01, "psd_segment": 256},
}

SMALL_BPSK = {
    "scenario": "bpsk",
    "samples": 3000,
    "seed": 1,
    "desired": {"amplitude": 0.125, "frequency": "1/16 + pi/1000", "tau": 20},
    "estimator": {"kinds": ["ml"], "window": 2, "quadrature": {"x0_nodes": 128, "phase_nodes": 16}},
    "metrics": {"psd_segment": 256},
}


def _write(tmp_path, raw, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return p


class TestEvaluate:
    def test_numbers(self):
        assert evaluate(3) == 3.0
        assert evaluate(0.5) == 0.5

    def test_expressions(self):
        assert evaluate("5/16 - pi/1000") == pytest.approx(5 / 16 - math.pi / 1000)
        assert evaluate("0.16 * delta", {"delta": 0.25}) == pytest.approx(0.04)
        assert evaluate("sqrt(2)**2") == pytest.approx(2.0)
        assert evaluate("-2**2") == -4.0

    @given(st.integers(-10**6, 10**6), st.integers(1, 1000))
    def test_fraction(self, a, b):
        assert evaluate(f"{a}/{b}") == a / b

    @pytest.mark.parametrize("expr,msg", [
        ("__import__('os')", "unsupported"),
        ("foo + 1", "unknown name"),
        ("1/0", "division by zero"),
        ("1 +", "cannot parse"),
        (True, "expected a number"),
        ([1], "expected a number"),
    ])
    def test_rejects(self, expr, msg):
        with pytest.raises(ConfigError, match=msg):
            evaluate(expr, where="sigma")

    def test_field_named(self):
        with pytest.raises(ConfigError, match="^desired.frequency"):
            evaluate("bogus", where="desired.frequency")


class TestParse:
    def test_defaults(self):
        c = parse_config({"scenario": "tone"})
        assert c.bits == 3 and c.samples == 100_000 and c.seed == 0
        assert c.sigma == pytest.approx(0.04)
        assert c.desired["amplitude"] == 0.875
        assert c.desired["frequency"] == pytest.approx(math.pi / 10)
        assert c.kinds == ["ml"] and c.dither and c.sweep_axis == "none"

    def test_every_shipped_config_parses(self):
        files = sorted(CONFIGS.glob("*.yaml"))
        assert len(files) >= 10
        for f in files:
            load_config(f)

    @pytest.mark.parametrize("raw,field", [
        ({"scenario": "square"}, "scenario"),
        ({"scenario": "tone", "bits": 0}, "bits"),
        ({"scenario": "tone", "samples": 10}, "samples"),
        ({"scenario": "tone", "sigma": -1}, "sigma"),
        ({"scenario": "tone", "inl": [0, 0]}, "inl"),
        ({"scenario": "tone", "desired": {"frequency": 0.7}}, "desired.frequency"),
        ({"scenario": "tone+tone"}, "interferer"),
        ({"scenario": "tone", "interferer": {"amplitude": 1, "frequency": 0.2}}, "interferer"),
        ({"scenario": "tone", "estimator": {"kinds": ["best"]}}, "estimator.kinds"),
        ({"scenario": "tone", "estimator": {"window": -1}}, "estimator.window"),
        ({"scenario": "tone", "estimator": {"bpsk_mode": "exactish"}}, "estimator.bpsk_mode"),
        ({"scenario": "bpsk", "desired": {"tau": 4}, "estimator": {"window": 5, "bpsk_mode": "exact"}},
         "estimator.bpsk_mode"),
        ({"scenario": "tone", "estimator": {"quadrature": {"x0_nodes": 0}}}, "estimator.quadrature"),
        ({"scenario": "tone", "estimator": {"quadrature": {"bogus": 1}}}, "estimator.quadrature"),
        ({"scenario": "tone", "estimator": {"table_mode": "lazy"}}, "estimator.table_mode"),
        ({"scenario": "tone", "prior": {"amplitude": [1, 0.5]}}, "prior.amplitude"),
        ({"scenario": "tone", "sweep": {"axis": "Q", "values": [1]}}, "sweep.axis"),
        ({"scenario": "tone", "sweep": {"axis": "N"}}, "sweep.values"),
        ({"scenario": "tone", "sweep": {"axis": "N", "values": [1.5]}}, "sweep.values"),
        ({"scenario": "tone", "sweep": {"axis": "SIR", "values": [0]}}, "sweep.axis"),
        ({"scenario": "tone", "sweep": {"axis": "tau", "values": [10]}}, "sweep.axis"),
        ({"scenario": "tone", "test_frequencies": [0.9]}, "test_frequencies"),
        ({"scenario": "tone", "colour": "red"}, "top-level"),
    ])
    def test_errors_name_field(self, raw, field):
        with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
            parse_config(raw)

    def test_overrides_merge(self):
        c = parse_config(SMALL)
        d = with_overrides(c, {"estimator": {"window": 5}})
        assert d.window == 5 and d.kinds == ["ml", "mmse"]
        assert d.quad.x0_nodes == 128
        assert c.window == 2

    def test_lfm_period_defaults_to_samples(self):
        c = parse_config({"scenario": "bpsk+lfm", "samples": 5000,
                          "interferer": {"amplitude": 1.25, "frequency": 0.3, "sweep": 0.04}})
        assert c.interferer["period"] == 5000
        assert c.spectrogram

    def test_sir_override_sets_amplitude(self):
        c = parse_config({"scenario": "tone+tone", "interferer": {"amplitude": 1, "frequency": 0.3},
                          "sweep": {"axis": "SIR", "values": [-20]}})
        o = runner.point_overrides(c, -20)
        assert o["interferer"]["amplitude"] == pytest.approx(8.75)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    runner.clear_table_cache()
    cfg = parse_config(SMALL)
    tables = {}
    r = runner.run_scenario(cfg, tables=tables)
    out = tmp_path_factory.mktemp("run")
    runner.emit_outputs(r, out, tables)
    return cfg, r, out


class TestRun:
    def test_stages(self, small_run):
        _, r, _ = small_run
        assert list(r.stages) == ["input", "quantized", "ml", "ml+requantized", "mmse", "mmse+requantized"]

    def test_estimate_beats_quantizer(self, small_run):
        _, r, _ = small_run
        assert r.stages["mmse"].mse_db < r.stages["quantized"].mse_db - 1.5
        assert r.stages["quantized"].mse_db == pytest.approx(10 * math.log10(0.25**2 / 12), abs=1)

    def test_report_files(self, small_run):
        cfg, r, out = small_run
        names = {p.name for p in out.iterdir()}
        assert {"report.json", "timing.json", "psd.csv", "table_ml.lut", "table_mmse.lut"} <= names
        assert "total_s" in json.loads((out / "timing.json").read_text())
        assert "total_s" not in (out / "report.json").read_text()

    def test_psd_rows(self, small_run):
        cfg, r, out = small_run
        with open(out / "psd.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["frequency"] + list(r.stages)
        assert len(rows) - 1 == len(r.stages["input"].psd_freq) == cfg.psd_segment // 2 + 1

    def test_load_report_round_trip(self, small_run):
        _, r, out = small_run
        loaded = runner.load_report(out)
        assert loaded == r
        assert loaded.config == SMALL
        assert loaded.seeds == runner.seeds_for(parse_config(SMALL))

    def test_byte_identical_rerun(self, small_run, tmp_path):
        cfg, _, out = small_run
        runner.clear_table_cache()
        runner.emit_outputs(runner.run_scenario(cfg), tmp_path)
        assert (tmp_path / "report.json").read_bytes() == (out / "report.json").read_bytes()

    def test_config_echo_reruns(self, small_run, tmp_path):
        _, r, out = small_run
        echo = json.loads((out / "report.json").read_text())["config"]
        again = runner.run_scenario(parse_config(echo))
        assert again == r

    def test_seed_changes_result(self, small_run):
        cfg, r, _ = small_run
        other = runner.run_scenario(with_overrides(cfg, {"seed": 4}))
        assert other.stages["quantized"].mse_db != r.stages["quantized"].mse_db

    def test_passthrough_n0(self):
        cfg = parse_config({**SMALL, "estimator": {"kinds": ["ml"], "window": 0}, "dither": False})
        r = runner.run_scenario(cfg)
        assert r.stages["ml"] == r.stages["quantized"]
        assert r.stages["ml+requantized"] == r.stages["quantized"]
        assert r.points[0].scenario_hash == ""

    def test_table_cache_dir(self, tmp_path):
        runner.clear_table_cache()
        cfg = parse_config({**SMALL, "cache_dir": str(tmp_path / "cache")})
        a = runner.run_scenario(cfg)
        files = sorted((tmp_path / "cache").glob("*.lut"))
        assert len(files) == 2
        runner.clear_table_cache()
        b = runner.run_scenario(cfg)
        assert a == b

    def test_test_frequencies(self):
        cfg = parse_config({**SMALL, "estimator": {"kinds": ["ml"], "window": 2,
                                                    "quadrature": {"x0_nodes": 128}},
                            "test_frequencies": [0.1, 0.2]})
        r = runner.run_scenario(cfg)
        assert [p.label["test_frequency"] for p in r.points] == [0.1, 0.2]
        # one table serves both test frequencies
        assert r.points[0].scenario_hash == r.points[1].scenario_hash

    def test_bpsk_label_and_evm(self):
        r = runner.run_scenario(parse_config(SMALL_BPSK))
        p = r.points[0]
        assert 0 <= p.label["bpsk_offset"] < 20
        st_ = p.stages["ml"]
        assert st_.evm_rms_db is not None and st_.sfdr_dbc is None
        assert len(st_.evm_db) > 100


class TestSweep:
    def test_parallel_matches_serial(self):
        raw = {**SMALL, "estimator": {"kinds": ["ml"], "quadrature": {"x0_nodes": 128}},
               "sweep": {"axis": "N", "values": [0, 1, 2]}}
        cfg = parse_config(raw)
        a = runner.sweep(cfg, workers=1)
        b = runner.sweep(cfg, workers=2)
        assert a == b
        assert [p.label["N"] for p in a.points] == [0, 1, 2]

    def test_common_random_numbers(self):
        cfg = parse_config({**SMALL, "estimator": {"kinds": ["ml"], "quadrature": {"x0_nodes": 128}},
                            "metrics": {"discard_warmup": False},
                            "sweep": {"axis": "N", "values": [1, 2]}})
        r = runner.sweep(cfg)
        q = [p.stages["quantized"].mse_db for p in r.points]
        assert q[0] == q[1]

    def test_point_error_recorded(self, tmp_path):
        raw = {**SMALL_BPSK, "estimator": {"kinds": ["ml"], "window": 3, "bpsk_mode": "exact",
                                           "quadrature": {"x0_nodes": 64, "phase_nodes": 8}},
               "sweep": {"axis": "tau", "values": [2, 20]}}
        r = runner.sweep(parse_config(raw), workers=2)
        assert "window <= tau" in r.points[0].error
        assert r.points[1].error is None and r.points[1].stages
        runner.emit_outputs(r, tmp_path)
        with open(tmp_path / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["error"] and not rows[1]["error"]

    def test_needs_axis(self):
        with pytest.raises(ValueError, match="sweep axis"):
            runner.sweep(parse_config(SMALL))


class TestCli:
    def test_run(self, tmp_path, capsys):
        cfg = _write(tmp_path, SMALL)
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--estimator", "ml"]) == 0
        r = runner.load_report(tmp_path / "o")
        assert set(r.stages) == {"input", "quantized", "ml", "ml+requantized"}
        assert "mse_db=" in capsys.readouterr().out

    def test_seed_override(self, tmp_path):
        cfg = _write(tmp_path, SMALL)
        cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "11", "--no-dither"])
        r = runner.load_report(tmp_path / "o")
        assert r.seeds["master"] == 11 and r.config["dither"] is False

    def test_sweep(self, tmp_path):
        raw = {**SMALL, "estimator": {"kinds": ["ml"], "quadrature": {"x0_nodes": 128}},
               "sweep": {"axis": "sigma", "values": ["0.1 * delta", "0.2 * delta"]}}
        cfg = _write(tmp_path, raw)
        assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o"), "--workers", "2"]) == 0
        with open(tmp_path / "o" / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {float(r["sigma"]) for r in rows} == {0.025, 0.05}
        assert (tmp_path / "o" / "psd_p000.csv").exists()

    def test_build_and_inspect(self, tmp_path, capsys):
        cfg = _write(tmp_path, {**SMALL, "bits": 2})
        out = tmp_path / "o"
        assert cli.main(["build-lut", "--config", str(cfg), "--out", str(out),
                         "--estimator", "ml", "--materialize"]) == 0
        capsys.readouterr()
        assert cli.main(["inspect-lut", str(out / "table.lut")]) == 0
        text = capsys.readouterr().out
        header = json.loads(text[: text.index("\n}\n") + 2])
        assert header["entries"] == 16 and header["estimator"] == "ml"
        assert "fallback entries: 0" in text

    def test_build_needs_window(self, tmp_path, capsys):
        cfg = _write(tmp_path, {**SMALL, "estimator": {"window": 0}})
        assert cli.main(["build-lut", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "N >= 1" in capsys.readouterr().err

    def test_bad_config(self, tmp_path, capsys):
        cfg = _write(tmp_path, {"scenario": "tone", "sigma": "nonsense"})
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "sigma" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert cli.main(["run", "--config", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]) == 2

    def test_bad_table_file(self, tmp_path):
        p = tmp_path / "x.lut"
        p.write_bytes(b"junk")
        assert cli.main(["inspect-lut", str(p)]) == 2


def _sweep_metric(r, stage, metric):
    return np.array([getattr(p.stages[stage], metric) for p in r.points])


@pytest.mark.slow
class TestTrends:
    def test_mse_non_increasing_in_n(self):
        raw = {**SMALL, "samples": 20_000, "estimator": {"kinds": ["mmse"]},
               "sweep": {"axis": "N", "values": [1, 2, 3, 4, 5, 6]}}
        r = runner.sweep(parse_config(raw), workers=2)
        mse = _sweep_metric(r, "mmse", "mse_db")
        assert np.all(np.diff(mse) <= 0.3)
        assert mse[-1] < mse[0] - 3

    def test_exact_beats_tone_over_tau(self):
        vals = [10, 20, 50]
        base = {**SMALL_BPSK, "samples": 20_000,
                "sweep": {"axis": "tau", "values": vals}}
        evm = {}
        for mode in ("tone", "exact"):
            raw = {**base, "estimator": {"kinds": ["ml"], "window": 6, "bpsk_mode": mode,
                                         "quadrature": {"x0_nodes": 256, "phase_nodes": 32}}}
            evm[mode] = _sweep_metric(runner.sweep(parse_config(raw), workers=2), "ml", "evm_rms_db")
        assert np.all(evm["exact"] <= evm["tone"] + 0.2)
        assert evm["exact"][0] < evm["tone"][0] - 1

    def test_sir_trend(self):
        raw = {"scenario": "tone+tone", "samples": 20_000, "seed": 2,
               "desired": {"amplitude": 0.875, "frequency": "1/16 + pi/1000"},
               "interferer": {"amplitude": 2, "frequency": "5/16 - pi/1000"},
               "estimator": {"kinds": ["ml"], "window": 5,
                             "quadrature": {"x0_nodes": 256, "phase_nodes": 32}},
               "metrics": {"sfdr_offset": 0.01},
               "sweep": {"axis": "SIR", "values": [-10, -7, 0, 6]}}
        r = runner.sweep(parse_config(raw), workers=2)
        mse = _sweep_metric(r, "ml", "mse_db")
        assert np.all(np.diff(mse) < 0)
        assert np.all(mse < _sweep_metric(r, "quantized", "mse_db"))
        gain = _sweep_metric(r, "ml", "sfdr_dbc") - _sweep_metric(r, "quantized", "sfdr_dbc")
        assert np.all(gain[1:] > 10)

    def test_training_bandwidth_flattens(self):
        raw = {**SMALL, "samples": 20_000, "estimator": {"kinds": ["ml"], "window": 4,
                                                          "quadrature": {"frequency_nodes": 64}},
               "test_frequencies": [0.25 + math.pi / 1000, 0.35 + math.pi / 1000],
               "sweep": {"axis": "training-bandwidth", "values": [0, 0.3]}}
        r = runner.sweep(parse_config(raw), workers=2)
        mse = _sweep_metric(r, "ml", "mse_db").reshape(2, 2)
        q = _sweep_metric(r, "quantized", "mse_db").reshape(2, 2)
        # a point-trained table helps little off its frequency; a wide prior helps everywhere
        assert np.all(mse[1] < q[1] - 1)
        assert np.ptp(mse[1] - q[1]) < np.ptp(mse[0] - q[0]) + 0.5
