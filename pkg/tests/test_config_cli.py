import csv
import json

import numpy as np
import pytest

from spadsim.cli import main
from spadsim.config import RunConfig, load_config, parse_config_text
from spadsim.model import ConfigError
from spadsim.tagio import read_tags, read_truth


# configuration

def test_defaults_build_models():
    cfg = RunConfig()
    sim = cfg.sim_config()
    assert sim.mu == 0.1 and sim.bias.v_ex == 0.5 and sim.duration_ps == 10**12
    assert sim.model.gate.period_ps == 800
    assert cfg.policy().interval_min == 10


def test_units_convert_exactly():
    cfg = load_config(None, ["logic_deadtime_ns=5000", "duration_s=0.25", "tau_detrap_us=2"])
    assert cfg["logic_deadtime"] == 5_000_000
    assert cfg.sim_config().deadtime_gates == 6250
    assert cfg["duration"] == 250_000_000_000
    assert cfg["tau_detrap"] == 2e6


def test_partial_picoseconds_round_up():
    assert load_config(None, ["logic_deadtime_ns=0.0001"])["logic_deadtime"] == 1


def test_parse_text_with_comments(tmp_path):
    path = tmp_path / "base.cfg"
    path.write_text("# base run\nmu = 0.0   # dark\nduration_s = 60\n\nseed = 7\n", encoding="utf-8")
    cfg = load_config(path)
    assert cfg["mu"] == 0.0 and cfg["seed"] == 7 and cfg["duration"] == 60 * 10**12


@pytest.mark.parametrize("text,needle", [
    ("mu = 0.1\nmuu = 3\n", ":2: unknown key 'muu'"),
    ("mu 0.1\n", ":1: expected"),
    ("duration_s = 1\nduration_ms = 1000\n", ":2: 'duration_ms' repeats 'duration_s'"),
    ("duration = 5\n", "needs a unit suffix"),
])
def test_parse_errors_name_line_and_key(text, needle):
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text, "base.cfg")
    assert needle in str(exc.value)


def test_bad_value_names_key():
    with pytest.raises(ConfigError, match="'mu'"):
        load_config(None, ["mu=abc"])


def test_snapshot_round_trip():
    cfg = load_config(None, ["mu=0.3", "sweep_v_ex=0.1,0.2", "feedback=true"])
    again = RunConfig(json.loads(json.dumps(cfg.snapshot())))
    assert again.snapshot() == cfg.snapshot()


# command line

def run_cli(*args):
    return main([str(a) for a in args])


def test_simulate_and_manifest_rerun(tmp_path):
    out = tmp_path / "a.tags"
    assert run_cli("simulate", "--duration-s", "0.2", "--seed", "11", "--truth", "--out", out) == 0
    manifest = json.loads((tmp_path / "a.tags.manifest.json").read_text())
    assert manifest["seed"] == 11 and manifest["format_version"] == 1
    assert "PCG64" in manifest["rng"]
    assert manifest["derived"]["gate_period_ps"] == 800
    assert str(out) in manifest["outputs"]
    labels = read_truth(str(out) + ".truth")
    assert labels.size == len(read_tags(out))

    again = tmp_path / "b.tags"
    assert run_cli("simulate", "--config", tmp_path / "a.tags.manifest.json", "--out", again) == 0
    assert out.read_bytes() == again.read_bytes()


def test_simulate_twice_byte_identical(tmp_path):
    a, b = tmp_path / "a.tags", tmp_path / "b.tags"
    for path in (a, b):
        assert run_cli("simulate", "--duration-s", "0.1", "--seed", "3", "--out", path) == 0
    assert a.read_bytes() == b.read_bytes()


def test_dark_only_from_config(tmp_path):
    cfg = tmp_path / "base.cfg"
    cfg.write_text("v_ex = 0.5\n", encoding="utf-8")
    out = tmp_path / "dark.tags"
    assert run_cli("simulate", "--config", cfg, "--set", "mu=0", "--duration-s", "1", "--out", out) == 0
    manifest = json.loads((tmp_path / "dark.tags.manifest.json").read_text())
    assert manifest["derived"]["n_photon"] == 0
    assert manifest["config"]["mu"] == 0.0


def test_deadtime_quantization_via_cli(tmp_path):
    out = tmp_path / "d.tags"
    assert run_cli("simulate", "--set", "logic_deadtime_ns=5000", "--duration-s", "0.01", "--out", out) == 0
    manifest = json.loads((tmp_path / "d.tags.manifest.json").read_text())
    assert manifest["derived"]["deadtime_gates"] == 6250


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("mu = 0.1\ngate_fwhm = 189\n", encoding="utf-8")
    assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "x.tags") == 2
    err = capsys.readouterr().err
    assert "bad.cfg:2" in err and "gate_fwhm" in err
    assert run_cli("simulate", "--set", "nonsense=1") == 2


def test_unwritable_output_exit_3(tmp_path):
    assert run_cli("simulate", "--duration-s", "0.001", "--out", tmp_path / "missing" / "x.tags") == 3


def test_usage_errors_exit_2(tmp_path):
    assert run_cli("delay-scan", "--step", "0", "--out", tmp_path / "s.csv") == 2
    assert run_cli("delay-scan", "--dwell-s", "0", "--out", tmp_path / "s.csv") == 2
    assert run_cli("stability", "--hours", "0", "--out", tmp_path / "s.csv") == 2
    assert run_cli("bias-sweep", "--v-ex", "", "--out", tmp_path / "b.csv") == 2
    with pytest.raises(SystemExit) as exc:
        run_cli("no-such-command")
    assert exc.value.code == 2


def _read_csv(path):
    text = path.read_text(encoding="utf-8")
    rows = [r for r in csv.reader(line for line in text.splitlines() if not line.startswith("#"))]
    return rows[0], rows[1:], text


def test_bias_sweep_csv(tmp_path):
    out = tmp_path / "sweep.csv"
    assert run_cli("bias-sweep", "--v-ex", "0.3,0.5,0.7", "--set", "sweep_duration_s=0.05",
                   "--set", "sweep_dark_duration_s=2", "--out", out) == 0
    header, rows, _ = _read_csv(out)
    assert header == ["v_ex", "eta", "p_dc", "dark_hz"]
    data = np.array(rows, dtype=float)
    assert np.all(np.diff(data[:, 1]) > 0)
    mid = data[1]
    assert mid[1] == pytest.approx(0.10, abs=0.005)
    assert mid[2] == pytest.approx(4.66e-6, rel=0.1)


def test_delay_scan_csv(tmp_path):
    out = tmp_path / "scan.csv"
    assert run_cli("delay-scan", "--range=-400:400", "--step", "20", "--dwell-s", "0.005", "--out", out) == 0
    header, rows, text = _read_csv(out)
    assert header == ["delay_ps", "counts", "eta"]
    assert len(rows) == 41
    assert text.splitlines()[-1].startswith("# fitted_fwhm_ps=")
    fwhm = float(text.splitlines()[-1].split()[1].split("=")[1])
    assert fwhm == pytest.approx(189, abs=10)


def test_afterpulse_and_jitter_records(tmp_path):
    ap = tmp_path / "ap.txt"
    assert run_cli("afterpulse", "--duration-s", "2", "--out", ap) == 0
    rec = dict(line.split(" = ") for line in ap.read_text().splitlines())
    c_tol, c_dc, c_ph = float(rec["c_tol"]), float(rec["c_dc"]), float(rec["c_ph"])
    assert float(rec["p_ap"]) == (c_tol - c_dc - c_ph) / c_ph
    assert "tau_detrap_ps" in rec
    jit = tmp_path / "j.txt"
    assert run_cli("jitter", "--out", jit) == 0
    rec = {k: float(v) for k, v in (line.split(" = ") for line in jit.read_text().splitlines())}
    assert rec["device_fwhm_ps"] == pytest.approx((rec["total_fwhm_ps"] ** 2 - rec["reference_fwhm_ps"] ** 2) ** 0.5)


def test_afterpulse_traps_disabled(tmp_path):
    ap = tmp_path / "ap.txt"
    assert run_cli("afterpulse", "--duration-s", "5", "--set", "traps_enabled=false", "--out", ap) == 0
    rec = dict(line.split(" = ") for line in ap.read_text().splitlines())
    assert float(rec["p_ap"]) < 0.001


def test_jitter_zero_is_quantization_limited(tmp_path):
    out = tmp_path / "j.txt"
    assert run_cli("jitter", "--set", "spad_jitter_fwhm_ps=0", "--set", "reference_jitter_fwhm_ps=0",
                   "--out", out) == 0
    rec = {k: float(v) for k, v in (line.split(" = ") for line in out.read_text().splitlines())}
    assert rec["total_fwhm_ps"] <= 60


def test_stability_csv_and_rerun(tmp_path):
    out = tmp_path / "st.csv"
    assert run_cli("stability", "--hours", "2", "--feedback", "--seed", "4", "--out", out) == 0
    header, rows, text = _read_csv(out)
    assert header == ["time_min", "eta", "delay_ps", "in_scan"]
    assert len(rows) == 120
    assert {r[3] for r in rows} == {"0", "1"}
    again = tmp_path / "st2.csv"
    assert run_cli("stability", "--config", tmp_path / "st.csv.manifest.json", "--out", again) == 0
    assert again.read_text() == text


def test_csv_is_plain_utf8(tmp_path):
    out = tmp_path / "st.csv"
    assert run_cli("stability", "--hours", "1", "--out", out) == 0
    raw = out.read_bytes()
    raw.decode("utf-8")
    assert b"\r" not in raw and b";" not in raw
