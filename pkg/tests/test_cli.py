import json
import math
import subprocess
import sys

import numpy as np
import pytest

from gemsim.analysis import lorentzian
from gemsim.cli import main
from gemsim.config import load_config, parse_config
from gemsim.imaging import synthetic_cloud, synthetic_pair, write_pgm
from gemsim.model import BOLTZMANN, RB87_MASS
from support import gaussian_envelope, heterodyne

SIM = {
    "seed": 7,
    "ensemble": {"od_resonant": 300, "length_m": 0.005},
    "coupling": {"rabi_frequency_hz": 2.4e6, "one_photon_detuning_hz": -250e6},
    "schedule": {"eta_write_hz_per_m": 4e7, "eta_read_hz_per_m": -4e7, "switch_time_s": 3e-5},
    "pulse": {"fwhm_s": 1e-5},
}


def write_config(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def with_section(base, section, **values):
    data = json.loads(json.dumps(base))
    data.setdefault(section, {}).update(values)
    return data


def test_help_for_every_command():
    for cmd in ("simulate", "sweep", "raman-scan", "odmap", "calibrate",
                "temperature", "decay-fit", "demod", "plot"):
        with pytest.raises(SystemExit) as info:
            main([cmd, "--help"])
        assert info.value.code == 0


def test_console_script_runs():
    out = subprocess.run(
        [sys.executable, "-m", "gemsim", "--help"], capture_output=True, text=True, check=False
    )
    assert out.returncode == 0
    assert "simulate" in out.stdout


# ----------------------------------------------------------------- simulate


def test_simulate_writes_traces_and_report(tmp_path):
    cfg = write_config(tmp_path / "c.json", SIM)
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
    header = (tmp_path / "traces.csv").read_text().splitlines()[0]
    assert header == "time_s,re_field,im_field,intensity"
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["seed"] == 7
    x = rep["write_exponent"]
    assert rep["measured"]["leakage_fraction"] == pytest.approx(math.exp(-x), rel=0.02)
    assert rep["echo_peak_time_s"] == pytest.approx(60e-6, abs=rep["grid"]["dt_s"])
    assert not list(tmp_path.glob("*.tmp*"))


def test_simulate_zero_coupling_reports_full_leakage(tmp_path):
    cfg = write_config(tmp_path / "c.json", with_section(SIM, "coupling", rabi_frequency_hz=0.0))
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["measured"]["leakage_fraction"] == pytest.approx(1.0, rel=1e-9)


def test_simulate_missing_sign_flip_names_field(tmp_path, caplog):
    cfg = write_config(tmp_path / "c.json", with_section(SIM, "schedule", eta_read_hz_per_m=4e7))
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path)]) == 2
    assert "eta_read_hz_per_m" in caplog.text
    assert not (tmp_path / "traces.csv").exists()
    assert not (tmp_path / "report.json").exists()


def test_unknown_config_key_rejected_with_location(tmp_path, caplog):
    cfg = write_config(tmp_path / "c.json", with_section(SIM, "pulse", fwhm_us=10))
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path)]) == 2
    assert "fwhm_us" in caplog.text and "pulse" in caplog.text


def test_invalid_value_is_validation_error(tmp_path):
    cfg = write_config(tmp_path / "c.json", with_section(SIM, "pulse", fwhm_s=-1.0))
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path)]) == 2


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path)]) == 4


def test_simulate_is_deterministic(tmp_path):
    cfg = write_config(tmp_path / "c.json", SIM)
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        d.mkdir()
        assert main(["simulate", "--config", cfg, "--out-dir", str(d), "--noise", "0.01"]) == 0
        outs.append((d / "traces.csv").read_bytes())
    assert outs[0] == outs[1]
    d = tmp_path / "other"
    d.mkdir()
    main(["simulate", "--config", cfg, "--out-dir", str(d), "--noise", "0.01", "--seed", "8"])
    assert (d / "traces.csv").read_bytes() != outs[0]


def test_spacetime_output(tmp_path):
    data = with_section(SIM, "output", spacetime_csv=str(tmp_path / "st.csv"))
    data["grid"] = {"n_z": 32}
    cfg = write_config(tmp_path / "c.json", data)
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
    rows = (tmp_path / "st.csv").read_text().splitlines()
    assert len(rows[0].split(",")) == 32


def test_config_round_trip(tmp_path):
    cfg = load_config(write_config(tmp_path / "c.json", SIM))
    again = parse_config(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert again.to_dict() == cfg.to_dict()


# -------------------------------------------------------------------- sweep


def _decay_config(tmp_path, tau, label):
    data = with_section(SIM, "decoherence", storage_rate_hz=1 / tau)
    data["coupling"]["rabi_frequency_hz"] = 1.5e6
    data["label"] = label
    return write_config(tmp_path / f"{label}.json", data)


def test_sweep_fits_tau(tmp_path):
    cfg = _decay_config(tmp_path, 117e-6, "tau117")
    code = main(["sweep", "--config", cfg, "--ts-list", "25e-6,40e-6,60e-6,80e-6",
                 "--out-dir", str(tmp_path), "--threads", "2"])
    assert code == 0
    rep = json.loads((tmp_path / "sweep_report.json").read_text())
    assert rep["curves"][0]["tau_s"] == pytest.approx(117e-6, rel=0.05)
    header = (tmp_path / "sweep.csv").read_text().splitlines()[0].split(",")
    assert "log10_storage_time" in header and "log10_efficiency" in header


def test_sweep_single_point_has_no_fit(tmp_path):
    cfg = _decay_config(tmp_path, 117e-6, "one")
    assert main(["sweep", "--config", cfg, "--ts-list", "3e-5", "--out-dir", str(tmp_path)]) == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(lines) == 2
    rep = json.loads((tmp_path / "sweep_report.json").read_text())
    assert rep["curves"][0]["fit"] is None


@pytest.mark.slow
def test_sweep_three_labelled_curves(tmp_path):
    taus = {"tau117": 117e-6, "tau133": 133e-6, "tau195": 195e-6}
    args = ["sweep", "--ts-list", "25e-6,40e-6,60e-6,80e-6", "--out-dir", str(tmp_path)]
    for label, tau in taus.items():
        args += ["--config", _decay_config(tmp_path, tau, label)]
    assert main(args) == 0
    rep = json.loads((tmp_path / "sweep_report.json").read_text())
    assert [c["label"] for c in rep["curves"]] == list(taus)
    for curve, tau in zip(rep["curves"], taus.values()):
        assert curve["tau_s"] == pytest.approx(tau, rel=0.05)
    svg = tmp_path / "decay.svg"
    assert main(["plot", str(tmp_path / "sweep.csv"), "--loglog", "-o", str(svg)]) == 0
    assert svg.read_text().count("config ") >= 3


def test_sweep_bad_ts_list():
    with pytest.raises(SystemExit) as info:
        main(["sweep", "--ts-list", "abc"])
    assert info.value.code == 2


# ----------------------------------------------------------------- raman-scan


def test_raman_scan(tmp_path):
    data = json.loads(json.dumps(SIM))
    data["coupling"]["rabi_frequency_hz"] = 2e6
    data["schedule"].update(eta_write_hz_per_m=1e7, eta_read_hz_per_m=-2e7)
    cfg = write_config(tmp_path / "c.json", data)
    assert main(["raman-scan", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "raman_scan.json").read_text())
    assert rep["write_fwhm_hz"] == pytest.approx(50e3, rel=0.1)
    assert rep["read_fwhm_hz"] == pytest.approx(100e3, rel=0.1)
    assert rep["read_peak_od"] / rep["write_peak_od"] == pytest.approx(0.5, rel=0.05)


# ------------------------------------------------------------------ imaging


def test_odmap_identical_frames(tmp_path):
    frame = np.full((40, 60), 3000.0)
    write_pgm(tmp_path / "t.pgm", frame)
    write_pgm(tmp_path / "r.pgm", frame)
    (tmp_path / "t.json").write_text(json.dumps({"detuning_hz": 0.0, "pixel_pitch_m": 2e-5}))
    code = main(["odmap", str(tmp_path / "t.pgm"), str(tmp_path / "r.pgm"), "--out-dir", str(tmp_path)])
    assert code == 0
    od = np.loadtxt(tmp_path / "od_map.csv", delimiter=",")
    assert np.all(od == 0.0)
    rep = json.loads((tmp_path / "od_report.json").read_text())
    assert rep["masked_pixels"] == 0 and rep["pixel_pitch_m"] == 2e-5


def test_odmap_cloud(tmp_path):
    rng = np.random.default_rng(1)
    pair = synthetic_pair(synthetic_cloud((121, 161), 1.2, 15, 20), 20000, 20, rng)
    write_pgm(tmp_path / "t.pgm", np.clip(np.round(pair.transmitted), 0, 65535))
    write_pgm(tmp_path / "r.pgm", np.clip(np.round(pair.reference), 0, 65535))
    (tmp_path / "meta.json").write_text(json.dumps({"pixel_pitch_m": 1e-5}))
    code = main(["odmap", str(tmp_path / "t.pgm"), str(tmp_path / "r.pgm"),
                 "--meta", str(tmp_path / "meta.json"), "--out-dir", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "od_report.json").read_text())
    assert rep["cloud"]["sigma_x_m"] == pytest.approx(15e-5, rel=0.05)


def test_odmap_bad_sidecar_key(tmp_path):
    frame = np.full((5, 5), 10.0)
    write_pgm(tmp_path / "t.pgm", frame)
    write_pgm(tmp_path / "r.pgm", frame)
    (tmp_path / "t.json").write_text(json.dumps({"detuning_mhz": 1}))
    assert main(["odmap", str(tmp_path / "t.pgm"), str(tmp_path / "r.pgm"),
                 "--out-dir", str(tmp_path)]) != 0


def test_odmap_missing_file(tmp_path):
    assert main(["odmap", str(tmp_path / "a.pgm"), str(tmp_path / "b.pgm"),
                 "--out-dir", str(tmp_path)]) == 4


def _series(path, x, y, header):
    path.write_text(header + "\n" + "\n".join(f"{float(a)!r},{float(b)!r}" for a, b in zip(x, y)) + "\n")
    return str(path)


def test_calibrate(tmp_path):
    det = np.linspace(-12e6, 12e6, 25)
    scan = _series(tmp_path / "scan.csv", det, lorentzian(det, -0.8e6, 6e6, 0.8, 0.0), "detuning_hz,peak_od")
    assert main(["calibrate", scan, "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "calibration.json").read_text())
    assert rep["center_offset_hz"] == pytest.approx(-0.8e6, abs=1e3)
    assert rep["fwhm_hz"] == pytest.approx(6e6, rel=0.02)


def test_calibrate_single_sided_exit_code(tmp_path):
    det = np.linspace(4e6, 20e6, 9)
    scan = _series(tmp_path / "scan.csv", det, lorentzian(det, -0.8e6, 6e6, 0.8, 0.0), "detuning_hz,peak_od")
    assert main(["calibrate", scan, "--out-dir", str(tmp_path)]) == 3


def test_temperature(tmp_path):
    t = np.array([5e-3, 10e-3, 15e-3])
    s = np.sqrt(0.5e-3 ** 2 + BOLTZMANN * 200e-6 / RB87_MASS * t ** 2)
    path = _series(tmp_path / "w.csv", t, s, "t_s,sigma_m")
    assert main(["temperature", path, "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "temperature.json").read_text())
    assert rep["temperature_k"] == pytest.approx(200e-6, rel=0.05)


def test_temperature_shrinking_exit_code(tmp_path):
    path = _series(tmp_path / "w.csv", [5e-3, 10e-3], [2e-3, 1e-3], "t_s,sigma_m")
    with pytest.warns(UserWarning):
        assert main(["temperature", path, "--out-dir", str(tmp_path)]) == 3


def test_malformed_csv_is_io_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t_s,sigma_m\n1,2\nx,y,z\n")
    assert main(["temperature", str(bad), "--out-dir", str(tmp_path)]) == 4


# ------------------------------------------------------------------ analysis


def test_decay_fit(tmp_path):
    t = np.linspace(20e-6, 400e-6, 8)
    path = _series(tmp_path / "d.csv", t, 0.8 * np.exp(-t / 195e-6), "t_s,efficiency")
    assert main(["decay-fit", path, "--compare-gaussian", "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "decay_fit.json").read_text())
    assert rep["exponential"]["parameters"]["tau"] == pytest.approx(195e-6, rel=1e-6)
    assert rep["gaussian"]["residual_norm"] < 1e-9
    assert rep["log_linear_residual"] < 1e-9
    text = (tmp_path / "decay_fit.txt").read_text()
    assert text.startswith("tau_s=")


def test_decay_fit_flat_series_exit_code(tmp_path):
    path = _series(tmp_path / "d.csv", [1e-5, 2e-5, 3e-5, 4e-5], [0.5] * 4, "t_s,efficiency")
    assert main(["decay-fit", path, "--out-dir", str(tmp_path)]) == 3


def test_demod(tmp_path):
    fs, f_if = 20e6, 1e6
    t = np.arange(2000) / fs
    env = gaussian_envelope(t, 50e-6, 10e-6)
    paths = [
        _series(tmp_path / f"r{k}.csv", t, heterodyne(env, t, f_if), "t_s,sample")
        for k in range(3)
    ]
    assert main(["demod", *paths, "--if-hz", "1e6", "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "demod_report.json").read_text())
    assert rep["n_records"] == 3
    assert rep["peak_intensity"] == pytest.approx(1.0, rel=0.01)


def test_demod_rejects_bad_cutoff(tmp_path):
    t = np.arange(200) / 20e6
    path = _series(tmp_path / "r.csv", t, np.cos(2 * math.pi * 1e6 * t), "t_s,sample")
    assert main(["demod", path, "--if-hz", "1e6", "--cutoff-hz", "2e6", "--out-dir", str(tmp_path)]) == 2


# --------------------------------------------------------------------- plot


def test_plot_two_column_is_deterministic(tmp_path):
    path = _series(tmp_path / "s.csv", [1, 2, 3], [1, 4, 9], "x,y")
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    assert main(["plot", path, "-o", str(a)]) == 0
    assert main(["plot", path, "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().lstrip().startswith("<?xml")


def test_plot_raman_panel(tmp_path):
    data = json.loads(json.dumps(SIM))
    cfg = write_config(tmp_path / "c.json", data)
    assert main(["raman-scan", "--config", cfg, "--out-dir", str(tmp_path), "--n-points", "101"]) == 0
    assert main(["plot", str(tmp_path / "raman_scan.csv"), "--out-dir", str(tmp_path)]) == 0
    assert "two-photon detuning" in (tmp_path / "raman_scan.svg").read_text()


def test_plot_loglog(tmp_path):
    path = _series(tmp_path / "s.csv", [1e-5, 1e-4, 1e-3], [0.9, 0.5, 0.01], "storage_time_s,efficiency")
    out = tmp_path / "p.svg"
    assert main(["plot", path, "--loglog", "-o", str(out)]) == 0
    assert "10^" in out.read_text() or "10^{" in out.read_text() or "mathdefault" in out.read_text()


def test_plot_unsupported_format(tmp_path):
    path = _series(tmp_path / "s.csv", [1, 2], [1, 2], "x,y")
    assert main(["plot", path, "--format", "png"]) == 2


def test_plot_malformed_csv(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1,oops\n")
    assert main(["plot", str(bad), "-o", str(tmp_path / "x.svg")]) == 4
    assert not (tmp_path / "x.svg").exists()


def test_shipped_configs_parse():
    from pathlib import Path

    paths = sorted((Path(__file__).parent.parent / "configs").glob("*.json"))
    assert paths
    for path in paths:
        load_config(path)
