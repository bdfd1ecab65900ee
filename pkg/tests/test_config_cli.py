import json
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from overdamp import cli
from overdamp.config import ConfigError, parse_config, parse_string, serialize

MINIMAL = """\
[kernels.v1]
family = zero

[kernels.v2]
family = zero

[kernels.g]
family = unity

[kernels.z1]
family = zero

[kernels.z2]
family = zero
"""

FULL = """\
[physics]
kBT = 1.0
m = 1.0
gamma = 5.0
dimension = 1

[grid]
lengths = 10.0
n_cells = 48

[kernels.v1]
family = cosine
amp = 1.2

[kernels.v2]
family = zero

[kernels.g]
family = unity

[kernels.z1]
family = iso_gaussian
amp = 0.2
sigma = 0.6

[kernels.z2]
family = zero

[solver]
kind = smoluchowski
seed = 7
t_final = 0.05
dt_max = 0.001

[output]
directory = {out}
"""


def test_minimal_config_fills_defaults():
    cfg = parse_string(MINIMAL)
    assert cfg.physics["kBT"] == 1.0
    assert cfg.solver["kind"] == "smoluchowski"
    assert cfg.grid["n_cells"] == (64,)
    p = cfg.physical_params()
    assert p.epsilon == pytest.approx(np.sqrt(1.0) / 1.0, rel=1e-14)


def test_missing_kernel_section_is_an_error():
    with pytest.raises(ConfigError, match="family has no default"):
        parse_string("[physics]\nkBT = 1.0\n")


def test_unknown_family_lists_available():
    bad = MINIMAL.replace("[kernels.z1]\nfamily = zero",
                          "[kernels.z1]\nfamily = oseen_true")
    with pytest.raises(ConfigError) as err:
        parse_string(bad)
    assert "iso_gaussian" in str(err.value)
    assert "long_gaussian" in str(err.value)


def test_unknown_keys_and_sections_are_errors():
    with pytest.raises(ConfigError) as err:
        parse_string(MINIMAL + "\n[physics]\nbogus = 1.0\n\n[mystery]\nx = 2\n")
    text = str(err.value)
    assert "bogus" in text and "mystery" in text


def test_out_of_range_reports_admissible_range():
    bad = MINIMAL + "\n[physics]\ndimension = 5\n\n[solver]\nnmax = 2\n"
    with pytest.raises(ConfigError) as err:
        parse_string(bad)
    text = str(err.value)
    assert "1, 2 or 3" in text
    assert ">= 4" in text
    # both problems reported at once
    assert len(err.value.errors) >= 2


def test_inadmissible_amplitude_rejected_at_parse():
    bad = MINIMAL.replace("[kernels.z2]\nfamily = zero",
                          "[kernels.z2]\nfamily = iso_gaussian\namp = 1.8\nsigma = 0.8")
    with pytest.raises(ConfigError, match="positive definiteness"):
        parse_string(bad)


def test_round_trip_is_canonical():
    cfg = parse_string(FULL.format(out="out"))
    text1 = serialize(cfg)
    cfg2 = parse_string(text1)
    assert cfg2 == cfg
    assert serialize(cfg2) == text1


def test_cli_check_and_run_exit_codes(tmp_path, capsys):
    path = tmp_path / "run.cfg"
    path.write_text(FULL.format(out=tmp_path / "out"))
    assert cli.main(["check", "--config", str(path)]) == 0
    assert cli.main(["run", "--config", str(path)]) == 0
    outdir = tmp_path / "out"
    summary = json.loads((outdir / "run_summary.json").read_text())
    # Boltzmann initial data under the conservative stepper stays put
    assert summary["final_delta_inf"] <= 1e-8
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {
        "snapshot_000.csv", "summary.csv", "run_summary.json"
    }
    assert cli.main(["check", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_cli_validation_exit_code(tmp_path, capsys):
    bad = FULL.format(out=tmp_path / "o") + "\n[solver]\nkind = warp_drive\n"
    path = tmp_path / "bad.cfg"
    path.write_text(bad)
    assert cli.main(["run", "--config", str(path)]) == 2
    assert "kind" in capsys.readouterr().err


def test_cli_pd_failure_exit_code(tmp_path, capsys):
    bad = FULL.format(out=tmp_path / "o").replace(
        "[kernels.z2]\nfamily = zero",
        "[kernels.z2]\nfamily = iso_gaussian\namp = 1.8\nsigma = 0.8",
    )
    path = tmp_path / "bad.cfg"
    path.write_text(bad)
    assert cli.main(["run", "--config", str(path)]) == 2
    assert "positive definiteness" in capsys.readouterr().err


def test_cli_numerical_abort_marker(tmp_path):
    text = FULL.format(out=tmp_path / "out3")
    text = text.replace("kind = smoluchowski", "kind = smoluchowski") \
               .replace("amp = 0.2", "amp = 0.78")
    # amplitude admissible for the PD sampling yet strong enough that the
    # dense cell average drives 1 + M1 through zero -> conditioning abort
    path = tmp_path / "abort.cfg"
    path.write_text(text + "\n[solver]\nn_total = 3000.0\n")
    code = cli.main(["run", "--config", str(path)])
    assert code == 3
    assert (tmp_path / "out3" / "ABORTED").exists()


def test_cli_study_report_and_junit(tmp_path):
    cfg = FULL.format(out=tmp_path / "study_out")
    cfg = cfg.replace("kind = smoluchowski", "kind = spectral_checks")
    cfg += "\n[grid]\nn_cells = 32\n"
    path = tmp_path / "study.cfg"
    path.write_text(cfg)
    assert cli.main(["run", "--config", str(path), "--junit"]) == 0
    report = json.loads((tmp_path / "study_out" / "report.json").read_text())
    assert report["pass"] is True
    tree = ET.parse(tmp_path / "study_out" / "report_junit.xml")
    assert tree.getroot().tag == "testsuite"
    assert tree.getroot().get("failures") == "0"


def test_cli_study_failure_exit_code(tmp_path):
    cfg = FULL.format(out=tmp_path / "fail_out")
    cfg = cfg.replace("kind = smoluchowski", "kind = integral_pd_check")
    cfg += "\n[tolerances]\npd_ratio_slack = -5.0\n"
    path = tmp_path / "fail.cfg"
    path.write_text(cfg)
    assert cli.main(["run", "--config", str(path)]) == 4
    report = json.loads((tmp_path / "fail_out" / "report.json").read_text())
    assert report["pass"] is False


def test_cli_study_subcommand_overrides_kind(tmp_path):
    cfg = FULL.format(out=tmp_path / "s2")
    cfg += "\n[grid]\nn_cells = 32\n"
    path = tmp_path / "s.cfg"
    path.write_text(cfg)
    assert cli.main(["study", "integral_pd_check", "--config", str(path)]) == 0
    assert (tmp_path / "s2" / "report.json").exists()
    assert cli.main(["study", "nonexistent", "--config", str(path)]) == 2


def test_cli_dump_matrix(tmp_path):
    path = tmp_path / "dump.cfg"
    path.write_text(FULL.format(out=tmp_path / "dump_out"))
    assert cli.main(["run", "--config", str(path), "--dump-matrix"]) == 0
    mat = np.loadtxt(tmp_path / "dump_out" / "fredholm_matrix.csv",
                     delimiter=",", skiprows=1)
    assert mat.shape == (48, 48)
    rhs = np.loadtxt(tmp_path / "dump_out" / "fredholm_rhs.csv",
                     delimiter=",", skiprows=1)
    assert rhs.shape == (48,)


def test_cli_emit_plotdata(tmp_path):
    cfg = FULL.format(out=tmp_path / "plot_out") + "\n[output]\nemit_plotdata = true\n"
    path = tmp_path / "plot.cfg"
    path.write_text(cfg)
    assert cli.main(["run", "--config", str(path)]) == 0
    lines = (tmp_path / "plot_out" / "plotdata.csv").read_text().splitlines()
    assert lines[0] == "series,x,y"
    series = {ln.split(",")[0] for ln in lines[1:]}
    assert {"mass", "min_rho", "l2_a"} <= series


def test_langevin_run_outputs(tmp_path):
    cfg = FULL.format(out=tmp_path / "lv_out")
    cfg = cfg.replace("kind = smoluchowski", "kind = langevin")
    cfg += "\n[solver]\nn_traj = 10\nn_particles = 5\ndt = 0.01\nt_final = 0.05\n"
    path = tmp_path / "lv.cfg"
    path.write_text(cfg)
    assert cli.main(["run", "--config", str(path)]) == 0
    text = (tmp_path / "lv_out" / "particles_000.csv").read_text().splitlines()
    assert text[0] == "traj_id,particle_id,x"
    assert len(text) == 1 + 10 * 5
    dens = (tmp_path / "lv_out" / "density.csv").read_text().splitlines()
    assert dens[0] == "x,rho,se"


def test_kinetic_run_outputs(tmp_path):
    cfg = FULL.format(out=tmp_path / "kin_out")
    cfg = cfg.replace("kind = smoluchowski", "kind = kinetic")
    path = tmp_path / "kin.cfg"
    path.write_text(cfg)
    assert cli.main(["run", "--config", str(path)]) == 0
    header = (tmp_path / "kin_out" / "kinetic_snapshot_000.csv").read_text().splitlines()[0]
    assert header == "x," + ",".join(f"gamma_{n}" for n in range(9))
    diag = json.loads((tmp_path / "kin_out" / "diagnostics.json").read_text())
    assert diag["eps_minus1_residual"] <= 1e-12
    assert diag["mass_drift"] <= 1e-11


def test_reruns_are_byte_identical_across_threads(tmp_path, monkeypatch):
    cfg = FULL.format(out=tmp_path / "d1")
    cfg = cfg.replace("kind = smoluchowski", "kind = langevin")
    cfg += "\n[solver]\nn_traj = 12\nn_particles = 4\ndt = 0.01\nt_final = 0.05\n"
    cfg += "\n[kernels.z1]\nfamily = iso_gaussian\namp = 0.2\nsigma = 0.6\n"
    path = tmp_path / "det.cfg"
    path.write_text(cfg)
    monkeypatch.setenv("OVERDAMP_THREADS", "1")
    assert cli.main(["run", "--config", str(path)]) == 0
    monkeypatch.setenv("OVERDAMP_THREADS", "3")
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "d2")]) == 0
    m1 = json.loads((tmp_path / "d1" / "manifest.json").read_text())
    m2 = json.loads((tmp_path / "d2" / "manifest.json").read_text())
    assert m1["outputs"] == m2["outputs"]
    for name in m1["outputs"]:
        b1 = (tmp_path / "d1" / name).read_bytes()
        b2 = (tmp_path / "d2" / name).read_bytes()
        assert b1 == b2


def test_seed_override_changes_output(tmp_path):
    cfg = FULL.format(out=tmp_path / "sd1")
    cfg = cfg.replace("kind = smoluchowski", "kind = langevin")
    cfg += "\n[solver]\nn_traj = 4\nn_particles = 3\ndt = 0.01\nt_final = 0.02\n"
    path = tmp_path / "sd.cfg"
    path.write_text(cfg)
    assert cli.main(["run", "--config", str(path)]) == 0
    assert cli.main(["run", "--config", str(path), "--seed", "99",
                     "--out", str(tmp_path / "sd2")]) == 0
    p1 = (tmp_path / "sd1" / "particles_000.csv").read_text()
    p2 = (tmp_path / "sd2" / "particles_000.csv").read_text()
    assert p1 != p2
