import filecmp

import numpy as np
import pytest

from homogch import io
from homogch.cli import EXIT_CONFIG, EXIT_DEPENDENCY, main
from homogch.config import ConfigError, PipelineConfig, parse_config
from homogch.pipeline import (
    REPORT,
    StageError,
    corrector_file,
    run_pipeline,
    stage_cell,
    stage_macro,
    stage_stokes,
    stage_tensors,
)

SMALL = """
[geometry]
resolution = 32

[macro]
cells_x = 8
cells_y = 4
t_end = 1e-4
output_every = 5e-5
"""


def small(**kw):
    cfg = parse_config(SMALL)
    return PipelineConfig(**{**cfg.as_dict(), **kw})


# --- configuration ----------------------------------------------------------


def test_empty_config_is_default():
    cfg = parse_config("")
    assert cfg == PipelineConfig()
    assert cfg.pe_mic == 0.04 and cfg.mu == 1.0 and cfg.force == (1.0, 0.0)
    assert cfg.mobility == (1.0, 0.0, 0.0, 1.0)
    assert cfg.cross_section == 0.46 and cfg.resolution == 128
    assert (cfg.cells_x, cfg.cells_y, cfg.dx, cfg.inlet_flux) == (50, 35, 0.01, 1.0)


def test_bare_and_sectioned_keys():
    assert parse_config("pe_mic = 0.04").pe_mic == 0.04
    assert parse_config("[physics]\npe_mic = 0.1").pe_mic == 0.1
    cfg = parse_config("[cell]\nmobility = 2, 0.5, 0.5, 1\n[stokes]\nforce = 0 1")
    assert cfg.mobility == (2.0, 0.5, 0.5, 1.0) and cfg.force == (0.0, 1.0)


@pytest.mark.parametrize("text, line", [
    ("pe_mic = -1", 1),
    ("\n[macro]\nbogus = 3", 3),
    ("[energy]\nlam = abc", 2),
    ("[geometry]\npe_mic = 0.1", 2),
    ("a = 1\nthis line is broken", 2),
    ("[nowhere]\nx = 1", 1),
    ("[cell]\nmobility = 1, 2, 3, 1", 2),
    ("[macro]\nmode = sideways", 2),
    ("[stokes]\nstokes_tol = 0", 2),
])
def test_config_errors_name_the_line(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:")


def test_config_text_round_trip():
    cfg = small(pe_mic=0.07, eta=0.03, front_wavelength=None)
    again = parse_config(cfg.to_text())
    assert again == cfg and again.digest() == cfg.digest()


# --- stages -----------------------------------------------------------------


@pytest.fixture(scope="module")
def staged(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = small()
    run_pipeline(cfg, out)
    return cfg, out


def test_pipeline_writes_all_artifacts(staged):
    cfg, out = staged
    for name in ["mask.txt", "flow.csv", "flow.vtk", "correctors.vtk", REPORT, "diagnostics.csv",
                 corrector_file("phi", 1), corrector_file("w", 2),
                 "macro/phi_0000.csv", "macro/interface_0002.csv"]:
        assert (out / name).is_file(), name
    for name in ["flow.csv", REPORT, corrector_file("phi", 2), "diagnostics.csv",
                 "macro/phi_0001.csv"]:
        assert io.read_header(out / name)["config_hash"] == cfg.digest()
    assert cfg.digest() in (out / "mask.txt").read_text()


def test_report_cross_links_residuals(staged):
    _, out = staged
    meta = io.read_header(out / REPORT)
    assert set(meta["residuals"]) == {"phi_1", "phi_2", "w_1", "w_2", "stokes"}
    assert meta["residuals"]["stokes"]["schur"]["converged"]


def test_seventeen_digit_round_trip(staged):
    _, out = staged
    xi = io.read_corrector(out / corrector_file("phi", 1))
    path = out / "copy.csv"
    io.write_corrector(path, xi, {})
    assert np.array_equal(io.read_corrector(path).values, xi.values)


def test_cell_stage_is_deterministic(tmp_path):
    cfg = small()
    stage_cell(cfg, tmp_path / "a")
    stage_cell(cfg, tmp_path / "b")
    for name in ["mask.txt", corrector_file("phi", 1), corrector_file("phi", 2),
                 corrector_file("w", 1), corrector_file("w", 2), "correctors.vtk"]:
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False), name


def test_full_run_is_deterministic(staged, tmp_path):
    cfg, out = staged
    run_pipeline(cfg, tmp_path)
    for name in [REPORT, "flow.csv", "diagnostics.csv", "macro/phi_0002.csv"]:
        assert filecmp.cmp(out / name, tmp_path / name, shallow=False), name


def test_tensors_without_correctors_is_dependency_error(tmp_path):
    cfg = small()
    stage_cell(cfg, tmp_path)
    (tmp_path / corrector_file("phi", 2)).unlink()
    stage_stokes(cfg, tmp_path)
    with pytest.raises(io.DependencyError, match=corrector_file("phi", 2)):
        stage_tensors(cfg, tmp_path)


def test_stages_name_their_missing_inputs(tmp_path):
    cfg = small()
    with pytest.raises(io.DependencyError, match="mask.txt"):
        stage_stokes(cfg, tmp_path)
    with pytest.raises(io.DependencyError, match=REPORT):
        stage_macro(cfg, tmp_path)


def test_stale_artifacts_are_rejected(tmp_path):
    stage_cell(small(), tmp_path)
    stage_stokes(small(), tmp_path)
    stage_cell(small(resolution=48), tmp_path)
    with pytest.raises(StageError, match="stale"):
        stage_tensors(small(resolution=48), tmp_path)


def test_macro_uses_edited_report(staged, tmp_path):
    cfg, out = staged
    values = io.read_report(out / REPORT)
    values["C_11"] = 0.05
    values["D_22"] = 0.2
    values["M_phi_22"] = values["M_w_22"] = 0.2
    io.write_report(tmp_path / REPORT, values, io.read_header(out / REPORT))
    traj = stage_macro(cfg, tmp_path)
    base = io.read_field(out / "macro/phi_0002.csv")
    edited = io.read_field(tmp_path / "macro/phi_0002.csv")
    assert np.array_equal(edited, traj.final)
    assert np.max(np.abs(edited - base)) > 1e-6


def test_empty_cell_pipeline(tmp_path):
    cfg = small(kind="empty")
    run_pipeline(cfg, tmp_path)
    r = io.read_report(tmp_path / REPORT)
    assert abs(r["D_11"] - 1) <= 1e-10 and abs(r["D_22"] - 1) <= 1e-10
    assert all(r[f"C_{i}{k}"] == 0.0 for i in (1, 2) for k in (1, 2))
    warn = io.read_header(tmp_path / "flow.csv")["report"]["warnings"]
    assert warn and "no solid" in warn[0]


def test_straight_channel_pipeline(tmp_path):
    cfg = small(amplitude=0.0, cross_section=0.5)
    for stage in (stage_cell, stage_stokes, stage_tensors):
        stage(cfg, tmp_path)
    r = io.read_report(tmp_path / REPORT)
    assert r["D_11"] == pytest.approx(r["porosity"], abs=1e-10)
    assert abs(r["D_22"]) <= 1e-10
    assert max(abs(r["C_11"]), abs(r["C_22"])) <= 1e-12


# --- command line -----------------------------------------------------------


def test_cli_stage_by_stage(tmp_path):
    conf = tmp_path / "c.ini"
    conf.write_text(SMALL)
    out = tmp_path / "out"
    for cmd in ("cell", "stokes", "tensors", "macro"):
        assert main([cmd, "--config", str(conf), "--out", str(out)]) == 0
    assert (out / "diagnostics.csv").is_file()


def test_cli_dependency_exit(tmp_path, capsys):
    conf = tmp_path / "c.ini"
    conf.write_text(SMALL)
    assert main(["tensors", "--config", str(conf), "--out", str(tmp_path / "o")]) == EXIT_DEPENDENCY
    assert "mask.txt" in capsys.readouterr().err


def test_cli_config_error_exit(tmp_path, capsys):
    conf = tmp_path / "c.ini"
    conf.write_text("[physics]\npe_mic = -1\n")
    assert main(["cell", "--config", str(conf), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err


def test_cli_defaults(capsys):
    assert main(["defaults"]) == 0
    assert parse_config(capsys.readouterr().out) == PipelineConfig()
