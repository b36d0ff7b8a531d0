"""Command-line front end: mesh spec parsing, exit codes, report and
CSV artifacts, and thread-count invariance of written outputs."""

import json
import subprocess
import sys

import numpy as np
import pytest

from polyddr.cli import ConfigError, build_parser, main, parse_mesh_spec


@pytest.fixture()
def pyramid_file(tmp_path):
    data = {
        "vertices": [
            [0.0, 0.0, 0.0],
            [1.1, 0.0, 0.0],
            [1.0, 1.2, 0.0],
            [0.0, 0.9, 0.0],
            [0.3, 0.4, 0.9],
        ],
        "faces": [[0, 3, 2, 1], [0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]],
        "cells": [[0, 1, 2, 3, 4]],
    }
    path = tmp_path / "pyramid.json"
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture()
def corrupt_file(tmp_path):
    data = {
        "vertices": [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.15],
            [0.0, 1.0, 0.0],
            [0.4, 0.5, 0.9],
        ],
        "faces": [[0, 3, 2, 1], [0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]],
        "cells": [[0, 1, 2, 3, 4]],
    }
    path = tmp_path / "bent.json"
    path.write_text(json.dumps(data))
    return str(path)


# ----------------------------------------------------------------------
# mesh specs and flag validation


def test_parse_builtin_specs():
    mesh, family = parse_mesh_spec("cubic:2")
    assert mesh.num_cells == 8 and family == ("cubic", 2)
    mesh, family = parse_mesh_spec("builtin:tet:1")
    assert mesh.num_cells == 6 and family == ("tet", 1)
    mesh, family = parse_mesh_spec("agglo:2:7")
    assert family == ("agglo", 2) and mesh.num_cells < 8


def test_parse_mesh_file(pyramid_file):
    mesh, family = parse_mesh_spec(pyramid_file)
    assert mesh.num_cells == 1 and family is None


@pytest.mark.parametrize(
    "spec",
    ["cubic", "cubic:0", "cubic:two", "cubic:2:3", "agglo:2:3:4", "builtin:spherical:2"],
)
def test_bad_mesh_specs_raise(spec):
    with pytest.raises(ConfigError):
        parse_mesh_spec(spec)


def test_negative_degree_exits_with_usage(capsys):
    with pytest.raises(SystemExit) as info:
        main(["verify", "--degree", "-1"])
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_levels_must_increase():
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(["converge", "--levels", "4,2"])
    assert info.value.code == 2


def test_threads_must_be_positive():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["solve", "--mesh", "cubic:1", "--threads", "0"])


# ----------------------------------------------------------------------
# verify


def test_verify_single_suite_passes(capsys, tmp_path):
    out = tmp_path / "reports.json"
    code = main([
        "verify", "--mesh", "builtin:cubic:2", "--degree", "0",
        "--suite", "complex", "--out", str(out),
    ])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "[pass] complex(k=0)" in stdout
    reports = json.loads(out.read_text())
    assert len(reports) == 1
    assert reports[0]["status"] == "pass"
    assert reports[0]["metrics"]["total_dofs"] == 125


def test_verify_corrupted_mesh_file_exits_one(capsys, corrupt_file):
    code = main(["verify", "--mesh", corrupt_file, "--suite", "complex"])
    assert code == 1
    err = capsys.readouterr().err
    assert "face 0" in err


def test_verify_missing_mesh_file_exits_two(capsys):
    code = main(["verify", "--mesh", "/nonexistent/mesh.json", "--suite", "complex"])
    assert code == 2


def test_verify_unknown_builtin_exits_two(capsys):
    code = main(["verify", "--mesh", "builtin:spherical:2", "--suite", "complex"])
    assert code == 2
    assert "spherical" in capsys.readouterr().err


def test_verify_poincare_uses_refined_builtin(capsys):
    code = main([
        "verify", "--mesh", "cubic:1", "--degree", "0", "--suite", "poincare",
    ])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "poincare_gradient_ratio" in stdout


# ----------------------------------------------------------------------
# solve


def test_solve_reports_dimensions_and_errors(capsys, tmp_path):
    out = tmp_path / "solve.json"
    code = main(["solve", "--mesh", "cubic:2", "--degree", "0", "--out", str(out)])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "dim_xcurl = 54" in stdout
    assert "dim_xdiv = 36" in stdout
    assert "system dim = 90" in stdout
    assert "err_hcurl_hdiv_rel" in stdout
    assert "bases" in stdout and "model" in stdout and "solve" in stdout
    payload = json.loads(out.read_text())
    assert payload["system_dim"] == 90
    assert payload["residual"] < 1e-10
    assert 0 < payload["errors"]["err_hcurl_hdiv_rel"] < 2


def test_solve_on_mesh_file_skips_exact_errors(capsys, pyramid_file):
    code = main(["solve", "--mesh", pyramid_file, "--degree", "0"])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "err_hcurl_hdiv_rel" not in stdout
    assert "residual" in stdout


# ----------------------------------------------------------------------
# converge


def test_converge_writes_csv_with_rates(capsys, tmp_path):
    out = tmp_path / "conv.csv"
    code = main([
        "converge", "--family", "cubic", "--degrees", "0",
        "--levels", "2,4", "--out", str(out),
    ])
    assert code == 0
    assert "fitted rate" in capsys.readouterr().out
    lines = out.read_text().strip().split("\n")
    assert lines[0] == (
        "mesh_family,level,mesh_size_h,num_cells,dim_xcurl,dim_xdiv,"
        "err_hcurl_hdiv_rel,rate"
    )
    assert len(lines) == 3
    first = lines[1].split(",")
    second = lines[2].split(",")
    assert first[0] == "cubic" and first[1] == "2" and first[-1] == ""
    assert second[1] == "4" and float(second[-1]) > 0.5
    assert float(second[6]) < float(first[6])


def test_converge_cartesian_row_count(tmp_path):
    out = tmp_path / "conv.csv"
    code = main([
        "converge", "--family", "cubic", "--degrees", "0,1",
        "--levels", "1,2", "--out", str(out),
    ])
    assert code == 0
    lines = out.read_text().strip().split("\n")
    assert len(lines) == 5


def test_converge_outputs_thread_invariant(tmp_path):
    out1 = tmp_path / "t1.csv"
    out4 = tmp_path / "t4.csv"
    args = ["converge", "--family", "cubic", "--degrees", "0", "--levels", "2,4"]
    assert main(args + ["--threads", "1", "--out", str(out1)]) == 0
    assert main(args + ["--threads", "4", "--out", str(out4)]) == 0
    assert out1.read_bytes() == out4.read_bytes()


def test_solve_outputs_thread_invariant(tmp_path):
    out1 = tmp_path / "s1.json"
    out4 = tmp_path / "s4.json"
    args = ["solve", "--mesh", "cubic:2", "--degree", "0"]
    assert main(args + ["--threads", "1", "--out", str(out1)]) == 0
    assert main(args + ["--threads", "4", "--out", str(out4)]) == 0
    assert out1.read_bytes() == out4.read_bytes()


# ----------------------------------------------------------------------
# installed entry point


def test_module_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "polyddr.cli", "verify", "--mesh", "cubic:1",
         "--degree", "0", "--suite", "complex"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "[pass] complex(k=0)" in proc.stdout
