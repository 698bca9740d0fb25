import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fracunstable import cli
from fracunstable.io import listed_artifacts, read_csv, read_json, run_files


def _run(argv, out, stamp=None):
    args = cli.parse_args(list(argv) + ["--out", str(out)])
    return cli.run(args, stamp=stamp)


def _complete(path):
    return listed_artifacts(path) == run_files(path)


class TestParsing:
    def test_grid_spec_inclusive(self):
        v = cli.parse_grid_spec("-0.99:-0.01:0.01")
        assert len(v) == 99 and v[0] == -0.99 and v[-1] == -0.01

    @pytest.mark.parametrize("text", ["1:0:0.1", "0:1:0", "a:b:c", "0:1"])
    def test_grid_spec_errors(self, text):
        with pytest.raises(cli.UsageError):
            cli.parse_grid_spec(text)

    def test_expression(self):
        f = cli.parse_expression("x1 + 0.2*sin(pi*x2) + r", 2)
        x = np.array([[0.5, 0.5], [0.0, 0.0]])
        np.testing.assert_allclose(f(x), [0.5 + 0.2 + np.sqrt(0.5), 0.0])

    @pytest.mark.parametrize("text", ["__import__('os')", "x1.real", "[x1]", "x4", "lambda: 1",
                                      "x1 +"])
    def test_unsafe_or_malformed_expression(self, text):
        with pytest.raises(cli.UsageError):
            cli.parse_expression(text, 2)

    def test_negative_range_value(self):
        args = cli.parse_args(["beta", "--a-grid", "-0.5:-0.1:0.1"])
        assert args.a_grid == "-0.5:-0.1:0.1"

    def test_unknown_command_exit(self, capsys):
        assert cli.main(["bogus"]) == cli.EXIT_USAGE
        assert cli.main([]) == cli.EXIT_USAGE


class TestConfig:
    def test_file_values_and_flag_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# solve settings\nresolution = 8\nboundary = x1 + 0.1\nverbose = no\n")
        args = cli.parse_args(["solve", "--config", str(cfg)])
        assert args.resolution == 8 and args.boundary == "x1 + 0.1"
        args = cli.parse_args(["solve", "--config", str(cfg), "--resolution", "16"])
        assert args.resolution == 16 and args.boundary == "x1 + 0.1"

    @pytest.mark.parametrize("body", ["nonsense = 3\n", "resolution = many\n", "resolution\n",
                                      "n = 4\n", "verbose = maybe\n"])
    def test_malformed_config(self, tmp_path, body):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(body)
        with pytest.raises(cli.UsageError):
            cli.parse_args(["solve", "--config", str(cfg)])
        assert cli.main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_USAGE

    def test_missing_config(self, tmp_path):
        assert cli.main(["beta", "--config", str(tmp_path / "none.cfg")]) == cli.EXIT_USAGE


class TestCommands:
    def test_beta(self, tmp_path):
        code, path = _run(["beta", "--a-grid", "-0.99:-0.01:0.01"], tmp_path)
        assert code == cli.EXIT_OK
        rows = read_csv(path / "beta.csv")
        margins = [float(r[1]) for r in rows[1:]]
        assert len(margins) == 99 and min(margins) > 0
        assert path.name.startswith("beta-")
        assert _complete(path)
        man = read_json(path / "manifest.json")
        assert man["status"] == "ok" and man["exit_code"] == 0 and man["version"]

    def test_solve(self, tmp_path):
        code, path = _run(["solve", "--a", "-0.5", "--n", "2", "--resolution", "16",
                           "--boundary", "x1"], tmp_path)
        assert code == cli.EXIT_OK
        assert {"field.json", "convergence.csv"} <= listed_artifacts(path)
        assert _complete(path)
        field = read_json(path / "field.json")
        assert len(field["values"]) > 0

    def test_solve_nonconvergence(self, tmp_path):
        code, path = _run(["solve", "--a", "-0.5", "--resolution", "32",
                           "--boundary", "x1+0.2", "--max-outer", "1"], tmp_path)
        assert code == cli.EXIT_SOLVER
        assert read_json(path / "manifest.json")["status"] == "solver_failure"

    def test_stability_u2(self, tmp_path):
        code, path = _run(["stability", "--target", "u2", "--a", "-0.5"], tmp_path)
        assert code == cli.EXIT_OK
        cert = read_json(path / "certificate.json")
        assert cert["verdict"] == "unstable" and cert["form_value"] < 0
        assert _complete(path)

    def test_stability_grid_and_sweep(self, tmp_path):
        code, path = _run(["stability", "--a-grid", "-0.75:-0.25:0.25", "--radii", "4 16 64"],
                          tmp_path)
        assert code == cli.EXIT_OK
        with open(path / "summary.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3 and all(r["verdict"] == "unstable" for r in rows)
        assert _complete(path)

    def test_reference(self, tmp_path):
        code, path = _run(["reference", "--kind", "segment", "--samples", "5"], tmp_path)
        assert code == cli.EXIT_OK
        rows = read_csv(path / "curve.csv")
        assert rows[0][:3] == ["x", "quadrature", "closed_form"]
        for r in rows[1:]:
            assert float(r[1]) == pytest.approx(float(r[2]), rel=1e-8)

    def test_analyze_from_field(self, tmp_path):
        code, spath = _run(["solve", "--a", "0.5", "--resolution", "32", "--boundary", "x1+0.2"],
                           tmp_path)
        assert code == cli.EXIT_OK
        code, apath = _run(["analyze", "--field", str(spath / "field.json")], tmp_path)
        assert code == cli.EXIT_OK
        summary = read_json(apath / "summary.json")
        assert "nondegeneracy" in json.dumps(summary)
        assert _complete(apath)

    def test_report(self, tmp_path):
        _run(["beta", "--a-grid", "-0.5:-0.5:0.1"], tmp_path, stamp="A")
        code, path = _run(["report"], tmp_path, stamp="B")
        assert code == cli.EXIT_OK
        rows = read_csv(path / "runs.csv")
        assert any(r[0] == "beta-A" and r[2] == "ok" for r in rows[1:])


class TestReproducibility:
    def test_identical_outputs(self, tmp_path):
        argv = ["solve", "--a", "-0.5", "--resolution", "16", "--boundary", "x1+0.2", "--seed", "7"]
        _, p1 = _run(argv, tmp_path, stamp="one")
        _, p2 = _run(argv, tmp_path, stamp="two")
        files = run_files(p1) | {"manifest.json"}
        assert files == run_files(p2) | {"manifest.json"}
        for f in files:
            assert (p1 / f).read_bytes() == (p2 / f).read_bytes(), f

    def test_stamp_collision(self, tmp_path):
        _, p1 = _run(["beta", "--a-grid", "-0.5:-0.5:0.1"], tmp_path, stamp="same")
        _, p2 = _run(["beta", "--a-grid", "-0.5:-0.5:0.1"], tmp_path, stamp="same")
        assert p1 != p2 and p2.name == "beta-same-1"

    def test_json_is_strict(self, tmp_path):
        code, path = _run(["stability", "--a", "-0.5"], tmp_path)
        text = (path / "certificate.json").read_text()
        json.loads(text, parse_constant=lambda c: pytest.fail(f"non-finite constant {c}"))


def test_console_script(tmp_path):
    out = subprocess.run([sys.executable, "-m", "fracunstable.cli", "beta", "--a-grid",
                          "-0.5:-0.5:0.1", "--out", str(tmp_path)],
                         capture_output=True, text=True, check=False)
    assert out.returncode == 0
    assert out.stdout.strip().startswith(str(tmp_path))
