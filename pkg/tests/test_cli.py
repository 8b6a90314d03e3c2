import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from iterground.cli import main


@pytest.fixture
def screenshot(tmp_path, rgb_image):
    path = tmp_path / "shot.png"
    Image.fromarray(rgb_image(400, 300)).save(path)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestGround:
    def test_zero_noise_oracle(self, capsys, screenshot, tmp_path):
        code, out, _ = run(capsys, "ground", screenshot, "ok button", "--backend", "oracle",
                           "--sigma", "0", "--target", "120,80", "--run-dir", tmp_path / "r")
        assert code == 0
        assert out.splitlines()[0] == "120 80"
        trace = json.loads((tmp_path / "r" / "trace.json").read_text())
        assert len(trace["records"]) == 3

    def test_scripted_render_and_crops(self, capsys, screenshot, tmp_path):
        code, out, _ = run(capsys, "ground", screenshot, "q", "--backend", "scripted",
                           "--reply", "(0.5,0.5)", "--reply", "(0.25,0.25)", "--n", "2",
                           "--render", "--save-crops", "--run-dir", tmp_path / "r")
        assert code == 0
        # window (100, 75, 200, 150); y = 75 + 0.25 * 150 = 112.5 rounds away from zero
        assert out.splitlines()[0] == "150 113"
        for name in ("overlay.png", "strip.png", "crop_1.png", "crop_2.png"):
            assert (tmp_path / "r" / name).is_file()
        assert Image.open(tmp_path / "r" / "crop_2.png").size == (200, 150)

    def test_invalid_n_is_usage_error(self, capsys, screenshot, tmp_path):
        code, _, err = run(capsys, "ground", screenshot, "q", "--backend", "oracle",
                           "--target", "1,1", "--n", "0", "--run-dir", tmp_path / "r")
        assert code == 1 and "error" in err

    def test_oracle_needs_target(self, capsys, screenshot, tmp_path):
        code, _, _ = run(capsys, "ground", screenshot, "q", "--backend", "oracle",
                         "--run-dir", tmp_path / "r")
        assert code == 1

    def test_missing_image_is_io_error(self, capsys, tmp_path):
        code, _, _ = run(capsys, "ground", tmp_path / "nope.png", "q", "--backend", "scripted",
                         "--reply", "(0.5,0.5)", "--run-dir", tmp_path / "r")
        assert code == 2

    def test_backend_failure_exit_code(self, capsys, screenshot, tmp_path):
        code, _, err = run(capsys, "ground", screenshot, "q", "--backend", "scripted",
                           "--reply", "(0.5,0.5)", "--run-dir", tmp_path / "r")
        assert code == 3 and "iteration 2" in err

    def test_image_below_floor_is_geometry_error(self, capsys, tmp_path):
        path = tmp_path / "tiny.png"
        Image.new("RGB", (20, 20)).save(path)
        code, _, _ = run(capsys, "ground", path, "q", "--backend", "scripted",
                         "--reply", "(0.5,0.5)", "--run-dir", tmp_path / "r")
        assert code == 4

    def test_default_run_dir_under_out(self, capsys, screenshot, tmp_path):
        code, out, _ = run(capsys, "--out", tmp_path / "runs", "ground", screenshot, "q",
                           "--backend", "scripted", "--reply", "(0.5,0.5)", "--n", "1")
        assert code == 0
        (run_dir,) = (tmp_path / "runs").iterdir()
        assert run_dir.name.split("-")[2] == "ground"

    def test_config_file_and_flag_precedence(self, capsys, screenshot, tmp_path):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text('[backend]\nkind = "scripted"\nscript = ["(0.5,0.5)"]\n'
                       '[grounding]\niterations_n = 1\n')
        code, out, _ = run(capsys, "--config", cfg, "ground", screenshot, "q",
                           "--run-dir", tmp_path / "r")
        assert code == 0 and out.splitlines()[0] == "200 150"
        code, _, _ = run(capsys, "--config", cfg, "ground", screenshot, "q", "--n", "2",
                         "--run-dir", tmp_path / "r")
        assert code == 3


class TestBench:
    def test_perfect_oracle(self, capsys, six_cell_manifest, tmp_path):
        code, out, _ = run(capsys, "bench", six_cell_manifest, "--backend", "oracle",
                           "--sigma", "0", "--label", "oracle", "--run-dir", tmp_path / "r")
        assert code == 0
        assert "| oracle | 100.00 | 100.00 |" in out
        report = json.loads((tmp_path / "r" / "report.json").read_text())
        assert report["accuracy"]["ours"]["overall_micro"] == 1.0
        lines = (tmp_path / "r" / "outcomes.jsonl").read_text().splitlines()
        assert len(lines) == 24

    def test_n1_columns_match(self, capsys, six_cell_manifest, tmp_path):
        code, _, _ = run(capsys, "bench", six_cell_manifest, "--backend", "oracle",
                         "--sigma", "0.3", "--n", "1", "--run-dir", tmp_path / "r")
        assert code == 0
        report = json.loads((tmp_path / "r" / "report.json").read_text())
        assert report["counts"]["baseline"] == report["counts"]["ours"]

    def test_no_baseline(self, capsys, six_cell_manifest, tmp_path):
        code, out, _ = run(capsys, "bench", six_cell_manifest, "--backend", "oracle",
                           "--sigma", "0", "--no-baseline", "--label", "m",
                           "--run-dir", tmp_path / "r")
        assert code == 0 and "| m | — | 100.00 |" in out

    def test_missing_manifest(self, capsys, tmp_path):
        code, _, _ = run(capsys, "bench", tmp_path / "none.jsonl", "--backend", "oracle",
                         "--run-dir", tmp_path / "r")
        assert code == 2

    def test_warm_cache_sends_nothing(self, capsys, six_cell_manifest, tmp_path, stub_server):
        server = stub_server(["(0.5, 0.5)"])
        argv = ["bench", six_cell_manifest, "--backend", "remote", "--endpoint", server.url,
                "--model", "stub", "--cache-dir", tmp_path / "cache", "--workers", "3"]
        assert run(capsys, *argv, "--run-dir", tmp_path / "a")[0] == 0
        cold = server.request_count
        assert cold > 0
        server.requests.clear()
        assert run(capsys, *argv, "--run-dir", tmp_path / "b")[0] == 0
        assert server.request_count == 0
        assert (tmp_path / "a" / "report.json").read_bytes() == \
            (tmp_path / "b" / "report.json").read_bytes()


class TestSimulate:
    def test_sweep_outputs_and_determinism(self, capsys, tmp_path):
        argv = ["simulate", "--scenario", "sweep", "--trials", "20", "--seed", "3"]
        assert run(capsys, *argv, "--run-dir", tmp_path / "a")[0] == 0
        assert run(capsys, *argv, "--run-dir", tmp_path / "b")[0] == 0
        csv_a = (tmp_path / "a" / "sweep.csv").read_bytes()
        assert csv_a == (tmp_path / "b" / "sweep.csv").read_bytes()
        assert len(csv_a.decode().strip().splitlines()) == 13

    def test_custom_grid(self, capsys, tmp_path):
        code, _, _ = run(capsys, "simulate", "--scenario", "sweep", "--n", "1,2",
                         "--sigma", "0.05", "--trials", "5", "--run-dir", tmp_path / "r")
        assert code == 0
        assert len((tmp_path / "r" / "sweep.csv").read_text().strip().splitlines()) == 3

    def test_bad_sweep_is_usage_error(self, capsys, tmp_path):
        code, _, _ = run(capsys, "simulate", "--scenario", "sweep", "--element-size", "500",
                         "--trials", "2", "--run-dir", tmp_path / "r")
        assert code == 1

    def test_context_loss(self, capsys, tmp_path):
        code, out, _ = run(capsys, "simulate", "--scenario", "context-loss", "--n", "1,2",
                           "--run-dir", tmp_path / "r")
        assert code == 0
        assert "non-decreasing in n: True" in out
        data = json.loads((tmp_path / "r" / "context_loss.json").read_text())
        assert data["miss_rate"]["1"] == 0.0


class TestRender:
    @pytest.fixture
    def trace_path(self, capsys, screenshot, tmp_path):
        run(capsys, "ground", screenshot, "q", "--backend", "scripted", "--reply", "(0.3,0.6)",
            "--reply", "(0.5,0.5)", "--reply", "(0.7,0.2)", "--run-dir", tmp_path / "g")
        return tmp_path / "g" / "trace.json"

    def test_overlay_and_strip(self, capsys, screenshot, trace_path, tmp_path):
        code, out, _ = run(capsys, "render", trace_path, screenshot, "--strip",
                           "--run-dir", tmp_path / "r")
        assert code == 0
        assert Image.open(tmp_path / "r" / "overlay.png").size == (400, 300)
        assert Image.open(tmp_path / "r" / "strip.png").size[1] == 300
        first = (tmp_path / "r" / "overlay.png").read_bytes()
        run(capsys, "render", trace_path, screenshot, "--strip", "--run-dir", tmp_path / "r")
        assert (tmp_path / "r" / "overlay.png").read_bytes() == first

    def test_dims_mismatch(self, capsys, trace_path, tmp_path):
        other = tmp_path / "other.png"
        Image.fromarray(np.zeros((300, 401, 3), np.uint8)).save(other)
        code, _, _ = run(capsys, "render", trace_path, other, "--run-dir", tmp_path / "r")
        assert code == 4

    def test_bad_trace(self, capsys, screenshot, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        assert run(capsys, "render", bad, screenshot, "--run-dir", tmp_path / "r")[0] == 2


def test_help(capsys):
    code, out, _ = run(capsys, "--help")
    assert code == 0
    for cmd in ("ground", "bench", "simulate", "render"):
        assert cmd in out


def test_unknown_flag(capsys):
    assert run(capsys, "ground", "--frobnicate")[0] == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "iterground.cli", "simulate", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "--scenario" in proc.stdout
