import csv
from pathlib import Path

import numpy as np
import pytest

from dcgs2d.cli import main
from dcgs2d.config import ConfigError, parse_config
from dcgs2d.io import read_ppm, write_gaussians, write_ppm
from dcgs2d.core import Gaussian2D, GaussianSet

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestConfig:
    def test_line_and_field_in_diagnostic(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("[run]\nid = x\n\n[adc]\ntau_p = many\n", "c.ini")
        assert exc.value.line == 5 and exc.value.key == "adc.tau_p"
        assert str(exc.value).startswith("c.ini:5 [adc.tau_p]")

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("[train]\niters = 3\nitres = 4\n")
        assert exc.value.line == 3

    def test_semantic_error_located(self):
        cfg = parse_config("[adc]\n\nn_candidates = 4\n")
        with pytest.raises(ConfigError) as exc:
            cfg.adc()
        assert exc.value.line == 3 and exc.value.key == "adc.n_candidates"

    def test_echo_round_trips(self):
        text = (CONFIGS / "toybench.ini").read_text()
        cfg = parse_config(text)
        again = parse_config(cfg.dumps())
        assert again.values == cfg.values

    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.ini")))
    def test_shipped_configs_parse(self, name):
        cfg = parse_config((CONFIGS / name).read_text(), name)
        cfg.scene()
        cfg.train()


class TestCli:
    def test_usage_errors_exit_1(self, tmp_path, capsys):
        assert main(["fit", "--mode", "all", "--out", str(tmp_path)]) == 1
        with pytest.raises(SystemExit) as exc:
            main(["fit", "--bogus"])
        assert exc.value.code == 1
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1
        bad = write(tmp_path, "[adc]\ncriterion = loud\n")
        assert main(["fit", "--config", str(bad), "--out", str(tmp_path)]) == 1
        assert f"{bad}:2 [adc.criterion]" in capsys.readouterr().err

    def test_runtime_error_exit_2(self, tmp_path):
        cfg = write(tmp_path, "[dcmap]\ninput = missing.ppm\n")
        assert main(["dcmap", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        garbage = tmp_path / "g.ppm"
        garbage.write_bytes(b"P6\n4 4\n255\n\x00")
        cfg = write(tmp_path, f"[dcmap]\ninput = {garbage}\n")
        assert main(["dcmap", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_fit_outputs(self, tmp_path):
        cfg = write(tmp_path, "[run]\nid = t\n[scene]\nkind = two_peak\nwidth = 16\nheight = 16\n"
                              "[train]\niters = 60\n[adc]\ntau_p = 1.5\nrefine_period = 20\n")
        out = tmp_path / "out"
        assert main(["fit", "--config", str(cfg), "--out", str(out), "--seed", "5", "--mode", "argmin"]) == 0
        names = {p.name for p in out.iterdir()}
        assert {"t_config.ini", "t_target.ppm", "t_render.ppm", "t_residual.ppm", "t_gaussians.csv",
                "t_report.csv", "t_refinements.csv"} <= names
        echo = (out / "t_config.ini").read_text()
        assert "seed = 5" in echo and "placement = argmin" in echo
        rows = list(csv.DictReader(open(out / "t_report.csv")))
        assert rows[0]["iteration"] == "0" and rows[-1]["iteration"] == "60"
        assert read_ppm(out / "t_render.ppm").data.shape == (16, 16, 1)

    def test_render_and_dcmap(self, tmp_path):
        gs = GaussianSet.from_gaussians([Gaussian2D((4, 4), (2, 1), 0.5, (1.0,), 1.0)])
        write_gaussians(tmp_path / "g.csv", gs)
        cfg = write(tmp_path, "[run]\nid = r\n[render]\ngaussians = g.csv\nwidth = 9\nheight = 8\n")
        assert main(["render", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        img = read_ppm(tmp_path / "r_render.ppm")
        assert img.dims == (9, 8) and img.data[4, 4, 0] == 1.0

        write_ppm(tmp_path / "ramp.ppm", np.tile(np.linspace(0, 1, 20), (20, 1)))
        cfg = write(tmp_path, "[run]\nid = d\n[dcmap]\ninput = ramp.ppm\nwindow_radius = 2\n")
        assert main(["dcmap", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        rows = list(csv.DictReader(open(tmp_path / "d_dcmap.csv")))
        assert len(rows) == 400 and min(float(r["kappa"]) for r in rows) > 0.99

    def test_render_needs_dims(self, tmp_path):
        write_gaussians(tmp_path / "g.csv", GaussianSet.from_gaussians([Gaussian2D((1, 1), (1, 1))]))
        cfg = write(tmp_path, "[render]\ngaussians = g.csv\n")
        assert main(["render", "--config", str(cfg), "--out", str(tmp_path)]) == 1

    def test_toybench_resume_and_jobs(self, tmp_path):
        cfg = write(tmp_path, "[run]\nid = tb\n[bench]\nwarmup_iters = 20\nrefine_iters = 20\nwindow = 10\n")
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["toybench", "--config", str(cfg), "--out", str(a), "--samples", "2", "--jobs", "1"]) == 0
        assert main(["toybench", "--config", str(cfg), "--out", str(a), "--samples", "4", "--jobs", "1"]) == 0
        assert main(["toybench", "--config", str(cfg), "--out", str(b), "--samples", "4", "--jobs", "3"]) == 0
        ra = sorted((a / "tb_rows.csv").read_text().splitlines()[1:])
        rb = sorted((b / "tb_rows.csv").read_text().splitlines()[1:])
        assert len(ra) == 4 and ra == rb
        summary = list(csv.DictReader(open(a / "tb_summary.csv")))
        assert [r["mode"] for r in summary] == ["dense", "regression", "argmin", "random"]
        assert all(r["n"] == "4" for r in summary)

    def test_toybench_single_mode(self, tmp_path):
        cfg = write(tmp_path, "[run]\nid = tb\n[bench]\nwarmup_iters = 10\nrefine_iters = 10\nwindow = 5\n")
        assert main(["toybench", "--config", str(cfg), "--out", str(tmp_path), "--samples", "1",
                     "--mode", "regression"]) == 0
        header = (tmp_path / "tb_rows.csv").read_text().splitlines()[0]
        assert header == "sample,seed,regression_ssim,regression_psnr,regression_count,regression_xopt"
