import filecmp
import json

import pytest

from hkelab.cli import EXIT_CHECK, EXIT_INTERNAL, EXIT_PASS, EXIT_USAGE, main, verify_run
from hkelab.config import ConfigError, RunConfig, parse_config
from hkelab.pipeline import DeterminismError, Pipeline, UnknownCurveError, emit_plot_data, run_pipeline

GASKET = "family = gasket\nlevels = [2, 3, 4, 5]\nradius = 1.0\n"


def same_tree(a, b) -> bool:
    cmp = filecmp.dircmp(a, b)
    stack = [cmp]
    while stack:
        c = stack.pop()
        if c.left_only or c.right_only or c.funny_files:
            return False
        _, mismatch, errors = filecmp.cmpfiles(c.left, c.right, c.common_files, shallow=False)
        if mismatch or errors:
            return False
        stack.extend(c.subdirs.values())
    return True


@pytest.fixture(scope="module")
def gasket_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    return run_pipeline(parse_config(GASKET), str(out)), out


class TestConfig:
    def test_key_value_and_json_agree(self):
        a = parse_config(GASKET)
        b = parse_config('{"family": "gasket", "levels": [2, 3, 4, 5], "radius": 1.0}')
        assert a == b and a.digest() == b.digest()

    @pytest.mark.parametrize("text", [
        "famly = gasket\n", "levels = [3]\n", "levels = [3, 2]\n", "family = square\n",
        "family = carpet\nlevels = [1, 2]\n", "radius = -1\n", "seed = 1\nseed = 2\n",
        "cube_delta = 1.5\n", "junk line\n",
    ])
    def test_rejections(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_out_not_hashed(self):
        assert RunConfig(out="a").digest() == RunConfig(out="b").digest()


class TestPlotData:
    def test_empty_curve_is_header_only(self):
        assert emit_plot_data({"plots": {"c": {"header": ["x", "y"], "rows": []}}}, "c") == "x,y\n"

    def test_curve_in_level_order(self):
        rep = {"levels": [2, 3, 4], "curves": {"g": [0.5, 0.25, 0.125]}}
        assert emit_plot_data(rep, "g") == "n,value\n2,0.5\n3,0.25\n4,0.125\n"

    def test_unknown(self):
        with pytest.raises(UnknownCurveError):
            emit_plot_data({"curves": {}}, "missing")


class TestPipeline:
    def test_all_stages_done(self, gasket_run):
        manifest, _ = gasket_run
        assert all(s["status"] == "done" for s in manifest.stages.values())
        assert manifest.passed, {k: v for k, v in manifest.checks.items() if not v}

    def test_artifacts(self, gasket_run):
        manifest, _ = gasket_run
        arts = set(manifest.artifacts)
        for rel in ("config.json", "generate/level_2.graph", "isometries/summary.json",
                    "hke/summary.json", "convergence/report.json", "spectra/level_5.csv"):
            assert rel in arts

    def test_small_levels_skip_empty_bulk(self, gasket_run):
        manifest, out = gasket_run
        info = json.loads((out / f"run-{manifest.config_hash}/reports/kernels/level_2.json").read_text())
        assert "skipped" in info["ondiag"]

    def test_byte_identical_rerun(self, gasket_run, tmp_path):
        manifest, out = gasket_run
        again = run_pipeline(parse_config(GASKET), str(tmp_path))
        assert same_tree(out / f"run-{manifest.config_hash}" / "reports",
                         tmp_path / f"run-{again.config_hash}" / "reports")

    def test_rewrite_with_different_bytes_raises(self, tmp_path):
        pipe = Pipeline(parse_config(GASKET), str(tmp_path))
        pipe.write("x.txt", "a\n")
        pipe.write("x.txt", "a\n")
        with pytest.raises(DeterminismError):
            pipe.write("x.txt", "b\n")

    def test_verify(self, gasket_run):
        manifest, out = gasket_run
        ok, problems = verify_run(out / f"run-{manifest.config_hash}")
        assert ok, problems


class TestCli:
    def write_cfg(self, tmp_path, text=GASKET):
        p = tmp_path / "run.cfg"
        p.write_text(text)
        return str(p)

    def test_report_passes(self, tmp_path, capsys):
        code = main(["report", "--config", self.write_cfg(tmp_path), "--out", str(tmp_path / "o")])
        assert code == EXIT_PASS
        assert "run directory" in capsys.readouterr().out

    def test_generate_single_level(self, tmp_path):
        assert main(["generate", "--config", self.write_cfg(tmp_path), "--level", "3",
                     "--out", str(tmp_path)]) == EXIT_PASS

    def test_sequence_needs_two_levels(self, tmp_path):
        assert main(["align", "--config", self.write_cfg(tmp_path), "--level", "3",
                     "--out", str(tmp_path)]) == EXIT_USAGE

    def test_unknown_key(self, tmp_path):
        cfg = self.write_cfg(tmp_path, "famly = gasket\n")
        assert main(["report", "--config", cfg, "--out", str(tmp_path)]) == EXIT_USAGE

    def test_bad_command(self):
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_missing_config_file(self, tmp_path):
        assert main(["report", "--config", str(tmp_path / "none.cfg")]) == EXIT_USAGE

    def test_failing_check(self, tmp_path):
        # three-level sequence leaves only two compared members: no tail verdict
        cfg = self.write_cfg(tmp_path, "family = gasket\nlevels = [2, 3, 4]\n")
        assert main(["converge", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CHECK

    def test_failed_stage_is_internal(self, tmp_path, monkeypatch, capsys):
        def boom(self):
            raise RuntimeError("solver diverged")
        monkeypatch.setattr(Pipeline, "stage_spectra", boom)
        cfg = self.write_cfg(tmp_path)
        assert main(["spectrum", "--config", cfg, "--out", str(tmp_path)]) == EXIT_INTERNAL
        assert "solver diverged" in capsys.readouterr().out
        run = next(tmp_path.glob("run-*"))
        assert (run / "reports" / "FAILED-spectra").exists()

    def test_verify_detects_tampering(self, tmp_path):
        out = tmp_path / "o"
        cfg = self.write_cfg(tmp_path)
        assert main(["align", "--config", cfg, "--out", str(out)]) == EXIT_PASS
        run = next(out.glob("run-*"))
        assert main(["verify", str(run)]) == EXIT_PASS
        target = run / "reports" / "isometries" / "level_2_to_3.csv"
        rows = target.read_text().splitlines()
        a, b = rows[1].split(","), rows[2].split(",")
        rows[1], rows[2] = f"{a[0]},{b[1]}", f"{b[0]},{a[1]}"
        target.write_text("\n".join(rows) + "\n")
        assert main(["verify", str(run)]) == EXIT_CHECK
