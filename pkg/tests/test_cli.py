import json
import wave

import numpy as np

from echogrid.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from echogrid.scene import scene_from_config
from echogrid.tasks import SessionLog


def run(args):
    return main(args)


class TestGenScene:
    def test_corridor_template(self, tmp_path, capsys):
        out = tmp_path / "scene.json"
        assert run(["gen-scene", "--task", "corridor", "--out", str(out)]) == EXIT_OK
        scene = scene_from_config(out.read_text())
        assert len(scene.markers) == 8

    def test_generated_navigation_scene(self, tmp_path):
        out = tmp_path / "nav.json"
        assert run(["gen-scene", "--task", "navigation", "--seed", "3",
                    "--out", str(out)]) == EXIT_OK
        scene = scene_from_config(out.read_text())
        assert len(scene.markers) == 16

    def test_seed_required_for_generated(self):
        assert run(["gen-scene", "--task", "localization"]) == EXIT_USAGE

    def test_stdout_output(self, capsys):
        assert run(["gen-scene", "--task", "localization", "--seed", "1"]) == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc["schema"] == "echogrid-scene/1"


class TestSimulate:
    def test_batch_produces_logs_and_csv(self, tmp_path):
        code = run(["simulate", "--task", "localization", "--mode", "3d",
                    "--agent", "sweep", "--seeds", "0..4",
                    "--out-dir", str(tmp_path)])
        assert code == EXIT_OK
        logs = sorted((tmp_path / "logs").glob("*.jsonl"))
        assert len(logs) == 5
        csv_bytes = (tmp_path / "summary.csv").read_bytes()
        assert csv_bytes.count(b"\r\n") >= 6  # header + 5 rows, RFC-4180 line ends
        assert b"mean_error_m" in csv_bytes
        report = json.loads((tmp_path / "report.json").read_text())
        assert len(report["rows"]) == 5

    def test_deterministic_csv_bytes(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        for d in (a_dir, b_dir):
            assert run(["simulate", "--task", "localization", "--mode", "3d",
                        "--seeds", "0..2", "--out-dir", str(d)]) == EXIT_OK
        assert (a_dir / "summary.csv").read_bytes() == (b_dir / "summary.csv").read_bytes()
        assert (a_dir / "report.json").read_bytes() == (b_dir / "report.json").read_bytes()

    def test_agent_task_mismatch_is_data_error(self, tmp_path):
        code = run(["simulate", "--task", "navigation", "--agent", "sweep",
                    "--mode", "2d", "--seeds", "0", "--out-dir", str(tmp_path)])
        assert code == EXIT_DATA

    def test_crossover_dataset_shape(self, tmp_path):
        code = run(["simulate", "--crossover", "--participants", "4",
                    "--courses", "2", "--seed", "7", "--out-dir", str(tmp_path)])
        assert code == EXIT_OK
        logs = sorted((tmp_path / "logs").glob("*.jsonl"))
        # 4 participants x 2 sessions x (1 localization + 2 courses)
        assert len(logs) == 4 * 2 * 3
        parsed = [SessionLog.from_jsonl(p.read_text()) for p in logs]
        groups = {log.header.group for log in parsed}
        assert groups == {"Group2D3D", "Group3D2D"}
        # paired seeds: each participant's localization seed repeats across modes
        by_participant = {}
        for log in parsed:
            if log.header.task == "localization":
                by_participant.setdefault(log.header.participant_id, []).append(
                    (log.header.mode, log.header.seed))
        for runs in by_participant.values():
            modes = {m for m, _ in runs}
            seeds = {s for _, s in runs}
            assert modes == {"2d", "3d"}
            assert len(seeds) == 1


class TestRender:
    def make_log(self, tmp_path):
        run(["simulate", "--task", "localization", "--mode", "3d",
             "--seeds", "0", "--out-dir", str(tmp_path)])
        return next((tmp_path / "logs").glob("*.jsonl"))

    def test_render_writes_wav(self, tmp_path):
        log = self.make_log(tmp_path)
        out = tmp_path / "session.wav"
        assert run(["render", "--log", str(log), "--out", str(out)]) == EXIT_OK
        with wave.open(str(out)) as fh:
            assert fh.getnchannels() == 2
            assert fh.getframerate() == 44100
            assert fh.getnframes() > 0

    def test_render_deterministic(self, tmp_path):
        log = self.make_log(tmp_path)
        a, b = tmp_path / "a.wav", tmp_path / "b.wav"
        run(["render", "--log", str(log), "--out", str(a)])
        run(["render", "--log", str(log), "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_scene_mismatch_is_data_error(self, tmp_path):
        log = self.make_log(tmp_path)
        wrong = tmp_path / "wrong.json"
        run(["gen-scene", "--task", "localization", "--seed", "99",
             "--out", str(wrong)])
        code = run(["render", "--log", str(log), "--scene", str(wrong),
                    "--out", str(tmp_path / "x.wav")])
        assert code == EXIT_DATA

    def test_matching_scene_accepted(self, tmp_path):
        log = self.make_log(tmp_path)
        right = tmp_path / "right.json"
        run(["gen-scene", "--task", "localization", "--seed", "0",
             "--out", str(right)])
        assert run(["render", "--log", str(log), "--scene", str(right),
                    "--out", str(tmp_path / "y.wav")]) == EXIT_OK


class TestStats:
    def write_rm1_csv(self, path, degenerate=False):
        lines = ["subject,factor1,value"]
        values = {
            ("s1", "2d"): 4.0, ("s1", "3d"): 3.0,
            ("s2", "2d"): 5.0, ("s2", "3d"): 3.5,
            ("s3", "2d"): 4.5, ("s3", "3d"): 4.0,
        }
        for (s, f), v in values.items():
            if degenerate and (s, f) == ("s3", "3d"):
                continue
            lines.append(f"{s},{f},{v}")
        path.write_text("\n".join(lines) + "\n")

    def test_rm1_report(self, tmp_path, capsys):
        csv_path = tmp_path / "data.csv"
        self.write_rm1_csv(csv_path)
        out = tmp_path / "report.json"
        assert run(["stats", "--csv", str(csv_path), "--design", "rm1",
                    "--out", str(out)]) == EXIT_OK
        report = json.loads(out.read_text())
        assert report["anova"][0]["df1"] == 1
        assert report["anova"][0]["df2"] == 2
        assert 0.0 <= report["anova"][0]["p"] <= 1.0

    def test_missing_cell_is_data_error(self, tmp_path, capsys):
        csv_path = tmp_path / "data.csv"
        self.write_rm1_csv(csv_path, degenerate=True)
        assert run(["stats", "--csv", str(csv_path), "--design", "rm1"]) == EXIT_DATA
        err = capsys.readouterr().err
        assert "s3" in err and "3d" in err

    def test_constant_dataset_reports_zero_f(self, tmp_path):
        csv_path = tmp_path / "flat.csv"
        lines = ["subject,factor1,value"]
        for s in ("a", "b", "c"):
            for f in ("x", "y"):
                lines.append(f"{s},{f},2.0")
        csv_path.write_text("\n".join(lines) + "\n")
        out = tmp_path / "r.json"
        assert run(["stats", "--csv", str(csv_path), "--design", "rm1",
                    "--out", str(out)]) == EXIT_OK
        report = json.loads(out.read_text())
        assert report["anova"][0]["F"] == 0.0
        assert report["anova"][0]["p"] == 1.0

    def test_between2_design(self, tmp_path):
        csv_path = tmp_path / "b.csv"
        lines = ["subject,factor1,factor2,value"]
        rng = np.random.default_rng(0)
        i = 0
        for f1 in ("m1", "m2"):
            for f2 in ("g1", "g2"):
                for _ in range(5):
                    lines.append(f"s{i},{f1},{f2},{rng.normal():.6f}")
                    i += 1
        csv_path.write_text("\n".join(lines) + "\n")
        out = tmp_path / "r.json"
        assert run(["stats", "--csv", str(csv_path), "--design", "between2",
                    "--out", str(out)]) == EXIT_OK
        report = json.loads(out.read_text())
        assert len(report["anova"]) == 3
        assert all(r["df2"] == 16 for r in report["anova"])

    def test_crossover_logs_report(self, tmp_path, capsys):
        assert run(["simulate", "--crossover", "--participants", "4",
                    "--courses", "2", "--seed", "3",
                    "--out-dir", str(tmp_path)]) == EXIT_OK
        out = tmp_path / "report.json"
        code = run(["stats", "--logs", str(tmp_path / "logs"), "--out", str(out)])
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert report["kind"] == "crossover"
        anovas = report["localization"]["anova_mode_per_group"]
        assert set(anovas) == {"Group2D3D", "Group3D2D"}
        for result in anovas.values():
            assert result["df1"] == 1
            assert result["df2"] == 1  # 2 subjects per group here
        assert report["localization"]["boxplots"]
        assert report["navigation"]["boxplots"]


class TestExitCodes:
    def test_usage_error_on_unknown_command(self):
        assert run(["warp"]) == EXIT_USAGE

    def test_usage_error_on_bad_flag(self):
        assert run(["simulate", "--task", "flying"]) == EXIT_USAGE

    def test_data_error_on_missing_file(self, tmp_path):
        assert run(["render", "--log", str(tmp_path / "nope.jsonl"),
                    "--out", str(tmp_path / "x.wav")]) == EXIT_DATA

    def test_stats_requires_exactly_one_input(self):
        assert run(["stats"]) == EXIT_USAGE

    def test_help_exits_zero(self, capsys):
        assert run(["--help"]) == 0
        help_text = capsys.readouterr().out
        for sub in ("gen-scene", "simulate", "render", "stats", "serve"):
            assert sub in help_text

    def test_version_flag(self, capsys):
        assert run(["--version"]) == 0

    def test_config_file_supplies_defaults(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"out": str(tmp_path / "from_cfg.json"),
                                   "seed": 4}))
        assert run(["--config", str(cfg), "gen-scene", "--task",
                    "localization"]) == EXIT_OK
        assert (tmp_path / "from_cfg.json").exists()
