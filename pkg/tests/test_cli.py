import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from connectogen.cli import build_parser, main
from connectogen.fileio import load_matrix


def run(*argv):
    return main([str(a) for a in argv])


def dir_digest(root: Path) -> dict[str, str]:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """One synth-data -> train -> evaluate -> generate -> analyze pass."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert run("synth-data", "--out", data, "--nc", 4, "--emci", 4, "--lmci", 4,
               "--seed", 5) == 0
    config = root / "run.cfg"
    config.write_text(
        "# desk-scale smoke run\n"
        "model_preset = tiny\n"
        "learning_rate = 3e-3\n"
        "batch_size = 2\n"
        "epochs = 2\n"
        "seed = 1\n"
        "schedule_T = 8\n"
        "beta_start = 0.0125\n"
        "beta_end = 0.999\n"
        "test_fraction = 0.25\n"
    )
    run_dir = root / "run"
    assert run("train", "--config", config, "--data", data, "--out", run_dir) == 0
    eval_dir = root / "eval"
    assert run("evaluate", "--checkpoint", run_dir / "final.ckpt", "--data", data,
               "--out", eval_dir) == 0
    gen_dir = root / "gen"
    assert run("generate", "--checkpoint", run_dir / "final.ckpt", "--label", "NC",
               "--n", 3, "--seed", 9, "--out", gen_dir) == 0
    analyze_dir = root / "analysis"
    assert run("analyze", "--generated", eval_dir / "reconstructed",
               "--reference", data, "--groups", "--out", analyze_dir) == 0
    return root


class TestHelp:
    @pytest.mark.parametrize(
        "cmd", [None, "synth-data", "train", "generate", "evaluate", "analyze", "export"]
    )
    def test_help_exits_zero(self, cmd, capsys):
        argv = ["--help"] if cmd is None else [cmd, "--help"]
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "usage:" in out

    def test_every_flag_documented(self, capsys):
        parser = build_parser()
        for cmd, flags in {
            "synth-data": ["--out", "--nc", "--emci", "--lmci", "--seed"],
            "train": ["--config", "--data", "--out"],
            "generate": ["--checkpoint", "--label", "--n", "--seed", "--out"],
            "evaluate": ["--checkpoint", "--data", "--out"],
            "analyze": ["--generated", "--reference", "--groups", "--threshold", "--out"],
            "export": ["--results", "--format", "--out"],
        }.items():
            with pytest.raises(SystemExit):
                parser.parse_args([cmd, "--help"])
            text = capsys.readouterr().out
            for flag in flags:
                assert flag in text, f"{cmd} missing {flag} in --help"


class TestSynthData:
    def test_default_counts_mirror_reference_cohort(self):
        parser = build_parser()
        args = parser.parse_args(["synth-data", "--out", "x"])
        assert (args.nc, args.emci, args.lmci) == (87, 74, 31)

    def test_zero_subjects_ok(self, tmp_path):
        out = tmp_path / "empty"
        assert run("synth-data", "--out", out, "--nc", 0, "--emci", 0, "--lmci", 0) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["subjects"] == []

    def test_negative_count_exit_2(self, tmp_path):
        assert run("synth-data", "--out", tmp_path / "x", "--nc", -1, "--emci", 0,
                   "--lmci", 0) == 2

    def test_same_seed_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("synth-data", "--out", out, "--nc", 2, "--emci", 2, "--lmci", 2,
                       "--seed", 3) == 0
        assert dir_digest(a) == dir_digest(b)

    def test_manifest_counts(self, tmp_path):
        out = tmp_path / "c"
        assert run("synth-data", "--out", out, "--nc", 3, "--emci", 2, "--lmci", 4) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["by_label"] == {"NC": 3, "EMCI": 2, "LMCI": 4}
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["subjects"]) == 9


class TestTrainCommand:
    def test_artifacts_written(self, workspace):
        run_dir = workspace / "run"
        assert (run_dir / "final.ckpt").exists()
        assert (run_dir / "loss_history.csv").exists()
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["epochs"] == 2
        assert summary["n_train"] + summary["n_test"] == 12

    def test_unknown_config_key_exit_2(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("epochs = 1\nnot_a_key = 5\n")
        assert run("train", "--config", cfg, "--data", tmp_path, "--out", tmp_path) == 2

    def test_missing_config_exit_2(self, tmp_path):
        assert run("train", "--config", tmp_path / "nope.cfg", "--data", tmp_path,
                   "--out", tmp_path) == 2

    def test_missing_data_dir_exit_3_or_4(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs = 1\nmodel_preset = tiny\n")
        code = run("train", "--config", cfg, "--data", tmp_path / "nodata",
                   "--out", tmp_path / "out")
        assert code == 4  # missing manifest is a format problem


class TestGenerateCommand:
    def test_exactly_n_valid_matrices(self, workspace):
        gen_dir = workspace / "gen"
        files = sorted(gen_dir.glob("*.csv"))
        assert len(files) == 3
        for f in files:
            load_matrix(f)  # validates all connectivity invariants

    def test_rerun_identical_bytes(self, workspace, tmp_path):
        out = tmp_path / "gen2"
        assert run("generate", "--checkpoint", workspace / "run" / "final.ckpt",
                   "--label", "NC", "--n", 3, "--seed", 9, "--out", out) == 0
        a = {p.name: p.read_bytes() for p in (workspace / "gen").glob("*.csv")}
        b = {p.name: p.read_bytes() for p in out.glob("*.csv")}
        assert a == b

    def test_corrupt_checkpoint_exit_4(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint at all")
        assert run("generate", "--checkpoint", bad, "--label", "NC", "--n", 1,
                   "--seed", 0, "--out", tmp_path / "g") == 4

    def test_bad_label_exit_2(self, workspace, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("generate", "--checkpoint", workspace / "run" / "final.ckpt",
                "--label", "XX", "--n", 1, "--out", tmp_path / "g")
        assert exc.value.code == 2


class TestEvaluateCommand:
    def test_outputs_and_metrics(self, workspace, capsys):
        eval_dir = workspace / "eval"
        summary = json.loads((eval_dir / "summary.json").read_text())
        assert set(summary["metrics"]) == {"accuracy", "sensitivity", "specificity", "f1"}
        lines = (eval_dir / "predictions.csv").read_text().splitlines()
        assert lines[0] == "subject_id,logit0,logit1,logit2,predicted"
        assert len(lines) == 1 + 12
        recon = sorted((eval_dir / "reconstructed").glob("*.csv"))
        assert len(recon) == 12
        for f in recon[:3]:
            load_matrix(f)


class TestAnalyzeCommand:
    def test_identical_inputs_zero_significant(self, workspace, tmp_path):
        out = tmp_path / "self"
        assert run("analyze", "--generated", workspace / "data",
                   "--reference", workspace / "data", "--out", out) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["paired"]["n_significant"] == 0
        chord = (out / "chord_paired.csv").read_text().splitlines()
        assert len(chord) == 1  # header only

    def test_groups_contrasts_written(self, workspace):
        analyze_dir = workspace / "analysis"
        summary = json.loads((analyze_dir / "summary.json").read_text())
        assert "group_contrasts" in summary
        for tag in ("nc_vs_emci", "nc_vs_lmci", "emci_vs_lmci"):
            assert (analyze_dir / f"chord_{tag}.csv").exists()
            assert (analyze_dir / f"chord_{tag}.png").exists()

    def test_figure_rendered_alongside_csv(self, workspace):
        analyze_dir = workspace / "analysis"
        assert (analyze_dir / "chord_paired.csv").exists()
        png = analyze_dir / "chord_paired.png"
        assert png.exists() and png.stat().st_size > 1000

    def test_missing_directory_exit_2(self, tmp_path):
        assert run("analyze", "--generated", tmp_path / "a", "--reference", tmp_path / "b",
                   "--out", tmp_path / "o") == 2


class TestExportCommand:
    def test_radar_from_evaluate_summary(self, workspace, tmp_path):
        out = tmp_path / "radar"
        assert run("export", "--results", workspace / "eval", "--format", "radar",
                   "--out", out) == 0
        assert (out / "radar.csv").exists()
        assert (out / "radar.png").stat().st_size > 1000
        text = (out / "radar.csv").read_text().splitlines()
        assert text[0] == "method,accuracy,sensitivity,specificity,f1"
        assert len(text) == 2

    def test_chord_rendering_from_results(self, workspace, tmp_path):
        out = tmp_path / "chords"
        assert run("export", "--results", workspace / "analysis", "--format", "chord",
                   "--out", out) == 0
        assert (out / "chord_paired.png").exists()

    def test_no_results_exit_2(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        assert run("export", "--results", empty, "--format", "chord") == 2
