import csv
import json

import numpy as np
import pytest

from lagan.cli import (
    EXIT_CONFIG,
    EXIT_FORMAT,
    EXIT_NOT_FOUND,
    EXIT_OK,
    EXIT_USAGE,
    build_parser,
    run,
)
from lagan.data import read_events, read_images, read_manifest
from lagan.jet import GENERATED, SIGNAL

from conftest import SMALL_MODEL


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> preprocess -> train (1 epoch, small model) -> generate, shared by the tests below."""
    d = tmp_path_factory.mktemp("cli")
    model = d / "model.json"
    model.write_text(json.dumps(SMALL_MODEL))
    steps = [
        ["synth", "--count", "40", "--seed", "3", "--out", str(d / "ev.jev")],
        ["preprocess", "--events", str(d / "ev.jev"), "--out", str(d / "im.jim")],
        ["train", "--data", str(d / "im.jim"), "--epochs", "1", "--batch", "20", "--seed", "1",
         "--model-config", str(model), "--out", str(d / "run")],
        ["generate", "--checkpoint", str(d / "run" / "epoch_001.lgn"), "--count", "30", "--out", str(d / "gen.jim")],
    ]
    for argv in steps:
        assert run(argv) == EXIT_OK, argv
    return d


class TestPipeline:
    def test_synth_outputs(self, pipeline):
        events = read_events(pipeline / "ev.jev")
        assert len(events) == 40
        assert read_manifest(pipeline / "ev.jev")["seed"] == "3"
        echo = json.loads((pipeline / "ev.jev.config.json").read_text())
        assert echo["count"] == 40 and echo["seed"] == 3 and echo["command"] == "synth"

    def test_train_outputs(self, pipeline):
        run_dir = pipeline / "run"
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["checkpoints"] == ["epoch_001.lgn"]
        assert json.loads((run_dir / "config.json").read_text())["model_config"]["proj_channels"] == 4
        assert (run_dir / "metrics.csv").exists()

    def test_generate(self, pipeline):
        gen = read_images(pipeline / "gen.jim")
        assert len(gen) == 30
        assert np.all(gen.origins == GENERATED)
        assert list(gen.labels[:4]) == [SIGNAL, 1 - SIGNAL, SIGNAL, 1 - SIGNAL]
        assert np.all(gen.pixels >= 0)

    def test_observables_csv(self, pipeline, tmp_path):
        out = tmp_path / "obs.csv"
        assert run(["observables", "--data", str(pipeline / "im.jim"), "--out", str(out)]) == EXIT_OK
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["id", "label", "origin", "pt", "mass", "tau1", "tau2", "tau21"]
        assert len(rows) == 41

    def test_evaluate(self, pipeline, tmp_path, capsys):
        out = tmp_path / "ev"
        argv = ["evaluate", "--real", str(pipeline / "im.jim"), "--generated", str(pipeline / "gen.jim"),
                "--checkpoint", str(pipeline / "run" / "epoch_001.lgn"), "--out", str(out)]
        assert run(argv) == EXIT_OK
        assert capsys.readouterr().out.startswith("sigma=")
        score = json.loads((out / "score.json").read_text())
        assert score["sigma"] == max(score["per_class_emd"].values())
        for name in ("histograms.csv", "average_real_signal.pgm", "difference_background.csv",
                     "confusion_matrix.csv", "response_map_mass.csv", "pixel_correlation_p_real.pgm", "config.json"):
            assert (out / name).exists(), name

    def test_bench(self, pipeline, capsys):
        argv = ["bench", "--checkpoint", str(pipeline / "run" / "epoch_001.lgn"), "--batch", "10", "--seconds", "0.05"]
        assert run(argv) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["images_per_second"] > 0 and report["trials"] == 5
        assert "hardware" in report

    def test_default_out_dir(self, monkeypatch, tmp_path):
        monkeypatch.setenv("LAGAN_OUT_DIR", str(tmp_path))
        assert run(["synth", "--count", "2", "--class", "signal"]) == EXIT_OK
        assert (tmp_path / "events.jev").exists()
        assert (tmp_path / "events.jev.config.json").exists()


class TestErrors:
    def test_usage(self, capsys):
        assert run([]) == EXIT_USAGE
        assert run(["synth", "--count", "0"]) == EXIT_USAGE
        assert run(["synth", "--count", "2", "--class", "tops"]) == EXIT_USAGE
        err = capsys.readouterr().err.strip().splitlines()
        assert all(line.startswith("error[usage]:") for line in err)

    def test_missing_file(self, tmp_path, capsys):
        assert run(["preprocess", "--events", str(tmp_path / "nope.jev")]) == EXIT_NOT_FOUND
        assert capsys.readouterr().err.startswith("error[file-not-found]:")

    def test_bad_format(self, tmp_path, capsys):
        bad = tmp_path / "bad.jev"
        bad.write_bytes(b"XXXX0000")
        assert run(["preprocess", "--events", str(bad), "--out", str(tmp_path / "x.jim")]) == EXIT_FORMAT
        assert capsys.readouterr().err.startswith("error[format]:")

    def test_bad_config(self, tmp_path, capsys):
        assert run(["synth", "--count", "2", "--mass", "900", "--out", str(tmp_path / "e.jev")]) == EXIT_CONFIG
        assert capsys.readouterr().err.startswith("error[config]:")

    def test_bench_needs_five_trials(self, pipeline):
        argv = ["bench", "--checkpoint", str(pipeline / "run" / "epoch_001.lgn"), "--trials", "2"]
        assert run(argv) == EXIT_CONFIG

    def test_parser_lists_subcommands(self):
        text = build_parser().format_help()
        for name in ("synth", "preprocess", "train", "generate", "observables", "evaluate", "bench"):
            assert name in text
