import csv
import math

import numpy as np
import pytest

from smearcl.core import Annotation, BoundingBox, CellClass
from smearcl.evaluation import average_performance, backward_transfer, forward_transfer
from smearcl.harness import (
    ExperimentConfig,
    ExperimentError,
    ExperimentRecord,
    ReportError,
    directory_digest,
    fold_seed,
    read_dataset,
    run_experiment,
    write_dataset,
    write_report,
)
from smearcl.harness.cli import main
from smearcl.harness.dataset_io import format_label, parse_label_line
from smearcl.strategies import STRATEGIES, StrategyConfig, TABLE_ORDER
from smearcl.detector import TrainConfig

from conftest import tiny_profile, tiny_stream


def quick_config(data, strategies=("baseline",), seed=0, epochs=1, **kw):
    return ExperimentConfig(data=str(data), strategies=tuple(strategies), folds=2, seed=seed,
                            random_baseline_runs=1,
                            strategy=StrategyConfig(train=TrainConfig(epochs=epochs, patience=0)), **kw)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    profiles = [tiny_profile(f"s{i + 1}", 0, stain_hue_shift=60.0 * i) for i in range(3)]
    from smearcl.synthgen import generate_stream
    write_dataset(generate_stream(profiles)[0], root, profiles)
    return root


@pytest.fixture(scope="module")
def full_run(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return run_experiment(quick_config(dataset, STRATEGIES), out, force=True)


class TestDatasetIO:
    def test_label_line_format(self):
        a = Annotation(BoundingBox(0.5, 0.25, 0.1, 0.125), CellClass.RBC_INFECTED)
        assert format_label(a) == "1 0.500000 0.250000 0.100000 0.125000"
        assert parse_label_line(format_label(a)) == a

    @pytest.mark.parametrize("line", ["0 0.5 0.5 0.1", "2 0.5 0.5 0.1 0.1", "0 a 0.5 0.1 0.1", "0 0.5 0.5 0 0.1"])
    def test_bad_label_lines(self, line):
        with pytest.raises(ValueError):
            parse_label_line(line, "x.txt:1")

    def test_roundtrip(self, tmp_path):
        stream = tiny_stream(2, seed=3)
        write_dataset(stream, tmp_path)
        back = read_dataset(tmp_path)
        assert [s.site_id for s in back] == [s.site_id for s in stream]
        for a, b in zip(stream, back):
            for part in ("train", "test"):
                for x, y in zip(getattr(a, part), getattr(b, part)):
                    assert x.image_id == y.image_id and x.patient_id == y.patient_id
                    assert np.array_equal(x.pixels, y.pixels)
                    assert len(x.annotations) == len(y.annotations)
                    for p, q in zip(x.annotations, y.annotations):
                        assert p.cls == q.cls and abs(p.box.cx - q.box.cx) <= 5e-7

    def test_layout(self, dataset):
        site = dataset / "site_s1"
        assert (site / "patients.csv").is_file()
        rows = read_csv(site / "patients.csv")
        assert set(rows[0]) == {"image_id", "patient_id", "split"}
        assert all((site / "images" / f"{r['image_id']}.png").is_file() for r in rows)
        assert all((site / "labels" / f"{r['image_id']}.txt").is_file() for r in rows)
        assert (dataset / "generation_report.csv").is_file()

    def test_sites_without_manifest(self, tmp_path):
        write_dataset(tiny_stream(2, seed=1), tmp_path)
        (tmp_path / "stream.json").unlink()
        assert [s.site_id for s in read_dataset(tmp_path)] == ["s1", "s2"]

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_dataset(tmp_path / "nope")


class TestConfig:
    def test_text_roundtrip(self, tmp_path):
        cfg = quick_config("d", ("ewc", "replay-conf"), seed=4)
        assert ExperimentConfig.from_text(cfg.to_text()) == cfg
        assert cfg.strategies == ("ewc", "replay_conf")
        assert cfg.strategy.train.seed == 4

    def test_keys_sorted(self):
        text = quick_config("d").to_text()
        import json
        d = json.loads(text)
        assert list(d) == sorted(d)

    def test_fold_seeds(self):
        assert fold_seed(0, 1) == fold_seed(0, 1)
        assert len({fold_seed(s, f) for s in range(3) for f in range(3)}) == 9
        cfg = quick_config("d", seed=2)
        assert cfg.for_fold(1).train.seed == fold_seed(2, 1)

    def test_validation(self):
        with pytest.raises(ValueError, match="duplicate"):
            quick_config("d", ("ewc", "EWC"))
        with pytest.raises(ValueError):
            ExperimentConfig(data="d", folds=1)


class TestRun:
    def test_record_structure(self, full_run):
        rec = ExperimentRecord.load(full_run.root)
        assert rec.T == 3 and len(rec.folds) == 2
        for fold in rec.folds:
            assert len(fold["strategies"]["baseline"]["checkpoints"]) == 1
            assert len(fold["strategies"]["joint"]["checkpoints"]) == 3
        P = rec.matrix(0, "baseline", "accuracy", "image")
        assert not np.isnan(P[0]).any() and np.isnan(P[1:]).all()

    def test_first_task_shared(self, full_run):
        a = (full_run.root / "fold_0/baseline/task_01/infected.ckpt").read_bytes()
        for s in STRATEGIES:
            assert (full_run.root / f"fold_0/{s}/task_01/infected.ckpt").read_bytes() == a

    def test_buffer_manifests(self, full_run):
        rows = read_csv(full_run.root / "fold_0/replay_conf/task_02/buffer.csv")
        assert {r["site_id"] for r in rows} == {"s1", "s2"}

    def test_refuses_busy_directory(self, dataset, full_run):
        with pytest.raises(ExperimentError, match="not empty"):
            run_experiment(quick_config(dataset, STRATEGIES), full_run.root)

    def test_resume_requires_same_config(self, dataset, full_run):
        with pytest.raises(ExperimentError, match="configuration differs"):
            run_experiment(quick_config(dataset, STRATEGIES, seed=9), full_run.root, resume=True)

    def test_resume_skips_finished_tasks(self, dataset, tmp_path, monkeypatch):
        cfg = quick_config(dataset, ("ewc",))
        run_experiment(cfg, tmp_path / "r")
        import smearcl.strategies.runners as runners

        def boom(*a, **k):
            raise AssertionError("retrained a finished task")

        monkeypatch.setattr(runners, "fit_task", boom)
        monkeypatch.setattr("smearcl.harness.experiment.fit_task", boom)
        run_experiment(cfg, tmp_path / "r", resume=True)

    def test_single_site_stream(self, tmp_path):
        write_dataset(tiny_stream(1, seed=2), tmp_path / "d")
        rec = run_experiment(quick_config(tmp_path / "d", STRATEGIES), tmp_path / "r")
        assert rec.T == 1
        write_report([rec], tmp_path / "rep", plots=False)
        rows = read_csv(tmp_path / "rep/summary_rbc.csv")
        assert len(rows) == 6 and all(r["bwt_mean"] == "NA" for r in rows)


def recompute(rec, strategy, level):
    row = 0 if strategy == "baseline" else -1
    folds = range(len(rec.folds))
    acc = [average_performance(rec.matrix(f, strategy, "accuracy", level), row) for f in folds]
    out = {"av_acc": acc}
    if strategy != "baseline":
        out["bwt"] = [backward_transfer(rec.matrix(f, strategy, "accuracy", level)) for f in folds]
        out["fwt"] = [forward_transfer(rec.matrix(f, strategy, "accuracy", level), rec.random_baseline(f, level))
                      for f in folds]
    return out


class TestReport:
    def test_six_rows_in_table_order(self, full_run, tmp_path):
        write_report([full_run], tmp_path)
        for level in ("rbc", "image"):
            rows = read_csv(tmp_path / f"summary_{level}.csv")
            assert [r["strategy"] for r in rows] == list(TABLE_ORDER)
            assert rows[0]["approach"] == "Baseline" and rows[-1]["approach"] == "Joint incr"
            assert rows[0]["bwt_mean"] == rows[0]["fwt_mean"] == "NA"
        assert (tmp_path / "curves_rbc.png").stat().st_size > 0
        assert "*" in (tmp_path / "summary.txt").read_text()

    def test_curve_rows(self, full_run, tmp_path):
        write_report([full_run], tmp_path, plots=False)
        for s in STRATEGIES:
            assert len(read_csv(tmp_path / f"curves_{s}.csv")) == 3 * 3 * 2

    def test_summary_recomputable_from_matrices(self, full_run, tmp_path):
        write_report([full_run], tmp_path, plots=False)
        for level in ("rbc", "image"):
            rows = {r["strategy"]: r for r in read_csv(tmp_path / f"summary_{level}.csv")}
            for s in STRATEGIES:
                for col, vals in recompute(full_run, s, level).items():
                    arr = np.array(vals, dtype=float)
                    expect = "NA" if np.all(np.isnan(arr)) else repr(float(np.nanmean(arr)))
                    assert rows[s][f"{col}_mean"] == expect, (s, level, col)

    def test_single_strategy(self, dataset, tmp_path):
        rec = run_experiment(quick_config(dataset, ("lwf",)), tmp_path / "r")
        write_report([rec], tmp_path / "rep", plots=False)
        assert [r["strategy"] for r in read_csv(tmp_path / "rep/summary_image.csv")] == ["lwf"]

    def test_mismatched_task_counts(self, full_run, tmp_path):
        write_dataset(tiny_stream(1, seed=2), tmp_path / "d")
        other = run_experiment(quick_config(tmp_path / "d", ("lwf",)), tmp_path / "r")
        with pytest.raises(ReportError, match="mismatched"):
            write_report([full_run, other], tmp_path / "rep")

    def test_duplicate_strategy(self, full_run, tmp_path):
        with pytest.raises(ReportError, match="more than one"):
            write_report([full_run, full_run], tmp_path)


class TestCLI:
    def test_generate_deterministic(self, tmp_path):
        args = ["generate", "--sites", "2", "--seed", "7", "--scale", "24", "--image-size", "96"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        assert directory_digest(tmp_path / "a") == directory_digest(tmp_path / "b")
        assert [s.site_id for s in read_dataset(tmp_path / "a")] == ["site1", "site2"]

    def test_generate_refuses_non_empty(self, tmp_path, capsys):
        (tmp_path / "junk").write_text("x")
        assert main(["generate", "--sites", "1", "--out", str(tmp_path)]) == 2
        assert "not empty" in capsys.readouterr().err

    def test_unknown_strategy_is_usage_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["run", "--data", str(tmp_path), "--out", str(tmp_path / "o"), "--strategy", "icarl"])
        assert exc.value.code == 1
        err = capsys.readouterr().err
        assert "replay_conf" in err and "baseline" in err

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 1

    def test_missing_data_is_runtime_error(self, tmp_path):
        assert main(["run", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 2

    def test_lambda_warning_for_replay(self, dataset, tmp_path, capfd):
        argv = ["run", "--data", str(dataset), "--out", str(tmp_path / "o"), "--strategy", "replay-conf",
                "--lambda", "5", "--epochs", "1", "--folds", "2", "--random-runs", "1", "--no-report"]
        assert main(argv) == 0
        assert "--lambda ignored for replay-conf" in capfd.readouterr().err

    def test_lambda_applies_to_regularizer(self, dataset, tmp_path):
        from smearcl.harness.cli import build_parser, config_from_args
        args = build_parser().parse_args(["run", "--data", "d", "--out", "o", "--strategy", "lwf",
                                          "--lambda", "7"])
        cfg = config_from_args(args)
        assert cfg.strategy.lwf_lambda == 7 and cfg.strategy.ewc_lambda == 10

    def test_lambda_ambiguous(self, tmp_path, capsys):
        argv = ["run", "--data", "d", "--out", str(tmp_path / "o"), "--strategy", "ewc,lwf", "--lambda", "1"]
        assert main(argv) == 1

    def test_identical_runs_identical_summaries(self, dataset, tmp_path):
        base = ["run", "--data", str(dataset), "--strategy", "baseline,replay-naive", "--epochs", "1",
                "--folds", "2", "--random-runs", "1", "--seed", "3"]
        assert main(base + ["--out", str(tmp_path / "a")]) == 0
        assert main(base + ["--out", str(tmp_path / "b")]) == 0
        for name in ("summary_rbc.csv", "summary_image.csv", "curves_replay_naive.csv"):
            assert (tmp_path / "a/report" / name).read_bytes() == (tmp_path / "b/report" / name).read_bytes()
        assert main(["report", str(tmp_path / "a"), "--out", str(tmp_path / "rep"), "--no-plots"]) == 0
        assert (tmp_path / "rep/summary_rbc.csv").read_bytes() == (tmp_path / "a/report/summary_rbc.csv").read_bytes()
