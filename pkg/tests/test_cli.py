import json
import math
import shutil
import sys
from pathlib import Path

import pandas as pd
import pytest
from loguru import logger

from ucf import artifacts as art
from ucf import numcore as nc
from ucf import trainer
from ucf.main import run
from ucf.manifest import MANIFEST_NAME, read_manifest, verify_manifest

REPO_ROOT = Path(__file__).resolve().parent.parent
DESK = REPO_ROOT / "configs" / "desk.conf"
KINDS = ["logistic-regression", "knn", "gaussian-nb"]


def ucf(*argv) -> int:
    return run([*map(str, argv), "--quiet"])


def step(command, config, out, *extra) -> int:
    return ucf(command, "--config", config, "--out", out, *extra)


@pytest.fixture(autouse=True)
def _release_stderr_sink():
    # run() binds loguru to whatever sys.stderr is, including capsys buffers
    yield
    logger.remove()
    logger.add(sys.stderr, level="WARNING")


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory, shared_cli_config):
    outs = [tmp_path_factory.mktemp(f"run{i}") for i in range(2)]
    codes = [step("pipeline", shared_cli_config, out) for out in outs]
    return outs, codes


@pytest.fixture
def run_copy(pipeline_runs, tmp_path) -> Path:
    target = tmp_path / "copy"
    shutil.copytree(pipeline_runs[0][0], target)
    return target


def expected_artifacts() -> set[str]:
    names = {
        art.DATASET,
        art.STAGE1_CKPT,
        art.STAGE2_CKPT,
        art.TRAIN_LOG,
        art.EMBEDDINGS,
        art.PROJECTION_CSV,
        art.PROJECTION_SVG,
        art.REPORT_CSV,
        art.HOLDOUT_CSV,
        art.ROC_SVG,
        art.RESOLVED_CONFIG,
    }
    for kind in KINDS:
        names |= {art.metrics_name(kind), art.scores_name(kind)}
    return names


class TestPipeline:
    def test_exit_codes(self, pipeline_runs):
        assert pipeline_runs[1] == [0, 0]

    def test_artifacts_and_manifest(self, pipeline_runs):
        out = pipeline_runs[0][0]
        for name in expected_artifacts():
            assert (out / name).is_file(), name
        manifest = read_manifest(out)
        assert manifest["command"] == "pipeline"
        assert manifest["seed"] == 3
        assert set(manifest["artifacts"]) == expected_artifacts()
        assert verify_manifest(out)["status"] == "ok"

    def test_report_lists_every_classifier(self, pipeline_runs):
        out = pipeline_runs[0][0]
        report = pd.read_csv(out / art.REPORT_CSV)
        assert report["classifier"].tolist() == KINDS
        assert list(report.columns) == art.REPORT_COLUMNS
        holdout = pd.read_csv(out / art.HOLDOUT_CSV)
        assert holdout["classifier"].tolist() == KINDS

    def test_metrics_json_layout(self, pipeline_runs):
        out = pipeline_runs[0][0]
        data = json.loads((out / art.metrics_name("knn")).read_text())
        assert data["classifier"] == "knn"
        assert len(data["folds"]) == 3
        assert set(data["aggregate"]) >= {"accuracy", "precision", "recall", "f1", "auc"}

    def test_two_runs_byte_identical(self, pipeline_runs):
        first, second = pipeline_runs[0]
        names = [
            art.DATASET,
            art.EMBEDDINGS,
            art.STAGE2_CKPT,
            art.PROJECTION_SVG,
            art.ROC_SVG,
            MANIFEST_NAME,
            *(art.metrics_name(kind) for kind in KINDS),
        ]
        for name in names:
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

    def test_resolved_config_records_seed(self, pipeline_runs):
        text = (pipeline_runs[0][0] / art.RESOLVED_CONFIG).read_text()
        assert "root.seed = 3\n" in text
        assert "gen.seed" not in text


class TestManifest:
    def test_detects_tampering(self, run_copy):
        with open(run_copy / art.EMBEDDINGS, "a", encoding="utf-8") as f:
            f.write("\n")
        result = verify_manifest(run_copy)
        assert result["status"] == "tampered"
        assert result["tampered"] == [art.EMBEDDINGS]

    def test_detects_missing_file(self, run_copy):
        (run_copy / art.ROC_SVG).unlink()
        result = verify_manifest(run_copy)
        assert result["status"] == "missing"
        assert result["missing"] == [art.ROC_SVG]

    def test_no_manifest(self, tmp_path):
        assert verify_manifest(tmp_path)["status"] == "no_manifest"

    def test_embed_with_stage1_checkpoint(self, run_copy, shared_cli_config):
        before = (run_copy / art.EMBEDDINGS).read_bytes()
        code = step("embed", shared_cli_config, run_copy, "--checkpoint", run_copy / art.STAGE1_CKPT)
        assert code == 0
        assert (run_copy / art.EMBEDDINGS).read_bytes() != before
        # same config digest: earlier hashes survive, the new one is recorded
        manifest = read_manifest(run_copy)
        assert manifest["command"] == "embed"
        assert art.REPORT_CSV in manifest["artifacts"]
        assert verify_manifest(run_copy)["status"] == "ok"


class TestCommands:
    def test_generate_is_deterministic(self, cli_config, tmp_path):
        assert step("generate", cli_config, tmp_path / "a") == 0
        assert step("generate", cli_config, tmp_path / "b") == 0
        assert step("generate", cli_config, tmp_path / "c", "--seed", 4) == 0
        a, b, c = ((tmp_path / d / art.DATASET).read_bytes() for d in "abc")
        assert a == b
        assert a != c

    def test_classify_without_embeddings(self, cli_config, tmp_path, capsys):
        out = tmp_path / "out"
        assert step("generate", cli_config, out) == 0
        capsys.readouterr()
        assert step("classify", cli_config, out) == 2
        err = capsys.readouterr().err.strip().splitlines()
        assert err[-1].startswith("error kind=missing-artifact code=2")
        assert art.EMBEDDINGS in err[-1]

    def test_embed_missing_checkpoint(self, cli_config, tmp_path):
        out = tmp_path / "out"
        assert step("generate", cli_config, out) == 0
        assert step("embed", cli_config, out, "--checkpoint", tmp_path / "none.ckpt") == 2

    def test_missing_config_file(self, tmp_path):
        assert step("generate", tmp_path / "absent.conf", tmp_path / "out") == 2

    def test_seed_flag_overrides_set(self, cli_config, tmp_path):
        out = tmp_path / "out"
        assert step("generate", cli_config, out, "--set", "root.seed=5", "--seed", 9) == 0
        text = (out / art.RESOLVED_CONFIG).read_text()
        assert "root.seed = 9\n" in text
        assert read_manifest(out)["seed"] == 9

    def test_set_override(self, cli_config, tmp_path):
        out = tmp_path / "out"
        assert step("generate", cli_config, out, "--set", "gen.n_total=200") == 0
        assert len((out / art.DATASET).read_text().splitlines()) <= 201

    @pytest.mark.parametrize(
        "override",
        ["train.bogus=1", "bogus.key=1", "gen.seed=4", "train.lr=-1", "eval.classifiers=knn,knn", "noequals"],
    )
    def test_config_errors(self, cli_config, tmp_path, capsys, override):
        assert step("generate", cli_config, tmp_path / "out", "--set", override) == 3
        assert capsys.readouterr().err.strip().splitlines()[-1].startswith("error kind=config code=3")

    def test_duplicate_key_in_file(self, tmp_path):
        conf = tmp_path / "dup.conf"
        conf.write_text("root.seed = 1\nroot.seed = 2\n", encoding="utf-8")
        assert step("generate", conf, tmp_path / "out") == 3

    def test_feature_count_mismatch(self, cli_config, tmp_path):
        assert step("generate", cli_config, tmp_path / "out", "--set", "gen.n_features=5") == 3

    def test_unknown_command(self, cli_config, tmp_path, capsys):
        assert step("evaluate", cli_config, tmp_path) == 2
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1
        assert err[0].startswith("error kind=usage code=2")
        assert "evaluate" in err[0]

    def test_missing_required_option(self, tmp_path, capsys):
        assert ucf("generate", "--out", tmp_path) == 2
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1
        assert err[0].startswith("error kind=usage code=2")
        assert "--config" in err[0]

    def test_nan_loss_exits_with_stage_and_epoch(self, cli_config, tmp_path, capsys, monkeypatch):
        out = tmp_path / "out"
        assert step("generate", cli_config, out) == 0
        real = trainer.conpu_loss
        monkeypatch.setattr(trainer, "conpu_loss", lambda *a, **kw: nc.scale(real(*a, **kw), math.nan))
        capsys.readouterr()
        assert step("train", cli_config, out) == 4
        line = capsys.readouterr().err.strip().splitlines()[-1]
        assert line.startswith("error kind=numerical code=4")
        assert "stage=1" in line and "epoch=1" in line
        assert not (out / art.STAGE1_CKPT).exists()

    def test_error_goes_to_log_file(self, cli_config, tmp_path):
        out = tmp_path / "out"
        assert step("embed", cli_config, out) == 2
        assert "command failed" in (out / "info.log").read_text()


@pytest.mark.slow
class TestDeskRun:
    def test_logistic_regression_on_skewed_validation(self, tmp_path):
        out = tmp_path / "desk"
        only_lr = ("--set", "eval.classifiers=logistic-regression")
        for command in ("generate", "train", "embed", "classify"):
            assert step(command, DESK, out, *only_lr) == 0
        aggregate = json.loads((out / art.metrics_name("logistic-regression")).read_text())["aggregate"]
        assert aggregate["recall"] >= 0.99
        assert aggregate["accuracy"] >= 0.90

    def test_balanced_validation_pipeline(self, tmp_path):
        out = tmp_path / "balanced"
        assert step("pipeline", DESK, out, "--set", "gen.balanced_val=true") == 0
        report = pd.read_csv(out / art.REPORT_CSV)
        assert len(report) == 7
        assert int((report["auc"] >= 0.80).sum()) >= 5
