"""
The main driver.
"""

import json
import math
import sys
from argparse import ArgumentParser, Namespace
from collections.abc import Callable, Sequence
from os.path import abspath, isfile
from pathlib import Path

import numpy as np
from loguru import logger

from ucf import artifacts as art
from ucf import datagen, globals, log
from ucf import encoder as enc
from ucf import numcore as nc
from ucf.config import RunConfig, load_run_config
from ucf.data_structures import Dataset, PULabel
from ucf.downstream import ClassifierKind, register_all_classifiers
from ucf.errors import ConfigError, MissingArtifactError, UcfError, UsageError
from ucf.evaluation import holdout_eval, kfold_many, roc_auc, roc_curve, tsne
from ucf.evaluation.figures import roc_svg, scatter_svg, write_svg
from ucf.manifest import write_manifest
from ucf.trainer import train
from ucf.utils import atomic_write_text, create_dir_if_not_exists, derive_seed, out_path, parallel_map

STEPS = ("generate", "train", "embed", "classify", "project", "report")


class UcfArgumentParser(ArgumentParser):
    """Usage errors surface as `UsageError` instead of exiting with argparse's usage text."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def get_args(argv: Sequence[str] | None = None, subparser_dest_attr_name: str = "command") -> Namespace:
    parser = UcfArgumentParser(prog="ucf", description="Contrastive PU representation learning pipeline.")
    subparsers = parser.add_subparsers(dest=subparser_dest_attr_name, required=True)

    helps = {
        "generate": "Generate and preprocess the synthetic PU dataset",
        "train": "Train the encoder (contrastive stage, then triplet stage)",
        "embed": "Embed every session with a trained checkpoint",
        "classify": "Cross-validate the downstream classifiers on the embeddings",
        "project": "t-SNE projection of the embeddings",
        "report": "Comparison table, holdout table and ROC figure",
        "pipeline": "All of the above, in order",
    }
    for name, help_text in helps.items():
        sub = subparsers.add_parser(name, help=help_text)
        add_common_args(sub)
        if name == "embed":
            sub.add_argument(
                "--checkpoint",
                type=str,
                default=None,
                help=f"Encoder checkpoint to embed with (default: <out>/{art.STAGE2_CKPT}).",
            )
    return parser.parse_args(argv)


def add_common_args(parser: ArgumentParser) -> None:
    parser.add_argument("--config", type=str, required=True, help="Path to the flat key = value config file.")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config key; may be repeated.",
    )
    parser.add_argument("--seed", type=int, default=None, help="Shorthand for --set root.seed=N.")
    parser.add_argument("--out", type=str, required=True, help="Directory holding the run artifacts.")
    parser.add_argument(
        "--quiet", action="store_true", default=False, help="Suppress progress output."
    )


def require(name: str) -> str:
    path = out_path(name)
    if not isfile(path):
        raise MissingArtifactError(path)
    return path


def load_dataset(cfg: RunConfig) -> Dataset:
    dataset = datagen.load(require(art.DATASET))
    if dataset.n_features != cfg.encoder.input_dim:
        raise ConfigError(
            f"dataset has {dataset.n_features} features, encoder.input_dim is {cfg.encoder.input_dim}"
        )
    return dataset


def load_embedded(cfg: RunConfig) -> tuple[Dataset, np.ndarray]:
    dataset = load_dataset(cfg)
    return dataset, art.aligned_embeddings(dataset, require(art.EMBEDDINGS))


def do_generate(cfg: RunConfig, args: Namespace) -> list[str]:
    dataset = datagen.preprocess(datagen.generate(cfg.gen_config()))
    datagen.save(dataset, out_path(art.DATASET))
    logger.info("dataset: {} rows, digest {}", len(dataset), dataset.digest())
    return [art.DATASET]


def do_train(cfg: RunConfig, args: Namespace) -> list[str]:
    dataset = load_dataset(cfg)
    initial = enc.init_state(cfg.encoder, cfg.seed_for("encoder"))
    stage1, stage2, train_log = train(dataset, initial, cfg.train_config())
    enc.save_state(stage1, out_path(art.STAGE1_CKPT))
    enc.save_state(stage2, out_path(art.STAGE2_CKPT))
    train_log.to_csv(out_path(art.TRAIN_LOG))
    return [art.STAGE1_CKPT, art.STAGE2_CKPT, art.TRAIN_LOG]


def do_embed(cfg: RunConfig, args: Namespace) -> list[str]:
    dataset = load_dataset(cfg)
    checkpoint = getattr(args, "checkpoint", None)
    if checkpoint is None:
        checkpoint = require(art.STAGE2_CKPT)
    elif not isfile(checkpoint):
        raise MissingArtifactError(checkpoint)
    state = enc.load_state(checkpoint)
    Z = enc.encode_batch(state, dataset.features)
    art.write_embeddings(out_path(art.EMBEDDINGS), dataset.session_ids, Z)
    logger.info("embedded {} sessions into {} dimensions", Z.shape[0], Z.shape[1])
    return [art.EMBEDDINGS]


def cv_rows(dataset: Dataset, split: str) -> np.ndarray:
    return dataset.val_indices() if split == "val" else dataset.train_indices()


def do_classify(cfg: RunConfig, args: Namespace) -> list[str]:
    dataset, Z = load_embedded(cfg)
    rows = cv_rows(dataset, cfg.eval.cv_split)
    X, y = Z[rows], dataset.ground_truth[rows]
    kinds = cfg.eval.classifiers
    logger.info(
        "{}-fold CV of {} classifiers on {} {} rows ({} positive)",
        cfg.eval.folds,
        len(kinds),
        rows.size,
        cfg.eval.cv_split,
        int(np.count_nonzero(y == 1)),
    )
    reports = kfold_many(
        X,
        y,
        kinds,
        cfg.eval.folds,
        cfg.seed_for("cv"),
        {kind.value: cfg.classifier_seed(kind) for kind in kinds},
        threshold=cfg.eval.threshold,
        dataset_digest=dataset.digest(),
        num_processes=globals.num_processes,
    )
    written = []
    ids = [dataset.session_ids[i] for i in rows]
    for report in reports:
        report.write(out_path(art.metrics_name(report.classifier)))
        art.write_scores(out_path(art.scores_name(report.classifier)), ids, y, report.scores, report.fold_of)
        written += [art.metrics_name(report.classifier), art.scores_name(report.classifier)]
    return written


def project_rows(cfg: RunConfig, dataset: Dataset) -> np.ndarray:
    rows = dataset.val_indices() if cfg.eval.project_split == "val" else dataset.unlabeled_indices()
    limit = cfg.eval.tsne_max_points
    if rows.size > limit:
        rng = nc.make_rng(derive_seed(cfg.seed_for("tsne"), "subsample"))
        rows = np.sort(rng.choice(rows, size=limit, replace=False))
        logger.info("t-SNE on a seeded subsample of {} rows", limit)
    return rows


def do_project(cfg: RunConfig, args: Namespace) -> list[str]:
    dataset, Z = load_embedded(cfg)
    rows = project_rows(cfg, dataset)
    result = tsne(Z[rows], cfg.tsne_config())
    ground_truth = dataset.ground_truth[rows]
    art.write_projection(
        out_path(art.PROJECTION_CSV), [dataset.session_ids[i] for i in rows], result.coords, ground_truth
    )
    title = f"t-SNE of {cfg.eval.project_split} embeddings"
    write_svg(out_path(art.PROJECTION_SVG), scatter_svg(result.coords, ground_truth, title))
    return [art.PROJECTION_CSV, art.PROJECTION_SVG]


def _number(value) -> float:
    return math.nan if value is None else value


def report_row(kind: ClassifierKind) -> dict:
    with open(require(art.metrics_name(kind.value)), encoding="utf-8") as f:
        aggregate = json.load(f)["aggregate"]
    return {"classifier": kind.value, **{c: _number(aggregate[c]) for c in art.REPORT_COLUMNS[1:]}}


def roc_entry(kind: ClassifierKind) -> tuple | None:
    scores = art.read_scores(require(art.scores_name(kind.value)))
    y = scores["ground_truth"].to_numpy(dtype=np.int64)
    s = scores["score"].to_numpy(dtype=np.float64)
    if np.unique(y).size < 2:
        logger.warning("{}: one class in the scores, no ROC curve", kind.value)
        return None
    fpr, tpr, _ = roc_curve(y, s)
    return (kind.value, fpr, tpr, roc_auc(y, s))


def _holdout_job(job: tuple) -> dict:
    X_train, y_train, X_val, y_val, kind, seed, threshold = job
    return holdout_eval(X_train, y_train, X_val, y_val, kind, seed, threshold=threshold).to_dict()


def holdout_rows(cfg: RunConfig, dataset: Dataset, Z: np.ndarray) -> list[dict]:
    """Fit on the training split, score the validation split."""
    train_rows, val_rows = dataset.train_indices(), dataset.val_indices()
    if cfg.eval.holdout_labels == "ground_truth":
        y_train = dataset.ground_truth[train_rows]
    else:
        y_train = np.where(dataset.pu_label[train_rows] == PULabel.POSITIVE, 1, -1)
    holdout_seed = cfg.seed_for("holdout")
    jobs = [
        (
            Z[train_rows],
            y_train,
            Z[val_rows],
            dataset.ground_truth[val_rows],
            kind,
            derive_seed(holdout_seed, kind.value),
            cfg.eval.threshold,
        )
        for kind in cfg.eval.classifiers
    ]
    return parallel_map(_holdout_job, jobs, globals.num_processes)


def _cell(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.5f}"
    return str(value)


def do_report(cfg: RunConfig, args: Namespace) -> list[str]:
    kinds = cfg.eval.classifiers
    rows = [report_row(kind) for kind in kinds]
    curves = [entry for entry in (roc_entry(kind) for kind in kinds) if entry is not None]
    art.write_table(out_path(art.REPORT_CSV), rows, art.REPORT_COLUMNS)
    write_svg(out_path(art.ROC_SVG), roc_svg(curves))

    dataset, Z = load_embedded(cfg)
    holdout = holdout_rows(cfg, dataset, Z)
    art.write_table(out_path(art.HOLDOUT_CSV), holdout, art.HOLDOUT_COLUMNS)

    log.print_table(
        f"{cfg.eval.folds}-fold CV on frozen embeddings",
        art.REPORT_COLUMNS,
        [[_cell(row[c]) for c in art.REPORT_COLUMNS] for row in rows],
    )
    return [art.REPORT_CSV, art.ROC_SVG, art.HOLDOUT_CSV]


COMMANDS: dict[str, Callable[[RunConfig, Namespace], list[str]]] = {
    "generate": do_generate,
    "train": do_train,
    "embed": do_embed,
    "classify": do_classify,
    "project": do_project,
    "report": do_report,
}


def main(args: Namespace, subparser_dest_attr_name: str = "command") -> list[str]:
    """Run one subcommand. Returns the artifact paths it wrote."""
    cfg = load_run_config(args.config, args.overrides, args.seed)

    globals.output_dir = abspath(args.out)
    globals.num_processes = cfg.eval.num_processes
    create_dir_if_not_exists(globals.output_dir)
    sink = log.add_file_sink(Path(out_path("info.log")))
    try:
        subcommand = getattr(args, subparser_dest_attr_name)
        steps = STEPS if subcommand == "pipeline" else (subcommand,)
        logger.info("config digest {} root seed {}", cfg.digest(), cfg.seed)
        atomic_write_text(out_path(art.RESOLVED_CONFIG), cfg.render())
        written = [art.RESOLVED_CONFIG]
        for step in steps:
            log.print_banner(step.upper())
            written += COMMANDS[step](cfg, args)
        write_manifest(globals.output_dir, subcommand, cfg.digest(), cfg.seed, written)
    except Exception as e:
        log.log_exception(e)
        raise
    finally:
        logger.remove(sink)
    return [out_path(name) for name in written]


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = get_args(argv)
        log.setup_logging(args.quiet)
        register_all_classifiers()
        paths = main(args)
    except UcfError as e:
        print(e.to_line(), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        msg = str(e).replace('"', "'").replace("\n", " ")
        print(f'error kind=internal code=1 message="{type(e).__name__}: {msg}"', file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(run())
