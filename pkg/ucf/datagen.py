"""
Synthetic PU sessions: two isotropic Gaussians N(+delta/2 u, I) and
N(-delta/2 u, I) along a seeded unit direction u, with a fraction of samples
drawn from the opposite class's Gaussian, a labeled subset of the training
positives, and a validation split of fixed size and prevalence.
"""

import math
import re
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from ucf import numcore as nc
from ucf.data_structures import Dataset, PULabel, Split
from ucf.errors import ConfigError, DataIntegrityError, DatasetParseError
from ucf.utils import atomic_write_text, validate_config

VAL_CLIP = (-0.5, 1.5)
CONSTANT_COLUMN_VALUE = 0.5
BALANCED_PREVALENCE = 0.5


class GenConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_total: int = Field(15000, ge=2)
    n_features: int = Field(10, ge=1)
    n_labeled_positive: int = Field(1000, ge=0)
    positive_prior: float = Field(0.5, gt=0, lt=1)
    separation: float = Field(2.0, ge=0)
    noise_fraction: float = Field(0.05, ge=0, lt=1)
    val_fraction: float = Field(0.1067, ge=0, lt=1)
    val_positive_prevalence: float = Field(0.9338, ge=0, le=1)
    balanced_val: bool = False
    seed: int = Field(0, ge=0)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_counts(cfg: GenConfig) -> dict[str, int]:
    """
    Exact composition of a generated dataset.

    Raises:
        ConfigError: when the counts cannot be met.
    """
    n_val = math.ceil(round(cfg.n_total * cfg.val_fraction, 9))
    prevalence = BALANCED_PREVALENCE if cfg.balanced_val else cfg.val_positive_prevalence
    val_pos = _round_half_up(n_val * prevalence)
    n_train = cfg.n_total - n_val
    unlabeled = n_train - cfg.n_labeled_positive
    if n_val >= cfg.n_total:
        raise ConfigError(f"validation split of {n_val} leaves no training samples")
    if unlabeled < 0:
        raise ConfigError(
            f"n_labeled_positive={cfg.n_labeled_positive} exceeds the {n_train} training samples"
        )
    unlabeled_pos = _round_half_up(unlabeled * cfg.positive_prior)
    return {
        "n_val": n_val,
        "val_pos": val_pos,
        "val_neg": n_val - val_pos,
        "n_train": n_train,
        "labeled": cfg.n_labeled_positive,
        "unlabeled_pos": unlabeled_pos,
        "unlabeled_neg": unlabeled - unlabeled_pos,
    }


def class_direction(rng: np.random.Generator, d: int) -> np.ndarray:
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u)


def generate(cfg: GenConfig) -> Dataset:
    cfg = validate_config(GenConfig, cfg.model_dump())
    counts = split_counts(cfg)
    rng = nc.make_rng(cfg.seed)
    u = class_direction(rng, cfg.n_features)

    ground_truth = np.concatenate(
        [
            np.ones(counts["labeled"] + counts["unlabeled_pos"], dtype=np.int64),
            -np.ones(counts["unlabeled_neg"], dtype=np.int64),
            np.ones(counts["val_pos"], dtype=np.int64),
            -np.ones(counts["val_neg"], dtype=np.int64),
        ]
    )
    pu_label = np.zeros(cfg.n_total, dtype=np.int64)
    pu_label[: counts["labeled"]] = PULabel.POSITIVE
    split = np.array([Split.TRAIN] * counts["n_train"] + [Split.VAL] * counts["n_val"], dtype=object)

    order = rng.permutation(cfg.n_total)
    ground_truth, pu_label, split = ground_truth[order], pu_label[order], split[order]

    # samples whose features come from the other class's Gaussian
    source = ground_truth.astype(np.float64)
    flipped = rng.choice(cfg.n_total, size=_round_half_up(cfg.noise_fraction * cfg.n_total), replace=False)
    source[flipped] *= -1.0
    features = rng.standard_normal((cfg.n_total, cfg.n_features)) + np.outer(
        source * (cfg.separation / 2.0), u
    )

    dataset = Dataset(
        session_ids=[f"s{i:06d}" for i in range(cfg.n_total)],
        features=features,
        pu_label=pu_label,
        ground_truth=ground_truth,
        split=list(split),
    )
    logger.info(
        "generated {} samples: {} train ({} labeled positive), {} val ({} positive)",
        len(dataset),
        counts["n_train"],
        counts["labeled"],
        counts["n_val"],
        counts["val_pos"],
    )
    return dataset


def check_pu_consistency(dataset: Dataset) -> None:
    bad = np.flatnonzero((dataset.pu_label == PULabel.POSITIVE) & (dataset.ground_truth != 1))
    if bad.size:
        raise DataIntegrityError(
            f"{bad.size} labeled-positive samples have negative ground truth, first {dataset.session_ids[bad[0]]}"
        )


def _check_no_leakage(dataset: Dataset) -> None:
    if not np.all(np.isfinite(dataset.features)):
        raise DataIntegrityError("feature block contains non-finite values")
    for j in range(dataset.n_features):
        column = dataset.features[:, j]
        for name, labels in (("pu_label", dataset.pu_label), ("ground_truth", dataset.ground_truth)):
            if len(column) > 1 and np.array_equal(column, labels.astype(np.float64)):
                raise DataIntegrityError(f"feature f{j} duplicates the {name} column")


def preprocess(dataset: Dataset) -> Dataset:
    """
    Drop exact duplicate feature rows (first kept) and min-max scale every
    column with training-split statistics. Validation values are clipped to
    [-0.5, 1.5]; a constant training column maps to 0.5.
    """
    check_pu_consistency(dataset)
    duplicated = pd.DataFrame(dataset.features).duplicated(keep="first").to_numpy()
    if duplicated.any():
        logger.info("dropping {} duplicate feature rows", int(duplicated.sum()))
    dataset = dataset.subset(np.flatnonzero(~duplicated))
    _check_no_leakage(dataset)

    train = dataset.train_indices()
    if train.size == 0:
        raise DataIntegrityError("no training rows to take scaling statistics from")
    lo = dataset.features[train].min(axis=0)
    hi = dataset.features[train].max(axis=0)
    span = hi - lo
    constant = span <= 0
    scaled = (dataset.features - lo) / np.where(constant, 1.0, span)
    scaled[:, constant] = CONSTANT_COLUMN_VALUE
    val = dataset.split_mask(Split.VAL)
    scaled[val] = np.clip(scaled[val], *VAL_CLIP)
    if constant.any():
        logger.warning("constant feature columns {} scaled to 0.5", np.flatnonzero(constant).tolist())

    dataset.features = scaled
    return dataset


def csv_columns(n_features: int) -> list[str]:
    return ["session_id", *(f"f{j}" for j in range(n_features)), "pu_label", "ground_truth", "split"]


def save(dataset: Dataset, path: str | Path) -> None:
    text = dataset.to_frame().to_csv(index=False, float_format="%.17g", lineterminator="\n")
    atomic_write_text(path, text)


_PARSER_LINE = re.compile(r"line (\d+)")


def _parse_float(value: str, line: int, column: str, path: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise DatasetParseError(f"{column}: '{value}' is not a number", line=line, path=path) from None
    if not math.isfinite(x):
        raise DatasetParseError(f"{column}: non-finite value '{value}'", line=line, path=path)
    return x


def load(path: str | Path) -> Dataset:
    """
    Read a dataset CSV. Line endings may be LF or CRLF.

    Raises:
        DatasetParseError: malformed header or row, with its 1-based line number.
        DataIntegrityError: duplicate session ids or a labeled negative.
    """
    path = str(path)
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, skip_blank_lines=False, index_col=False
        )
    except pd.errors.ParserError as e:
        found = _PARSER_LINE.search(str(e))
        raise DatasetParseError(str(e).strip(), line=int(found.group(1)) if found else 0, path=path) from e
    except pd.errors.EmptyDataError as e:
        raise DatasetParseError("empty file", line=1, path=path) from e

    n_features = sum(1 for c in frame.columns if re.fullmatch(r"f\d+", str(c)))
    if list(frame.columns) != csv_columns(n_features) or n_features == 0:
        raise DatasetParseError(f"unexpected header {list(frame.columns)}", line=1, path=path)
    feature_cols = csv_columns(n_features)[1 : n_features + 1]

    features = np.empty((len(frame), n_features))
    pu_label = np.empty(len(frame), dtype=np.int64)
    ground_truth = np.empty(len(frame), dtype=np.int64)
    split: list[Split] = []
    for idx, row in enumerate(frame.itertuples(index=False, name=None)):
        line = idx + 2
        if any(pd.isna(v) or v == "" for v in row):
            raise DatasetParseError(f"expected {len(frame.columns)} non-empty fields", line=line, path=path)
        values = dict(zip(frame.columns, row))
        features[idx] = [_parse_float(values[c], line, c, path) for c in feature_cols]
        if values["pu_label"] not in ("0", "1"):
            raise DatasetParseError(f"pu_label must be 0 or 1, got '{values['pu_label']}'", line=line, path=path)
        if values["ground_truth"] not in ("1", "-1"):
            raise DatasetParseError(
                f"ground_truth must be 1 or -1, got '{values['ground_truth']}'", line=line, path=path
            )
        if values["split"] not in (Split.TRAIN.value, Split.VAL.value):
            raise DatasetParseError(f"split must be train or val, got '{values['split']}'", line=line, path=path)
        pu_label[idx] = int(values["pu_label"])
        ground_truth[idx] = int(values["ground_truth"])
        split.append(Split(values["split"]))

    session_ids = frame["session_id"].tolist()
    duplicates = frame["session_id"][frame["session_id"].duplicated()]
    if not duplicates.empty:
        raise DataIntegrityError(f"duplicate session id {duplicates.iloc[0]}", path=path)

    dataset = Dataset(session_ids, features, pu_label, ground_truth, split)
    check_pu_consistency(dataset)
    return dataset
