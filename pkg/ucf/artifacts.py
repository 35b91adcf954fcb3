"""
CSV artifacts passed between commands: embeddings, out-of-fold scores,
projections and the comparison tables. Floats are written with %.17g.
"""

from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd

from ucf import globals
from ucf.data_structures import Dataset
from ucf.errors import DataIntegrityError, DatasetParseError
from ucf.utils import atomic_write_text

DATASET = "dataset.csv"
STAGE1_CKPT = "stage1.ckpt"
STAGE2_CKPT = "stage2.ckpt"
TRAIN_LOG = "train_log.csv"
EMBEDDINGS = "embeddings.csv"
PROJECTION_CSV = "projection.csv"
PROJECTION_SVG = "projection.svg"
REPORT_CSV = "report.csv"
HOLDOUT_CSV = "holdout.csv"
ROC_SVG = "roc.svg"
RESOLVED_CONFIG = "resolved.conf"

REPORT_COLUMNS = ["classifier", "accuracy", "precision", "recall", "f1", "auc", "tp", "fp", "fn", "tn"]
HOLDOUT_COLUMNS = ["classifier", "seed", *REPORT_COLUMNS[1:]]
SCORE_COLUMNS = ["session_id", "ground_truth", "score", "fold"]


def metrics_name(kind: str) -> str:
    return f"metrics_{kind}.json"


def scores_name(kind: str) -> str:
    return f"scores_{kind}.csv"


def _write_frame(frame: pd.DataFrame, path: str | Path) -> None:
    text = frame.to_csv(
        index=False, float_format=f"%.{globals.float_digits}g", na_rep="NaN", lineterminator="\n"
    )
    atomic_write_text(path, text)


def _read_frame(path: str | Path, columns: list[str] | None = None) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, float_precision="round_trip", dtype={"session_id": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DatasetParseError(str(e).strip(), line=0, path=str(path)) from e
    if columns is not None and list(frame.columns) != columns:
        raise DatasetParseError(f"unexpected header {list(frame.columns)}", line=1, path=str(path))
    return frame


def embedding_columns(dim: int) -> list[str]:
    return ["session_id", *(f"e{j}" for j in range(dim))]


def write_embeddings(path: str | Path, session_ids: list[str], Z) -> None:
    Z = np.asarray(Z, dtype=np.float64)
    frame = pd.DataFrame(Z, columns=embedding_columns(Z.shape[1])[1:])
    frame.insert(0, "session_id", session_ids)
    _write_frame(frame, path)


def read_embeddings(path: str | Path) -> tuple[list[str], npt.NDArray[np.float64]]:
    frame = _read_frame(path)
    dim = len(frame.columns) - 1
    if dim < 1 or list(frame.columns) != embedding_columns(dim):
        raise DatasetParseError(f"unexpected header {list(frame.columns)}", line=1, path=str(path))
    return frame["session_id"].tolist(), frame.iloc[:, 1:].to_numpy(dtype=np.float64)


def aligned_embeddings(dataset: Dataset, path: str | Path) -> npt.NDArray[np.float64]:
    """Embeddings in dataset row order; the id columns must agree."""
    ids, Z = read_embeddings(path)
    if ids != dataset.session_ids:
        raise DataIntegrityError(f"{path}: session ids do not match the dataset", path=str(path))
    return Z


def write_scores(path: str | Path, session_ids, ground_truth, scores, fold) -> None:
    frame = pd.DataFrame(
        {
            "session_id": list(session_ids),
            "ground_truth": np.asarray(ground_truth, dtype=np.int64),
            "score": np.asarray(scores, dtype=np.float64),
            "fold": np.asarray(fold, dtype=np.int64),
        }
    )
    _write_frame(frame, path)


def read_scores(path: str | Path) -> pd.DataFrame:
    return _read_frame(path, SCORE_COLUMNS)


def write_projection(path: str | Path, session_ids, coords, ground_truth) -> None:
    coords = np.asarray(coords, dtype=np.float64)
    frame = pd.DataFrame(
        {
            "session_id": list(session_ids),
            "x": coords[:, 0],
            "y": coords[:, 1],
            "ground_truth": np.asarray(ground_truth, dtype=np.int64),
        }
    )
    _write_frame(frame, path)


def write_table(path: str | Path, rows: list[dict], columns: list[str]) -> None:
    frame = pd.DataFrame([[row[c] for c in columns] for row in rows], columns=columns)
    _write_frame(frame, path)
