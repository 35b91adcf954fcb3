import hashlib
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd

from ucf.utils import atomic_write_text, format_float

FEATURE_PREFIX = "f"


class PULabel(IntEnum):
    UNLABELED = 0
    POSITIVE = 1


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"


@dataclass
class Dataset:
    """
    Sessions in row order. `pu_label` is what training may see; `ground_truth`
    (+1 / -1) is for evaluation only.
    """

    session_ids: list[str]
    features: npt.NDArray[np.float64]
    pu_label: npt.NDArray[np.int64]
    ground_truth: npt.NDArray[np.int64]
    split: list[Split] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.pu_label = np.asarray(self.pu_label, dtype=np.int64)
        self.ground_truth = np.asarray(self.ground_truth, dtype=np.int64)
        if not self.split:
            self.split = [Split.TRAIN] * len(self.session_ids)
        self.split = [Split(s) for s in self.split]

    def __len__(self) -> int:
        return len(self.session_ids)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def split_mask(self, split: Split) -> npt.NDArray[np.bool_]:
        return np.array([s is split for s in self.split], dtype=bool)

    def train_indices(self) -> npt.NDArray[np.int64]:
        """D = D1 + DU: every training-split row, ascending."""
        return np.flatnonzero(self.split_mask(Split.TRAIN))

    def val_indices(self) -> npt.NDArray[np.int64]:
        return np.flatnonzero(self.split_mask(Split.VAL))

    def labeled_positive_indices(self) -> npt.NDArray[np.int64]:
        """D1: labeled positives of the training split."""
        return np.flatnonzero(self.split_mask(Split.TRAIN) & (self.pu_label == PULabel.POSITIVE))

    def unlabeled_indices(self) -> npt.NDArray[np.int64]:
        """DU: unlabeled rows of the training split."""
        return np.flatnonzero(self.split_mask(Split.TRAIN) & (self.pu_label == PULabel.UNLABELED))

    def is_labeled_positive(self) -> npt.NDArray[np.bool_]:
        return self.pu_label == PULabel.POSITIVE

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            session_ids=[self.session_ids[i] for i in idx],
            features=self.features[idx],
            pu_label=self.pu_label[idx],
            ground_truth=self.ground_truth[idx],
            split=[self.split[i] for i in idx],
        )

    def feature_columns(self) -> list[str]:
        return [f"{FEATURE_PREFIX}{j}" for j in range(self.n_features)]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.features, columns=self.feature_columns())
        frame.insert(0, "session_id", self.session_ids)
        frame["pu_label"] = self.pu_label
        frame["ground_truth"] = self.ground_truth
        frame["split"] = [s.value for s in self.split]
        return frame

    def digest(self) -> str:
        """sha256 over ids, feature bytes, labels and splits."""
        h = hashlib.sha256()
        h.update("\n".join(self.session_ids).encode("utf-8"))
        h.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        h.update(self.pu_label.astype("<i8").tobytes())
        h.update(self.ground_truth.astype("<i8").tobytes())
        h.update("".join(s.value[0] for s in self.split).encode("utf-8"))
        return h.hexdigest()

    def equals(self, other: "Dataset") -> bool:
        return self.digest() == other.digest()


@dataclass(frozen=True)
class EpochRecord:
    stage: int
    epoch: int
    mean_loss: float
    raw_tau: float
    v0_norm: float
    head_acc: float
    seconds: float


TRAIN_LOG_COLUMNS = ["stage", "epoch", "mean_loss", "raw_tau", "v0_norm", "head_acc", "seconds"]


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def extend(self, other: "TrainLog") -> None:
        self.records.extend(other.records)

    def __len__(self) -> int:
        return len(self.records)

    def stage(self, stage: int) -> list[EpochRecord]:
        return [r for r in self.records if r.stage == stage]

    def losses(self, stage: int) -> list[float]:
        return [r.mean_loss for r in self.stage(stage)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[getattr(r, c) for c in TRAIN_LOG_COLUMNS] for r in self.records],
            columns=TRAIN_LOG_COLUMNS,
        )

    def to_csv(self, path: str | Path) -> None:
        lines = [",".join(TRAIN_LOG_COLUMNS)]
        for r in self.records:
            floats = (r.mean_loss, r.raw_tau, r.v0_norm, r.head_acc, r.seconds)
            lines.append(",".join([str(r.stage), str(r.epoch), *(format_float(x) for x in floats)]))
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrainLog":
        frame = pd.read_csv(path, float_precision="round_trip")
        records = [
            EpochRecord(
                stage=int(row.stage),
                epoch=int(row.epoch),
                mean_loss=float(row.mean_loss),
                raw_tau=float(row.raw_tau),
                v0_norm=float(row.v0_norm),
                head_acc=float(row.head_acc),
                seconds=float(row.seconds),
            )
            for row in frame.itertuples(index=False)
        ]
        return cls(records)
