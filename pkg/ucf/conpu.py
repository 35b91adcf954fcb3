"""
Contrastive PU objective: batch sampling, adaptive temperature, direction
vector, indicator and candidate-set construction, the per-pair InfoNCE term
and the unweighted / uncertainty-weighted losses.

Slots are numbered 0..R+M-1: the first R are the training batch S (the
anchors), the last M the auxiliary batch S_a of labeled positives. A slot's
candidate set A is every other slot; B1 holds the slots whose indicator is 1
and B0 the rest. An anchor with indicator 1 is pulled towards B1, one with
indicator 0 towards B0.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import logsumexp

from ucf import numcore as nc
from ucf.data_structures import Dataset
from ucf.errors import ContractError, InsufficientPositivesError
from ucf.numcore import Matrix, Node

SIGMA_EPS = 1e-12
INDICATOR_THRESHOLD = 0.5


class LossVariant(str, Enum):
    EQ3_UNWEIGHTED = "eq3-unweighted"
    EQ4_WEIGHTED = "eq4-weighted"


class TauParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    tau0: float = 1.0
    tau1: float = 0.5
    tau_min: float = Field(0.05, gt=0)
    tau_max: float = Field(5.0, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.tau0 == 0:
            raise ValueError("tau0 must be non-zero")
        if self.tau_min > self.tau_max:
            raise ValueError(f"tau_min={self.tau_min} exceeds tau_max={self.tau_max}")
        return self


IndexArray = npt.NDArray[np.int64]


@dataclass(frozen=True)
class ContrastiveBatch:
    S: IndexArray
    S_a: IndexArray
    Z: Matrix
    probs: Matrix
    labeled: npt.NDArray[np.bool_]
    indicator: npt.NDArray[np.bool_]
    A: tuple[IndexArray, ...] = field(default=())
    B1: tuple[IndexArray, ...] = field(default=())
    B0: tuple[IndexArray, ...] = field(default=())

    @property
    def R(self) -> int:
        return len(self.S)

    @property
    def M(self) -> int:
        return len(self.S_a)

    @property
    def size(self) -> int:
        return self.R + self.M

    @property
    def slots(self) -> IndexArray:
        """Dataset row of every slot, S first."""
        return np.concatenate([self.S, self.S_a])

    @property
    def has_sets(self) -> bool:
        return len(self.A) == self.size


def sample_batches(
    dataset: Dataset, R: int, M: int, seed: int | np.random.Generator
) -> tuple[IndexArray, IndexArray]:
    """
    Draw S (R rows of D1 + DU) and S_a (M rows of D1), each without replacement.

    `seed` may be a generator, in which case its stream is advanced.
    """
    rng = seed if isinstance(seed, np.random.Generator) else nc.make_rng(seed)
    pool = dataset.train_indices()
    positives = dataset.labeled_positive_indices()
    if R < 2 or M < 2:
        raise ContractError(f"batch sizes must be at least 2, got R={R}, M={M}")
    if R > len(pool):
        raise ContractError(f"R={R} exceeds the {len(pool)} training samples")
    if M > len(positives):
        raise InsufficientPositivesError(
            f"auxiliary batch needs M={M} labeled positives, dataset has {len(positives)}",
            required=M,
            available=len(positives),
        )
    S = rng.choice(pool, size=R, replace=False)
    S_a = rng.choice(positives, size=M, replace=False)
    return S.astype(np.int64), S_a.astype(np.int64)


def embedding_std(v_D) -> float:
    """Population standard deviation across the dimensions of v_D."""
    return float(np.std(np.asarray(v_D, dtype=np.float64).ravel()))


def raw_tau(v_D, epoch: int) -> float:
    """Unclamped sigma(v_D) / ln(1 + epoch)."""
    if epoch < 1:
        raise ContractError(f"epochs are 1-indexed, got {epoch}")
    return embedding_std(v_D) / math.log1p(epoch)


def adaptive_tau(v_D, epoch: int, params: TauParams = TauParams()) -> float:
    tau = raw_tau(v_D, epoch)
    if embedding_std(v_D) < SIGMA_EPS:
        return params.tau_min
    return min(max(tau, params.tau_min), params.tau_max)


def direction_v0(v_D, v_1, params: TauParams = TauParams()) -> npt.NDArray[np.float64]:
    v_D = np.asarray(v_D, dtype=np.float64)
    v_1 = np.asarray(v_1, dtype=np.float64)
    if v_D.shape != v_1.shape:
        raise ContractError(f"v_D {v_D.shape} and v_1 {v_1.shape} differ in shape")
    if params.tau0 == 0:
        raise ContractError("tau0 must be non-zero")
    return (v_D - params.tau1 * v_1) / params.tau0


def indicator(index: int, dataset: Dataset, probs) -> bool:
    """I(x): 1 for labeled positives, otherwise whether the head says p+ >= 0.5."""
    if dataset.pu_label[index] == 1:
        return True
    return bool(np.asarray(probs, dtype=np.float64).ravel()[1] >= INDICATOR_THRESHOLD)


def indicators(labeled, probs) -> npt.NDArray[np.bool_]:
    labeled = np.asarray(labeled, dtype=bool)
    return labeled | (nc.as_matrix(probs)[:, 1] >= INDICATOR_THRESHOLD)


def candidate_sets(batch: ContrastiveBatch) -> ContrastiveBatch:
    """Fill A, B1 and B0 for every slot."""
    slots = np.arange(batch.size)
    A, B1, B0 = [], [], []
    for i in slots:
        a = slots[slots != i]
        A.append(a)
        B1.append(a[batch.indicator[a]])
        B0.append(a[~batch.indicator[a]])
    return replace(batch, A=tuple(A), B1=tuple(B1), B0=tuple(B0))


def build_batch(dataset: Dataset, S, S_a, Z, probs) -> ContrastiveBatch:
    S = np.asarray(S, dtype=np.int64)
    S_a = np.asarray(S_a, dtype=np.int64)
    Z = nc.as_matrix(Z)
    probs = nc.as_matrix(probs)
    n = len(S) + len(S_a)
    if Z.shape[0] != n or probs.shape != (n, 2):
        raise ContractError(
            f"batch of {n} slots got embeddings {Z.shape} and probabilities {probs.shape}"
        )
    labeled = dataset.is_labeled_positive()[np.concatenate([S, S_a])]
    batch = ContrastiveBatch(
        S=S, S_a=S_a, Z=Z, probs=probs, labeled=labeled, indicator=indicators(labeled, probs)
    )
    return candidate_sets(batch)


def check_partition(batch: ContrastiveBatch) -> None:
    """B1(i) and B0(i) are disjoint and cover A(i) = all slots but i, for every slot."""
    if not batch.has_sets:
        raise ContractError("candidate sets have not been built")
    for i in range(batch.size):
        a, b1, b0 = batch.A[i], batch.B1[i], batch.B0[i]
        expected = np.delete(np.arange(batch.size), i)
        if not np.array_equal(np.sort(a), expected):
            raise ContractError(f"A({i}) is not the batch without slot {i}")
        if np.intersect1d(b1, b0).size or not np.array_equal(np.union1d(b1, b0), expected):
            raise ContractError(f"B1({i}) and B0({i}) do not partition A({i})")


def check_unit_rows(Z, tol: float = 1e-9) -> None:
    norms = np.linalg.norm(nc.as_matrix(Z), axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ContractError(f"embedding rows are not unit norm (max deviation {np.abs(norms - 1).max():.3e})")


def pair_loss(i: int, p: int, batch: ContrastiveBatch, tau: float) -> float:
    """-ln softmax over A(i) of z_i . z_a / tau, taken at partner p."""
    if tau <= 0:
        raise ContractError(f"tau must be positive, got {tau}")
    if not batch.has_sets:
        batch = candidate_sets(batch)
    a = batch.A[i]
    if p not in set(a.tolist()):
        raise ContractError(f"slot {p} is not in the candidate set of anchor {i}")
    logits = batch.Z[a] @ batch.Z[i] / tau
    return float(logsumexp(logits) - batch.Z[p] @ batch.Z[i] / tau)


def uncertainty_weight(p) -> float:
    return 1.0 - float(np.max(np.asarray(p, dtype=np.float64)))


def selected_set(batch: ContrastiveBatch, i: int) -> IndexArray:
    return batch.B1[i] if batch.indicator[i] else batch.B0[i]


def loss_coefficients(batch: ContrastiveBatch, variant: LossVariant) -> Matrix:
    """
    C[i, j] such that the loss is sum(C * l) / R with l[i, j] = l(z_i, z_j).
    Rows of S_a slots stay zero; an empty selected set leaves its row zero.
    """
    variant = LossVariant(variant)
    C = np.zeros((batch.size, batch.size))
    for i in range(batch.R):
        sel = selected_set(batch, i)
        if sel.size == 0:
            continue
        if variant is LossVariant.EQ3_UNWEIGHTED:
            C[i, sel] = 1.0
        else:
            C[i, sel] = uncertainty_weight(batch.probs[i]) / sel.size
    return C


def conpu_loss(
    batch: ContrastiveBatch, tau: float, variant: LossVariant, z: Node | None = None
) -> Node:
    """
    Contrastive PU loss averaged over the R anchors, as a 1x1 tape node.

    Args:
        z: embedding node to differentiate through; defaults to a constant of batch.Z.
            Indicators and weights are always constants.
    """
    if batch.R == 0:
        raise ContractError("conpu_loss needs at least one anchor")
    if tau <= 0:
        raise ContractError(f"tau must be positive, got {tau}")
    if batch.size < 2:
        raise ContractError("every anchor needs a non-empty candidate set")
    if not batch.has_sets:
        batch = candidate_sets(batch)
    z = Node.constant(batch.Z) if z is None else z

    n = batch.size
    not_self = 1.0 - np.eye(n)
    sim = nc.scale(nc.matmul(z, nc.transpose(z)), 1.0 / tau)
    masked = np.where(not_self > 0, sim.value, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)

    # log sum_{a in A(i)} exp(sim[i, a]), with the row max held constant
    shifted = nc.hadamard(nc.sub(sim, row_max), not_self)
    expd = nc.hadamard(nc.exp(shifted), not_self)
    lse = nc.add(nc.log(nc.matmul(expd, np.ones((n, 1)))), row_max)
    pair = nc.sub(lse, sim)

    C = loss_coefficients(batch, variant)
    return nc.scale(nc.sum_all(nc.hadamard(pair, C)), 1.0 / batch.R)
