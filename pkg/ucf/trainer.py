"""
Two-stage training.

Stage 1 trains encoder and head together on the contrastive PU loss plus a
naive-PU cross-entropy on the head (labeled -> 1, unlabeled -> 0). Stage 2
freezes the head and refines the encoder with a squared-Euclidean triplet loss
whose negatives are the unlabeled samples the head finds least positive.
"""

import math
import time

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from ucf import log
from ucf import numcore as nc
from ucf.conpu import (
    LossVariant,
    TauParams,
    adaptive_tau,
    build_batch,
    check_partition,
    check_unit_rows,
    conpu_loss,
    direction_v0,
    raw_tau,
    sample_batches,
)
from ucf.data_structures import Dataset, EpochRecord, TrainLog
from ucf.encoder import EncoderState, encode_batch, forward, head_probs_batch
from ucf.errors import ContractError, InsufficientPositivesError, NumericalError
from ucf.numcore import Matrix, Node
from ucf.utils import derive_seed


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    lr: float = Field(1e-4, gt=0)
    batch_size: int = Field(32, ge=2)
    aux_size: int = Field(16, ge=2)
    stage1_epochs: int = Field(20, ge=0)
    stage2_epochs: int = Field(20, ge=0)
    triplet_margin: float = Field(1.0, gt=0)
    pseudo_negative_quantile: float = Field(0.2, gt=0, lt=1)
    head_loss_weight: float = Field(1.0, ge=0)
    loss_variant: LossVariant = LossVariant.EQ4_WEIGHTED
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    tau0: float = 1.0
    tau1: float = 0.5
    tau_min: float = 0.05
    tau_max: float = 5.0
    check_invariants: bool = False
    seed: int = Field(0, ge=0)

    def tau_params(self) -> TauParams:
        return TauParams(tau0=self.tau0, tau1=self.tau1, tau_min=self.tau_min, tau_max=self.tau_max)


class Adam:
    """Adam over a dict of named parameter arrays, updated in place."""

    def __init__(
        self,
        params: dict[str, Matrix],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    @classmethod
    def from_config(cls, params: dict[str, Matrix], cfg: TrainConfig) -> "Adam":
        return cls(params, lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)

    def step(self, params: dict[str, Matrix], grads: dict[str, Matrix]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        # iterate in parameter order so the update sequence is fixed
        for name in self.m:
            g = grads.get(name)
            if g is None:
                continue
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def head_cross_entropy(logits: Node, targets) -> Node:
    """Mean -log softmax(logits)[target] over rows; targets are 0/1."""
    targets = np.asarray(targets).astype(np.int64)
    n = logits.shape[0]
    row_max = logits.value.max(axis=1, keepdims=True)
    lse = nc.add(nc.log(nc.matmul(nc.exp(nc.sub(logits, row_max)), np.ones((2, 1)))), row_max)
    onehot = np.zeros((n, 2))
    onehot[np.arange(n), targets] = 1.0
    return nc.scale(nc.sum_all(nc.hadamard(nc.sub(logits, lse), onehot)), -1.0 / n)


def _check_finite(value: float, stage: int, epoch: int, what: str) -> None:
    if not math.isfinite(value):
        raise NumericalError(f"{what} is {value}", stage=stage, epoch=epoch)


def _progress(iterable, desc: str):
    return tqdm(iterable, desc=desc, leave=False, disable=not log.print_stdout)


def _log_epoch(record: EpochRecord) -> None:
    logger.info(
        "stage {} epoch {}: loss={:.6f} raw_tau={:.6f} v0_norm={:.6f} head_acc={:.4f} ({:.2f}s)",
        record.stage,
        record.epoch,
        record.mean_loss,
        record.raw_tau,
        record.v0_norm,
        record.head_acc,
        record.seconds,
    )


def train_stage1(
    dataset: Dataset, encoder: EncoderState, cfg: TrainConfig
) -> tuple[EncoderState, TrainLog]:
    """
    Contrastive PU training of encoder and head.

    Every epoch draws ceil(|D| / R) independent (S, S_a) batches. The logged
    loss is the epoch mean of the contrastive term; raw tau is the unclamped
    adaptive temperature averaged over the epoch's batches.
    """
    state = encoder.copy()
    train_log = TrainLog()
    if cfg.stage1_epochs == 0:
        return state, train_log

    R, M = cfg.batch_size, cfg.aux_size
    n_batches = math.ceil(len(dataset.train_indices()) / R)
    rng = nc.make_rng(derive_seed(cfg.seed, "stage1"))
    tau_params = cfg.tau_params()
    adam = Adam.from_config(state.params, cfg)

    for epoch in range(1, cfg.stage1_epochs + 1):
        started = time.perf_counter()
        losses, taus, v0_norms = [], [], []
        hits = seen = 0
        for _ in _progress(range(n_batches), f"stage 1 epoch {epoch}"):
            S, S_a = sample_batches(dataset, R, M, rng)
            params = state.leaves()
            Z, logits = forward(params, state.config, dataset.features[np.concatenate([S, S_a])])
            probs = nc.softmax_rows_array(logits.value)
            batch = build_batch(dataset, S, S_a, Z.value, probs)
            if cfg.check_invariants:
                check_partition(batch)
                check_unit_rows(batch.Z)

            v_D = Z.value[:R].mean(axis=0)
            v_1 = Z.value[R:].mean(axis=0)
            taus.append(raw_tau(v_D, epoch))
            v0_norms.append(float(np.linalg.norm(direction_v0(v_D, v_1, tau_params))))
            tau = adaptive_tau(v_D, epoch, tau_params)

            contrastive = conpu_loss(batch, tau, cfg.loss_variant, z=Z)
            head = head_cross_entropy(logits, batch.labeled)
            loss = nc.add(contrastive, nc.scale(head, cfg.head_loss_weight))
            _check_finite(float(loss.value[0, 0]), 1, epoch, "stage-1 loss")

            adam.step(state.params, nc.backward(loss))
            losses.append(float(contrastive.value[0, 0]))
            hits += int(np.count_nonzero(probs[batch.labeled, 1] >= 0.5))
            seen += int(np.count_nonzero(batch.labeled))

        record = EpochRecord(
            stage=1,
            epoch=epoch,
            mean_loss=float(np.mean(losses)),
            raw_tau=float(np.mean(taus)),
            v0_norm=float(np.mean(v0_norms)),
            head_acc=hits / seen,
            seconds=time.perf_counter() - started,
        )
        _log_epoch(record)
        train_log.append(record)
    return state, train_log


def _ceil_fraction(q: float, n: int) -> int:
    # tolerate q*n landing a hair above an integer
    return min(n, math.ceil(round(q * n, 9)))


def build_pseudo_negatives(dataset: Dataset, encoder: EncoderState, q: float) -> np.ndarray:
    """
    The ceil(q |DU|) unlabeled training samples with the lowest head p+,
    ties broken towards the lower index. Returned ascending.
    """
    if not 0 < q < 1:
        raise ContractError(f"pseudo-negative quantile must lie in (0, 1), got {q}")
    unlabeled = dataset.unlabeled_indices()
    if unlabeled.size == 0:
        raise ContractError("no unlabeled samples to mine pseudo-negatives from")
    p_pos = head_probs_batch(encoder, encode_batch(encoder, dataset.features[unlabeled]))[:, 1]
    return pseudo_negatives_from_scores(unlabeled, p_pos, q)


def pseudo_negatives_from_scores(indices, p_pos, q: float) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    order = np.lexsort((indices, np.asarray(p_pos, dtype=np.float64)))
    k = _ceil_fraction(q, len(indices))
    return np.sort(indices[order[:k]])


def triplet_loss(a, p, n, margin: float) -> float:
    a, p, n = (np.asarray(v, dtype=np.float64).ravel() for v in (a, p, n))
    return max(0.0, margin + float(np.sum((a - p) ** 2)) - float(np.sum((a - n) ** 2)))


def _row_sq_dist(x: Node, y: Node) -> Node:
    d = nc.sub(x, y)
    return nc.matmul(nc.hadamard(d, d), np.ones((d.shape[1], 1)))


def triplet_loss_node(za: Node, zp: Node, zn: Node, margin: float) -> Node:
    """Mean hinge over the rows of three aligned embedding matrices."""
    hinge = nc.relu(nc.add(nc.sub(_row_sq_dist(za, zp), _row_sq_dist(za, zn)), margin))
    return nc.scale(nc.sum_all(hinge), 1.0 / za.shape[0])


def sample_triplets(
    positives: np.ndarray, negatives: np.ndarray, count: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uniform (anchor, other positive, pseudo-negative) triplets."""
    a = rng.integers(0, len(positives), size=count)
    p = (a + rng.integers(1, len(positives), size=count)) % len(positives)
    n = rng.integers(0, len(negatives), size=count)
    return positives[a], positives[p], negatives[n]


def train_stage2(
    dataset: Dataset, encoder: EncoderState, cfg: TrainConfig
) -> tuple[EncoderState, TrainLog]:
    state = encoder.copy()
    train_log = TrainLog()
    if cfg.stage2_epochs == 0:
        return state, train_log

    positives = dataset.labeled_positive_indices()
    if positives.size < 2:
        raise InsufficientPositivesError(
            f"triplets need at least 2 labeled positives, dataset has {positives.size}",
            required=2,
            available=int(positives.size),
        )
    R = cfg.batch_size
    n_batches = math.ceil(positives.size / R)
    rng = nc.make_rng(derive_seed(cfg.seed, "stage2"))
    trainable = state.encoder_param_names
    adam = Adam.from_config({k: state.params[k] for k in trainable}, cfg)
    cohesion_before = positive_cohesion(state, dataset)

    for epoch in range(1, cfg.stage2_epochs + 1):
        started = time.perf_counter()
        negatives = build_pseudo_negatives(dataset, state, cfg.pseudo_negative_quantile)
        anchors, others, pseudo = sample_triplets(positives, negatives, n_batches * R, rng)
        losses = []
        hits = 0
        for b in _progress(range(n_batches), f"stage 2 epoch {epoch}"):
            rows = slice(b * R, (b + 1) * R)
            params = state.leaves(trainable)
            za, logits = forward(params, state.config, dataset.features[anchors[rows]])
            zp, _ = forward(params, state.config, dataset.features[others[rows]])
            zn, _ = forward(params, state.config, dataset.features[pseudo[rows]])
            loss = triplet_loss_node(za, zp, zn, cfg.triplet_margin)
            _check_finite(float(loss.value[0, 0]), 2, epoch, "triplet loss")

            adam.step(state.params, nc.backward(loss))
            losses.append(float(loss.value[0, 0]))
            hits += int(np.count_nonzero(nc.softmax_rows_array(logits.value)[:, 1] >= 0.5))

        record = EpochRecord(
            stage=2,
            epoch=epoch,
            mean_loss=float(np.mean(losses)),
            raw_tau=math.nan,
            v0_norm=math.nan,
            head_acc=hits / (n_batches * R),
            seconds=time.perf_counter() - started,
        )
        _log_epoch(record)
        train_log.append(record)

    logger.info(
        "positive cohesion {:.6f} -> {:.6f}", cohesion_before, positive_cohesion(state, dataset)
    )
    return state, train_log


def positive_cohesion(state: EncoderState, dataset: Dataset) -> float:
    """Mean pairwise cosine similarity between embeddings of distinct labeled positives."""
    positives = dataset.labeled_positive_indices()
    if positives.size < 2:
        return math.nan
    Z = encode_batch(state, dataset.features[positives])
    n = Z.shape[0]
    gram = Z @ Z.T
    return float((gram.sum() - np.trace(gram)) / (n * (n - 1)))


def train(dataset: Dataset, encoder: EncoderState, cfg: TrainConfig):
    """Both stages in order. Returns (stage-1 state, stage-2 state, combined log)."""
    stage1, log1 = train_stage1(dataset, encoder, cfg)
    stage2, log2 = train_stage2(dataset, stage1, cfg)
    log1.extend(log2)
    return stage1, stage2, log1
