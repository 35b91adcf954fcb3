"""
Exact t-SNE: O(n^2) affinities and gradients, gradient descent with gains,
momentum and early exaggeration.
"""

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from ucf import globals, log
from ucf import numcore as nc
from ucf.errors import ContractError, SizeError

ENTROPY_TOL = 1e-5
MAX_SEARCH_STEPS = 50
P_FLOOR = 1e-12
MIN_POINTS = 10


class TsneConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    perplexity: float = Field(30.0, gt=0)
    iterations: int = Field(1000, ge=1)
    learning_rate: float = Field(200.0, gt=0)
    early_exaggeration: float = Field(12.0, ge=1)
    exaggeration_iters: int = Field(250, ge=0)
    momentum_initial: float = Field(0.5, ge=0, lt=1)
    momentum_final: float = Field(0.8, ge=0, lt=1)
    momentum_switch: int = Field(250, ge=0)
    min_gain: float = Field(0.01, gt=0)
    init_std: float = Field(1e-4, gt=0)
    seed: int = Field(0, ge=0)


@dataclass
class TsneResult:
    coords: npt.NDArray[np.float64]
    kl_initial: float
    kl_final: float


def squared_distances(X) -> npt.NDArray[np.float64]:
    X = np.asarray(X, dtype=np.float64)
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def _entropy_and_row(d: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    # shift by the nearest neighbour so exp does not underflow for large beta
    shifted = d - d.min()
    p = np.exp(-shifted * beta)
    total = p.sum()
    H = np.log(total) + beta * np.sum(shifted * p) / total
    return float(H), p / total


def conditional_probabilities(X, perplexity: float) -> npt.NDArray[np.float64]:
    """Row-stochastic p(j|i) whose entropies match log(perplexity)."""
    D = squared_distances(X)
    n = D.shape[0]
    P = np.zeros((n, n))
    target = np.log(perplexity)
    for i in range(n):
        others = np.r_[0:i, i + 1 : n]
        d = D[i, others]
        beta, lo, hi = 1.0, -np.inf, np.inf
        H, row = _entropy_and_row(d, beta)
        for _ in range(MAX_SEARCH_STEPS):
            diff = H - target
            if abs(diff) <= ENTROPY_TOL:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if np.isinf(hi) else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if np.isinf(lo) else (beta + lo) / 2.0
            H, row = _entropy_and_row(d, beta)
        P[i, others] = row
    return P


def joint_probabilities(X, perplexity: float) -> npt.NDArray[np.float64]:
    """Symmetrised affinities summing to 1, floored at 1e-12 off the diagonal."""
    P = conditional_probabilities(X, perplexity)
    P = P + P.T
    P = np.maximum(P / P.sum(), P_FLOOR)
    np.fill_diagonal(P, 0.0)
    return P / P.sum()


def _student_t(Y) -> tuple[np.ndarray, np.ndarray]:
    W = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(W, 0.0)
    return W, W / W.sum()


def kl_divergence(P, Y) -> float:
    """KL(P || Q) with Q the Student-t affinities of Y, over off-diagonal pairs."""
    P = np.asarray(P, dtype=np.float64)
    _, Q = _student_t(Y)
    mask = ~np.eye(P.shape[0], dtype=bool)
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def kl_gradient(P, Y) -> npt.NDArray[np.float64]:
    """dKL/dy_i = 4 sum_j (p_ij - q_ij) w_ij (y_i - y_j)."""
    P = np.asarray(P, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    W, Q = _student_t(Y)
    M = (P - Q) * W
    return 4.0 * (M.sum(axis=1)[:, None] * Y - M @ Y)


def check_size(n: int, perplexity: float) -> None:
    if n > globals.tsne_max_exact:
        raise SizeError(
            f"exact t-SNE is limited to {globals.tsne_max_exact} points, got {n}; "
            "lower eval.tsne_max_points to subsample",
            n=n,
        )
    if n < MIN_POINTS:
        raise ContractError(f"t-SNE needs at least {MIN_POINTS} points, got {n}")
    if not perplexity < n / 3.0:
        raise ContractError(f"perplexity {perplexity} must be below n/3 = {n / 3.0:.3f}")


def tsne(X, cfg: TsneConfig = TsneConfig()) -> TsneResult:
    X = nc.as_matrix(X)
    n = X.shape[0]
    check_size(n, cfg.perplexity)
    P = joint_probabilities(X, cfg.perplexity)

    rng = nc.make_rng(cfg.seed)
    Y = rng.normal(0.0, cfg.init_std, size=(n, 2))
    kl_initial = kl_divergence(P, Y)
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)

    for it in tqdm(range(cfg.iterations), desc="t-SNE", leave=False, disable=not log.print_stdout):
        exaggeration = cfg.early_exaggeration if it < cfg.exaggeration_iters else 1.0
        momentum = cfg.momentum_initial if it < cfg.momentum_switch else cfg.momentum_final
        grad = kl_gradient(P * exaggeration, Y)
        same_sign = (grad > 0) == (update > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, cfg.min_gain)
        update = momentum * update - cfg.learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        if (it + 1) % 250 == 0:
            logger.debug("t-SNE iteration {}: KL {:.6f}", it + 1, kl_divergence(P, Y))

    kl_final = kl_divergence(P, Y)
    logger.info("t-SNE on {} points: KL {:.6f} -> {:.6f}", n, kl_initial, kl_final)
    return TsneResult(Y, kl_initial, kl_final)
