"""
Self-attention LSTM session encoder and its two-class head.

A sample's d features are read as a length-d sequence of scalar tokens. Each
token is projected to `token_proj_dim` and offset by a learned positional row,
run through a single-layer LSTM, re-weighted by scaled dot-product
self-attention, mean-pooled over the steps, projected to `embed_dim` and
L2-normalised. The head is a linear map of the embedding followed by a softmax;
column 1 is the positive class.

Batches are encoded in one tape: hidden states of all samples are stacked
step-major into a (T*B) x h matrix and attention is restricted to rows of the
same sample by an additive block mask.
"""

from __future__ import annotations

import math
import struct
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ucf import globals
from ucf import numcore as nc
from ucf.errors import ConfigError, DataIntegrityError, ShapeError
from ucf.numcore import Matrix, Node
from ucf.utils import atomic_write_bytes, validate_config

CHECKPOINT_MAGIC = b"UCF1"
MASK_FILL = -1e30
GATES = ("i", "f", "c", "o")


class EncoderConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    input_dim: int = Field(10, ge=1)
    seq_strategy: Literal["feature-as-steps"] = "feature-as-steps"
    token_proj_dim: int = Field(8, ge=1)
    lstm_hidden: int = Field(64, ge=1)
    attention_heads: int = Field(1, ge=1)
    embed_dim: int = Field(32, ge=1)
    # binary head only
    head_classes: int = Field(2, ge=2, le=2)

    @model_validator(mode="after")
    def _heads_divide_hidden(self):
        if self.lstm_hidden % self.attention_heads != 0:
            raise ValueError(
                f"lstm_hidden={self.lstm_hidden} is not divisible by attention_heads={self.attention_heads}"
            )
        return self

    @property
    def key_dim(self) -> int:
        return self.lstm_hidden // self.attention_heads


def param_shapes(config: EncoderConfig) -> dict[str, tuple[int, int]]:
    """Every parameter matrix in checkpoint order."""
    T, p, h = config.input_dim, config.token_proj_dim, config.lstm_hidden
    shapes = {"tok_w": (1, p), "tok_b": (1, p), "pos": (T, p)}
    for g in GATES:
        shapes[f"lstm_w{g}"] = (p, h)
        shapes[f"lstm_u{g}"] = (h, h)
        shapes[f"lstm_b{g}"] = (1, h)
    for j in range(config.attention_heads):
        for kind in ("q", "k", "v"):
            shapes[f"attn_{kind}{j}"] = (h, config.key_dim)
    shapes["out_w"] = (h, config.embed_dim)
    shapes["out_b"] = (1, config.embed_dim)
    shapes["head_w"] = (config.embed_dim, config.head_classes)
    shapes["head_b"] = (1, config.head_classes)
    return shapes


HEAD_PARAMS = ("head_w", "head_b")


def _is_bias(name: str) -> bool:
    return name.endswith("_b") or name.startswith("lstm_b")


@dataclass
class EncoderState:
    config: EncoderConfig
    params: dict[str, Matrix]

    def copy(self) -> EncoderState:
        return EncoderState(self.config, {k: v.copy() for k, v in self.params.items()})

    @property
    def encoder_param_names(self) -> list[str]:
        return [k for k in self.params if k not in HEAD_PARAMS]

    def constants(self) -> dict[str, Node]:
        return {k: Node.constant(v) for k, v in self.params.items()}

    def leaves(self, trainable: list[str] | None = None) -> dict[str, Node]:
        """Parameter nodes, with gradients tracked for the `trainable` names (default: all)."""
        names = set(self.params if trainable is None else trainable)
        return {
            k: Node.leaf(v, k) if k in names else Node.constant(v) for k, v in self.params.items()
        }

    def equals(self, other: EncoderState) -> bool:
        """Bit-exact comparison of config and every parameter."""
        if self.config != other.config or self.params.keys() != other.params.keys():
            return False
        return all(np.array_equal(v, other.params[k]) for k, v in self.params.items())


def init_state(config: EncoderConfig, seed: int) -> EncoderState:
    """
    Glorot-uniform weights (a = sqrt(6 / (fan_in + fan_out)) per matrix), zero
    biases and a forget-gate bias of 1.
    """
    config = validate_config(EncoderConfig, config.model_dump())
    rng = nc.make_rng(seed)
    params: dict[str, Matrix] = {}
    for name, (rows, cols) in param_shapes(config).items():
        if _is_bias(name):
            params[name] = np.full((rows, cols), 1.0 if name == "lstm_bf" else 0.0)
        else:
            a = math.sqrt(6.0 / (rows + cols))
            params[name] = rng.uniform(-a, a, size=(rows, cols))
    logger.debug(
        "initialised encoder with {} parameters", sum(v.size for v in params.values())
    )
    return EncoderState(config, params)


def _check_features(config: EncoderConfig, X: Matrix) -> Matrix:
    X = nc.as_matrix(X)
    if X.shape[1] != config.input_dim:
        raise ShapeError(f"expected {config.input_dim} features per sample, got {X.shape[1]}")
    return X


def token_nodes(params: Mapping[str, Node], config: EncoderConfig, X: Matrix) -> list[Node]:
    """One B x p token matrix per feature step."""
    T = config.input_dim
    tokens = []
    for t in range(T):
        onehot = np.zeros((1, T))
        onehot[0, t] = 1.0
        x_t = Node.constant(X[:, t : t + 1])
        proj = nc.add(nc.matmul(x_t, params["tok_w"]), params["tok_b"])
        tokens.append(nc.add(proj, nc.matmul(onehot, params["pos"])))
    return tokens


def lstm_nodes(params: Mapping[str, Node], tokens: list[Node]) -> list[Node]:
    batch = tokens[0].shape[0]
    hidden = params["lstm_ui"].shape[0]
    h = Node.constant(np.zeros((batch, hidden)))
    c = Node.constant(np.zeros((batch, hidden)))

    def pre(g: str, x: Node, h_prev: Node) -> Node:
        return nc.add(
            nc.add(nc.matmul(x, params[f"lstm_w{g}"]), nc.matmul(h_prev, params[f"lstm_u{g}"])),
            params[f"lstm_b{g}"],
        )

    states = []
    for x in tokens:
        i = nc.sigmoid(pre("i", x, h))
        f = nc.sigmoid(pre("f", x, h))
        cand = nc.tanh(pre("c", x, h))
        o = nc.sigmoid(pre("o", x, h))
        c = nc.add(nc.hadamard(f, c), nc.hadamard(i, cand))
        h = nc.hadamard(o, nc.tanh(c))
        states.append(h)
    return states


def attention_nodes(
    params: Mapping[str, Node], config: EncoderConfig, H: Node, mask: Matrix | None = None
) -> Node:
    inv_sqrt = 1.0 / math.sqrt(config.key_dim)
    outputs = []
    for j in range(config.attention_heads):
        Q = nc.matmul(H, params[f"attn_q{j}"])
        K = nc.matmul(H, params[f"attn_k{j}"])
        V = nc.matmul(H, params[f"attn_v{j}"])
        scores = nc.scale(nc.matmul(Q, nc.transpose(K)), inv_sqrt)
        if mask is not None:
            scores = nc.add(scores, mask)
        outputs.append(nc.matmul(nc.softmax_rows(scores), V))
    return outputs[0] if len(outputs) == 1 else nc.concat_cols(outputs)


def _block_mask(batch: int, steps: int) -> Matrix:
    sample = np.arange(batch * steps) % batch
    return np.where(sample[:, None] == sample[None, :], 0.0, MASK_FILL)


def _pool_matrix(batch: int, steps: int) -> Matrix:
    pool = np.zeros((batch, batch * steps))
    for t in range(steps):
        pool[np.arange(batch), t * batch + np.arange(batch)] = 1.0 / steps
    return pool


def forward(params: Mapping[str, Node], config: EncoderConfig, X: Matrix) -> tuple[Node, Node]:
    """
    Encode a batch on the tape.

    Returns:
        (Z, logits): B x embed_dim unit-norm embeddings and B x 2 head logits.
    """
    X = _check_features(config, X)
    batch, steps = X.shape[0], config.input_dim
    hidden = lstm_nodes(params, token_nodes(params, config, X))
    H = hidden[0] if steps == 1 else nc.concat_rows(hidden)
    mask = None if batch == 1 else _block_mask(batch, steps)
    context = attention_nodes(params, config, H, mask)
    pooled = nc.matmul(_pool_matrix(batch, steps), context)
    Z = nc.l2_normalize_rows(nc.add(nc.matmul(pooled, params["out_w"]), params["out_b"]))
    logits = nc.add(nc.matmul(Z, params["head_w"]), params["head_b"])
    return Z, logits


def tokenize(state: EncoderState, features) -> Matrix:
    X = _check_features(state.config, features)
    if X.shape[0] != 1:
        raise ShapeError(f"tokenize takes one sample, got {X.shape[0]}")
    return nc.concat_rows(token_nodes(state.constants(), state.config, X)).value


def lstm_forward(state: EncoderState, tokens) -> Matrix:
    """All T hidden states for a T x token_proj_dim token sequence."""
    tokens = nc.as_matrix(tokens)
    if tokens.shape[0] < 1:
        raise ShapeError("lstm_forward needs a sequence of length >= 1")
    rows = [Node.constant(tokens[t : t + 1]) for t in range(tokens.shape[0])]
    return nc.concat_rows(lstm_nodes(state.constants(), rows)).value


def self_attention(state: EncoderState, H) -> Matrix:
    return attention_nodes(state.constants(), state.config, Node.constant(H)).value


def encode_batch(state: EncoderState, X) -> Matrix:
    X = _check_features(state.config, X)
    params = state.constants()
    chunks = []
    for start in range(0, X.shape[0], globals.encode_chunk):
        Z, _ = forward(params, state.config, X[start : start + globals.encode_chunk])
        chunks.append(Z.value)
    if not chunks:
        return np.zeros((0, state.config.embed_dim))
    return np.concatenate(chunks, axis=0)


def encode(state: EncoderState, features) -> Matrix:
    """Unit-norm embedding (1-D, embed_dim) of a single sample."""
    X = _check_features(state.config, features)
    if X.shape[0] != 1:
        raise ShapeError(f"encode takes one sample, got {X.shape[0]}; use encode_batch")
    return encode_batch(state, X)[0]


def head_probs_batch(state: EncoderState, Z) -> Matrix:
    logits = nc.add(nc.matmul(nc.as_matrix(Z), state.params["head_w"]), state.params["head_b"])
    return nc.softmax_rows(logits).value


def head_probs(state: EncoderState, z) -> Matrix:
    """Class probabilities (1-D, length 2) for one embedding; index 1 is positive."""
    return head_probs_batch(state, z)[0]


def save_state(state: EncoderState, path: str | Path) -> None:
    """
    Flat little-endian container: magic, 32-bit config dims, then each
    parameter as (rows, cols, row-major float64).
    """
    cfg = state.config
    header = struct.pack(
        "<7I",
        cfg.input_dim,
        cfg.token_proj_dim,
        cfg.lstm_hidden,
        cfg.attention_heads,
        cfg.embed_dim,
        cfg.head_classes,
        len(state.params),
    )
    blobs = [CHECKPOINT_MAGIC, header]
    for name, value in state.params.items():
        rows, cols = value.shape
        blobs.append(struct.pack("<II", rows, cols))
        blobs.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(blobs))


def load_state(path: str | Path) -> EncoderState:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise DataIntegrityError(f"{path}: not an encoder checkpoint (bad magic)", path=str(path))
    offset = 4
    try:
        dims = struct.unpack_from("<7I", data, offset)
        offset += struct.calcsize("<7I")
        config = validate_config(
            EncoderConfig,
            {
                "input_dim": dims[0],
                "token_proj_dim": dims[1],
                "lstm_hidden": dims[2],
                "attention_heads": dims[3],
                "embed_dim": dims[4],
                "head_classes": dims[5],
            },
        )
        expected = param_shapes(config)
        if dims[6] != len(expected):
            raise DataIntegrityError(f"{path}: expected {len(expected)} matrices, found {dims[6]}")
        params: dict[str, Matrix] = {}
        for name, shape in expected.items():
            rows, cols = struct.unpack_from("<II", data, offset)
            offset += 8
            if (rows, cols) != shape:
                raise DataIntegrityError(f"{path}: {name} has shape {(rows, cols)}, expected {shape}")
            count = rows * cols
            params[name] = (
                np.frombuffer(data, dtype="<f8", count=count, offset=offset)
                .astype(np.float64)
                .reshape(rows, cols)
            )
            offset += 8 * count
    except (struct.error, ValueError, ConfigError) as e:
        raise DataIntegrityError(f"{path}: truncated or corrupt checkpoint ({e})", path=str(path)) from e
    if offset != len(data):
        raise DataIntegrityError(f"{path}: {len(data) - offset} trailing bytes", path=str(path))
    return EncoderState(config, params)
