import math

import numpy as np
import pytest
from scipy.special import expit

from ucf import encoder as enc
from ucf import numcore as nc
from ucf.conpu import LossVariant, build_batch, conpu_loss
from ucf.encoder import EncoderConfig, EncoderState
from ucf.errors import ConfigError, DataIntegrityError, ShapeError
from ucf.utils import validate_config


def zero_state(config: EncoderConfig) -> EncoderState:
    state = enc.init_state(config, seed=0)
    return EncoderState(config, {k: np.zeros_like(v) for k, v in state.params.items()})


class TestInit:
    def test_same_seed_identical(self, tiny_config):
        assert enc.init_state(tiny_config, 3).equals(enc.init_state(tiny_config, 3))

    def test_different_seed_differs(self, tiny_config):
        assert not enc.init_state(tiny_config, 3).equals(enc.init_state(tiny_config, 4))

    def test_zero_hidden_is_config_error(self):
        with pytest.raises(ConfigError):
            validate_config(EncoderConfig, {"lstm_hidden": 0})

    def test_heads_must_divide_hidden(self):
        with pytest.raises(ConfigError):
            validate_config(EncoderConfig, {"lstm_hidden": 6, "attention_heads": 4})

    def test_glorot_bounds_and_forget_bias(self, tiny_config):
        state = enc.init_state(tiny_config, 1)
        for name, (rows, cols) in enc.param_shapes(tiny_config).items():
            value = state.params[name]
            assert value.shape == (rows, cols)
            if name == "lstm_bf":
                assert np.all(value == 1.0)
            elif name.endswith("_b") or name.startswith("lstm_b"):
                assert np.all(value == 0.0)
            else:
                assert np.abs(value).max() <= math.sqrt(6.0 / (rows + cols))


def reference_lstm(state: EncoderState, tokens: np.ndarray) -> np.ndarray:
    """Step-by-step scalar recurrence."""
    p = state.params
    hidden = p["lstm_ui"].shape[0]
    h = [0.0] * hidden
    c = [0.0] * hidden
    out = []
    for x in tokens:
        gates = {}
        for g in enc.GATES:
            vals = []
            for j in range(hidden):
                s = p[f"lstm_b{g}"][0, j]
                s += sum(x[k] * p[f"lstm_w{g}"][k, j] for k in range(len(x)))
                s += sum(h[k] * p[f"lstm_u{g}"][k, j] for k in range(hidden))
                vals.append(s)
            gates[g] = vals
        c = [
            expit(gates["f"][j]) * c[j] + expit(gates["i"][j]) * math.tanh(gates["c"][j])
            for j in range(hidden)
        ]
        h = [expit(gates["o"][j]) * math.tanh(c[j]) for j in range(hidden)]
        out.append(list(h))
    return np.array(out)


class TestLstm:
    def test_zero_weights_zero_states(self, tiny_config):
        state = zero_state(tiny_config)
        tokens = nc.make_rng(0).normal(size=(5, tiny_config.token_proj_dim))
        assert np.all(enc.lstm_forward(state, tokens) == 0.0)

    def test_single_step_base_case(self, tiny_state, tiny_config):
        x = nc.make_rng(1).normal(size=(1, tiny_config.token_proj_dim))
        p = tiny_state.params

        def gate(g):
            return x @ p[f"lstm_w{g}"] + p[f"lstm_b{g}"]

        c1 = expit(gate("i")) * np.tanh(gate("c"))
        h1 = expit(gate("o")) * np.tanh(c1)
        np.testing.assert_allclose(enc.lstm_forward(tiny_state, x), h1, atol=1e-15)

    def test_three_steps_match_scalar_reference(self, tiny_state, tiny_config):
        tokens = nc.make_rng(2).normal(size=(3, tiny_config.token_proj_dim))
        np.testing.assert_allclose(
            enc.lstm_forward(tiny_state, tokens), reference_lstm(tiny_state, tokens), atol=1e-12
        )


class TestSelfAttention:
    def test_single_step_is_value_row(self, tiny_state, tiny_config):
        H = nc.make_rng(3).normal(size=(1, tiny_config.lstm_hidden))
        V = H @ tiny_state.params["attn_v0"]
        np.testing.assert_allclose(enc.self_attention(tiny_state, H), V, atol=1e-15)

    def test_identical_rows_uniform_weights(self, tiny_state, tiny_config):
        row = nc.make_rng(4).normal(size=(1, tiny_config.lstm_hidden))
        H = np.repeat(row, 3, axis=0)
        V = H @ tiny_state.params["attn_v0"]
        # uniform weights average identical value rows
        np.testing.assert_allclose(enc.self_attention(tiny_state, H), V, atol=1e-14)

    def test_brute_force_weighted_sum(self, tiny_state, tiny_config):
        H = nc.make_rng(5).normal(size=(3, tiny_config.lstm_hidden))
        p = tiny_state.params
        Q, K, V = H @ p["attn_q0"], H @ p["attn_k0"], H @ p["attn_v0"]
        expected = np.zeros_like(V)
        for t in range(3):
            logits = [float(Q[t] @ K[s]) / math.sqrt(tiny_config.key_dim) for s in range(3)]
            weights = np.exp(np.array(logits) - max(logits))
            weights /= weights.sum()
            assert weights.sum() == pytest.approx(1.0, abs=1e-12)
            expected[t] = sum(weights[s] * V[s] for s in range(3))
        np.testing.assert_allclose(enc.self_attention(tiny_state, H), expected, atol=1e-12)


class TestEncode:
    def test_unit_norm(self, tiny_state):
        for row in nc.make_rng(6).normal(size=(10, 4)):
            assert np.linalg.norm(enc.encode(tiny_state, row)) == pytest.approx(1.0, abs=1e-9)

    def test_identical_samples_identical_embeddings(self, tiny_state):
        x = nc.make_rng(7).normal(size=4)
        Z = enc.encode_batch(tiny_state, np.stack([x, x]))
        assert np.array_equal(Z[0], Z[1])
        assert np.array_equal(enc.encode(tiny_state, x), enc.encode(tiny_state, x))

    def test_composition_of_public_steps(self, tiny_config):
        state = enc.init_state(tiny_config, 0)
        x = np.array([0.1, 0.9, 0.4, 0.7])
        tokens = enc.tokenize(state, x)
        context = enc.self_attention(state, enc.lstm_forward(state, tokens))
        pooled = context.mean(axis=0, keepdims=True)
        z = nc.l2_normalize_rows_array(pooled @ state.params["out_w"] + state.params["out_b"])[0]
        np.testing.assert_allclose(enc.encode(state, x), z, atol=1e-12)

    def test_batch_matches_single(self, tiny_state):
        X = nc.make_rng(8).normal(size=(5, 4))
        Z = enc.encode_batch(tiny_state, X)
        for i in range(5):
            np.testing.assert_allclose(Z[i], enc.encode(tiny_state, X[i]), atol=1e-12)

    def test_feature_count_mismatch(self, tiny_state):
        with pytest.raises(ShapeError):
            enc.encode(tiny_state, np.zeros(5))

    def test_permutation_sensitive(self, tiny_state):
        x = np.array([0.1, 0.9, 0.4, 0.7])
        z = enc.encode(tiny_state, x)
        assert any(
            not np.allclose(enc.encode(tiny_state, x[list(perm)]), z)
            for perm in ([1, 0, 2, 3], [3, 2, 1, 0], [0, 2, 1, 3])
        )


class TestHeadProbs:
    def test_zero_head_is_uniform(self, tiny_state, tiny_config):
        state = tiny_state.copy()
        state.params["head_w"][:] = 0.0
        state.params["head_b"][:] = 0.0
        z = enc.encode(state, np.ones(4))
        np.testing.assert_allclose(enc.head_probs(state, z), [0.5, 0.5])

    def test_simplex(self, tiny_state):
        Z = enc.encode_batch(tiny_state, nc.make_rng(9).normal(size=(20, 4)))
        P = enc.head_probs_batch(tiny_state, Z)
        assert np.all(P >= 0)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)

    def test_closed_form_logits(self, tiny_state, tiny_config):
        state = tiny_state.copy()
        state.params["head_w"][:] = 0.0
        state.params["head_b"][:] = [[0.0, math.log(3.0)]]
        np.testing.assert_allclose(enc.head_probs(state, np.ones(tiny_config.embed_dim)), [0.25, 0.75])


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tiny_state, tmp_path):
        path = tmp_path / "enc.ckpt"
        enc.save_state(tiny_state, path)
        loaded = enc.load_state(path)
        assert loaded.equals(tiny_state)
        X = nc.make_rng(10).normal(size=(6, 4))
        assert np.array_equal(enc.encode_batch(loaded, X), enc.encode_batch(tiny_state, X))
        assert path.read_bytes()[:4] == b"UCF1"

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\0" * 40)
        with pytest.raises(DataIntegrityError):
            enc.load_state(path)

    def test_truncated(self, tiny_state, tmp_path):
        path = tmp_path / "enc.ckpt"
        enc.save_state(tiny_state, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataIntegrityError):
            enc.load_state(path)


def weighted_loss_gradient_error(config: EncoderConfig, make_dataset, batch_seed: int, max_entries: int) -> float:
    """Encoder parameters through the weighted contrastive loss on one 4-sample batch."""
    rng = nc.make_rng(batch_seed)
    features = rng.uniform(size=(4, config.input_dim))
    dataset = make_dataset([1, 0, 1, 0], [1, 1, 1, -1], features=features)
    state = enc.init_state(config, 100 + batch_seed)
    S, S_a = [1, 3], [0, 2]
    X = dataset.features[S + S_a]
    # head probabilities enter the loss as constants
    probs = enc.head_probs_batch(state, enc.encode_batch(state, X))
    frozen = build_batch(dataset, S, S_a, enc.encode_batch(state, X), probs)
    trainable = state.encoder_param_names

    def loss_fn(params):
        full = {**state.constants(), **params}
        Z, _ = enc.forward(full, config, X)
        return conpu_loss(frozen, 0.5, LossVariant.EQ4_WEIGHTED, z=Z)

    params = {k: state.params[k] for k in trainable}
    return nc.finite_diff_check(loss_fn, params, eps=1e-5, max_entries=max_entries, seed=batch_seed)


@pytest.mark.parametrize("batch_seed", range(20))
def test_full_encoder_and_weighted_loss_gradients(tiny_config, make_dataset, batch_seed):
    assert weighted_loss_gradient_error(tiny_config, make_dataset, batch_seed, max_entries=8) < 1e-4


def test_default_shape_gradients(make_dataset):
    config = EncoderConfig()
    assert config.input_dim == 10
    assert weighted_loss_gradient_error(config, make_dataset, batch_seed=3, max_entries=6) < 1e-4
