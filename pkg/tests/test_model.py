"""
Tests for the main/auxiliary MLP pair: initialisation, forward passes,
variance clamping, parameter isolation and the checkpoint container.
"""

import math

import numpy as np
import pytest

from adaprl.checkpoint import FORMAT_TAG, load_checkpoint, save_checkpoint
from adaprl.data import Column, ColumnKind, Schema, from_arrays
from adaprl.errors import DataError
from adaprl.gradcore import Graph
from adaprl.losses import LossSpec, PairMode, adaprl_loss
from adaprl.model import (
    LOG_VARIANCE_MAX,
    LOG_VARIANCE_MIN,
    MlpConfig,
    bind,
    forward_aux,
    forward_main,
    init,
    predict_aux,
    predict_main,
)


def _affine_data(n: int = 5):
    schema = Schema((Column("x", ColumnKind.NUMERIC), Column("y", ColumnKind.TARGET)))
    x = np.linspace(-1.0, 1.0, n)
    return from_arrays(schema, {"x": x, "y": 2.0 * x + 0.5})


def _affine_config():
    return MlpConfig(("x",), (), (), ("y",), hidden=())


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------


class TestInit:
    def test_deterministic(self, mixed_dataset):
        config = MlpConfig.for_dataset(mixed_dataset, hidden=(8, 4), embedding_dim=3)
        a, b = init(config, 42), init(config, 42)
        for net_a, net_b in ((a.main, b.main), (a.aux, b.aux)):
            assert net_a.params.keys() == net_b.params.keys()
            for name in net_a.params:
                np.testing.assert_array_equal(net_a.params[name], net_b.params[name])

    def test_seeds_differ(self, mixed_dataset):
        config = MlpConfig.for_dataset(mixed_dataset, hidden=(8,))
        a, b = init(config, 1), init(config, 2)
        assert not np.array_equal(a.main.params["layer1.w"], b.main.params["layer1.w"])

    def test_biases_zero_and_glorot_bounds(self, mixed_dataset):
        config = MlpConfig.for_dataset(mixed_dataset, hidden=(8, 4), embedding_dim=3)
        pair = init(config, 0)
        for name, values in pair.main.params.items():
            if name.endswith(".b"):
                assert not np.any(values)
        limit = math.sqrt(6.0 / (config.input_width + 8))
        assert np.all(np.abs(pair.main.params["layer0.w_num"]) <= limit)
        limit = math.sqrt(6.0 / (8 + 4))
        assert np.all(np.abs(pair.main.params["layer1.w"]) <= limit)

    def test_output_widths(self, mixed_dataset):
        config = MlpConfig.for_dataset(mixed_dataset, hidden=(6,))
        pair = init(config, 0)
        assert pair.main.params["layer1.w"].shape == (6, 2)
        assert pair.aux.params["layer1.w"].shape == (6, 4)
        assert pair.main.params["emb.0"].shape == (3, config.embedding_dim)

    def test_networks_share_no_storage(self, mixed_dataset):
        pair = init(MlpConfig.for_dataset(mixed_dataset, hidden=(4,)), 3)
        for name in pair.main.params:
            if name in pair.aux.params:
                assert not np.shares_memory(pair.main.params[name], pair.aux.params[name])

    def test_negative_seed_accepted(self):
        pair = init(_affine_config(), -1)
        assert pair.main.n_parameters == 2


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------


class TestForward:
    def test_zero_hidden_is_affine(self):
        ds = _affine_data()
        pair = init(_affine_config(), 0)
        network = pair.main.replace({"layer0.w_num": [[2.0]], "layer0.b": [0.5]})
        np.testing.assert_array_equal(predict_main(network, ds), ds.target_matrix())

    def test_constant_model(self):
        ds = _affine_data()
        network = init(_affine_config(), 0).main.replace({"layer0.w_num": [[0.0]], "layer0.b": [3.25]})
        np.testing.assert_array_equal(predict_main(network, ds), np.full((5, 1), 3.25))

    def test_empty_batch(self, mixed_dataset):
        config = MlpConfig.for_dataset(mixed_dataset, hidden=(4,))
        pair = init(config, 0)
        g = Graph()
        out = forward_main(bind(g, pair.main), mixed_dataset.batch(np.arange(0)))
        assert out.shape == (0, 2)

    def test_outputs_finite(self, mixed_dataset):
        pair = init(MlpConfig.for_dataset(mixed_dataset, hidden=(16, 8)), 7)
        pred = predict_main(pair.main, mixed_dataset)
        mu, sigma2 = predict_aux(pair.aux, mixed_dataset)
        assert pred.shape == mu.shape == sigma2.shape == (mixed_dataset.n_rows, 2)
        assert np.all(np.isfinite(pred)) and np.all(sigma2 > 0.0)

    @pytest.mark.parametrize(
        "raw, expected",
        [(0.0, 1.0), (-50.0, math.exp(LOG_VARIANCE_MIN)), (50.0, math.exp(LOG_VARIANCE_MAX))],
    )
    def test_variance_clamp(self, raw, expected):
        ds = _affine_data()
        aux = init(_affine_config(), 0).aux.replace({"layer0.w_num": [[0.0, 0.0]], "layer0.b": [1.0, raw]})
        mu, sigma2 = predict_aux(aux, ds)
        np.testing.assert_array_equal(mu, np.ones((5, 1)))
        np.testing.assert_allclose(sigma2, expected, rtol=1e-15)

    def test_chunked_prediction_matches(self, hetero_small):
        pair = init(MlpConfig.for_dataset(hetero_small, hidden=(8,)), 0)
        np.testing.assert_array_equal(
            predict_main(pair.main, hetero_small, chunk_rows=7), predict_main(pair.main, hetero_small)
        )

    def test_out_of_vocabulary_code(self, mixed_dataset):
        config = MlpConfig.for_dataset(mixed_dataset, hidden=(4,))
        small = MlpConfig(
            config.numeric_names, config.categorical_names, (2,), config.target_names, hidden=(4,)
        )
        pair = init(small, 0)
        codes = mixed_dataset.column("city")
        assert codes.max() == 2
        with pytest.raises(DataError, match=r"out-of-vocabulary code 2 in column 'city'") as exc:
            predict_main(pair.main, mixed_dataset)
        assert exc.value.column == "city"

    def test_layout_mismatch(self, mixed_dataset, hetero_small):
        pair = init(MlpConfig.for_dataset(mixed_dataset, hidden=(4,)), 0)
        with pytest.raises(DataError, match="feature columns do not match"):
            predict_main(pair.main, hetero_small)


# ---------------------------------------------------------------------------
# Parameter isolation
# ---------------------------------------------------------------------------


class TestIsolation:
    def test_main_loss_ignores_aux_and_nll_ignores_main(self, mixed_dataset):
        pair = init(MlpConfig.for_dataset(mixed_dataset, hidden=(8,)), 1)
        batch = mixed_dataset.batch()
        g = Graph()
        main, aux = bind(g, pair.main), bind(g, pair.aux)
        pred = forward_main(main, batch)
        mu, sigma2 = forward_aux(aux, batch)
        spec = LossSpec(alpha=0.5, mode=PairMode.MULTI_TASK)
        main_loss, aux_loss = adaprl_loss(pred, batch.targets, mu, sigma2, spec)

        grads = g.backward(main_loss)
        assert all(not np.any(v) for v in aux.gradients(grads).values())
        assert any(np.any(v) for v in main.gradients(grads).values())

        grads = g.backward(aux_loss)
        assert all(not np.any(v) for v in main.gradients(grads).values())
        assert any(np.any(v) for v in aux.gradients(grads).values())


# ---------------------------------------------------------------------------
# Checkpoint
# ---------------------------------------------------------------------------


class TestCheckpoint:
    def test_round_trip(self, tmp_path, mixed_dataset):
        pair = init(MlpConfig.for_dataset(mixed_dataset, hidden=(5, 3), embedding_dim=2), 11)
        path = tmp_path / "model.bin"
        save_checkpoint(path, pair, extras={"note": "x"})
        loaded, extras = load_checkpoint(path)
        assert extras == {"note": "x"}
        assert loaded.config == pair.config
        for name, values in pair.aux.params.items():
            np.testing.assert_array_equal(loaded.aux.params[name], values)
        np.testing.assert_array_equal(predict_main(loaded.main, mixed_dataset), predict_main(pair.main, mixed_dataset))

    def test_byte_stable(self, tmp_path):
        pair = init(_affine_config(), 4)
        save_checkpoint(tmp_path / "a.bin", pair, extras={"k": [1, 2]})
        save_checkpoint(tmp_path / "b.bin", pair, extras={"k": [1, 2]})
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_header_is_json_with_tag(self, tmp_path):
        path = tmp_path / "m.bin"
        save_checkpoint(path, init(_affine_config(), 0))
        raw = path.read_bytes()
        length = int.from_bytes(raw[:8], "little")
        assert FORMAT_TAG.encode() in raw[8 : 8 + length]
        # main: w (1x1) + b (1); aux: w (1x2) + b (2)
        assert len(raw) == 8 + length + 8 * 6

    @pytest.mark.parametrize("content", [b"", b"\x05\x00\x00\x00\x00\x00\x00\x00{}", b"garbage-garbage"])
    def test_rejects_non_checkpoints(self, tmp_path, content):
        path = tmp_path / "bad.bin"
        path.write_bytes(content)
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="cannot read"):
            load_checkpoint(tmp_path / "absent.bin")
