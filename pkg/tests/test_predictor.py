import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dynadrag.core import FlowField, Point, PointPair
from dynadrag.predictor import (
    ConstantStepPredictor,
    EncodingError,
    FlowPredictor,
    ModelConfig,
    PredictorTrainer,
    TrainingBatch,
    advance_handles,
    encode_input,
    load_checkpoint,
    predict_flow,
    save_checkpoint,
)


def make_pairs(*coords):
    return [PointPair(Point(*h), Point(*t)) for h, t in coords]


class TestEncodeInput:
    def test_delta_is_handle_minus_target(self, image64):
        img = np.zeros((128, 128, 3), dtype=np.uint8)
        pairs = make_pairs(((100, 120), (110, 100)))
        enc = encode_input(img, pairs)
        assert enc.delta[0, 120, 100] == -10
        assert enc.delta[1, 120, 100] == 20

    def test_zero_displacement_keeps_heatmap(self, image64):
        pairs = make_pairs(((30, 30), (30, 30)))
        enc = encode_input(image64, pairs)
        assert enc.delta[0, 30, 30] == 0 and enc.delta[1, 30, 30] == 0
        assert enc.heatmap[30, 30] == 1

    def test_no_valid_pairs_zero_channels(self, image64):
        pairs = make_pairs(((10, 10), (20, 20)))
        pairs[0].valid = False
        enc = encode_input(image64, pairs)
        assert not enc.data[3:].any()

    def test_rgb_normalized(self):
        img = np.full((16, 16, 3), 255, dtype=np.uint8)
        enc = encode_input(img, make_pairs(((4, 4), (8, 8))))
        assert enc.rgb.max() == pytest.approx(1.0)

    def test_heatmap_is_neighborhood_union(self, image64):
        pairs = make_pairs(((10, 10), (20, 20)), ((40, 40), (50, 50)))
        enc = encode_input(image64, pairs, heatmap_radius=4)
        assert int(enc.heatmap.sum()) == 2 * 81
        assert set(np.unique(enc.heatmap)) <= {0.0, 1.0}

    def test_collision_warns_last_writer_wins(self, image64, caplog):
        pairs = make_pairs(((10.2, 10.2), (0, 0)), ((9.8, 9.8), (5, 5)))
        with caplog.at_level("WARNING"):
            enc = encode_input(image64, pairs)
        assert "same pixel" in caplog.text
        assert enc.delta[0, 10, 10] == pytest.approx(9.8 - 5)

    def test_out_of_bounds_handle_rejected(self, image64):
        with pytest.raises(EncodingError):
            encode_input(image64, make_pairs(((90, 10), (1, 1))))

    @given(hx=st.floats(5, 58), hy=st.floats(5, 58),
           tx=st.floats(0, 63), ty=st.floats(0, 63))
    @settings(max_examples=25, deadline=None)
    def test_delta_readback_recovers_displacement(self, hx, hy, tx, ty):
        img = np.zeros((64, 64, 3), dtype=np.uint8)
        enc = encode_input(img, make_pairs(((hx, hy), (tx, ty))))
        px, py = Point(hx, hy).rounded()
        assert enc.delta[0, py, px] == pytest.approx(hx - tx, abs=1e-5)
        assert enc.delta[1, py, px] == pytest.approx(hy - ty, abs=1e-5)


class TestFlowPredictorModel:
    def test_output_shape_matches_input(self, image64):
        model = FlowPredictor(ModelConfig.small())
        enc = encode_input(image64, make_pairs(((10, 10), (20, 20))))
        flow = predict_flow(model, enc)
        assert flow.data.shape == (2, 64, 64)

    def test_eval_deterministic(self, image64):
        model = FlowPredictor(ModelConfig.small())
        enc = encode_input(image64, make_pairs(((10, 10), (20, 20))))
        f1 = predict_flow(model, enc)
        f2 = predict_flow(model, enc)
        assert np.array_equal(f1.data, f2.data)

    def test_indivisible_size_instructs_padding(self):
        model = FlowPredictor(ModelConfig.small())
        img = np.zeros((31, 31, 3), dtype=np.uint8)
        enc = encode_input(img, make_pairs(((5, 5), (6, 6))))
        with pytest.raises(ValueError, match="pad"):
            predict_flow(model, enc)

    def test_default_config_builds(self):
        model = FlowPredictor()
        assert model.total_stride == 4
        x = torch.zeros(1, 6, 16, 16)
        assert model(x).shape == (1, 2, 16, 16)

    def test_output_shape_at_512(self, rng):
        model = FlowPredictor(ModelConfig.small())
        img = (rng.random((512, 512, 3)) * 255).astype(np.uint8)
        enc = encode_input(img, make_pairs(((100, 120), (110, 100))))
        flow = predict_flow(model, enc)
        assert flow.data.shape == (2, 512, 512)

    def test_checkpoint_round_trip(self, tmp_path, image64):
        model = FlowPredictor(ModelConfig.small())
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, meta={"steps": 0})
        loaded = load_checkpoint(path)
        enc = encode_input(image64, make_pairs(((10, 10), (20, 20))))
        assert np.array_equal(predict_flow(model, enc).data,
                              predict_flow(loaded, enc).data)

    def test_checkpoint_rejects_channel_mismatch(self, tmp_path):
        model = FlowPredictor(ModelConfig(in_channels=4, hid_spatial=8,
                                          hid_translator=8, enc_layers=2,
                                          translator_layers=1, incep_kernels=(3,),
                                          groups=2))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        with pytest.raises(ValueError, match="input channels"):
            load_checkpoint(path)


class TestTrainStep:
    @pytest.fixture
    def setup(self, image64):
        model = FlowPredictor(ModelConfig.small())
        enc = encode_input(image64, make_pairs(((10, 10), (20, 20))))
        return model, enc

    def test_perfect_prediction_zero_loss_and_no_update(self, setup):
        model, enc = setup
        model.train()
        with torch.no_grad():
            target = model(torch.from_numpy(enc.data).unsqueeze(0))[0]
        batch = TrainingBatch([enc], [FlowField(target.numpy())])
        trainer = PredictorTrainer(model, optimizer="sgd", learning_rate=0.1)
        before = {k: v.clone() for k, v in model.state_dict().items()}
        loss = trainer.train_step(batch)
        assert loss == 0.0
        after = model.state_dict()
        assert all(torch.equal(before[k], after[k]) for k in before)

    def test_loss_nonnegative(self, setup, rng):
        model, enc = setup
        batch = TrainingBatch([enc], [FlowField(rng.normal(size=(2, 64, 64)))])
        trainer = PredictorTrainer(model)
        assert trainer.train_step(batch) >= 0.0

    def test_training_reduces_loss_on_constant_flow(self, setup):
        model, enc = setup
        target = FlowField.constant(64, 64, 2.0, -1.0)
        batch = TrainingBatch([enc], [target])
        trainer = PredictorTrainer(model, learning_rate=1e-2, seed=7)
        first = trainer.train_step(batch)
        for _ in range(30):
            last = trainer.train_step(batch)
        assert last < 0.1 * first

    def test_nonfinite_target_rejected_at_batch(self, setup):
        _, enc = setup
        bad = np.zeros((2, 64, 64), dtype=np.float32)
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            TrainingBatch([enc], [FlowField(bad)])

    def test_nonfinite_loss_diagnostics(self, setup):
        model, enc = setup
        with torch.no_grad():
            for p in model.parameters():
                p.fill_(float("nan"))
        batch = TrainingBatch([enc], [FlowField.zeros(64, 64)])
        trainer = PredictorTrainer(model)
        with pytest.raises(RuntimeError, match="batch sample 0"):
            trainer.train_step(batch)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            TrainingBatch([], [])


class TestAdvanceHandles:
    def test_componentwise_addition(self):
        flow = FlowField.zeros(64, 64)
        flow.data[0, 10, 10], flow.data[1, 10, 10] = 3.0, -2.0
        pairs = make_pairs(((10, 10), (40, 40)))
        out = advance_handles(pairs, flow)
        assert out[0].handle == Point(13, 8)
        assert out[0].previous == Point(10, 10)

    def test_zero_flow_identity(self):
        pairs = make_pairs(((10, 10), (40, 40)), ((5, 6), (7, 8)))
        out = advance_handles(pairs, FlowField.zeros(64, 64))
        assert all(o.handle == p.handle for o, p in zip(out, pairs))
        assert all(len(o.history) == 2 for o in out)

    def test_clamped_to_bounds(self):
        flow = FlowField.constant(512, 512, 8.0, 0.0)
        out = advance_handles(make_pairs(((510, 5), (511, 5))), flow)
        assert out[0].handle == Point(511, 5)

    def test_invalid_pairs_untouched(self):
        pairs = make_pairs(((10, 10), (40, 40)))
        pairs[0].valid = False
        out = advance_handles(pairs, FlowField.constant(64, 64, 5.0, 5.0))
        assert out[0].handle == Point(10, 10)
        assert len(out[0].history) == 1

    def test_inputs_not_mutated(self):
        pairs = make_pairs(((10, 10), (40, 40)))
        advance_handles(pairs, FlowField.constant(64, 64, 1.0, 1.0))
        assert pairs[0].handle == Point(10, 10)
        assert len(pairs[0].history) == 1

    def test_fractional_position_bilinear(self):
        flow = FlowField.zeros(8, 8)
        flow.data[0, 2, 2], flow.data[0, 2, 3] = 1.0, 3.0
        out = advance_handles(make_pairs(((2.5, 2.0), (7, 7))), flow)
        assert out[0].handle.x == pytest.approx(2.5 + 2.0)


class TestConstantStepPredictor:
    def test_moves_toward_target_at_fixed_speed(self, image64):
        pairs = make_pairs(((10, 10), (50, 10)))
        pred = ConstantStepPredictor(step=4.0)
        flow = pred.predict(encode_input(image64, pairs))
        dx, dy = flow.sample(Point(10, 10))
        assert (dx, dy) == pytest.approx((4.0, 0.0))

    def test_caps_step_at_remaining_distance(self, image64):
        pairs = make_pairs(((10, 10), (12, 10)))
        flow = ConstantStepPredictor(step=4.0).predict(encode_input(image64, pairs))
        dx, dy = flow.sample(Point(10, 10))
        assert (dx, dy) == pytest.approx((2.0, 0.0))

    def test_no_handles_gives_zero_flow(self, image64):
        flow = ConstantStepPredictor().predict(encode_input(image64, []))
        assert not flow.data.any()
