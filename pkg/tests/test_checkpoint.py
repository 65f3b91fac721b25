import json

import numpy as np
import pytest

from conftest import make_model
from losxfer.checkpoint import (Checkpoint, load_checkpoint, predictions_hash,
                                save_checkpoint)
from losxfer.errors import ValidationError
from losxfer.model import forward_many_to_one
from losxfer.training import AdamState


def _model_with_state(seed=80):
    model = make_model(n=5, hidden=3, num_layers=2, dropout=0.2, seed=seed)
    params = model.param_dict()
    state = AdamState.for_params(params)
    rng = np.random.default_rng(seed)
    for k in state.m:
        state.m[k] = rng.normal(size=state.m[k].shape)
        state.v[k] = rng.uniform(0, 1, size=state.v[k].shape)
    state.t = 123
    return model, state


class TestRoundTrip:
    def test_bit_exact_tensors(self, tmp_path):
        model, state = _model_with_state()
        path = tmp_path / "model.json"
        save_checkpoint(path, model, optimizer_state=state,
                        provenance={"seed": 7})
        back = load_checkpoint(path)
        for name, arr in model.param_dict().items():
            np.testing.assert_array_equal(np.asarray(back.model.param_dict()[name]),
                                          np.asarray(arr))
        assert back.model.hyper == model.hyper
        assert back.model.feature_space.names == model.feature_space.names
        assert back.optimizer_state.t == 123
        for k in state.m:
            np.testing.assert_array_equal(back.optimizer_state.m[k], state.m[k])
            np.testing.assert_array_equal(back.optimizer_state.v[k], state.v[k])
        assert back.provenance == {"seed": 7}

    def test_double_round_trip_identical_bytes(self, tmp_path):
        model, state = _model_with_state()
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_checkpoint(p1, model, optimizer_state=state)
        save_checkpoint(p2, load_checkpoint(p1).model,
                        optimizer_state=load_checkpoint(p1).optimizer_state)
        assert p1.read_bytes() == p2.read_bytes()

    def test_forward_reproduces_prediction_hash(self, tmp_path, rng):
        model, _ = _model_with_state()
        batch = rng.normal(size=(6, 24, 5))
        pred, _ = forward_many_to_one(batch, model.layers, model.dense)
        digest = predictions_hash(pred)
        path = tmp_path / "m.json"
        save_checkpoint(path, model, provenance={"val_predictions_sha256": digest})
        back = load_checkpoint(path)
        pred2, _ = forward_many_to_one(batch, back.model.layers, back.model.dense)
        assert predictions_hash(pred2) == back.provenance["val_predictions_sha256"]

    def test_headers_human_readable(self, tmp_path):
        model, _ = _model_with_state()
        path = tmp_path / "m.json"
        save_checkpoint(path, model)
        doc = json.loads(path.read_text())
        assert doc["gate_order"] == ["i", "f", "c", "o"]
        assert doc["feature_space"]["names"] == list(model.feature_space.names)
        assert doc["version"] == 1


class TestValidation:
    def test_wrong_format_rejected(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text(json.dumps({"format": "other"}))
        with pytest.raises(ValidationError):
            load_checkpoint(path)

    def test_gate_order_mismatch_rejected(self, tmp_path):
        model, _ = _model_with_state()
        path = tmp_path / "m.json"
        save_checkpoint(path, model)
        doc = json.loads(path.read_text())
        doc["gate_order"] = ["c", "i", "f", "o"]
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError, match="gate order"):
            load_checkpoint(path)

    def test_feature_space_kernel_mismatch_rejected(self, tmp_path):
        model, _ = _model_with_state()
        path = tmp_path / "m.json"
        save_checkpoint(path, model)
        doc = json.loads(path.read_text())
        doc["feature_space"]["names"] = doc["feature_space"]["names"][:-1]
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError, match="feature"):
            load_checkpoint(path)

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("not json at all")
        with pytest.raises(ValidationError):
            load_checkpoint(path)
