"""Self-describing model checkpoints.

A checkpoint is a JSON document: human-diffable headers (feature space,
gate order, hyperparameters, provenance) plus tensors embedded as base64 of
little-endian float64 bytes, so round-trips are bit-exact. The gate order is
recorded explicitly; transferred weights are meaningless without it.
"""

import base64
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from losxfer.errors import ValidationError
from losxfer.features import FeatureSpace
from losxfer.model import (GATE_ORDER, DenseParams, Hyperparams, LstmModel,
                           LstmParams)
from losxfer.training import AdamState

FORMAT_NAME = "losxfer-checkpoint"
FORMAT_VERSION = 1


def _encode(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {
        "shape": list(arr.shape),
        "dtype": "<f8",
        "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode(rec: dict) -> np.ndarray:
    if rec.get("dtype") != "<f8":
        raise ValidationError(f"unsupported tensor dtype {rec.get('dtype')!r}")
    raw = base64.b64decode(rec["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(rec["shape"])


def _tensors_record(tensors: dict) -> dict:
    return {name: _encode(arr) for name, arr in tensors.items()}


def _tensors_decode(rec: dict) -> dict:
    return {name: _decode(r) for name, r in rec.items()}


@dataclass
class Checkpoint:
    model: LstmModel
    optimizer_state: AdamState
    provenance: dict
    version: int = FORMAT_VERSION


def save_checkpoint(path, model: LstmModel, optimizer_state: AdamState = None,
                    provenance: dict = None) -> None:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "feature_space": {
            "domain": model.feature_space.domain,
            "names": list(model.feature_space.names),
        },
        "gate_order": list(GATE_ORDER),
        "hyperparams": {
            "num_layers": model.hyper.num_layers,
            "hidden_units": model.hyper.hidden_units,
            "learning_rate": model.hyper.learning_rate,
            "dropout": model.hyper.dropout,
            "batch_size": model.hyper.batch_size,
        },
        "tensors": _tensors_record(
            {k: np.asarray(v) for k, v in model.param_dict().items()}
        ),
        "optimizer": None if optimizer_state is None else {
            "t": optimizer_state.t,
            "m": _tensors_record(optimizer_state.m),
            "v": _tensors_record(optimizer_state.v),
        },
        "provenance": provenance or {},
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not a valid checkpoint: {exc}") from exc
    if doc.get("format") != FORMAT_NAME:
        raise ValidationError(f"{path} is not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {doc.get('version')}")
    if tuple(doc.get("gate_order", ())) != GATE_ORDER:
        raise ValidationError(
            f"checkpoint gate order {doc.get('gate_order')} does not match "
            f"this implementation's {list(GATE_ORDER)}"
        )
    space = FeatureSpace(names=tuple(doc["feature_space"]["names"]),
                         domain=doc["feature_space"]["domain"])
    hyper = Hyperparams(**doc["hyperparams"])
    tensors = _tensors_decode(doc["tensors"])
    layers = []
    for l in range(hyper.num_layers):
        layers.append(LstmParams(
            kernel=tensors[f"layers.{l}.kernel"],
            recurrent=tensors[f"layers.{l}.recurrent"],
            bias=tensors[f"layers.{l}.bias"],
        ))
    if layers[0].input_size != len(space):
        raise ValidationError(
            f"kernel rows ({layers[0].input_size}) disagree with the feature "
            f"space size ({len(space)})"
        )
    model = LstmModel(
        feature_space=space, hyper=hyper, layers=layers,
        dense=DenseParams(weight=tensors["dense.weight"],
                          bias=float(tensors["dense.bias"])),
    )
    opt = None
    if doc.get("optimizer"):
        opt = AdamState(
            m=_tensors_decode(doc["optimizer"]["m"]),
            v=_tensors_decode(doc["optimizer"]["v"]),
            t=int(doc["optimizer"]["t"]),
        )
    return Checkpoint(model=model, optimizer_state=opt,
                      provenance=doc.get("provenance", {}),
                      version=doc["version"])


def predictions_hash(predictions: np.ndarray) -> str:
    """Stable digest of a prediction vector, stored in provenance so a
    reloaded checkpoint can prove it reproduces its validation output."""
    arr = np.asarray(predictions, dtype="<f8")
    return hashlib.sha256(arr.tobytes()).hexdigest()
