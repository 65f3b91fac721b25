"""LSTM with forget gate, many-to-one over 24 hourly steps, ReLU dense head.

Parameters follow the kernel / recurrent-kernel / bias layout: the kernel
(n_D x 4H) multiplies inputs, the recurrent kernel (H x 4H) multiplies the
previous hidden state, and the bias (4H) adds the offsets. The column blocks
on the 4H axis are frozen as GATE_ORDER = (i, f, c, o); checkpoints record
the order explicitly because transferred weights are meaningless without it.

The candidate activation and the cell-state squashing are both ReLU (not
tanh), as is the dense head, so predictions are nonnegative. ReLU derivative
at exactly 0 is taken as 0.
"""

from dataclasses import dataclass, field

import numpy as np

from losxfer import _kernels
from losxfer.errors import NonFiniteError, ShapeError, ValidationError
from losxfer.features import FeatureSpace

GATE_ORDER = ("i", "f", "c", "o")
TIMESTEPS = 24


@dataclass
class LstmParams:
    """One recurrent layer: kernel (n x 4H), recurrent (H x 4H), bias (4H)."""

    kernel: np.ndarray
    recurrent: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.kernel = np.ascontiguousarray(self.kernel, dtype=np.float64)
        self.recurrent = np.ascontiguousarray(self.recurrent, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        hidden = self.recurrent.shape[0]
        if self.recurrent.shape != (hidden, 4 * hidden):
            raise ShapeError(
                f"recurrent kernel must be (H, 4H), got {self.recurrent.shape}"
            )
        if self.kernel.ndim != 2 or self.kernel.shape[1] != 4 * hidden:
            raise ShapeError(
                f"kernel column axis must be 4H={4 * hidden}, got {self.kernel.shape}"
            )
        if self.bias.shape != (4 * hidden,):
            raise ShapeError(
                f"bias must be (4H,)={4 * hidden}, got {self.bias.shape}"
            )

    @property
    def hidden_units(self) -> int:
        return self.recurrent.shape[0]

    @property
    def input_size(self) -> int:
        return self.kernel.shape[0]

    def copy(self) -> "LstmParams":
        return LstmParams(self.kernel.copy(), self.recurrent.copy(), self.bias.copy())


@dataclass
class DenseParams:
    """Single-unit regression head: weight (H x 1), scalar bias."""

    weight: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64).reshape(-1, 1)
        self.bias = float(self.bias)

    def copy(self) -> "DenseParams":
        return DenseParams(self.weight.copy(), self.bias)


@dataclass
class CellState:
    """Hidden and cell state of one recurrent step."""

    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_units: int) -> "CellState":
        return cls(np.zeros(hidden_units), np.zeros(hidden_units))


@dataclass(frozen=True)
class ModelConfig:
    hidden_units: int
    num_layers: int = 1
    dropout_rate: float = 0.0
    timesteps: int = TIMESTEPS

    def __post_init__(self):
        if self.hidden_units < 1:
            raise ValidationError(f"hidden_units must be >= 1, got {self.hidden_units}")
        if self.num_layers not in (1, 2):
            raise ValidationError(f"num_layers must be 1 or 2, got {self.num_layers}")
        if not 0.0 <= self.dropout_rate <= 0.5:
            raise ValidationError(
                f"dropout_rate must lie in [0, 0.5], got {self.dropout_rate}"
            )
        if self.timesteps != TIMESTEPS:
            raise ValidationError(f"timesteps is fixed at {TIMESTEPS}")


@dataclass(frozen=True)
class Hyperparams:
    """The tuned quintet; models remember what produced them."""

    num_layers: int
    hidden_units: int
    learning_rate: float
    dropout: float
    batch_size: int

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            hidden_units=self.hidden_units,
            num_layers=self.num_layers,
            dropout_rate=self.dropout,
        )

    def replace(self, **kw) -> "Hyperparams":
        current = {
            "num_layers": self.num_layers,
            "hidden_units": self.hidden_units,
            "learning_rate": self.learning_rate,
            "dropout": self.dropout,
            "batch_size": self.batch_size,
        }
        current.update(kw)
        return Hyperparams(**current)


@dataclass
class LstmModel:
    feature_space: FeatureSpace
    hyper: Hyperparams
    layers: list
    dense: DenseParams

    @property
    def config(self) -> ModelConfig:
        return self.hyper.model_config()

    @property
    def hidden_units(self) -> int:
        return self.hyper.hidden_units

    def param_dict(self) -> dict:
        """Live references to every trainable tensor, keyed by name."""
        params = {}
        for l, layer in enumerate(self.layers):
            params[f"layers.{l}.kernel"] = layer.kernel
            params[f"layers.{l}.recurrent"] = layer.recurrent
            params[f"layers.{l}.bias"] = layer.bias
        params["dense.weight"] = self.dense.weight
        params["dense.bias"] = np.asarray(self.dense.bias)
        return params

    def set_params(self, params: dict) -> None:
        for l, layer in enumerate(self.layers):
            layer.kernel = np.ascontiguousarray(params[f"layers.{l}.kernel"])
            layer.recurrent = np.ascontiguousarray(params[f"layers.{l}.recurrent"])
            layer.bias = np.ascontiguousarray(params[f"layers.{l}.bias"])
        self.dense.weight = np.ascontiguousarray(params["dense.weight"])
        self.dense.bias = float(params["dense.bias"])

    def copy(self) -> "LstmModel":
        return LstmModel(
            feature_space=self.feature_space,
            hyper=self.hyper,
            layers=[layer.copy() for layer in self.layers],
            dense=self.dense.copy(),
        )


def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform on [-L, L] with L = sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ValidationError(f"glorot_init needs rows, cols >= 1, got ({rows}, {cols})")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_bias(hidden_units: int) -> np.ndarray:
    """Cold-start bias: zeros except the forget block at 1.0 (stabilizer)."""
    bias = np.zeros(4 * hidden_units)
    bias[hidden_units : 2 * hidden_units] = 1.0
    return bias


def init_model(feature_space: FeatureSpace, hyper: Hyperparams,
               rng: np.random.Generator) -> LstmModel:
    """Fresh model; rng is consumed layer by layer (kernel, recurrent), then
    the dense weight, so partial reproduction of the draws is well defined."""
    hyper.model_config()  # validate
    hidden = hyper.hidden_units
    layers = []
    for l in range(hyper.num_layers):
        n_in = len(feature_space) if l == 0 else hidden
        layers.append(LstmParams(
            kernel=glorot_init(n_in, 4 * hidden, rng),
            recurrent=glorot_init(hidden, 4 * hidden, rng),
            bias=init_bias(hidden),
        ))
    dense = DenseParams(weight=glorot_init(hidden, 1, rng), bias=0.0)
    return LstmModel(feature_space=feature_space, hyper=hyper, layers=layers, dense=dense)


def _sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_cell_step(x_t: np.ndarray, state: CellState, params: LstmParams) -> CellState:
    """One recurrent step for a single sample.

    Gates i, f, o go through sigmoid, the candidate through ReLU; then
    c_t = f * c_prev + i * c~ and h_t = o * ReLU(c_t), all elementwise.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    hidden = params.hidden_units
    if x_t.shape != (params.input_size,):
        raise ShapeError(
            f"input axis: expected {params.input_size} features, got {x_t.shape}"
        )
    if state.h.shape != (hidden,) or state.c.shape != (hidden,):
        raise ShapeError(
            f"hidden axis: expected state vectors of length {hidden}, "
            f"got h{state.h.shape} c{state.c.shape}"
        )
    if not (np.isfinite(state.h).all() and np.isfinite(state.c).all()):
        raise NonFiniteError("cell state must be finite")
    z = x_t @ params.kernel + state.h @ params.recurrent + params.bias
    gi = _sigmoid(z[:hidden])
    gf = _sigmoid(z[hidden : 2 * hidden])
    gc = np.maximum(z[2 * hidden : 3 * hidden], 0.0)
    go = _sigmoid(z[3 * hidden :])
    c = gf * state.c + gi * gc
    h = go * np.maximum(c, 0.0)
    return CellState(h=h, c=c)


@dataclass
class ForwardCache:
    """Everything backward() needs; inputs[l] feeds layers[l]."""

    inputs: list
    hseq: list
    cseq: list
    gates: list
    dropout_mask: np.ndarray
    dense_pre: np.ndarray
    predictions: np.ndarray


def _check_batch(batch: np.ndarray, n_features: int) -> np.ndarray:
    batch = np.ascontiguousarray(batch, dtype=np.float64)
    if batch.ndim != 3:
        raise ShapeError(f"batch must be (stays, timesteps, features), got {batch.shape}")
    if batch.shape[2] != n_features:
        raise ShapeError(
            f"feature axis: batch has {batch.shape[2]} features, model expects {n_features}"
        )
    finite = np.isfinite(batch).all(axis=(1, 2))
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise NonFiniteError(f"non-finite input at stay index {bad}")
    return batch


def forward_many_to_one(batch, layers, dense, dropout_rate=0.0, training=False,
                        rng=None, backend=None):
    """Unroll over the 24 steps and predict from the last hidden state.

    Returns (predictions, cache). Dropout (inverted, on h_T before the dense
    head) is applied only when `training` is set; rng is required then.
    """
    kernels = backend if backend is not None else _kernels
    batch = _check_batch(batch, layers[0].input_size)
    m = batch.shape[0]

    inputs, hseqs, cseqs, gateseqs = [], [], [], []
    x = batch
    for layer in layers:
        flat = x.reshape(-1, layer.input_size)
        x_proj = (flat @ layer.kernel + layer.bias).reshape(m, x.shape[1], -1)
        hseq, cseq, gates = kernels.scan_forward(x_proj, layer.recurrent)
        inputs.append(x)
        hseqs.append(hseq)
        cseqs.append(cseq)
        gateseqs.append(gates)
        x = hseq

    h_last = hseqs[-1][:, -1, :]
    if training and dropout_rate > 0.0:
        if rng is None:
            raise ValidationError("training-mode dropout needs an rng")
        keep = rng.random(h_last.shape) >= dropout_rate
        mask = keep / (1.0 - dropout_rate)
    else:
        mask = np.ones_like(h_last)
    dense_pre = (h_last * mask) @ dense.weight + dense.bias
    dense_pre = dense_pre[:, 0]
    predictions = np.maximum(dense_pre, 0.0)
    return predictions, ForwardCache(
        inputs=inputs, hseq=hseqs, cseq=cseqs, gates=gateseqs,
        dropout_mask=mask, dense_pre=dense_pre, predictions=predictions,
    )


def backward(cache: ForwardCache, layers, dense, dpred, backend=None):
    """Exact gradients through the unrolled recurrence.

    dpred is the upstream gradient dL/dprediction (length m). Returns
    (grads, dinputs): grads keyed like LstmModel.param_dict(), dinputs of
    shape (m, 24, n_D).
    """
    kernels = backend if backend is not None else _kernels
    if not np.isfinite(cache.dense_pre).all():
        raise NonFiniteError("non-finite pre-activations in cached forward pass")
    m = dpred.shape[0]
    grads = {}

    dpre = dpred * (cache.dense_pre > 0.0)
    h_last = cache.hseq[-1][:, -1, :]
    h_drop = h_last * cache.dropout_mask
    grads["dense.weight"] = h_drop.T @ dpre[:, None]
    grads["dense.bias"] = np.asarray(dpre.sum())
    dh_last = (dpre[:, None] @ dense.weight.T) * cache.dropout_mask

    dhseq = np.zeros_like(cache.hseq[-1])
    dhseq[:, -1, :] = dh_last
    for l in range(len(layers) - 1, -1, -1):
        layer = layers[l]
        dz = kernels.scan_backward(
            layer.recurrent, cache.gates[l], cache.cseq[l], dhseq
        )
        steps = dz.shape[1]
        dz_flat = dz.reshape(m * steps, -1)
        x = cache.inputs[l]
        x_flat = x.reshape(m * steps, -1)
        hprev = np.concatenate(
            [np.zeros((m, 1, layer.hidden_units)), cache.hseq[l][:, :-1, :]], axis=1
        )
        grads[f"layers.{l}.kernel"] = x_flat.T @ dz_flat
        grads[f"layers.{l}.recurrent"] = hprev.reshape(m * steps, -1).T @ dz_flat
        grads[f"layers.{l}.bias"] = dz_flat.sum(axis=0)
        dinput = (dz_flat @ layer.kernel.T).reshape(x.shape)
        dhseq = dinput  # for l-1, its hidden sequence fed layer l
    return grads, dinput
