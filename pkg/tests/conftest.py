"""Shared oracles and instance builders.

The scalar oracles re-implement the recurrence and the loss as plain python
loops, independent of the vectorized code paths they check.
"""

import math

import numpy as np
import pytest

from losxfer.features import FeatureSpace
from losxfer.model import (DenseParams, Hyperparams, LstmModel, LstmParams,
                           backward, forward_many_to_one, init_model)
from losxfer.training import msle, msle_pred_grad


def sigmoid_scalar(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def relu_scalar(z: float) -> float:
    return z if z > 0 else 0.0


def scalar_cell_step(x, h_prev, c_prev, kernel, recurrent, bias):
    """Per-element recurrence: gates via sigmoid, candidate via ReLU,
    c = f*c_prev + i*c~, h = o*ReLU(c)."""
    hidden = len(h_prev)
    n = len(x)
    h_new = [0.0] * hidden
    c_new = [0.0] * hidden
    for j in range(hidden):
        zi = bias[j]
        zf = bias[hidden + j]
        zc = bias[2 * hidden + j]
        zo = bias[3 * hidden + j]
        for a in range(n):
            zi += x[a] * kernel[a][j]
            zf += x[a] * kernel[a][hidden + j]
            zc += x[a] * kernel[a][2 * hidden + j]
            zo += x[a] * kernel[a][3 * hidden + j]
        for b in range(hidden):
            zi += h_prev[b] * recurrent[b][j]
            zf += h_prev[b] * recurrent[b][hidden + j]
            zc += h_prev[b] * recurrent[b][2 * hidden + j]
            zo += h_prev[b] * recurrent[b][3 * hidden + j]
        gi, gf, go = sigmoid_scalar(zi), sigmoid_scalar(zf), sigmoid_scalar(zo)
        gc = relu_scalar(zc)
        c_new[j] = gf * c_prev[j] + gi * gc
        h_new[j] = go * relu_scalar(c_new[j])
    return h_new, c_new


def scalar_forward(batch, layers, dense_weight, dense_bias):
    """Unrolled many-to-one forward as nested loops over stays and steps."""
    preds = []
    for stay in batch:
        x_seq = [list(map(float, row)) for row in stay]
        for layer in layers:
            hidden = layer.hidden_units
            h = [0.0] * hidden
            c = [0.0] * hidden
            out_seq = []
            for x in x_seq:
                h, c = scalar_cell_step(x, h, c, layer.kernel.tolist(),
                                        layer.recurrent.tolist(),
                                        layer.bias.tolist())
                out_seq.append(list(h))
            x_seq = out_seq
        z = dense_bias
        for j, hj in enumerate(x_seq[-1]):
            z += hj * dense_weight[j]
        preds.append(relu_scalar(z))
    return np.asarray(preds)


def scalar_msle(pred, target):
    total = 0.0
    for p, y in zip(pred, target):
        d = math.log(1.0 + y) - math.log(1.0 + p)
        total += d * d
    return total / len(pred)


def feature_space(n: int, domain: str = "test") -> FeatureSpace:
    return FeatureSpace(names=tuple(f"f{i:02d}" for i in range(n)), domain=domain)


def make_model(n: int, hidden: int, num_layers: int = 1, dropout: float = 0.0,
               seed: int = 0, dense_bias: float = 1.0) -> LstmModel:
    hyper = Hyperparams(num_layers=num_layers, hidden_units=hidden,
                        learning_rate=1e-3, dropout=dropout, batch_size=4)
    model = init_model(feature_space(n), hyper, np.random.default_rng(seed))
    model.dense.bias = dense_bias  # keeps the ReLU head active
    return model


def _kink_margin(model: LstmModel, batch: np.ndarray) -> float:
    """Smallest nonzero |pre-activation| entering the candidate ReLUs and the
    dense head. Finite-difference checks need these clear of the step size so
    perturbations cannot cross a kink. Cell states are not tracked: exact
    zeros stay zero under small perturbations (guarded by the candidate
    margins) and geometrically decayed positives carry negligible kink error
    relative to the aggregate gradient, which the check itself confirms."""
    margin = math.inf

    def track(values):
        nonlocal margin
        nz = np.abs(values[values != 0.0])
        if nz.size:
            margin = min(margin, float(nz.min()))

    x = batch
    for layer in model.layers:
        m, steps, _ = x.shape
        hidden = layer.hidden_units
        x_proj = x.reshape(-1, layer.input_size) @ layer.kernel + layer.bias
        x_proj = x_proj.reshape(m, steps, 4 * hidden)
        h = np.zeros((m, hidden))
        c = np.zeros((m, hidden))
        outs = np.empty((m, steps, hidden))
        for t in range(steps):
            z = x_proj[:, t, :] + h @ layer.recurrent
            gi = 1.0 / (1.0 + np.exp(-z[:, :hidden]))
            gf = 1.0 / (1.0 + np.exp(-z[:, hidden:2 * hidden]))
            zc = z[:, 2 * hidden:3 * hidden]
            go = 1.0 / (1.0 + np.exp(-z[:, 3 * hidden:]))
            track(zc)
            c = gf * c + gi * np.maximum(zc, 0.0)
            h = go * np.maximum(c, 0.0)
            outs[:, t, :] = h
        x = outs
    dense_pre = x[:, -1, :] @ model.dense.weight[:, 0] + model.dense.bias
    track(dense_pre)
    return margin


def make_gradcheck_instance(seed: int, m: int = 8, n: int = 5, hidden: int = 4,
                            num_layers: int = 1, margin: float = 2e-3):
    """Model + batch + targets whose ReLU pre-activations stay clear of the
    kinks (|z| > margin) and whose predictions are mostly positive, so
    central differences with step 1e-4 are trustworthy and non-vacuous."""
    for attempt in range(200):
        rng = np.random.default_rng(seed * 1000 + attempt)
        model = make_model(n, hidden, num_layers=num_layers,
                           seed=seed * 1000 + attempt, dense_bias=1.0)
        for layer in model.layers:
            # generic (nonzero) biases so no pre-activation sits exactly on
            # a ReLU kink at the all-zero initial state
            layer.bias = layer.bias + rng.uniform(0.02, 0.2, size=layer.bias.shape) \
                * rng.choice([-1.0, 1.0], size=layer.bias.shape)
        batch = rng.normal(size=(m, 24, n))
        targets = rng.uniform(1.0, 10.0, size=m)
        if _kink_margin(model, batch) <= margin:
            continue
        pred, _ = forward_many_to_one(batch, model.layers, model.dense)
        if (pred > 0).mean() < 0.75:
            continue
        return model, batch, targets
    raise AssertionError("no kink-free instance found")


def relative_error(a, b, floor: float = 1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / scale


def msle_loss_of(model, batch, targets) -> float:
    pred, _ = forward_many_to_one(batch, model.layers, model.dense)
    return msle(pred, targets)


def analytic_msle_grads(model, batch, targets):
    pred, cache = forward_many_to_one(batch, model.layers, model.dense)
    return backward(cache, model.layers, model.dense,
                    msle_pred_grad(pred, targets))


def fd_gradcheck(model, batch, targets, step: float = 1e-4):
    """Central finite differences over every parameter and input coordinate.

    Coordinates that disagree at the base step are re-estimated with a 100x
    smaller step: disagreement caused by a geometrically decayed cell state
    sitting closer to its ReLU kink than the perturbation radius disappears,
    a genuine gradient bug does not. Returns the worst relative error.
    """
    grads, dinputs = analytic_msle_grads(model, batch, targets)
    worst = 0.0

    def central(put, current, h):
        put(current + h)
        up = msle_loss_of(model, batch, targets)
        put(current - h)
        down = msle_loss_of(model, batch, targets)
        put(current)
        return (up - down) / (2.0 * h)

    def check(put, current, analytic):
        err = float(relative_error(central(put, current, step), analytic))
        if err > 1e-4:
            err = min(err, float(relative_error(
                central(put, current, step / 100.0), analytic)))
        return err

    for name, arr in model.param_dict().items():
        g = np.asarray(grads[name])
        if arr.ndim == 0:
            worst = max(worst, check(
                lambda v: setattr(model.dense, "bias", float(v)),
                model.dense.bias, float(g)))
            continue
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            def put(v, flat=flat, i=i):
                flat[i] = v
            worst = max(worst, check(put, float(flat[i]), gflat[i]))

    flat = batch.reshape(-1)
    gflat = dinputs.reshape(-1)
    for i in range(flat.size):
        def put(v, flat=flat, i=i):
            flat[i] = v
        worst = max(worst, check(put, float(flat[i]), gflat[i]))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
