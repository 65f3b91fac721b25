"""MSLE loss, Adam, and the epoch loop with validation-based early stopping.

Training minimizes mean squared log error (natural log; any fixed base only
rescales the loss). Early stopping monitors the validation loss over six
epochs and fires when it fails to improve on the best seen by at least 0.5%
(relative); the returned weights are always the ones with the minimum
validation loss observed.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from losxfer.errors import ShapeError, ValidationError
from losxfer.model import LstmModel, backward, forward_many_to_one
from losxfer.seeds import derive_rng

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-7


def msle(pred, target) -> float:
    """(1/m) * sum (log(1+y) - log(1+yhat))^2."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    if (pred < 0).any():
        raise ValidationError("msle requires nonnegative predictions")
    if (target <= 0).any():
        raise ValidationError("msle requires positive targets")
    d = np.log1p(target) - np.log1p(pred)
    return float(np.mean(d * d))


def msle_pred_grad(pred, target) -> np.ndarray:
    """dMSLE/dpred, elementwise."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    m = pred.shape[0]
    return 2.0 * (np.log1p(pred) - np.log1p(target)) / (m * (1.0 + pred))


@dataclass
class AdamState:
    """First/second moments per parameter tensor plus the shared step count."""

    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(np.asarray(p, dtype=np.float64)) for k, p in params.items()},
            v={k: np.zeros_like(np.asarray(p, dtype=np.float64)) for k, p in params.items()},
        )

    def copy(self) -> "AdamState":
        return AdamState(
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            t=self.t,
        )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place (epsilon outside the sqrt)."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.asarray(p).shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {np.asarray(p).shape} for {k}")
        m = state.m[k]
        v = state.v[k]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def multi_group_adam_step(groups) -> None:
    """Update several disjoint parameter groups, each with its own rate and
    moment state. groups: iterable of (params, grads, state, lr)."""
    seen = set()
    for params, _, _, _ in groups:
        keys = set(params)
        overlap = seen & keys
        if overlap:
            raise ValidationError(f"overlapping parameter groups: {sorted(overlap)}")
        seen |= keys
    for params, grads, state, lr in groups:
        adam_step(params, grads, state, lr)


class AdamOptimizer:
    """Single-group Adam over a named parameter dict."""

    def __init__(self, params: dict, lr: float, state: AdamState = None):
        self.lr = lr
        self.state = state if state is not None else AdamState.for_params(params)

    def step(self, params: dict, grads: dict) -> None:
        adam_step(params, grads, self.state, self.lr)


class DiscriminativeAdam:
    """Two-rate Adam for fine-tuning after weight transfer.

    Rows of the first-layer kernel belonging to non-coinciding (freshly
    initialized) features train at lr_fresh; coinciding rows and all shared
    parameters (recurrent kernel, bias, dense head, deeper layers) train at
    lr_coinciding, since those were pre-trained on the source as well.
    """

    KERNEL_KEY = "layers.0.kernel"

    def __init__(self, params: dict, coinciding_rows, fresh_rows,
                 lr_coinciding: float, lr_fresh: float):
        self.coinciding_rows = np.asarray(sorted(coinciding_rows), dtype=np.intp)
        self.fresh_rows = np.asarray(sorted(fresh_rows), dtype=np.intp)
        n_rows = params[self.KERNEL_KEY].shape[0]
        merged = np.concatenate([self.coinciding_rows, self.fresh_rows])
        if len(np.unique(merged)) != len(merged):
            raise ValidationError("coinciding and fresh row groups overlap")
        if sorted(merged.tolist()) != list(range(n_rows)):
            raise ValidationError(
                f"row groups must partition all {n_rows} kernel rows"
            )
        self.lr_coinciding = lr_coinciding
        self.lr_fresh = lr_fresh
        group_a, group_b = self._split(params)
        self.state_a = AdamState.for_params(group_a)
        self.state_b = AdamState.for_params(group_b)

    def _split(self, tensors: dict):
        """Group views: everything-but-fresh-rows vs fresh kernel rows.

        Non-kernel entries are live references; the kernel row slices are
        copies that step() writes back after the update.
        """
        group_a = {k: np.asarray(v) for k, v in tensors.items() if k != self.KERNEL_KEY}
        group_a["kernel.coinciding"] = np.asarray(tensors[self.KERNEL_KEY])[self.coinciding_rows]
        group_b = {"kernel.fresh": np.asarray(tensors[self.KERNEL_KEY])[self.fresh_rows]}
        return group_a, group_b

    def step(self, params: dict, grads: dict) -> None:
        group_a, group_b = self._split(params)
        grads_a, grads_b = self._split(grads)
        multi_group_adam_step([
            (group_a, grads_a, self.state_a, self.lr_coinciding),
            (group_b, grads_b, self.state_b, self.lr_fresh),
        ])
        kernel = params[self.KERNEL_KEY]
        kernel[self.coinciding_rows] = group_a["kernel.coinciding"]
        kernel[self.fresh_rows] = group_b["kernel.fresh"]


@dataclass
class TrainConfig:
    learning_rate: float
    batch_size: int
    max_epochs: int = 100
    patience: int = 6
    min_relative_improvement: float = 0.005

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class TrainReport:
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = 0
    epochs_to_converge: int = 0
    early_stopped: bool = False
    stagnated: bool = False
    wall_seconds: float = 0.0
    cpu_seconds: float = 0.0

    def to_record(self) -> dict:
        return {
            "train_losses": [float(x) for x in self.train_losses],
            "val_losses": [float(x) for x in self.val_losses],
            "best_epoch": self.best_epoch,
            "epochs_to_converge": self.epochs_to_converge,
            "early_stopped": self.early_stopped,
            "stagnated": self.stagnated,
            "wall_seconds": self.wall_seconds,
            "cpu_seconds": self.cpu_seconds,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "TrainReport":
        return cls(**rec)


def simulate_early_stopping(val_losses, patience: int = 6,
                            min_relative_improvement: float = 0.005):
    """Direct simulation of the stopping rule over a loss sequence.

    An epoch improves when its loss beats the best seen so far by at least
    the relative margin; `patience` consecutive non-improving epochs stop the
    run. Returns (epochs_run, best_epoch, early_stopped) with 1-based epochs.
    """
    best = np.inf
    best_exact = np.inf
    best_epoch = 0
    counter = 0
    for e, v in enumerate(val_losses, start=1):
        if v < best_exact:
            best_exact = v
            best_epoch = e
        if v < best * (1.0 - min_relative_improvement):
            counter = 0
        else:
            counter += 1
        best = min(best, v)
        if counter >= patience:
            return e, best_epoch, True
    return len(list(val_losses)), best_epoch, False


def _as_seed(rng) -> int:
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(rng.integers(0, 2**63 - 1))


def iter_batches(n: int, batch_size: int, perm: np.ndarray):
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def train(model: LstmModel, train_data, val_data, config: TrainConfig, rng,
          optimizer=None):
    """Shuffled mini-batch epochs with early stopping on validation MSLE.

    train_data / val_data are (X, y) pairs with X of shape (m, 24, n_D).
    `rng` is an integer seed or a Generator (a seed is drawn from it);
    shuffling is reseeded per epoch from that seed so batch order does not
    depend on how much randomness dropout consumed. Returns (model, report)
    with the model carrying the best-validation weights.
    """
    x_train, y_train = train_data
    x_val, y_val = val_data
    if len(y_train) == 0 or len(y_val) == 0:
        raise ValidationError("train and validation splits must be non-empty")
    seed = _as_seed(rng)
    dropout_rng = derive_rng(seed, "dropout")
    dropout = model.config.dropout_rate

    params = model.param_dict()
    if optimizer is None:
        optimizer = AdamOptimizer(params, config.learning_rate)

    report = TrainReport()
    wall0 = time.perf_counter()
    cpu0 = time.process_time()
    best = np.inf
    best_exact = np.inf
    best_snapshot = None
    counter = 0
    n = len(y_train)

    for epoch in range(1, config.max_epochs + 1):
        perm = derive_rng(seed, "shuffle", epoch).permutation(n)
        epoch_loss = 0.0
        for idx in iter_batches(n, config.batch_size, perm):
            xb, yb = x_train[idx], y_train[idx]
            pred, cache = forward_many_to_one(
                xb, model.layers, model.dense, dropout_rate=dropout,
                training=True, rng=dropout_rng,
            )
            epoch_loss += msle(pred, yb) * len(idx)
            grads, _ = backward(cache, model.layers, model.dense,
                                msle_pred_grad(pred, yb))
            optimizer.step(params, grads)
            model.set_params(params)
        report.train_losses.append(epoch_loss / n)

        val_pred, _ = forward_many_to_one(x_val, model.layers, model.dense)
        v = msle(val_pred, y_val)
        report.val_losses.append(v)

        if v < best_exact:
            best_exact = v
            report.best_epoch = epoch
            best_snapshot = {k: np.array(p, copy=True) for k, p in params.items()}
        if v < best * (1.0 - config.min_relative_improvement):
            counter = 0
        else:
            counter += 1
        best = min(best, v)
        if counter >= config.patience:
            report.early_stopped = True
            break

    report.epochs_to_converge = len(report.val_losses)
    report.stagnated = report.early_stopped and (
        report.epochs_to_converge <= config.patience + 1
    )
    if best_snapshot is not None:
        model.set_params(best_snapshot)
    report.wall_seconds = time.perf_counter() - wall0
    report.cpu_seconds = time.process_time() - cpu0
    return model, report
