"""Bounded mixed-scale hyperparameter search.

The space spans layers (linear), hidden units and batch size (log2, snapped
to powers of two), learning rate (log10) and dropout (linear). Search is
sequential Bayesian optimization: a Matern-5/2 Gaussian process over the
scaled unit hypercube proposes candidates by expected improvement, each
trial runs several executions and is scored by its mean validation loss. A
pure-random fallback keeps the bookkeeping contract when the surrogate is
disabled.

The three-step procedure splits the hidden-unit range, searches [8, 64] and
[64, 512] with 10 trials x 2 executions each, then re-searches a refined
space around the better winner with 10 trials x 3 executions, and finally
fits with early stopping.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg as sla
from scipy import special as sp

from losxfer.errors import ValidationError
from losxfer.model import Hyperparams

DIMENSIONS = ("num_layers", "hidden_units", "learning_rate", "dropout", "batch_size")


def _snap_pow2(value: float, lo: int, hi: int) -> int:
    exponent = int(round(math.log2(value)))
    return int(min(max(2 ** exponent, lo), hi))


@dataclass(frozen=True)
class SearchSpace:
    """Inclusive bounds per dimension, on the scales they are searched in."""

    num_layers: tuple = (1, 2)
    hidden_units: tuple = (8, 512)
    learning_rate: tuple = (1e-4, 1e-2)
    dropout: tuple = (0.1, 0.5)
    batch_size: tuple = (4, 512)

    def __post_init__(self):
        for dim in DIMENSIONS:
            lo, hi = getattr(self, dim)
            if lo > hi:
                raise ValidationError(f"{dim} bounds reversed: {lo} > {hi}")
        for dim in ("hidden_units", "batch_size"):
            for b in getattr(self, dim):
                if 2 ** int(round(math.log2(b))) != b:
                    raise ValidationError(f"{dim} bounds must be powers of two, got {b}")

    def replace(self, **bounds) -> "SearchSpace":
        return replace(self, **bounds)

    def from_unit(self, u) -> Hyperparams:
        u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
        lo, hi = self.num_layers
        num_layers = int(round(lo + u[0] * (hi - lo)))
        lo, hi = self.hidden_units
        hidden = _snap_pow2(2 ** (math.log2(lo) + u[1] * (math.log2(hi) - math.log2(lo))), lo, hi)
        lo, hi = self.learning_rate
        lr = 10 ** (math.log10(lo) + u[2] * (math.log10(hi) - math.log10(lo)))
        lo, hi = self.dropout
        dropout = lo + u[3] * (hi - lo)
        lo, hi = self.batch_size
        batch = _snap_pow2(2 ** (math.log2(lo) + u[4] * (math.log2(hi) - math.log2(lo))), lo, hi)
        return Hyperparams(num_layers=num_layers, hidden_units=hidden,
                           learning_rate=lr, dropout=dropout, batch_size=batch)

    def to_unit(self, hyper: Hyperparams) -> np.ndarray:
        def frac(value, lo, hi, transform=lambda x: x):
            tl, th = transform(lo), transform(hi)
            if th == tl:
                return 0.5
            return (transform(value) - tl) / (th - tl)

        return np.array([
            frac(hyper.num_layers, *self.num_layers),
            frac(hyper.hidden_units, *self.hidden_units, math.log2),
            frac(hyper.learning_rate, *self.learning_rate, math.log10),
            frac(hyper.dropout, *self.dropout),
            frac(hyper.batch_size, *self.batch_size, math.log2),
        ])

    def contains(self, hyper: Hyperparams) -> bool:
        return all(
            getattr(self, dim)[0] <= getattr(hyper, dim) <= getattr(self, dim)[1]
            for dim in DIMENSIONS
        )

    def sample(self, rng: np.random.Generator) -> Hyperparams:
        return self.from_unit(rng.random(len(DIMENSIONS)))


@dataclass
class Trial:
    config: Hyperparams
    unit: np.ndarray
    losses: list = field(default_factory=list)
    status: str = "ok"

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.losses)) if self.losses and self.status == "ok" else math.inf

    def to_record(self) -> dict:
        return {
            "config": {dim: getattr(self.config, dim) for dim in DIMENSIONS},
            "losses": [float(x) for x in self.losses],
            "mean_loss": self.mean_loss if self.status == "ok" else None,
            "status": self.status,
        }


class _MaternGP:
    """Matern-5/2 GP on the unit cube with a small deterministic
    lengthscale/noise grid chosen by marginal likelihood."""

    LENGTHSCALES = (0.1, 0.2, 0.4, 0.8, 1.6)
    NOISES = (1e-4, 1e-2)

    def __init__(self, x: np.ndarray, y: np.ndarray):
        self.x = np.atleast_2d(x)
        y = np.asarray(y, dtype=np.float64)
        self.y_mean = float(y.mean())
        self.y_std = float(y.std()) or 1.0
        self.y = (y - self.y_mean) / self.y_std
        best = (-math.inf, None, None)
        for ls in self.LENGTHSCALES:
            for noise in self.NOISES:
                ll = self._log_marginal(ls, noise)
                if ll > best[0]:
                    best = (ll, ls, noise)
        _, self.lengthscale, self.noise = best
        k = self._kernel(self.x, self.x) + (self.noise + 1e-10) * np.eye(len(self.y))
        self.chol = sla.cho_factor(k, lower=True)
        self.alpha = sla.cho_solve(self.chol, self.y)

    def _kernel(self, a: np.ndarray, b: np.ndarray, ls: float = None) -> np.ndarray:
        ls = self.lengthscale if ls is None else ls
        d = np.sqrt(np.maximum(
            ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2), 0.0))
        s = math.sqrt(5.0) * d / ls
        return (1.0 + s + s * s / 3.0) * np.exp(-s)

    def _log_marginal(self, ls: float, noise: float) -> float:
        k = self._kernel(self.x, self.x, ls) + (noise + 1e-10) * np.eye(len(self.y))
        try:
            chol = sla.cho_factor(k, lower=True)
        except sla.LinAlgError:
            return -math.inf
        alpha = sla.cho_solve(chol, self.y)
        return float(-0.5 * self.y @ alpha - np.log(np.diag(chol[0])).sum())

    def posterior(self, points: np.ndarray):
        ks = self._kernel(points, self.x)
        mean = ks @ self.alpha
        v = sla.cho_solve(self.chol, ks.T)
        var = np.maximum(1.0 + self.noise - np.sum(ks * v.T, axis=1), 1e-12)
        return mean * self.y_std + self.y_mean, np.sqrt(var) * self.y_std

    def expected_improvement(self, points: np.ndarray, best: float) -> np.ndarray:
        mean, std = self.posterior(points)
        z = (best - mean) / std
        ndtr = sp.ndtr(z)
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        return (best - mean) * ndtr + std * pdf


def _propose(trials, rng, n_dims: int, use_surrogate: bool, n_initial: int,
             candidate_pool: int) -> np.ndarray:
    ok = [t for t in trials if t.status == "ok" and t.losses]
    draw = rng.random(n_dims)
    if not use_surrogate or len(ok) < n_initial:
        return draw
    x = np.stack([t.unit for t in ok])
    y = np.array([t.mean_loss for t in ok])
    gp = _MaternGP(x, y)
    candidates = rng.random((candidate_pool, n_dims))
    best_u = ok[int(np.argmin(y))].unit
    local = np.clip(best_u + 0.1 * rng.standard_normal((candidate_pool // 4, n_dims)),
                    0.0, 1.0)
    candidates = np.vstack([candidates, local, draw[None, :]])
    ei = gp.expected_improvement(candidates, float(y.min()))
    return candidates[int(np.argmax(ei))]


def bayesian_search(space: SearchSpace, objective, n_trials: int,
                    n_executions: int, rng: np.random.Generator,
                    use_surrogate: bool = True, n_initial: int = 4,
                    candidate_pool: int = 256):
    """Surrogate-guided sequential minimization of the objective's mean loss.

    objective(config, seed) -> validation loss; it runs n_executions times
    per trial with derived seeds. A failing execution marks the whole trial
    failed and the search continues. Returns (best config, trial list).
    """
    if n_trials < 1:
        raise ValidationError("n_trials must be >= 1")
    trials = []
    for _ in range(n_trials):
        unit = _propose(trials, rng, len(DIMENSIONS), use_surrogate,
                        n_initial, candidate_pool)
        config = space.from_unit(unit)
        trial = Trial(config=config, unit=space.to_unit(config))
        exec_seeds = rng.integers(0, 2**63 - 1, size=n_executions)
        for seed in exec_seeds:
            try:
                trial.losses.append(float(objective(config, int(seed))))
            except Exception as exc:  # noqa: BLE001 - trial failures are data
                trial.status = f"failed: {exc}"
                trial.losses = []
                break
        trials.append(trial)
    ok = [t for t in trials if t.status == "ok"]
    if not ok:
        raise ValidationError("every trial failed; nothing to return")
    best = min(ok, key=lambda t: t.mean_loss)
    return best.config, trials


@dataclass
class ThreeStepResult:
    steps: list            # one dict per step: space, trials, best config+loss
    best_config: Hyperparams
    final_fit: object = None

    def trial_counts(self):
        return [len(s["trials"]) for s in self.steps]

    def execution_counts(self):
        return [s["n_executions"] for s in self.steps]

    @property
    def step3_space(self) -> SearchSpace:
        return self.steps[2]["space"]


def _refine(space: SearchSpace, winner_space: SearchSpace,
            best: Hyperparams) -> SearchSpace:
    """Step-3 space: the winning hidden-unit interval; each continuous
    dimension shrunk to the winner plus/minus one log-step (half a decade
    for the rate, one power of two for the batch, 0.1 for dropout); layers
    pinned to the winner."""
    lr_lo, lr_hi = space.learning_rate
    lo = max(lr_lo, best.learning_rate / math.sqrt(10.0))
    hi = min(lr_hi, best.learning_rate * math.sqrt(10.0))
    dr_lo, dr_hi = space.dropout
    b_lo, b_hi = space.batch_size
    return SearchSpace(
        num_layers=(best.num_layers, best.num_layers),
        hidden_units=winner_space.hidden_units,
        learning_rate=(lo, hi),
        dropout=(max(dr_lo, best.dropout - 0.1), min(dr_hi, best.dropout + 0.1)),
        batch_size=(max(b_lo, best.batch_size // 2), min(b_hi, best.batch_size * 2)),
    )


def three_step_search(objective, rng: np.random.Generator,
                      space: SearchSpace = None, n_trials: int = 10,
                      use_surrogate: bool = True, final_fit=None) -> ThreeStepResult:
    """Split the hidden-unit range, search both halves, then a refined space.

    Steps 1-2 run n_trials x 2 executions on hidden units [8, 64] and
    [64, 512]; step 3 reruns n_trials x 3 executions on the refined space
    around the better winner. `final_fit(best_config)`, when given, performs
    the concluding early-stopped fit and its result is attached.
    """
    base = space if space is not None else SearchSpace()
    lo, hi = base.hidden_units
    split = min(max(64, lo), hi)
    plan = [
        (base.replace(hidden_units=(lo, split)), 2),
        (base.replace(hidden_units=(split, hi)), 2),
    ]
    steps = []
    for step_space, n_exec in plan:
        best, trials = bayesian_search(step_space, objective, n_trials, n_exec,
                                       rng, use_surrogate=use_surrogate)
        best_loss = min(t.mean_loss for t in trials if t.status == "ok")
        steps.append({"space": step_space, "trials": trials, "best": best,
                      "best_loss": best_loss, "n_executions": n_exec})

    winner = min(steps, key=lambda s: s["best_loss"])
    refined = _refine(base, winner["space"], winner["best"])
    best3, trials3 = bayesian_search(refined, objective, n_trials, 3, rng,
                                     use_surrogate=use_surrogate)
    best_loss3 = min(t.mean_loss for t in trials3 if t.status == "ok")
    steps.append({"space": refined, "trials": trials3, "best": best3,
                  "best_loss": best_loss3, "n_executions": 3})

    result = ThreeStepResult(steps=steps, best_config=best3)
    if final_fit is not None:
        result.final_fit = final_fit(best3)
    return result
