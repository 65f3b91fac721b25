"""Expected-gradients attribution and global feature importance.

Attribution of stay i, step t, feature j is the Monte Carlo estimate of
(x - x') * df/dx evaluated along the straight path x' + u (x - x'), with the
baseline x' drawn from a background set and u uniform on (0, 1). Global
importance averages attribution magnitudes over the time dimension and then
the patient dimension; rankings before and after weight transfer are
compared by top-k overlap.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from losxfer.errors import ValidationError
from losxfer.model import backward, forward_many_to_one


def model_gradient_fn(model):
    """(batch) -> (predictions, dprediction/dinput) for a trained model."""

    def fn(batch):
        pred, cache = forward_many_to_one(batch, model.layers, model.dense)
        _, dinputs = backward(cache, model.layers, model.dense,
                              np.ones_like(pred))
        return pred, dinputs

    return fn


def expected_gradients(predict_grad_fn, inputs, background, n_samples: int,
                       rng: np.random.Generator, chunk_size: int = 1024) -> np.ndarray:
    """Attribution tensor with the same (m, T, n) shape as `inputs`.

    Each stay gets its own derived RNG stream, so results do not depend on
    the order stays are processed in. `predict_grad_fn` maps a batch to
    (predictions, input gradients); see model_gradient_fn.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    if background.ndim != 3 or background.shape[0] == 0:
        raise ValidationError("background must be a non-empty (stays, T, n) tensor")
    if inputs.shape[1:] != background.shape[1:]:
        raise ValidationError(
            f"inputs {inputs.shape[1:]} and background {background.shape[1:]} disagree"
        )
    m = inputs.shape[0]
    stay_seeds = rng.integers(0, 2**63 - 1, size=m)
    attributions = np.empty_like(inputs)
    for i in range(m):
        stay_rng = np.random.default_rng(stay_seeds[i])
        x = inputs[i]
        total = np.zeros_like(x)
        done = 0
        while done < n_samples:
            take = min(chunk_size, n_samples - done)
            ref = background[stay_rng.integers(0, background.shape[0], size=take)]
            u = stay_rng.random(take)
            diff = x[None, :, :] - ref
            points = ref + u[:, None, None] * diff
            _, grads = predict_grad_fn(points)
            total += np.sum(diff * grads, axis=0)
            done += take
        attributions[i] = total / n_samples
    return attributions


@dataclass
class ImportanceRanking:
    """Per-feature global scores, descending."""

    features: tuple   # names ordered by rank
    scores: np.ndarray  # aligned with `features`, descending

    def top(self, k: int):
        return [(rank + 1, self.features[rank], float(self.scores[rank]))
                for rank in range(min(k, len(self.features)))]

    def rank_of(self, feature: str) -> int:
        return self.features.index(feature) + 1

    def to_rows(self):
        return [(rank + 1, f, float(s))
                for rank, (f, s) in enumerate(zip(self.features, self.scores))]


def global_importance(attributions: np.ndarray, feature_names,
                      signed: bool = False) -> ImportanceRanking:
    """Mean over time, then over patients; magnitudes by default so positive
    and negative contributions do not cancel in the ranking."""
    attributions = np.asarray(attributions, dtype=np.float64)
    names = tuple(feature_names)
    if attributions.ndim != 3 or attributions.shape[2] != len(names):
        raise ValidationError(
            f"attribution tensor {attributions.shape} does not match "
            f"{len(names)} feature names"
        )
    per_time = attributions if signed else np.abs(attributions)
    scores = per_time.mean(axis=1).mean(axis=0)
    order = sorted(range(len(names)), key=lambda j: (-scores[j], j))
    return ImportanceRanking(
        features=tuple(names[j] for j in order),
        scores=scores[list(order)],
    )


@dataclass
class OverlapReport:
    k: int
    overlap_fraction: float
    rank_deltas: dict  # feature -> rank_after - rank_before

    def to_record(self) -> dict:
        return {"k": self.k, "overlap_fraction": self.overlap_fraction,
                "rank_deltas": dict(self.rank_deltas)}


def importance_overlap(before: ImportanceRanking, after: ImportanceRanking,
                       k: int = 25) -> OverlapReport:
    """|top-k(before) & top-k(after)| / k plus per-feature rank movement."""
    if set(before.features) != set(after.features):
        raise ValidationError("rankings cover different feature universes")
    n = len(before.features)
    if k > n:
        warnings.warn(f"k={k} exceeds the {n} available features; clamping")
        k = n
    top_before = set(before.features[:k])
    top_after = set(after.features[:k])
    deltas = {f: after.rank_of(f) - before.rank_of(f) for f in before.features}
    return OverlapReport(
        k=k,
        overlap_fraction=len(top_before & top_after) / k,
        rank_deltas=deltas,
    )
