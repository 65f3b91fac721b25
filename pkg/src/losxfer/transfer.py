"""Domain adaptation across non-identical feature spaces.

Alignment matches features by canonical name and classifies the pair of
spaces by set relation. Weight transfer builds the target model from a fresh
Glorot kernel, overwrites the rows of coinciding features with the source
rows (all 4H columns), and copies the recurrent kernel, bias and dense head
verbatim. Full model transfer additionally restricts the source optimizer
state so training continues instead of restarting; it requires the target
space to be a subset of the source. Discriminative learning assigns a
reduced rate to pre-trained parameters and the source rate to fresh rows.
"""

from dataclasses import dataclass

import numpy as np

from losxfer.errors import ValidationError
from losxfer.features import FeatureSpace
from losxfer.model import DenseParams, LstmModel, LstmParams, glorot_init
from losxfer.training import AdamState

RELATION_SOURCE_SUBSET = "subset_S_of_T"
RELATION_PARTIAL = "partial_overlap"
RELATION_TARGET_SUBSET = "T_subset_or_equal_S"


@dataclass(frozen=True)
class TransferPlan:
    """Index mapping of coinciding features plus the fresh remainder."""

    source_names: tuple
    target_names: tuple
    pairs: tuple  # (source_index, target_index) per coinciding feature
    fresh_target_indices: tuple  # target features absent from the source
    relation: str

    @property
    def n_coinciding(self) -> int:
        return len(self.pairs)

    @property
    def n_non_coinciding(self) -> int:
        return len(self.fresh_target_indices)

    def counts(self):
        return self.n_coinciding, self.n_non_coinciding

    def coinciding_target_rows(self) -> np.ndarray:
        return np.asarray([t for _, t in self.pairs], dtype=np.intp)

    def fresh_target_rows(self) -> np.ndarray:
        return np.asarray(self.fresh_target_indices, dtype=np.intp)

    def to_record(self) -> dict:
        return {
            "source_names": list(self.source_names),
            "target_names": list(self.target_names),
            "pairs": [list(p) for p in self.pairs],
            "fresh_target_indices": list(self.fresh_target_indices),
            "relation": self.relation,
            "coinciding": self.n_coinciding,
            "non_coinciding": self.n_non_coinciding,
        }


def compute_feature_alignment(source: FeatureSpace, target: FeatureSpace) -> TransferPlan:
    """Name-exact matching of target features against the source space."""
    pairs = []
    fresh = []
    for t_idx, name in enumerate(target.names):
        if name in source:
            pairs.append((source.index_of(name), t_idx))
        else:
            fresh.append(t_idx)
    s_set, t_set = set(source.names), set(target.names)
    if s_set < t_set:
        relation = RELATION_SOURCE_SUBSET
    elif t_set <= s_set:
        relation = RELATION_TARGET_SUBSET
    else:
        relation = RELATION_PARTIAL
    return TransferPlan(
        source_names=tuple(source.names),
        target_names=tuple(target.names),
        pairs=tuple(pairs),
        fresh_target_indices=tuple(fresh),
        relation=relation,
    )


def _check_plan(plan: TransferPlan, source_model: LstmModel, target_space: FeatureSpace):
    if plan.source_names != tuple(source_model.feature_space.names):
        raise ValidationError("transfer plan was computed against a different source space")
    if plan.target_names != tuple(target_space.names):
        raise ValidationError("transfer plan was computed against a different target space")


def transfer_weights(source_model: LstmModel, target_space: FeatureSpace,
                     plan: TransferPlan, rng: np.random.Generator,
                     target_batch_size: int, fresh_dense: bool = False) -> LstmModel:
    """Build the target model as [fresh-then-overwritten kernel, source
    recurrent kernel, source bias].

    The whole target kernel is drawn Glorot-uniform from `rng` in one draw
    (so fresh rows are reproducible from the seed alone), then coinciding
    rows are overwritten with the source rows. All hyperparameters except
    the batch size come from the source. `fresh_dense` draws a new head
    instead of copying the source head (drawn after the kernel).
    """
    _check_plan(plan, source_model, target_space)
    hidden = source_model.hidden_units
    kernel = glorot_init(len(target_space), 4 * hidden, rng)
    source_kernel = source_model.layers[0].kernel
    for s_idx, t_idx in plan.pairs:
        kernel[t_idx] = source_kernel[s_idx]
    layers = [LstmParams(
        kernel=kernel,
        recurrent=source_model.layers[0].recurrent.copy(),
        bias=source_model.layers[0].bias.copy(),
    )]
    for deeper in source_model.layers[1:]:
        layers.append(deeper.copy())
    if fresh_dense:
        dense = DenseParams(weight=glorot_init(hidden, 1, rng), bias=0.0)
    else:
        dense = source_model.dense.copy()
    hyper = source_model.hyper.replace(batch_size=int(target_batch_size))
    return LstmModel(feature_space=target_space, hyper=hyper, layers=layers, dense=dense)


def full_model_transfer(source_model: LstmModel, source_optimizer,
                        target_space: FeatureSpace, target_batch_size=None):
    """Continue the source model (weights AND optimizer state) on a target
    whose feature space is a subset of the source's.

    The model is the source restricted to the target's rows, in target
    order; Adam moments are restricted identically and the step counter is
    carried over. Raises when target features are missing from the source,
    listing the blocking features.
    """
    source_space = source_model.feature_space
    blocking = [name for name in target_space.names if name not in source_space]
    if blocking:
        raise ValidationError(
            f"full model transfer needs the target space to be a subset of the "
            f"source; {len(blocking)} blocking features: {', '.join(blocking)}"
        )
    rows = np.asarray([source_space.index_of(n) for n in target_space.names], dtype=np.intp)

    layers = [LstmParams(
        kernel=source_model.layers[0].kernel[rows].copy(),
        recurrent=source_model.layers[0].recurrent.copy(),
        bias=source_model.layers[0].bias.copy(),
    )]
    for deeper in source_model.layers[1:]:
        layers.append(deeper.copy())
    hyper = source_model.hyper
    if target_batch_size is not None:
        hyper = hyper.replace(batch_size=int(target_batch_size))
    model = LstmModel(
        feature_space=target_space, hyper=hyper,
        layers=layers, dense=source_model.dense.copy(),
    )

    opt_state = None
    if source_optimizer is not None:
        kernel_key = "layers.0.kernel"
        m = {k: (a[rows].copy() if k == kernel_key else a.copy())
             for k, a in source_optimizer.m.items()}
        v = {k: (a[rows].copy() if k == kernel_key else a.copy())
             for k, a in source_optimizer.v.items()}
        opt_state = AdamState(m=m, v=v, t=source_optimizer.t)
    return model, opt_state


def assign_learning_rates(plan: TransferPlan, lr_source: float, alpha: float) -> dict:
    """Per-group rates: fresh rows keep lr_S, pre-trained parameters get
    the reduced alpha * lr_S (shared tensors count as pre-trained)."""
    if lr_source <= 0:
        raise ValidationError(f"lr_source must be > 0, got {lr_source}")
    if not 0 < alpha <= 1:
        raise ValidationError(f"alpha must lie in (0, 1], got {alpha}")
    return {
        "coinciding": alpha * lr_source,
        "non_coinciding": lr_source,
    }
