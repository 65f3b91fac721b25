"""Bundled synthetic benchmark.

One diverse source ("alpha", a mixture over every latent regime) and five
targets chosen to cover the interesting overlap structures:

  bravo    feature space a strict subset of the source (qualifies for full
           model transfer)
  charlie  all source inputs plus 2 private ones   -> augmented (51, 4)
  delta    23 shared inputs plus 1 private         -> augmented (47, 2)
  echo     all source inputs plus 8 private        -> augmented (51, 16)
  foxtrot  24 shared inputs plus 11 private        -> augmented (49, 22)

The default hyperparameters are deliberately small so a full 100-run
comparison finishes in minutes on a laptop CPU.
"""

from losxfer.experiments import CompareConfig
from losxfer.model import Hyperparams
from losxfer.synth import DomainSpec, SynthConfig

POOL = tuple(f"signal {i:02d}" for i in range(25))

TRANSFER_TARGETS = ("charlie", "delta", "echo", "foxtrot")
SUBSET_TARGET = "bravo"
HIGH_NON_COINCIDING_TARGET = "foxtrot"

SOURCE_HYPER = Hyperparams(num_layers=1, hidden_units=16, learning_rate=3e-3,
                           dropout=0.1, batch_size=32)
TARGET_BATCH = 16
MAX_EPOCHS = 60


def default_synth_config(seed: int = 7) -> SynthConfig:
    domains = (
        DomainSpec("alpha", n_stays=600, shared_features=POOL, n_private=0,
                   missing_rate=0.35, regime=None),
        DomainSpec("bravo", n_stays=220, shared_features=POOL[:24], n_private=0,
                   missing_rate=0.30, regime=None),
        DomainSpec("charlie", n_stays=220, shared_features=POOL, n_private=2,
                   missing_rate=0.30, regime=1),
        DomainSpec("delta", n_stays=220, shared_features=POOL[:23], n_private=1,
                   missing_rate=0.35, regime=2),
        DomainSpec("echo", n_stays=220, shared_features=POOL, n_private=8,
                   missing_rate=0.30, regime=0),
        DomainSpec("foxtrot", n_stays=220, shared_features=POOL[:24], n_private=11,
                   missing_rate=0.35, regime=1),
    )
    return SynthConfig(domains=domains, source="alpha", seed=seed)


def target_hyper() -> dict:
    hyper = SOURCE_HYPER.replace(batch_size=TARGET_BATCH)
    return {name: hyper for name in ("bravo",) + TRANSFER_TARGETS}


def default_compare_config(targets=TRANSFER_TARGETS,
                           modes=("scratch", "weight_transfer"),
                           n_runs: int = 100, seed: int = 11) -> CompareConfig:
    return CompareConfig(
        source="alpha",
        targets=tuple(targets),
        modes=tuple(modes),
        n_runs=n_runs,
        seed=seed,
        source_hyper=SOURCE_HYPER,
        target_hyper=target_hyper(),
        max_epochs=MAX_EPOCHS,
    )
