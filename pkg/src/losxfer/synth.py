"""Synthetic multi-domain generator.

Stands in for credentialed clinical databases: shared latent AR(1)
trajectories drive a pool of features through loadings that are identical
across domains (keyed by feature name), so models trained on one domain
carry structure that transfers to the others. Domains differ in which pool
features they record, in private domain-specific features, and in the latent
regime of their population; the designated source draws stays from all
regimes, making it the most diverse population. Length of stay is a
right-skewed function of the latent summary, always >= 1 day.

Output is an event table (plus a targets map) so the entire curation
pipeline is exercised on generated data too.
"""

from dataclasses import dataclass, field

import numpy as np

from losxfer.dataprep import HOURS, EventTable, PreparedDomain, prepare_domain
from losxfer.errors import ValidationError
from losxfer.seeds import derive_rng

MIN_STAYS = 40


@dataclass(frozen=True)
class DomainSpec:
    name: str
    n_stays: int
    shared_features: tuple
    n_private: int = 0
    missing_rate: float = 0.3
    regime: int = None  # None = mixture over all regimes

    def private_names(self) -> tuple:
        return tuple(f"{self.name} private {k:02d}" for k in range(self.n_private))

    def feature_names(self) -> tuple:
        return tuple(self.shared_features) + self.private_names()


@dataclass(frozen=True)
class SynthConfig:
    domains: tuple
    source: str
    seed: int = 0
    n_latents: int = 3
    n_regimes: int = 3
    ar_coefs: tuple = (0.9, 0.75, 0.6)
    latent_noise: float = 0.35
    regime_spread: float = 1.0
    feature_noise: float = 0.1
    los_gain: float = 0.8
    los_noise: float = 0.15
    los_scale: float = 4.0
    duplicate_event_fraction: float = 0.2
    # Private factors are observable only through private features, so part
    # of the outcome is predictable solely in domains that record them.
    n_private_latents: int = 1
    private_ar: float = 0.7
    private_los_share: float = 0.3
    private_latent_gain: float = 1.25

    def __post_init__(self):
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise ValidationError("domain names must be unique")
        if self.source not in names:
            raise ValidationError(f"source {self.source!r} is not a configured domain")
        if len(self.ar_coefs) != self.n_latents:
            raise ValidationError("need one AR coefficient per shared latent factor")
        if self.n_private_latents > 0 and not 0.0 <= self.private_los_share < 1.0:
            raise ValidationError("private_los_share must lie in [0, 1)")
        source_shared = set(self.spec(self.source).shared_features)
        for d in self.domains:
            if d.n_stays < MIN_STAYS:
                raise ValidationError(
                    f"domain {d.name!r} needs >= {MIN_STAYS} stays, got {d.n_stays}"
                )
            if not 0.0 <= d.missing_rate < 1.0:
                raise ValidationError(f"missing_rate out of [0, 1) for {d.name!r}")
            if d.regime is not None and not 0 <= d.regime < self.n_regimes:
                raise ValidationError(f"regime out of range for {d.name!r}")
            if not source_shared & set(d.shared_features):
                raise ValidationError(
                    f"domain {d.name!r} shares no feature with source {self.source!r}"
                )

    def spec(self, name: str) -> DomainSpec:
        for d in self.domains:
            if d.name == name:
                return d
        raise ValidationError(f"unknown domain {name!r}")

    def domain_names(self) -> tuple:
        return tuple(d.name for d in self.domains)

    def target_names(self) -> tuple:
        return tuple(d.name for d in self.domains if d.name != self.source)


def _total_latents(config: SynthConfig) -> int:
    return config.n_latents + config.n_private_latents


def _feature_params(config: SynthConfig, name: str, is_private: bool):
    """Loadings/bias for one named feature; identical in every domain.

    Shared pool features never load on the private factors; private features
    load on everything, with the private components amplified.
    """
    total = _total_latents(config)
    rng = derive_rng(config.seed, "pool", name)
    loading = rng.normal(size=total) / np.sqrt(total)
    if config.n_private_latents:
        if is_private:
            loading[config.n_latents :] *= config.private_latent_gain
        else:
            loading[config.n_latents :] = 0.0
    bias = rng.normal() * 2.0
    scale = rng.uniform(0.5, 2.0)
    return scale * loading, bias


def _regime_means(config: SynthConfig) -> np.ndarray:
    """Regime offsets shift the features but not the outcome scale: the
    component along the length-of-stay weights is projected out, so every
    regime shares the same LoS marginal while its feature distribution
    differs."""
    w = _los_weights(config)
    out = np.empty((config.n_regimes, _total_latents(config)))
    for r in range(config.n_regimes):
        mu = derive_rng(config.seed, "regime", r).normal(size=_total_latents(config))
        out[r] = mu - (mu @ w) * w
    return config.regime_spread * out


def _los_weights(config: SynthConfig) -> np.ndarray:
    rng = derive_rng(config.seed, "los weights")
    w = rng.normal(size=config.n_latents)
    w /= np.linalg.norm(w)
    if not config.n_private_latents:
        return w
    wp = rng.normal(size=config.n_private_latents)
    wp /= np.linalg.norm(wp)
    share = config.private_los_share
    return np.concatenate([np.sqrt(1.0 - share) * w, np.sqrt(share) * wp])


def generate_domain(config: SynthConfig, name: str):
    """Returns (EventTable, targets dict) for one domain."""
    spec = config.spec(name)
    rng = derive_rng(config.seed, "synth", name)
    m = spec.n_stays
    k = _total_latents(config)
    regime_means = _regime_means(config)
    if spec.regime is None:
        regimes = rng.integers(0, config.n_regimes, size=m)
    else:
        regimes = np.full(m, spec.regime)
    mu = regime_means[regimes]  # (m, k)

    ar = np.asarray(tuple(config.ar_coefs) + (config.private_ar,) * config.n_private_latents)
    latents = np.empty((m, HOURS, k))
    latents[:, 0, :] = mu + rng.normal(size=(m, k))
    for t in range(1, HOURS):
        step = rng.normal(size=(m, k)) * config.latent_noise
        latents[:, t, :] = mu + ar * (latents[:, t - 1, :] - mu) + step

    feature_names = spec.feature_names()
    private = set(spec.private_names())
    n = len(feature_names)
    loadings = np.empty((n, k))
    biases = np.empty(n)
    for j, feat in enumerate(feature_names):
        loadings[j], biases[j] = _feature_params(config, feat, feat in private)
    values = latents @ loadings.T + biases
    if config.feature_noise > 0:
        values = values + rng.normal(size=values.shape) * config.feature_noise

    w = _los_weights(config)
    summary = latents.mean(axis=1) @ w
    los_log = config.los_gain * summary + rng.normal(size=m) * config.los_noise
    targets_arr = 1.0 + config.los_scale * np.exp(los_log)

    observed = rng.random(size=(m, HOURS, n)) >= spec.missing_rate
    dup = observed & (rng.random(size=(m, HOURS, n)) < config.duplicate_event_fraction)

    si, ti, fi = np.nonzero(observed)
    stay_ids = si + 1
    offsets = ti * 60.0 + 17.0
    feats = np.asarray(feature_names, dtype=object)[fi]
    vals = values[si, ti, fi]

    dsi, dti, dfi = np.nonzero(dup)
    events = EventTable(
        domain=name,
        stay_ids=np.concatenate([stay_ids, dsi + 1]),
        offsets=np.concatenate([offsets, dti * 60.0 + 43.0]),
        features=np.concatenate([feats, np.asarray(feature_names, dtype=object)[dfi]]),
        values=np.concatenate([vals, values[dsi, dti, dfi]]),
    )
    targets = {i + 1: float(targets_arr[i]) for i in range(m)}
    return events, targets


def synth_generate(config: SynthConfig) -> dict:
    """All domains: name -> (EventTable, targets)."""
    return {d.name: generate_domain(config, d.name) for d in config.domains}


def synth_prepared(config: SynthConfig, min_unique: int = 2,
                   min_fraction: float = 0.30) -> dict:
    """Generate and run the full curation pipeline: name -> PreparedDomain."""
    out = {}
    for d in config.domains:
        events, targets = generate_domain(config, d.name)
        out[d.name] = prepare_domain(events, targets, min_unique=min_unique,
                                     min_fraction=min_fraction)
    return out


def config_to_record(config: SynthConfig) -> dict:
    return {
        "source": config.source,
        "seed": config.seed,
        "n_latents": config.n_latents,
        "n_regimes": config.n_regimes,
        "ar_coefs": list(config.ar_coefs),
        "latent_noise": config.latent_noise,
        "regime_spread": config.regime_spread,
        "feature_noise": config.feature_noise,
        "los_gain": config.los_gain,
        "los_noise": config.los_noise,
        "los_scale": config.los_scale,
        "duplicate_event_fraction": config.duplicate_event_fraction,
        "n_private_latents": config.n_private_latents,
        "private_ar": config.private_ar,
        "private_los_share": config.private_los_share,
        "private_latent_gain": config.private_latent_gain,
        "domains": [
            {
                "name": d.name,
                "n_stays": d.n_stays,
                "shared_features": list(d.shared_features),
                "n_private": d.n_private,
                "missing_rate": d.missing_rate,
                "regime": d.regime,
            }
            for d in config.domains
        ],
    }


def config_from_record(rec: dict) -> SynthConfig:
    domains = tuple(
        DomainSpec(
            name=d["name"],
            n_stays=int(d["n_stays"]),
            shared_features=tuple(d["shared_features"]),
            n_private=int(d.get("n_private", 0)),
            missing_rate=float(d.get("missing_rate", 0.3)),
            regime=d.get("regime"),
        )
        for d in rec["domains"]
    )
    kwargs = {k: rec[k] for k in (
        "seed", "n_latents", "n_regimes", "latent_noise", "regime_spread",
        "feature_noise", "los_gain", "los_noise", "los_scale",
        "duplicate_event_fraction", "n_private_latents", "private_ar",
        "private_los_share", "private_latent_gain",
    ) if k in rec}
    if "ar_coefs" in rec:
        kwargs["ar_coefs"] = tuple(rec["ar_coefs"])
    return SynthConfig(domains=domains, source=rec["source"], **kwargs)
