"""First-24h curation pipeline for long-format event tables.

Events (stay, minute offset, feature, value) are resampled to hourly means,
features are kept only when at least 2 unique recorded values over the 24h
window are present for at least 30% of stays, gaps are forward- then
backward-filled, and the input space is augmented with binary imputation
indicators plus an hour-of-day column: width = (inputs x 2) + 1.

Scaling statistics (per-feature standardization) are computed on the
training split only and applied to validation/test. A feature never observed
within a stay is filled with the training-split mean (0 after scaling) and
its indicator column is all ones.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from losxfer.errors import NonFiniteError, ValidationError
from losxfer.features import FeatureSpace, canonical_name
from losxfer.seeds import derive_rng

MINUTES_WINDOW = 1440
HOURS = 24
EVENTS_HEADER = ("stay_id", "offset_min", "feature", "value")
TARGETS_HEADER = ("stay_id", "los_days")


@dataclass
class EventTable:
    """Columnar long-format records for one domain."""

    domain: str
    stay_ids: np.ndarray
    offsets: np.ndarray
    features: np.ndarray  # canonical feature names, dtype=object
    values: np.ndarray

    def __post_init__(self):
        self.stay_ids = np.asarray(self.stay_ids, dtype=np.int64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.features = np.asarray(
            [canonical_name(f) for f in self.features], dtype=object
        )
        self.values = np.asarray(self.values, dtype=np.float64)
        n = len(self.stay_ids)
        if not (len(self.offsets) == len(self.features) == len(self.values) == n):
            raise ValidationError("event table columns have mismatched lengths")
        if n and ((self.offsets < 0) | (self.offsets >= MINUTES_WINDOW)).any():
            bad = int(np.flatnonzero((self.offsets < 0) | (self.offsets >= MINUTES_WINDOW))[0])
            raise ValidationError(
                f"offset out of the [0, {MINUTES_WINDOW}) window at record {bad}"
            )
        if n and not np.isfinite(self.values).all():
            bad = int(np.flatnonzero(~np.isfinite(self.values))[0])
            raise NonFiniteError(f"non-finite event value at record {bad}")

    def __len__(self) -> int:
        return len(self.stay_ids)


@dataclass
class StayGrid:
    """24 x n hourly means with a missingness mask (True = no recording)."""

    stay_id: int
    values: np.ndarray
    mask: np.ndarray
    los: float = None


@dataclass
class GridCollection:
    feature_names: tuple
    grids: list

    def __len__(self) -> int:
        return len(self.grids)


def load_events_csv(path, domain: str) -> EventTable:
    stays, offsets, feats, vals = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != EVENTS_HEADER:
            raise ValidationError(
                f"events file must start with header {','.join(EVENTS_HEADER)}, got {header}"
            )
        for row in reader:
            if not row:
                continue
            stays.append(int(row[0]))
            offsets.append(float(row[1]))
            feats.append(row[2])
            vals.append(float(row[3]))
    return EventTable(domain=domain, stay_ids=stays, offsets=offsets,
                      features=feats, values=vals)


def save_events_csv(events: EventTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENTS_HEADER)
        for sid, off, feat, val in zip(events.stay_ids, events.offsets,
                                       events.features, events.values):
            writer.writerow([int(sid), float(off), feat, repr(float(val))])


def load_targets_csv(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != TARGETS_HEADER:
            raise ValidationError(
                f"targets file must start with header {','.join(TARGETS_HEADER)}, got {header}"
            )
        for row in reader:
            if not row:
                continue
            out[int(row[0])] = float(row[1])
    return out


def save_targets_csv(targets: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TARGETS_HEADER)
        for sid in sorted(targets):
            writer.writerow([int(sid), repr(float(targets[sid]))])


def resample_hourly(events: EventTable) -> GridCollection:
    """Hourly mean per (stay, feature); empty cells are masked.

    Hour buckets are half-open: minute offsets in [60t, 60(t+1)) land in
    hour t. Unknown features pass through; retention filters them later.
    Feature and stay order are sorted, so the result does not depend on
    record order.
    """
    feature_names = tuple(sorted(set(events.features.tolist())))
    feat_index = {f: i for i, f in enumerate(feature_names)}
    stay_ids = np.unique(events.stay_ids)
    stay_index = {int(s): i for i, s in enumerate(stay_ids)}
    m, n = len(stay_ids), len(feature_names)

    sums = np.zeros((m, HOURS, n))
    counts = np.zeros((m, HOURS, n))
    if len(events):
        si = np.asarray([stay_index[int(s)] for s in events.stay_ids])
        fi = np.asarray([feat_index[f] for f in events.features])
        hi = (events.offsets // 60).astype(np.intp)
        np.add.at(sums, (si, hi, fi), events.values)
        np.add.at(counts, (si, hi, fi), 1.0)

    with np.errstate(invalid="ignore"):
        means = np.where(counts > 0, sums / np.where(counts > 0, counts, 1.0), np.nan)
    masks = counts == 0
    grids = [
        StayGrid(stay_id=int(stay_ids[i]), values=means[i], mask=masks[i])
        for i in range(m)
    ]
    return GridCollection(feature_names=feature_names, grids=grids)


def retain_features(collection: GridCollection, min_unique: int = 2,
                    min_fraction: float = 0.30) -> tuple:
    """Keep feature j iff the fraction of stays having >= min_unique distinct
    recorded hourly values of j reaches min_fraction (boundary inclusive)."""
    if len(collection) == 0:
        raise ValidationError("retention needs at least one stay")
    m = len(collection)
    kept = []
    for j, name in enumerate(collection.feature_names):
        qualifying = 0
        for grid in collection.grids:
            observed = grid.values[~grid.mask[:, j], j]
            if len(np.unique(observed)) >= min_unique:
                qualifying += 1
        if qualifying / m >= min_fraction:
            kept.append(name)
    if not kept:
        raise ValidationError(
            "no feature satisfies the retention rule; relax min_unique/min_fraction "
            "or supply denser data"
        )
    return tuple(kept)


def impute_ffill_bfill(grid: StayGrid):
    """Forward fill along time, then backward fill leading gaps.

    Returns (filled, indicator). The indicator is 1 exactly where the mask
    was true. Features never observed within the stay remain NaN here; the
    scaling step fills them with the training-split mean.
    """
    values = grid.values
    mask = grid.mask
    steps, n = values.shape
    idx = np.where(~mask, np.arange(steps)[:, None], -1)
    ff = np.maximum.accumulate(idx, axis=0)
    filled = np.where(ff >= 0, values[np.maximum(ff, 0), np.arange(n)[None, :]], np.nan)

    rev_idx = np.where(~mask[::-1], np.arange(steps)[:, None], -1)
    bb = steps - 1 - np.maximum.accumulate(rev_idx, axis=0)[::-1]
    backfill = np.where(bb <= steps - 1,
                        values[np.minimum(bb, steps - 1), np.arange(n)[None, :]], np.nan)
    filled = np.where(np.isnan(filled), backfill, filled)
    indicator = mask.astype(np.float64)
    return filled, indicator


def augmented_names(input_names) -> tuple:
    names = tuple(canonical_name(n) for n in input_names)
    return names + tuple(f"{n}_indicator" for n in names) + ("hour",)


def augment(filled: np.ndarray, indicators: np.ndarray,
            hour: np.ndarray = None) -> np.ndarray:
    """Concatenate [features | indicators | hour] along the last axis.

    filled/indicators: (m, 24, n). hour: (m, 24) column, defaulting to the
    raw step index 0..23; the caller passes the scaled version when the
    features themselves are scaled.
    """
    if filled.shape != indicators.shape:
        raise ValidationError(
            f"filled {filled.shape} and indicators {indicators.shape} must match"
        )
    m, steps, _ = filled.shape
    if hour is None:
        hour = np.broadcast_to(np.arange(steps, dtype=np.float64), (m, steps))
    return np.concatenate([filled, indicators, hour[:, :, None]], axis=2)


def split_dataset(m: int, ratios=(0.70, 0.15, 0.15), seed: int = 0):
    """Stay-level disjoint split: floor(r0*m) / floor(r1*m) / remainder."""
    if m < 10:
        raise ValidationError(f"need at least 10 stays to split, got {m}")
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ValidationError(f"ratios must be three values summing to 1, got {ratios}")
    perm = derive_rng(seed, "split").permutation(m)
    n_train = int(np.floor(ratios[0] * m))
    n_val = int(np.floor(ratios[1] * m))
    return (perm[:n_train],
            perm[n_train : n_train + n_val],
            perm[n_train + n_val :])


@dataclass
class PreparedDomain:
    """Curated but unscaled domain: resampled, retained, imputed.

    `values` may hold NaN where a feature was never observed in a stay;
    split-time scaling resolves those to the training mean.
    """

    domain: str
    input_names: tuple
    stay_ids: np.ndarray
    values: np.ndarray      # (m, 24, n), NaN = never observed in stay
    indicators: np.ndarray  # (m, 24, n) in {0, 1}
    targets: np.ndarray     # (m,) fractional days, >= 1

    @property
    def n_stays(self) -> int:
        return len(self.targets)

    def feature_space(self) -> FeatureSpace:
        return FeatureSpace(names=augmented_names(self.input_names), domain=self.domain)


@dataclass
class ScalingStats:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    hour_mean: float
    hour_std: float

    def to_record(self) -> dict:
        return {
            "feature_mean": [float(x) for x in self.feature_mean],
            "feature_std": [float(x) for x in self.feature_std],
            "hour_mean": self.hour_mean,
            "hour_std": self.hour_std,
        }


@dataclass
class DomainDataset:
    """Model-ready tensor of one split: stays x 24 x (2n+1)."""

    domain: str
    feature_space: FeatureSpace
    tensor: np.ndarray
    targets: np.ndarray
    stay_ids: np.ndarray
    scaling: ScalingStats

    @property
    def n_stays(self) -> int:
        return len(self.targets)

    def xy(self):
        return self.tensor, self.targets


def prepare_domain(events: EventTable, targets: dict, min_unique: int = 2,
                   min_fraction: float = 0.30) -> PreparedDomain:
    """Run the curation pipeline on one domain's events."""
    collection = resample_hourly(events)
    kept = retain_features(collection, min_unique=min_unique, min_fraction=min_fraction)
    keep_idx = [collection.feature_names.index(k) for k in kept]

    m = len(collection)
    values = np.empty((m, HOURS, len(kept)))
    indicators = np.empty((m, HOURS, len(kept)))
    los = np.empty(m)
    for i, grid in enumerate(collection.grids):
        sub = StayGrid(stay_id=grid.stay_id,
                       values=grid.values[:, keep_idx],
                       mask=grid.mask[:, keep_idx])
        values[i], indicators[i] = impute_ffill_bfill(sub)
        if grid.stay_id not in targets:
            raise ValidationError(f"stay {grid.stay_id} has no length-of-stay target")
        los[i] = targets[grid.stay_id]
    if (los < 1.0).any():
        bad = int(np.flatnonzero(los < 1.0)[0])
        raise ValidationError(
            f"length of stay below 1.0 day for stay {collection.grids[bad].stay_id}; "
            "the cohort requires at least 24h in unit"
        )
    return PreparedDomain(
        domain=events.domain,
        input_names=tuple(kept),
        stay_ids=np.asarray([g.stay_id for g in collection.grids], dtype=np.int64),
        values=values,
        indicators=indicators,
        targets=los,
    )


def compute_scaling(values: np.ndarray) -> ScalingStats:
    """Per-feature mean/std over a training split (NaN-aware).

    Constant or never-observed features scale as (x - mean) / 1 to avoid
    division blowups.
    """
    with np.errstate(invalid="ignore"):
        mean = np.nanmean(values.reshape(-1, values.shape[2]), axis=0)
        std = np.nanstd(values.reshape(-1, values.shape[2]), axis=0)
    mean = np.where(np.isnan(mean), 0.0, mean)
    std = np.where(np.isnan(std) | (std == 0.0), 1.0, std)
    hours = np.arange(HOURS, dtype=np.float64)
    return ScalingStats(
        feature_mean=mean,
        feature_std=std,
        hour_mean=float(hours.mean()),
        hour_std=float(hours.std()),
    )


def assemble_dataset(prepared: PreparedDomain, idx: np.ndarray,
                     scaling: ScalingStats) -> DomainDataset:
    """Scale a subset of stays and augment to the model input layout."""
    values = prepared.values[idx]
    indicators = prepared.indicators[idx]
    scaled = (values - scaling.feature_mean) / scaling.feature_std
    scaled = np.where(np.isnan(scaled), 0.0, scaled)
    m = len(idx)
    hour = np.broadcast_to(np.arange(HOURS, dtype=np.float64), (m, HOURS))
    hour = (hour - scaling.hour_mean) / scaling.hour_std
    tensor = augment(scaled, indicators, hour)
    return DomainDataset(
        domain=prepared.domain,
        feature_space=prepared.feature_space(),
        tensor=np.ascontiguousarray(tensor),
        targets=prepared.targets[idx].copy(),
        stay_ids=prepared.stay_ids[idx].copy(),
        scaling=scaling,
    )


@dataclass
class SplitDatasets:
    train: DomainDataset
    val: DomainDataset
    test: DomainDataset

    @property
    def scaling(self) -> ScalingStats:
        return self.train.scaling


def split_and_scale(prepared: PreparedDomain, seed: int,
                    ratios=(0.70, 0.15, 0.15)) -> SplitDatasets:
    """Shuffle-split the stays, fit scaling on train only, apply everywhere."""
    tr, va, te = split_dataset(prepared.n_stays, ratios=ratios, seed=seed)
    scaling = compute_scaling(prepared.values[tr])
    return SplitDatasets(
        train=assemble_dataset(prepared, tr, scaling),
        val=assemble_dataset(prepared, va, scaling),
        test=assemble_dataset(prepared, te, scaling),
    )


MANIFEST_VERSION = 1


def save_prepared(prepared: PreparedDomain, out_dir) -> None:
    """Manifest (JSON) + tensor dump (npz); reference scaling stats are the
    seed-0 training split's, runs recompute their own."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tr, _, _ = split_dataset(prepared.n_stays, seed=0)
    reference = compute_scaling(prepared.values[tr])
    manifest = {
        "format": "losxfer-dataset",
        "version": MANIFEST_VERSION,
        "domain": prepared.domain,
        "input_names": list(prepared.input_names),
        "augmented_names": list(augmented_names(prepared.input_names)),
        "n_stays": prepared.n_stays,
        "reference_scaling_seed0_train": reference.to_record(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    np.savez(
        out / "arrays.npz",
        stay_ids=prepared.stay_ids,
        values=prepared.values,
        indicators=prepared.indicators,
        targets=prepared.targets,
    )


def load_prepared(in_dir) -> PreparedDomain:
    path = Path(in_dir)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != "losxfer-dataset":
        raise ValidationError(f"{path} is not a losxfer dataset directory")
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValidationError(
            f"unsupported dataset version {manifest.get('version')}"
        )
    arrays = np.load(path / "arrays.npz")
    return PreparedDomain(
        domain=manifest["domain"],
        input_names=tuple(manifest["input_names"]),
        stay_ids=arrays["stay_ids"],
        values=arrays["values"],
        indicators=arrays["indicators"],
        targets=arrays["targets"],
    )
