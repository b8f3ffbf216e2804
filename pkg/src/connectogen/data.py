"""Cohort data model: DTI volumes, connectivity matrices, synthetic subjects, splits.

The synthetic cohort stands in for private clinical data. Reference networks are
drawn from a group-conditioned random-graph model whose expected mean connectivity
strictly decreases NC > EMCI > LMCI, and each subject's volume is rendered from its
own network, so the volume carries a learnable signal about the connectivity it
came from.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache

import numpy as np

from .errors import DimensionError, StratificationError, ValidationError

VOLUME_SHAPE = (109, 91, 91)
N_REGIONS = 90
N_EDGES = N_REGIONS * (N_REGIONS - 1) // 2  # 4005 undirected edges


class Label(IntEnum):
    NC = 0
    EMCI = 1
    LMCI = 2

    @classmethod
    def from_name(cls, name: str) -> "Label":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValidationError(f"unknown class label {name!r}") from None


@dataclass
class DtiVolume:
    """Single-channel scalar volume of shape (109, 91, 91)."""

    voxels: np.ndarray
    subject_id: str

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.shape != VOLUME_SHAPE:
            raise DimensionError(
                f"volume shape must be {VOLUME_SHAPE}, got {self.voxels.shape}"
            )
        if not np.all(np.isfinite(self.voxels)):
            raise ValidationError("volume contains non-finite values")
        if self.voxels.min() < 0:
            raise ValidationError("volume contains negative intensities")


@dataclass
class ConnectivityMatrix:
    """90x90 symmetric connectivity with entries in [0, 1] and zero diagonal."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (N_REGIONS, N_REGIONS):
            raise DimensionError(f"matrix must be 90x90, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValidationError("matrix contains non-finite values")
        if w.min() < 0.0 or w.max() > 1.0:
            raise ValidationError("matrix entries must lie in [0, 1]")
        if not np.array_equal(w, w.T):
            raise ValidationError("matrix must be exactly symmetric")
        if np.any(np.diagonal(w) != 0.0):
            raise ValidationError("matrix diagonal must be zero")
        self.weights = w

    def mean_connectivity(self) -> float:
        """Mean of the 4005 upper-triangle edge weights."""
        iu = np.triu_indices(N_REGIONS, k=1)
        return float(self.weights[iu].mean())


@dataclass
class SubjectRecord:
    subject_id: str
    volume: DtiVolume
    reference_network: ConnectivityMatrix
    label: Label

    def __post_init__(self):
        self.label = Label(self.label)
        if self.volume.subject_id != self.subject_id:
            raise ValidationError(
                f"volume belongs to {self.volume.subject_id!r}, not {self.subject_id!r}"
            )


@dataclass
class CohortSplit:
    train: list[SubjectRecord]
    test: list[SubjectRecord]
    seed: int

    def __post_init__(self):
        overlap = {r.subject_id for r in self.train} & {r.subject_id for r in self.test}
        if overlap:
            raise ValidationError(f"train/test overlap: {sorted(overlap)}")


def normalize_connectivity(raw: np.ndarray) -> ConnectivityMatrix:
    """Min-max scale a raw nonnegative fiber-count matrix into a valid network.

    Scaling uses the min/max of the off-diagonal entries only; the result is then
    symmetrized as (W + W.T)/2 and the diagonal zeroed. A constant off-diagonal
    (max == min) maps to the all-zero network.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (N_REGIONS, N_REGIONS):
        raise DimensionError(f"expected 90x90 input, got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValidationError("input contains non-finite values")
    if raw.min() < 0:
        raise ValidationError("input contains negative values")

    off = ~np.eye(N_REGIONS, dtype=bool)
    lo = raw[off].min()
    hi = raw[off].max()
    if hi == lo:
        scaled = np.zeros_like(raw)
    else:
        scaled = (raw - lo) / (hi - lo)
    sym = (scaled + scaled.T) / 2.0
    np.fill_diagonal(sym, 0.0)
    return ConnectivityMatrix(sym)


# --- synthetic cohort -------------------------------------------------------
#
# Random-graph model: edge strengths are Beta draws around a fixed block-structured
# base profile. Group membership shifts edge means by +/- GROUP_DELTA scaled by a
# per-edge sensitivity, while a few anchor edges are held at extreme means in every
# group so that per-subject min-max normalization does not cancel the group shift.

_BLOCK_SIZE = 15
_PROFILE_SEED = 1815  # fixed atlas prior, independent of the cohort seed
_BETA_CONCENTRATION = 36.0
_FIBER_SCALE = 1200.0
_GROUP_DELTA = {Label.NC: +0.10, Label.EMCI: 0.0, Label.LMCI: -0.10}
_VOLUME_NOISE_SD = 0.02


@lru_cache(maxsize=1)
def _edge_profile() -> tuple[np.ndarray, np.ndarray]:
    """Base edge means and group-sensitivity for the upper triangle (4005,)."""
    iu, ju = np.triu_indices(N_REGIONS, k=1)
    bi, bj = iu // _BLOCK_SIZE, ju // _BLOCK_SIZE
    dist = np.abs(bi - bj)
    base = np.where(dist == 0, 0.62, np.where(dist == 1, 0.45, 0.30))
    sens = np.where(dist == 0, 1.0, np.where(dist == 1, 0.6, 0.3))

    rng = np.random.default_rng(_PROFILE_SEED)
    base = base + rng.uniform(-0.08, 0.08, size=base.shape)

    # Anchor edges pin the per-subject min/max so normalization is stable across groups.
    flat = {}
    for k, (i, j) in enumerate(zip(iu, ju)):
        flat[(int(i), int(j))] = k
    for a in range(8):
        base[flat[(a, 45 + a)]] = 0.98
        sens[flat[(a, 45 + a)]] = 0.0
        base[flat[(10 + a, 60 + a)]] = 0.02
        sens[flat[(10 + a, 60 + a)]] = 0.0
    return base, sens


@lru_cache(maxsize=1)
def _region_map() -> np.ndarray:
    """Flat voxel-index partition of the volume grid into 90 contiguous regions."""
    n_vox = int(np.prod(VOLUME_SHAPE))
    return (np.arange(n_vox, dtype=np.int64) * N_REGIONS) // n_vox


def _group_edge_means(label: Label) -> np.ndarray:
    base, sens = _edge_profile()
    return np.clip(base + _GROUP_DELTA[label] * sens, 0.01, 0.99)


def _sample_reference(label: Label, rng: np.random.Generator) -> ConnectivityMatrix:
    m = _group_edge_means(label)
    w = rng.beta(_BETA_CONCENTRATION * m, _BETA_CONCENTRATION * (1.0 - m))
    raw = np.zeros((N_REGIONS, N_REGIONS))
    iu = np.triu_indices(N_REGIONS, k=1)
    raw[iu] = w * _FIBER_SCALE
    raw = raw + raw.T
    return normalize_connectivity(raw)


def _render_volume(
    subject_id: str, network: ConnectivityMatrix, rng: np.random.Generator
) -> DtiVolume:
    """Regional intensity is a smooth function of the network's row sums plus noise."""
    row_mean = network.weights.sum(axis=1) / (N_REGIONS - 1)
    mu = 0.25 + 0.75 * row_mean
    flat = mu[_region_map()].astype(np.float32)
    flat = flat + _VOLUME_NOISE_SD * rng.standard_normal(flat.shape[0], dtype=np.float32)
    voxels = np.maximum(flat, 0.0).reshape(VOLUME_SHAPE)
    return DtiVolume(voxels=voxels, subject_id=subject_id)


def generate_synthetic_cohort(
    n_nc: int, n_emci: int, n_lmci: int, seed: int
) -> list[SubjectRecord]:
    """Generate a reproducible synthetic cohort; bitwise identical for a given seed."""
    for name, n in (("n_nc", n_nc), ("n_emci", n_emci), ("n_lmci", n_lmci)):
        if n < 0:
            raise ValueError(f"{name} must be >= 0, got {n}")
    counts = [(Label.NC, n_nc), (Label.EMCI, n_emci), (Label.LMCI, n_lmci)]
    children = np.random.SeedSequence(seed).spawn(n_nc + n_emci + n_lmci)
    records: list[SubjectRecord] = []
    k = 0
    for label, n in counts:
        for idx in range(n):
            rng = np.random.default_rng(children[k])
            k += 1
            sid = f"{label.name.lower()}_{idx:03d}"
            network = _sample_reference(label, rng)
            volume = _render_volume(sid, network, rng)
            records.append(
                SubjectRecord(
                    subject_id=sid, volume=volume, reference_network=network, label=label
                )
            )
    return records


def split_cohort(
    records: list[SubjectRecord], test_fraction: float, seed: int
) -> CohortSplit:
    """Stratified train/test split, deterministic for a given seed.

    Per-class test counts are allocated by largest remainder against a total of
    round(n * test_fraction), which keeps every class within one subject of its
    exact quota.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    by_label: dict[Label, list[SubjectRecord]] = {lab: [] for lab in Label}
    for r in records:
        by_label[r.label].append(r)
    empty = [lab.name for lab in Label if not by_label[lab]]
    if empty:
        raise StratificationError(f"classes with no members: {empty}")

    target_total = round(len(records) * test_fraction)
    quotas = {lab: len(by_label[lab]) * test_fraction for lab in Label}
    counts = {lab: int(np.floor(quotas[lab])) for lab in Label}
    remainder = target_total - sum(counts.values())
    order = sorted(Label, key=lambda lab: (-(quotas[lab] - counts[lab]), lab.value))
    for lab in order[: max(remainder, 0)]:
        counts[lab] += 1

    rng = np.random.default_rng(seed)
    train: list[SubjectRecord] = []
    test: list[SubjectRecord] = []
    for lab in Label:
        group = by_label[lab]
        perm = rng.permutation(len(group))
        n_test = min(counts[lab], len(group))
        test.extend(group[i] for i in perm[:n_test])
        train.extend(group[i] for i in perm[n_test:])
    train.sort(key=lambda r: r.subject_id)
    test.sort(key=lambda r: r.subject_id)
    return CohortSplit(train=train, test=test, seed=seed)
