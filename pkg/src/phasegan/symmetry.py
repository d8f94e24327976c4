"""Latent-dimension diagnostics for trained generators.

Two estimators, deliberately kept side by side: counting momentum
coordinates whose time derivative stays materially nonzero (the direct
reading of the cyclic-coordinate penalty), and the linear PCA dimension
of the latent trajectory cloud. They answer different questions: a 1-D
circle of latent states spans two linear dimensions but has one active
momentum, so the report carries both numbers rather than collapsing them.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .gan import GanConfig, GanModels, GeneratedBatch, generate_batch

# a coordinate counts as active when its mean |pdot| clears this fraction
# of the most active coordinate; scale-free by construction
RELATIVE_ACTIVITY_THRESHOLD = 0.05

# PCA needs a population of trajectories, not a handful of arcs
MIN_TRAJECTORIES = 100


@dataclass
class DimensionReport:
    activities: np.ndarray  # per-coordinate mean |pdot|, shape (d_lat,)
    activity_threshold: float
    active_count: int
    pca_spectrum: np.ndarray  # explained variance, descending
    pca_dim: int
    variance_threshold: float

    @property
    def headline_dimension(self) -> int:
        return self.active_count

    def to_dict(self) -> dict:
        return {
            "activities": self.activities.tolist(),
            "activity_threshold": self.activity_threshold,
            "active_count": self.active_count,
            "headline_dimension": self.headline_dimension,
            "pca_spectrum": self.pca_spectrum.tolist(),
            "pca_dim": self.pca_dim,
            "variance_threshold": self.variance_threshold,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def activity_from_pdots(pdots: np.ndarray) -> np.ndarray:
    """Mean |pdot| per latent coordinate; pdots shaped (T-1, N, d_lat)."""
    pdots = np.asarray(pdots, dtype=np.float64)
    return np.mean(np.abs(pdots), axis=tuple(range(pdots.ndim - 1)))


def momentum_activity(
    models: GanModels,
    config: GanConfig,
    cond: np.ndarray,
    n_samples: int,
    seed: int = 0,
) -> np.ndarray:
    """Mean |dp_i/dt| along noise-driven rollouts of the trained generator."""
    batch = _latent_batch(models, config, cond, n_samples, seed)
    return activity_from_pdots(batch.pdots)


def _latent_batch(
    models: GanModels,
    config: GanConfig,
    cond: np.ndarray,
    n_samples: int,
    seed: int,
) -> GeneratedBatch:
    cond = np.asarray(cond, dtype=np.float64).reshape(1, -1)
    conds = np.repeat(cond, n_samples, axis=0)
    mask = np.ones((1, config.d_out))
    return generate_batch(models, conds, mask, config, seed)


def pca_spectrum(points: np.ndarray) -> np.ndarray:
    """Explained-variance eigenvalues of the centered cloud, descending."""
    centered = points - points.mean(axis=0, keepdims=True)
    # SVD keeps the spectrum exactly non-negative, unlike eigh round-off
    s = np.linalg.svd(centered, compute_uv=False)
    var = np.zeros(points.shape[1])
    var[: s.size] = s**2 / max(points.shape[0] - 1, 1)
    return np.sort(var)[::-1]


def estimate_dimension(
    qs: np.ndarray,
    ps: np.ndarray,
    activities: np.ndarray,
    variance_threshold: float = 0.95,
    activity_threshold: float | None = None,
) -> DimensionReport:
    """Dual dimension estimate over latent trajectories shaped (T, N, d_lat).

    The headline count uses a relative activity threshold (fraction of the
    most active coordinate) unless an absolute one is given. Degenerate
    all-constant input yields dimension 0 on both estimators, with a warning.
    """
    qs = np.asarray(qs, dtype=np.float64)
    ps = np.asarray(ps, dtype=np.float64)
    if qs.shape != ps.shape or qs.ndim != 3:
        raise ValueError("latent trajectories must be (T, N, d_lat) pairs")
    if qs.shape[1] < MIN_TRAJECTORIES:
        raise ValueError(
            f"need at least {MIN_TRAJECTORIES} trajectories, got {qs.shape[1]}"
        )
    activities = np.asarray(activities, dtype=np.float64)

    points = np.concatenate([qs, ps], axis=2).reshape(-1, 2 * qs.shape[2])
    spectrum = pca_spectrum(points)
    total = spectrum.sum()
    if total <= 0.0:
        warnings.warn("degenerate latents: zero variance, dimension 0")
        pca_dim = 0
    else:
        pca_dim = int(np.searchsorted(np.cumsum(spectrum) / total, variance_threshold) + 1)

    peak = activities.max(initial=0.0)
    if activity_threshold is None:
        if peak <= 0.0:
            warnings.warn("all momentum activities are zero, dimension 0")
            threshold = 0.0
            active = 0
        else:
            threshold = RELATIVE_ACTIVITY_THRESHOLD * peak
            active = int(np.sum(activities >= threshold))
    else:
        threshold = float(activity_threshold)
        active = int(np.sum(activities >= threshold))

    return DimensionReport(
        activities=activities,
        activity_threshold=threshold,
        active_count=active,
        pca_spectrum=spectrum,
        pca_dim=pca_dim,
        variance_threshold=variance_threshold,
    )


def analyze_model(
    models: GanModels,
    config: GanConfig,
    cond: np.ndarray,
    n_samples: int = 256,
    seed: int = 0,
    variance_threshold: float = 0.95,
    activity_threshold: float | None = None,
) -> DimensionReport:
    """End-to-end report for one condition of a trained generator."""
    batch = _latent_batch(models, config, cond, n_samples, seed)
    return estimate_dimension(
        batch.qs,
        batch.ps,
        activity_from_pdots(batch.pdots),
        variance_threshold=variance_threshold,
        activity_threshold=activity_threshold,
    )


def export_latent_csv(
    models: GanModels,
    config: GanConfig,
    cond: np.ndarray,
    n_samples: int,
    path,
    seed: int = 0,
):
    """Raw latent rollouts for external embedding tools; one row per frame."""
    batch = _latent_batch(models, config, cond, n_samples, seed)
    d = config.d_lat
    cols = (
        ["sample", "t"]
        + [f"q_{i + 1}" for i in range(d)]
        + [f"p_{i + 1}" for i in range(d)]
    )
    frames = batch.qs.shape[0]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for n in range(n_samples):
            for t in range(frames):
                row = np.concatenate([batch.qs[t, n], batch.ps[t, n]])
                vals = ",".join(f"{v:.17g}" for v in row)
                fh.write(f"{n},{t},{vals}\n")
