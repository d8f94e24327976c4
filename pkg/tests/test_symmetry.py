"""Dimension diagnostics: analytic activity oracles, synthetic PCA shapes,
and the latent CSV export contract."""

import numpy as np
import pytest

import phasegan.autodiff as ad
from phasegan.autodiff import Tape
from phasegan.dataset import condition_dim
from phasegan.gan import GanConfig, generate_batch, make_gan_models
from phasegan.hnn import symplectic_rollout
from phasegan.symmetry import (
    DimensionReport,
    activity_from_pdots,
    analyze_model,
    estimate_dimension,
    export_latent_csv,
    momentum_activity,
    pca_spectrum,
)


def tiny_config(**overrides) -> GanConfig:
    base = dict(
        d_lat=2, d_cont=3, d_out=2, horizon=4, f_hidden=8,
        hnn_hidden=8, g_hidden=8, d_hidden=4,
    )
    base.update(overrides)
    return GanConfig(**base)


def rollout_activities(h_fn, q0, p0, n_steps=20, dt=0.05):
    with Tape():
        roll = symplectic_rollout(h_fn, ad.variable(q0), ad.variable(p0), n_steps, dt)
        pdots = np.stack([t.data for t in roll.pdots])
    return activity_from_pdots(pdots)


# ---------------------------------------------------------------------------
# momentum-activity oracles on hard-coded Hamiltonians


def test_free_hamiltonian_gives_exactly_zero_activity():
    # H = sum p^2 / 2 has no q dependence: every coordinate is cyclic
    h_fn = lambda q, p: ad.tsum(p * p, axis=1, keepdims=True) * ad.constant(0.5)
    q0 = np.random.default_rng(0).normal(size=(5, 4))
    p0 = np.random.default_rng(1).normal(size=(5, 4))
    act = rollout_activities(h_fn, q0, p0)
    assert np.array_equal(act, np.zeros(4))


def test_single_well_concentrates_activity_on_first_coordinate():
    # H = (q_1^2 + sum p^2) / 2: only coordinate 1 feels a force
    def h_fn(q, p):
        q1 = ad.narrow(q, 1, 0, 1)
        return (ad.tsum(q1 * q1, axis=1, keepdims=True)
                + ad.tsum(p * p, axis=1, keepdims=True)) * ad.constant(0.5)

    rng = np.random.default_rng(2)
    act = rollout_activities(h_fn, rng.normal(size=(6, 3)), rng.normal(size=(6, 3)))
    assert act[0] > 0.1
    assert np.array_equal(act[1:], np.zeros(2))
    assert np.all(act >= 0.0)


def test_momentum_activity_matches_generated_pdots():
    config = tiny_config()
    models = make_gan_models(config, np.random.default_rng(3))
    cond = np.random.default_rng(4).normal(size=condition_dim())
    act = momentum_activity(models, config, cond, n_samples=6, seed=5)
    batch = generate_batch(
        models, np.tile(cond, (6, 1)), np.ones((1, config.d_out)), config, seed=5
    )
    assert act.shape == (config.d_lat,)
    assert np.array_equal(act, np.mean(np.abs(batch.pdots), axis=(0, 1)))


# ---------------------------------------------------------------------------
# PCA estimator on synthetic clouds


def circle_latents(n_traj=120, frames=10, d_lat=20, seed=0):
    """Latent states on a unit circle spanning exactly two linear dims."""
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0, 2 * np.pi, size=(frames, n_traj))
    qs = np.zeros((frames, n_traj, d_lat))
    ps = np.zeros((frames, n_traj, d_lat))
    qs[:, :, 0] = np.cos(theta)
    ps[:, :, 0] = np.sin(theta)
    return qs, ps


def test_circle_reports_pca_two_activity_one():
    qs, ps = circle_latents()
    activities = np.zeros(20)
    activities[0] = 1.0
    activities[1] = 0.01  # below the 5% relative threshold
    report = estimate_dimension(qs, ps, activities)
    assert report.pca_dim == 2
    assert report.active_count == 1
    assert report.headline_dimension == 1


def test_isotropic_gaussian_needs_nearly_all_dimensions():
    rng = np.random.default_rng(1)
    qs = rng.normal(size=(8, 200, 5))
    ps = rng.normal(size=(8, 200, 5))
    report = estimate_dimension(qs, ps, np.ones(5))
    assert report.pca_dim >= 9
    assert report.active_count == 5


def test_all_constant_latents_report_dimension_zero():
    qs = np.ones((6, 150, 3))
    ps = np.ones((6, 150, 3))
    with pytest.warns(UserWarning):
        report = estimate_dimension(qs, ps, np.zeros(3))
    assert report.pca_dim == 0
    assert report.active_count == 0
    assert np.allclose(report.pca_spectrum, 0.0)


def test_spectrum_properties_and_rotation_invariance():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(500, 8)) @ np.diag([3.0, 2.0, 1.0, 0.5, 0.2, 0.1, 0.05, 0.01])
    spec = pca_spectrum(pts)
    assert np.all(spec >= 0)
    assert np.all(np.diff(spec) <= 0)
    total = np.sum(np.var(pts, axis=0, ddof=1))
    assert abs(spec.sum() - total) / total < 1e-12
    orth, _ = np.linalg.qr(rng.normal(size=(8, 8)))
    spec_rot = pca_spectrum(pts @ orth)
    assert np.max(np.abs(spec - spec_rot)) < 1e-10


def test_too_few_trajectories_rejected():
    qs = np.zeros((5, 10, 2))
    with pytest.raises(ValueError):
        estimate_dimension(qs, qs, np.zeros(2))


def test_absolute_threshold_overrides_relative():
    qs, ps = circle_latents(d_lat=4)
    activities = np.array([1.0, 0.5, 0.04, 0.0])
    rel = estimate_dimension(qs, ps, activities)
    absolute = estimate_dimension(qs, ps, activities, activity_threshold=0.3)
    assert rel.active_count == 2  # 5% of max keeps 1.0 and 0.5
    assert absolute.active_count == 2
    assert absolute.activity_threshold == 0.3


def test_report_serializes_to_json():
    import json

    qs, ps = circle_latents(d_lat=3)
    report = estimate_dimension(qs, ps, np.array([1.0, 0.0, 0.0]))
    doc = json.loads(report.to_json())
    assert doc["headline_dimension"] == 1
    assert doc["pca_dim"] == 2
    assert len(doc["pca_spectrum"]) == 6


def test_analyze_model_end_to_end():
    config = tiny_config()
    models = make_gan_models(config, np.random.default_rng(9))
    cond = np.random.default_rng(10).normal(size=condition_dim())
    report = analyze_model(models, config, cond, n_samples=128, seed=0)
    assert isinstance(report, DimensionReport)
    assert 0 <= report.active_count <= config.d_lat
    assert report.pca_spectrum.shape == (2 * config.d_lat,)


# ---------------------------------------------------------------------------
# latent export


def test_export_latent_csv_contract(tmp_path):
    config = tiny_config()
    models = make_gan_models(config, np.random.default_rng(11))
    cond = np.random.default_rng(12).normal(size=condition_dim())
    path = tmp_path / "latents.csv"
    export_latent_csv(models, config, cond, n_samples=2, path=path, seed=3)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "sample,t,q_1,q_2,p_1,p_2"
    assert len(lines) == 1 + 2 * config.horizon
    assert sum(1 for ln in lines if ln.startswith("sample")) == 1
    first = lines[1].split(",")
    assert first[0] == "0" and first[1] == "0"

    again = tmp_path / "latents2.csv"
    export_latent_csv(models, config, cond, n_samples=2, path=again, seed=3)
    assert path.read_bytes() == again.read_bytes()

    other = tmp_path / "latents3.csv"
    export_latent_csv(models, config, cond, n_samples=2, path=other, seed=4)
    assert path.read_bytes() != other.read_bytes()
