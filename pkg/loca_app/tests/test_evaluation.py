import numpy as np
import pytest
from scipy.stats import ortho_group

from core.config import settings
from core.constants import MapKind
from core.exceptions import CalibrationError, ConfigurationError, DegenerateEmbeddingError, ShapeError, SingularityError
from ml.evaluation import (
    export_distance_scatter,
    lemma1_check,
    optimal_scale,
    position_error,
    procrustes_calibrate,
    stress,
)


@pytest.fixture
def latents():
    return np.random.default_rng(0).uniform(0, 1, size=(40, 2))


def test_stress_of_a_perfect_embedding(latents):
    report = stress(latents, latents)
    assert report.stress == 0.0
    assert report.n_pairs_used == 40 * 40
    assert report.scale_applied == 1.0


def test_stress_is_rotation_and_shift_invariant(latents):
    rotated = stress(latents @ ortho_group.rvs(2, random_state=0) + np.array([4.0, -1.0]), latents)
    assert rotated.stress == pytest.approx(0.0, abs=1e-20)

    embedding = np.random.default_rng(1).normal(size=(40, 3))
    moved = embedding @ ortho_group.rvs(3, random_state=2) + np.array([1.0, 2.0, 3.0])
    plain = stress(embedding, latents).stress
    assert abs(stress(moved, latents).stress - plain) <= 1e-12 * plain


def test_stress_example():
    """Latents {0, 1, 2} against embedding {0, 1, 3}: ordered pair sum 4 over N = 3"""
    report = stress(np.array([0.0, 1.0, 3.0]), np.array([0.0, 1.0, 2.0]))
    assert report.stress == pytest.approx(4.0 / 3.0)
    assert report.rms_distance_error == pytest.approx(np.sqrt(4.0 / 9.0))


def test_stress_applies_the_scale(latents):
    assert stress(2.0 * latents, latents, scale=0.5).stress == pytest.approx(0.0, abs=1e-24)
    with pytest.raises(ConfigurationError):
        stress(latents, latents, scale=0.0)


def test_stress_sampling_above_the_pair_limit():
    big = np.random.default_rng(2).uniform(0, 1, size=(settings.STRESS_FULL_PAIR_LIMIT + 500, 2))
    report = stress(big, big)
    assert report.stress == 0.0
    assert report.n_pairs_used == settings.STRESS_PAIR_SAMPLES


def test_sampled_stress_estimates_the_full_sum():
    rng = np.random.default_rng(3)
    points = rng.uniform(0, 1, size=(300, 2))
    embedding = points + 0.05 * rng.normal(size=points.shape)
    full = stress(embedding, points)
    sampled = stress(embedding, points, pair_subsample=200_000, seed=4)
    assert sampled.n_pairs_used == 200_000
    assert sampled.stress == pytest.approx(full.stress, rel=0.05)
    assert sampled.rms_distance_error == pytest.approx(full.rms_distance_error, rel=0.05)


def test_stress_shape_checks(latents):
    with pytest.raises(ShapeError):
        stress(latents[:5], latents)
    with pytest.raises(ShapeError):
        stress(latents[:1], latents[:1])


def test_optimal_scale(latents):
    assert optimal_scale(2.0 * latents, latents) == pytest.approx(0.5)
    assert optimal_scale(latents, latents) == pytest.approx(1.0)
    with pytest.raises(DegenerateEmbeddingError):
        optimal_scale(np.zeros((40, 2)), latents)


def test_optimal_scale_minimises_stress(latents):
    embedding = 3.0 * latents + 0.1 * np.random.default_rng(5).normal(size=latents.shape)
    best = optimal_scale(embedding, latents)
    grid = best + np.linspace(-0.05, 0.05, 101)
    values = [stress(embedding, latents, scale=s).stress for s in grid]
    assert grid[int(np.argmin(values))] == pytest.approx(best, abs=1e-3)


def test_procrustes_recovers_a_similarity(latents):
    rotation = np.array([[0.0, -1.0], [1.0, 0.0]])
    reference = 2.5 * latents @ rotation + np.array([3.0, -7.0])
    alignment = procrustes_calibrate(latents, reference, with_scale=True)
    np.testing.assert_allclose(alignment.rotation, rotation, atol=1e-10)
    assert alignment.scale == pytest.approx(2.5)
    assert alignment.residual < 1e-10
    np.testing.assert_allclose(alignment.apply(latents), reference, atol=1e-10)


def test_procrustes_allows_reflections(latents):
    reflection = np.array([[1.0, 0.0], [0.0, -1.0]])
    reference = latents @ reflection + 1.0
    alignment = procrustes_calibrate(latents, reference)
    assert np.linalg.det(alignment.rotation) == pytest.approx(-1.0)
    assert alignment.residual < 1e-10
    np.testing.assert_allclose(alignment.rotation @ alignment.rotation.T, np.eye(2), atol=1e-12)


def test_procrustes_on_an_anchor_subset(latents):
    rotation = ortho_group.rvs(2, random_state=7)
    reference = latents @ rotation + 0.25
    alignment = procrustes_calibrate(latents, reference, anchor_subset=[0, 3, 5, 8])
    assert position_error(alignment.apply(latents), reference) < 1e-10


def test_procrustes_rejects_degenerate_points(latents):
    line = np.column_stack([np.linspace(0, 1, 10), np.zeros(10)])
    with pytest.raises(CalibrationError):
        procrustes_calibrate(line, latents[:10])
    with pytest.raises(CalibrationError):
        procrustes_calibrate(latents[:2], latents[:2])
    with pytest.raises(ShapeError):
        procrustes_calibrate(latents, latents[:, :1])


def test_position_error():
    assert position_error(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([[3.0, 4.0], [1.0, 1.0]])) == 2.5


def test_linear_maps_have_only_sampling_error():
    matrix = np.array([[2.0, 1.0], [0.0, 1.0]])
    m = 10_000
    errors = [
        lemma1_check(MapKind.LINEAR, np.zeros(2), 0.01, m, seed=seed, matrix=matrix) for seed in range(5)
    ]
    assert np.mean(errors) < 3.0 / np.sqrt(m)


def test_linear_error_decays_like_inverse_root_samples():
    matrix = np.array([[1.0, 0.5], [0.0, 1.0], [1.0, -1.0]])
    sizes = [1_000, 10_000, 100_000]
    mean_errors = [
        np.mean([lemma1_check(MapKind.LINEAR, np.zeros(2), 0.02, m, seed=seed, matrix=matrix) for seed in range(10)])
        for m in sizes
    ]
    slope = np.polyfit(np.log(sizes), np.log(mean_errors), 1)[0]
    assert -0.65 <= slope <= -0.35


def test_f1_error_is_second_order_in_sigma():
    """Against the linearised draws the f1 remainder scales like sigma^2"""
    x0 = np.array([0.5, 0.5])
    coarse = lemma1_check(MapKind.F1, x0, 0.02, 100_000, seed=0, control_variate=True)
    fine = lemma1_check(MapKind.F1, x0, 0.01, 100_000, seed=0, control_variate=True)
    assert 2.5 <= coarse / fine <= 6.0


def test_lemma1_argument_checks():
    with pytest.raises(ConfigurationError):
        lemma1_check(MapKind.F1, np.array([0.5, 0.5]), 0.0, 100)
    with pytest.raises(ConfigurationError):
        lemma1_check(MapKind.LINEAR, np.zeros(2), 0.01, 100)
    with pytest.raises(SingularityError):
        lemma1_check(MapKind.STEREOGRAPHIC, np.array([0.0, 0.0, 1.0]), 0.01, 100)
    with pytest.raises(ShapeError):
        lemma1_check(MapKind.F1, np.zeros(3), 0.01, 100)


def test_stereographic_at_the_south_pole_is_nearly_exact():
    error = lemma1_check(MapKind.STEREOGRAPHIC, np.array([0.0, 0.0, -1.0]), 0.001, 10_000, control_variate=True)
    assert error < 1e-2


def test_distance_scatter(latents):
    frame = export_distance_scatter(2.0 * latents, latents, scale=0.5, n_pairs=500, seed=1)
    assert list(frame.columns) == ["latent_dist", "embedded_dist"]
    assert len(frame) == 500
    assert np.all(frame["latent_dist"] > 0)
    np.testing.assert_allclose(frame["embedded_dist"], frame["latent_dist"], rtol=1e-12)
    again = export_distance_scatter(2.0 * latents, latents, scale=0.5, n_pairs=500, seed=1)
    assert frame.equals(again)


def test_empty_distance_scatter(latents):
    frame = export_distance_scatter(latents, latents, n_pairs=0)
    assert frame.empty
    assert frame.to_csv(index=False) == "latent_dist,embedded_dist\n"
