import dataclasses

import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from modules.core import MarkerObservation, seeded_rng
from modules.sim import AppliedWrench, SkinModel, deform_markers, render_frame
from modules.tracking import (
    CSV_COLUMNS,
    DisplacementField,
    KalmanConfig,
    MarkerTracker,
    TrackingError,
    associate,
    detect_blobs,
    kf_step,
    new_track,
)


def _static_detections(geometry, rng, sigma):
    positions = geometry.rest_positions + rng.normal(0.0, sigma, size=geometry.rest_positions.shape)
    return [(float(x), float(y), geometry.nominal_size) for x, y in positions]


def test_detect_blobs_finds_every_marker(geometry):
    markers = deform_markers(geometry, SkinModel(noise_sigma=0.0), AppliedWrench((1.3, -0.6, 0.0)))
    blobs = detect_blobs(render_frame(geometry, markers).image)
    assert len(blobs) == geometry.n_markers
    found = np.array([(x, y) for x, y, _ in blobs])
    expected = np.array([(m.x, m.y) for m in markers])
    nearest = np.linalg.norm(found[:, None, :] - expected[None, :, :], axis=-1).min(axis=1)
    assert nearest.max() < 0.35


def test_detect_blobs_filters_by_area():
    image = np.full((40, 40), 230, dtype=np.uint8)
    image[5, 5] = 0
    image[20:30, 20:30] = 0
    assert detect_blobs(image, min_area=4, max_area=400) == [(24.5, 24.5, 100.0)]
    assert detect_blobs(image, min_area=1, max_area=50) == [(5.0, 5.0, 1.0)]


def test_associate_is_greedy_by_distance():
    predicted = np.array([[0.0, 0.0], [10.0, 0.0]])
    detections = [(9.0, 0.0, 1.0), (1.0, 0.0, 1.0)]
    assert associate(predicted, detections, gate=5.0) == [1, 0]


def test_associate_ties_go_to_the_lower_marker():
    predicted = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert associate(predicted, [(1.0, 0.0, 1.0)], gate=5.0) == [0, None]


def test_associate_respects_the_gate():
    assert associate(np.array([[0.0, 0.0]]), [(9.0, 0.0, 1.0)], gate=8.0) == [None]


def test_kalman_config_validation():
    with pytest.raises(TrackingError):
        KalmanConfig(q=0.0)
    with pytest.raises(TrackingError):
        KalmanConfig(calibration_frames=0)


def test_posterior_covariance_reaches_the_riccati_fixed_point():
    config = KalmanConfig(q=0.01, r=0.1, calibration_frames=1)
    observation = MarkerObservation(0, 50.0, 60.0, 50.0)
    track = new_track(observation, config)
    for _ in range(2000):
        track = kf_step(track, config, observation)

    dt, q, r = config.dt, config.q, config.r
    a = np.array([[1.0, dt], [0.0, 1.0]])
    h = np.array([[1.0, 0.0]])
    prior = solve_discrete_are(a.T, h.T, q * np.eye(2), np.array([[r]]))
    posterior = prior - prior @ h.T @ np.linalg.inv(h @ prior @ h.T + r) @ h @ prior
    # position x and velocity vx
    block = track.cov[np.ix_([1, 6], [1, 6])]
    assert np.allclose(block, posterior, rtol=0.0, atol=1e-10)
    assert track.pd_repairs == 0


def test_missing_measurement_is_predict_only():
    config = KalmanConfig(calibration_frames=1)
    track = new_track(MarkerObservation(0, 10.0, 10.0, 50.0), config)
    predicted = kf_step(track, config, None)
    assert predicted.missed == 1
    assert predicted.updates == track.updates
    assert np.trace(predicted.cov) > np.trace(track.cov)


def test_huge_measurement_noise_matches_prediction():
    config = KalmanConfig(r=1e9, calibration_frames=1)
    seeded = new_track(MarkerObservation(0, 10.0, 20.0, 50.0), config)
    track = dataclasses.replace(seeded, cov=0.01 * np.eye(seeded.mean.size))
    updated = kf_step(track, config, MarkerObservation(0, 15.0, 25.0, 60.0))
    predicted = kf_step(track, config, None)
    np.testing.assert_allclose(updated.mean, predicted.mean, atol=1e-6)
    np.testing.assert_allclose(updated.cov, predicted.cov, atol=1e-6)


def test_filter_smooths_a_static_noisy_stream(geometry):
    rng = seeded_rng(11)
    tracker = MarkerTracker(geometry, KalmanConfig())
    fields = [tracker.step(_static_detections(geometry, rng, 0.5)) for _ in range(300)]
    rows = [row for row in tracker.rows if row[0] >= tracker.config.calibration_frames]
    raw_x = np.array([row[2] for row in rows]).reshape(-1, geometry.n_markers)
    filt_x = np.array([row[5] for row in rows]).reshape(-1, geometry.n_markers)
    raw_variance = raw_x.var(axis=0).mean()
    filtered_variance = filt_x.var(axis=0).mean()
    assert filtered_variance <= 0.25 * raw_variance
    assert abs(np.mean([f.dx.mean() for f in fields[-100:]])) < 0.1
    assert abs(np.mean([f.dy.mean() for f in fields[-100:]])) < 0.1
    assert tracker.calibrated


def test_markers_without_detection_are_stale(geometry):
    rng = seeded_rng(5)
    tracker = MarkerTracker(geometry, KalmanConfig(calibration_frames=3))
    for _ in range(5):
        tracker.step(_static_detections(geometry, rng, 0.1))
    detections = _static_detections(geometry, rng, 0.1)[1:]
    field = tracker.step(detections)
    assert field.stale[0] and not field.stale[1:].any()
    assert tracker.rows[-geometry.n_markers][-1] == 1
    assert tracker.rows[-geometry.n_markers][2] == ""
    assert len(CSV_COLUMNS) == len(tracker.rows[0])


def test_tracker_reads_a_sheared_frame(geometry):
    skin = SkinModel(noise_sigma=0.0)
    tracker = MarkerTracker(geometry, KalmanConfig(calibration_frames=5))
    rest = render_frame(geometry, deform_markers(geometry, skin, AppliedWrench())).image
    for _ in range(5):
        tracker.process_image(rest)
    sheared = render_frame(geometry, deform_markers(geometry, skin, AppliedWrench((2.0, 0.0, 0.0)))).image
    for _ in range(60):
        field = tracker.process_image(sheared)
    assert field.dx.mean() == pytest.approx(2.0, abs=0.15)
    assert abs(field.dy.mean()) < 0.15


def test_mean_displacement_skips_stale_markers():
    field = DisplacementField.from_arrays([1.0, 3.0, 100.0], [2.0, 4.0, 100.0], ratio=[1.1, 1.3, 5.0])
    field.stale[2] = True
    assert field.mean_displacement() == pytest.approx((2.0, 3.0, 0.2))
    field.stale[:] = True
    assert field.mean_displacement() == (0.0, 0.0, 0.0)
