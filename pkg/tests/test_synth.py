from dataclasses import replace

import numpy as np
import pytest

from aqcomplete import synth
from aqcomplete.errors import InputError
from aqcomplete.geo import GeoPoint, haversine_distance, offset_point
from aqcomplete.graph import snap_to_segments
from aqcomplete.ingest import AggregationConfig, build_observations

TINY = synth.SynthConfig(grid_w=4, grid_h=3, n_vehicles=2, days=1, record_interval=300.0)


def single_source(amplitude=50.0, phase=0.0):
    return synth.GroundTruthField(np.array([51.2]), np.array([4.4]), np.array([amplitude]), np.array([phase]),
                                  base_level=20.0, plume_scale=250.0, diurnal_strength=0.6)


def test_network_2x2():
    net = synth.generate_network(replace(TINY, grid_w=2, grid_h=2))
    assert len(net.segments) == 4
    assert all(len(s.points) == 2 for s in net.segments)


def test_network_block_length_and_centre():
    cfg = replace(TINY, grid_w=3, grid_h=3)
    net = synth.generate_network(cfg)
    a, b = net.segments[0].points[:2]
    assert haversine_distance(a, b) == pytest.approx(cfg.block_m, rel=1e-3)
    middle = net.segments[1].points[1]
    assert haversine_distance(middle, GeoPoint(*cfg.origin)) < 1.0


def test_network_deterministic():
    assert synth.generate_network(TINY).to_json() == synth.generate_network(TINY).to_json()


def test_field_at_source_centre():
    assert synth.field_value(single_source(), GeoPoint(51.2, 4.4), 0.0) == pytest.approx(70.0, abs=1e-9)


def test_field_diurnal_peak():
    # a quarter day in, sin reaches 1
    assert single_source()(GeoPoint(51.2, 4.4), synth.DAY / 4) == pytest.approx(20.0 + 50.0 * 1.6, abs=1e-9)


def test_field_far_away_is_base():
    far = GeoPoint(*offset_point((51.2, 4.4), 5000.0, 0.0))
    assert synth.field_value(single_source(), far, 123.0) == pytest.approx(20.0, abs=1e-9)


def test_field_never_negative(rng):
    fld = synth.GroundTruthField(np.array([51.2]), np.array([4.4]), np.array([50.0]), np.array([0.0]),
                                 base_level=0.0, plume_scale=250.0, diurnal_strength=3.0)
    vals = fld.evaluate(51.2 + rng.normal(0, 0.003, 500), 4.4 + rng.normal(0, 0.003, 500), rng.uniform(0, 1e5, 500))
    assert (vals >= 0).all()
    assert (vals == 0).any()


def test_no_vehicles_empty_trace():
    cfg = replace(TINY, n_vehicles=0)
    assert synth.simulate_vehicles(synth.generate_network(cfg), synth.make_field(cfg), cfg) == []


def test_trace_positions_on_network():
    data = synth.generate(TINY)
    coords = np.array([[r.position.lat, r.position.lon] for r in data.records])
    snapped = snap_to_segments(coords, data.network, tolerance=1.0)
    assert all(s is not None for s in snapped)


def test_trace_cadence_and_span():
    data = synth.generate(TINY)
    per_vehicle = TINY.days * 86400 / TINY.record_interval
    assert len(data.records) == TINY.n_vehicles * per_vehicle
    ts = [r.timestamp for r in data.records]
    assert ts == sorted(ts)
    assert TINY.start_time <= ts[0] and ts[-1] < TINY.start_time + TINY.days * 86400


def test_active_hours_respected():
    cfg = replace(TINY, active_hours=(7.0, 13.0))
    hours = [((r.timestamp - cfg.start_time) % 86400) / 3600 for r in synth.generate(cfg).records]
    assert min(hours) >= 7.0 and max(hours) < 13.0


def test_generate_deterministic_and_seed_sensitive():
    a, b = synth.generate(TINY), synth.generate(TINY)
    assert a.records == b.records
    assert synth.generate(replace(TINY, seed=1)).records != a.records


def test_invalid_config():
    with pytest.raises(InputError):
        synth.SynthConfig(grid_w=1)
    with pytest.raises(InputError):
        synth.SynthConfig(active_hours=(10.0, 9.0))
    with pytest.raises(InputError):
        synth.preset("city-scale")


def test_desk_preset_shape(desk_obs):
    n, t = desk_obs.shape
    assert n <= 400
    assert t == 72
    assert 0 < desk_obs.density < 1


def test_ground_truth_matrix_matches_field(desk_dataset, desk_obs):
    gt = synth.ground_truth_matrix(desk_dataset.field, desk_obs.locations[:3], desk_obs.slot_times[:4])
    expected = desk_dataset.field(desk_obs.locations[2], desk_obs.slot_times[3] + 1800.0)
    assert gt.shape == (3, 4)
    assert gt[2, 3] == pytest.approx(expected, abs=1e-12)


@pytest.mark.slow
def test_paper_scale_density():
    data = synth.generate(synth.preset("paper-scale", seed=0))
    obs = build_observations(data.records, AggregationConfig.covering(data.records))
    assert 0.003 <= obs.density <= 0.015
