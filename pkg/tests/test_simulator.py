"""Physics sanity, injection semantics, and dataset generation."""

import numpy as np
import pytest

from cordcpd.dataio import load_manifest, load_split, read_tensor
from cordcpd.rng import Rng
from cordcpd.simulator import (SimConfig, connection_hamming, generate_dataset,
                               generate_series, generate_series_batch,
                               inject_change, kinetic_energy, pair_indices,
                               sample_connections, simulate_segment,
                               spring_potential)


def big_box(**kw) -> SimConfig:
    """Config whose walls are far enough away to never matter."""
    return SimConfig(box_half_width=1e6, **kw)


# ---------------------------------------------------------------------------
# integrator

def test_free_particles_move_in_straight_lines():
    cfg = big_box()
    pos = np.array([[[0.0, 0.0], [1.0, -1.0], [-2.0, 0.5]]])
    vel = np.array([[[0.3, -0.1], [0.0, 0.4], [-0.2, 0.0]]])
    conn = np.zeros((1, 3, 3))
    frames, _, _ = simulate_segment(pos, vel, conn, 20, cfg)
    dt_rec = cfg.sample_every * cfg.fine_dt
    for rec in range(20):
        t = (rec + 1) * dt_rec
        assert np.allclose(frames[0, rec, :, :2], pos[0] + t * vel[0], atol=1e-9)
        assert np.array_equal(frames[0, rec, :, 2:], vel[0])


def test_two_particle_energy_drift_below_a_tenth_percent():
    cfg = big_box()
    pos = np.array([[[0.0, 0.0], [2.0, 0.0]]])
    vel = np.array([[[0.0, 0.3], [0.0, -0.3]]])
    conn = np.ones((1, 2, 2)) - np.eye(2)[None]
    frames, _, _ = simulate_segment(pos, vel, conn[0][None], 100, cfg)
    k = cfg.spring_constant
    start = np.concatenate([pos[0], vel[0]], axis=-1)
    e0 = kinetic_energy(start) + spring_potential(start, conn[0], k)
    energies = [kinetic_energy(f) + spring_potential(f, conn[0], k)
                for f in frames[0]]
    drift = np.abs(np.array(energies) - e0) / e0
    assert drift.max() < 1e-3


def test_coarse_grid_tracks_ten_times_finer_reference():
    cfg = big_box()
    rng = Rng(17)
    pos = rng.normal(scale=0.5, size=(1, 5, 2))
    vel = rng.normal(scale=0.3, size=(1, 5, 2))
    conn = sample_connections(rng.substream("wiring"), cfg)[None]
    coarse, _, _ = simulate_segment(pos, vel, conn, 50, cfg)
    fine, _, _ = simulate_segment(pos, vel, conn, 50, cfg, fine_dt=cfg.fine_dt / 10)
    assert np.abs(coarse - fine).max() < 1e-3


def test_momentum_conserved_without_walls():
    cfg = big_box()
    rng = Rng(3)
    pos = rng.normal(scale=0.5, size=(1, 5, 2))
    vel = rng.normal(scale=0.4, size=(1, 5, 2))
    conn = sample_connections(rng.substream("wiring"), cfg)[None]
    frames, _, _ = simulate_segment(pos, vel, conn, 100, cfg)
    p0 = vel[0].sum(axis=0)
    momenta = frames[0, :, :, 2:].sum(axis=1)
    assert np.abs(momenta - p0).max() < 1e-9


def test_wall_reflection_folds_the_free_trajectory():
    cfg = SimConfig(box_half_width=1.0)
    pos = np.array([[[0.9, 0.0]]])
    vel = np.array([[[0.5, 0.0]]])
    conn = np.zeros((1, 1, 1))
    frames, _, _ = simulate_segment(pos, vel, conn, 30, cfg)
    dt_rec = cfg.sample_every * cfg.fine_dt
    xs = frames[0, :, 0, 0]
    vxs = frames[0, :, 0, 2]
    assert np.abs(xs).max() <= 1.0 + 1e-12
    for rec in range(30):
        unfolded = 0.9 + 0.5 * (rec + 1) * dt_rec
        expected = unfolded if unfolded <= 1.0 else 2.0 - unfolded
        assert xs[rec] == pytest.approx(expected, abs=1e-9)
        assert vxs[rec] == pytest.approx(0.5 if unfolded <= 1.0 else -0.5)


# ---------------------------------------------------------------------------
# wiring and injections

def test_sampled_connections_are_symmetric_binary_hollow():
    cfg = SimConfig()
    conn = sample_connections(Rng(0), cfg)
    assert conn.shape == (5, 5)
    assert np.array_equal(conn, conn.T)
    assert np.all(np.diag(conn) == 0)
    assert set(np.unique(conn)) <= {0.0, 1.0}


def test_connection_hamming_counts_unordered_pairs():
    a = np.zeros((3, 3))
    b = a.copy()
    b[0, 1] = b[1, 0] = 1
    b[1, 2] = b[2, 1] = 1
    assert connection_hamming(a, b) == 2
    assert connection_hamming(a, a) == 0


def test_location_injection_moves_positions_only():
    cfg = SimConfig()
    rng = Rng(11)
    pos = rng.normal(size=(5, 2))
    vel = rng.normal(size=(5, 2))
    conn = sample_connections(rng.substream("wiring"), cfg)
    new_pos, new_vel, new_conn = inject_change(
        pos.copy(), vel.copy(), conn, "location", rng.substream("jolt"), cfg)
    assert not np.array_equal(new_pos, pos)
    assert np.array_equal(new_vel, vel)
    assert np.array_equal(new_conn, conn)
    assert np.abs(new_pos).max() <= cfg.box_half_width


def test_speed_injection_moves_velocities_only():
    cfg = SimConfig()
    rng = Rng(12)
    pos = rng.normal(size=(5, 2))
    vel = rng.normal(size=(5, 2))
    conn = sample_connections(rng.substream("wiring"), cfg)
    new_pos, new_vel, new_conn = inject_change(
        pos.copy(), vel.copy(), conn, "speed", rng.substream("jolt"), cfg)
    assert np.array_equal(new_pos, pos)
    assert not np.array_equal(new_vel, vel)
    assert np.array_equal(new_conn, conn)


def test_connection_injection_rewires_enough_pairs():
    cfg = SimConfig()
    rng = Rng(13)
    pos = rng.normal(size=(5, 2))
    vel = rng.normal(size=(5, 2))
    conn = sample_connections(rng.substream("wiring"), cfg)
    new_pos, new_vel, new_conn = inject_change(
        pos.copy(), vel.copy(), conn, "connection", rng.substream("jolt"), cfg)
    assert np.array_equal(new_pos, pos)
    assert np.array_equal(new_vel, vel)
    assert connection_hamming(conn, new_conn) >= cfg.min_connection_flips
    assert np.array_equal(new_conn, new_conn.T)


def test_impossible_flip_requirement_raises():
    # 5 particles have 10 unordered pairs; 11 flips can never happen
    cfg = SimConfig(min_connection_flips=11)
    rng = Rng(14)
    conn = sample_connections(rng.substream("wiring"), cfg)
    with pytest.raises(RuntimeError, match="flips"):
        inject_change(np.zeros((5, 2)), np.zeros((5, 2)), conn,
                      "connection", rng.substream("jolt"), cfg)


def test_unknown_change_type_rejected():
    with pytest.raises(ValueError, match="change type"):
        inject_change(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)),
                      "teleport", Rng(0), SimConfig())


# ---------------------------------------------------------------------------
# whole series

def test_series_shape_and_change_window():
    cfg = SimConfig(t_steps=60, change_window=(20, 40))
    series = generate_series("location", Rng(21), cfg)
    assert series.values.shape == (60, 5, 4)
    assert 20 <= series.change_step <= 40
    assert np.isfinite(series.values).all()


def test_change_step_frame_is_already_post_change():
    cfg = SimConfig()
    series = generate_series("speed", Rng(22), cfg)
    c = series.change_step
    # replay the pre-change segment: everything strictly before frame c-1
    # matches an undisturbed run, the frame at c-1 does not
    pos = series.values[0, :, :2][None].copy()
    vel = series.values[0, :, 2:][None].copy()
    replay, _, _ = simulate_segment(pos, vel, series.connections_before[None],
                                    c - 1, cfg)
    assert np.array_equal(replay[0, :c - 2], series.values[1:c - 1])
    assert not np.array_equal(replay[0, c - 2], series.values[c - 1])
    # a speed jolt leaves the positions of frame c-1 untouched
    assert np.array_equal(replay[0, c - 2, :, :2], series.values[c - 1, :, :2])


def test_connection_series_keeps_state_continuous_at_the_change():
    cfg = SimConfig()
    series = generate_series("connection", Rng(23), cfg)
    c = series.change_step
    pos = series.values[0, :, :2][None].copy()
    vel = series.values[0, :, 2:][None].copy()
    replay, _, _ = simulate_segment(pos, vel, series.connections_before[None],
                                    c - 1, cfg)
    # rewiring changes forces, not state: frame c-1 itself is bitwise equal
    assert np.array_equal(replay[0, c - 2], series.values[c - 1])
    assert connection_hamming(series.connections_before,
                              series.connections_after) >= cfg.min_connection_flips


def test_ground_truth_matrices_switch_at_the_change_step():
    series = generate_series("connection", Rng(24), SimConfig())
    mats = series.ground_truth_matrices()
    c = series.change_step
    assert mats.shape == (100, 5, 5)
    assert np.array_equal(mats[c - 2], series.connections_before)
    assert np.array_equal(mats[c - 1], series.connections_after)


def test_batch_generation_is_bitwise_equal_to_single():
    cfg = SimConfig(t_steps=40, change_window=(10, 30))
    master = Rng(77)
    rngs = [master.substream("series", "train", "connection", i) for i in range(3)]
    batch = generate_series_batch("connection", rngs, cfg)
    for i, got in enumerate(batch):
        want = generate_series(
            "connection", master.substream("series", "train", "connection", i), cfg)
        assert np.array_equal(got.values, want.values)
        assert got.change_step == want.change_step
        assert np.array_equal(got.connections_before, want.connections_before)
        assert np.array_equal(got.connections_after, want.connections_after)


# ---------------------------------------------------------------------------
# dataset generation

def test_generate_dataset_counts_and_normalization(tmp_path):
    counts = {"train": {"location": 2, "speed": 1},
              "val": {"connection": 1},
              "test": {"speed": 1}}
    cfg = SimConfig(t_steps=30, change_window=(10, 20))
    manifest = generate_dataset(counts, 5, cfg, tmp_path)
    assert len(manifest.split_records("train")) == 3
    assert len(manifest.split_records("val")) == 1
    assert len(manifest.split_records("test")) == 1
    assert manifest.normalized and len(manifest.scale) == 4
    # locations divide by the box half-width, velocities by their train max
    assert manifest.scale[0] == cfg.box_half_width
    assert manifest.scale[1] == cfg.box_half_width

    reloaded = load_manifest(tmp_path)      # validates shapes on disk
    train = load_split(reloaded, "train")
    assert train.values.shape == (3, 30, 5, 4)
    assert np.abs(train.values[:, :, :, 2:]).max() == pytest.approx(1.0)
    assert train.connections.shape == (3, 2, 5, 5)


def test_generate_dataset_is_deterministic(tmp_path):
    counts = {"train": {"location": 1}}
    cfg = SimConfig(t_steps=20, change_window=(5, 15))
    m1 = generate_dataset(counts, 9, cfg, tmp_path / "a")
    m2 = generate_dataset(counts, 9, cfg, tmp_path / "b")
    rec1, rec2 = m1.series[0], m2.series[0]
    a = (tmp_path / "a" / rec1.path).read_bytes()
    b = (tmp_path / "b" / rec2.path).read_bytes()
    assert a == b
    assert read_tensor(tmp_path / "a" / rec1.connections_path).shape == (2, 5, 5)


def test_generate_dataset_rejects_unknown_split(tmp_path):
    with pytest.raises(ValueError, match="split"):
        generate_dataset({"training": {"location": 1}}, 0, SimConfig(), tmp_path)


def test_pair_indices_cover_upper_triangle():
    iu, ju = pair_indices(4)
    assert len(iu) == 6
    assert all(i < j for i, j in zip(iu, ju))
