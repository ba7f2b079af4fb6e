import numpy as np

from urbanfuse.scene import FACADE, ROOF, SceneParams, generate_scene, segment_hits_rect


def test_noise_free_points_lie_on_surface():
    sc = generate_scene(SceneParams(noise_aerial=0, noise_street=0), seed=3)
    assert np.max(sc.on_surface_distance(sc.aerial.points)) < 1e-9
    assert np.max(sc.on_surface_distance(sc.street.points)) < 1e-9


def test_fixed_seed_is_byte_identical():
    a, b = generate_scene(seed=5), generate_scene(seed=5)
    for x, y in ((a.aerial, b.aerial), (a.street, b.street)):
        assert x.points.tobytes() == y.points.tobytes()
        assert x.vis_indices.tobytes() == y.vis_indices.tobytes()
    assert generate_scene(seed=6).aerial.points.tobytes() != a.aerial.points.tobytes()


def test_emitted_sight_lines_miss_every_face():
    sc = generate_scene(SceneParams(aerial_density=2.0, street_density=6.0), seed=1)
    for cloud, foot, sensors in (
        (sc.aerial, sc.aerial_footpoints, sc.aerial_sensors),
        (sc.street, sc.street_footpoints, sc.street_sensors),
    ):
        for i in range(len(cloud)):
            for s in cloud.visibility(i):
                for f in sc.faces:
                    assert not segment_hits_rect(foot[i], sensors.positions[s], f)


def test_occluded_sensor_is_not_listed():
    sc = generate_scene(SceneParams(aerial_density=2.0, street_density=6.0), seed=2)
    # a street point on the -y wall cannot see sensors behind the +y wall
    south = np.flatnonzero(sc.street_footpoints[:, 1] < -4.99)
    north_sensors = np.flatnonzero(sc.street_sensors.positions[:, 1] > 5)
    assert len(south) and len(north_sensors)
    for i in south:
        assert not set(sc.street.visibility(i)) & set(north_sensors)


def test_street_covers_lower_facades_only():
    sc = generate_scene(seed=0)
    assert np.all(sc.street_kind == FACADE)
    assert sc.street_footpoints[:, 2].max() <= SceneParams().street_max_height


def test_bulge_peaks_mid_wall():
    sc = generate_scene(SceneParams(noise_aerial=0, facade_bulge=0.5), seed=0)
    off = sc.on_surface_distance(sc.aerial.points)
    facade = sc.aerial_kind == FACADE
    assert off[facade].max() <= 0.5 + 1e-9 and off[facade].max() > 0.4
    assert np.all(off[sc.aerial_kind == ROOF] < 1e-9)


def test_ground_truth_samples():
    sc = generate_scene(seed=0)
    pts, kind, covered = sc.sample_surface(0.5)
    assert np.max(sc.on_surface_distance(pts)) < 1e-9
    assert set(np.unique(kind)) == {0, 1, 2}
    assert np.all(kind[covered] == FACADE)
