"""Min-merge assembly, voxelization, queries, baseline, and streaming."""

import numpy as np
import pytest

from linksdf import (
    EnvGrid,
    ExactTransformProvider,
    GridMismatchError,
    ObstacleVoxelSet,
    RobotSdfBatch,
    SdfSampleField,
    Sphere,
    SphereRobotModel,
    ValidationError,
    WindowGeometry,
    assemble_robot_sdfs,
    build_link_sdf,
    per_link_min_distances,
    place_links_batch,
    query_min_distances,
    sphere_baseline_distances,
    stream_min_distances,
    validate_sphere_model,
    voxelize_pointcloud,
)
from linksdf.query import (
    iter_cloud_frames,
    read_cloud_manifest,
    read_pointcloud_frame,
    write_distance_csv,
    write_pointcloud_frame,
)
from linksdf.robot import LinkPoseBatch


@pytest.fixture(scope="module")
def grid():
    return EnvGrid(extent=1.0, resolution=0.1)


def field_at(values, anchor, d_far=0.5):
    return SdfSampleField(
        values=np.asarray(values, dtype=np.float32),
        anchor=np.int64(anchor),
        d_far=d_far,
    )


class TestAssemble:
    def test_single_field_scatter(self, grid, rng):
        w = 4
        values = rng.uniform(-0.2, 0.4, size=(w, w, w)).astype(np.float32)
        field = field_at(values, [3, 5, 7])
        batch = assemble_robot_sdfs([(0, field)], grid, 1, d_far_global=0.5)
        region = batch.values[0, 3:7, 5:9, 7:11]
        assert np.array_equal(region, np.minimum(values, np.float32(0.5)))
        outside = batch.values[0].copy()
        outside[3:7, 5:9, 7:11] = 0.5
        assert np.all(outside == np.float32(0.5))

    def test_clipping_at_grid_edges(self, grid, rng):
        w = 4
        values = rng.uniform(-0.2, 0.4, size=(w, w, w)).astype(np.float32)
        field = field_at(values, [-2, 18, 0])
        batch = assemble_robot_sdfs([(0, field)], grid, 1, d_far_global=0.5)
        assert np.array_equal(
            batch.values[0, 0:2, 18:20, 0:4],
            np.minimum(values[2:, :2, :], np.float32(0.5)),
        )

    def test_idempotent_merge(self, grid, rng):
        values = rng.uniform(-0.2, 0.4, size=(4, 4, 4)).astype(np.float32)
        field = field_at(values, [8, 8, 8])
        once = assemble_robot_sdfs([(0, field)], grid, 1, 0.5)
        twice = assemble_robot_sdfs([(0, field), (0, field)], grid, 1, 0.5)
        assert np.array_equal(once.values, twice.values)

    def test_order_invariant(self, grid, rng):
        fields = [
            (0, field_at(rng.uniform(-0.2, 0.4, size=(4, 4, 4)), rng.integers(0, 16, 3)))
            for _ in range(6)
        ]
        a = assemble_robot_sdfs(fields, grid, 1, 0.5)
        b = assemble_robot_sdfs(fields[::-1], grid, 1, 0.5)
        assert np.array_equal(a.values, b.values)

    def test_merge_monotone(self, grid, rng):
        f1 = (0, field_at(rng.uniform(-0.2, 0.4, size=(4, 4, 4)), [5, 5, 5]))
        f2 = (0, field_at(rng.uniform(-0.2, 0.4, size=(4, 4, 4)), [6, 6, 6]))
        one = assemble_robot_sdfs([f1], grid, 1, 0.5)
        both = assemble_robot_sdfs([f1, f2], grid, 1, 0.5)
        assert np.all(both.values <= one.values)

    def test_memory_budget_enforced(self, grid):
        with pytest.raises(ValidationError):
            assemble_robot_sdfs([], grid, 10_000_000, 0.5, max_bytes=1 << 20)

    def test_bad_config_index(self, grid, rng):
        field = field_at(rng.uniform(size=(4, 4, 4)), [0, 0, 0])
        with pytest.raises(ValidationError):
            assemble_robot_sdfs([(5, field)], grid, 2, 0.5)


class TestVoxelize:
    def test_empty_cloud(self, grid):
        out = voxelize_pointcloud(np.empty((0, 3)), grid)
        assert out.n_occupied == 0 and out.n_points == 0 and out.n_dropped == 0

    def test_duplicates_collapse(self, grid):
        pts = np.tile(np.float64([0.31, 0.02, -0.44]), (1000, 1))
        out = voxelize_pointcloud(pts, grid)
        assert out.n_occupied == 1
        assert out.n_points == 1000

    def test_out_of_bounds_dropped_with_count(self, grid):
        pts = np.float64([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, -3.0, 0.0]])
        out = voxelize_pointcloud(pts, grid)
        assert out.n_occupied == 1
        assert out.n_dropped == 2

    def test_occupancy_statistics(self, grid):
        rng = np.random.default_rng(7)
        n = 5000
        pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * 0.999999
        out = voxelize_pointcloud(pts, grid)
        expected = 1.0 - (1.0 - 1.0 / grid.n_voxels) ** n
        assert abs(out.n_occupied / grid.n_voxels - expected) <= 0.02

    def test_occupancy_statistics_dense(self, grid):
        rng = np.random.default_rng(8)
        n = 100_000
        pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * 0.999999
        out = voxelize_pointcloud(pts, grid)
        expected = 1.0 - (1.0 - 1.0 / grid.n_voxels) ** n
        assert abs(out.n_occupied / grid.n_voxels - expected) <= 0.02


def random_batch(grid, rng, n_configs=6, d_far=0.5):
    values = rng.uniform(-0.3, d_far, size=(n_configs,) + tuple(grid.dims)).astype(
        np.float32
    )
    values.flags.writeable = False
    return RobotSdfBatch(values=values, grid=grid, d_far_global=d_far)


def obstacle_set(grid, indices):
    idx = np.unique(np.asarray(indices, dtype=np.int64).reshape(-1, 3), axis=0)
    return ObstacleVoxelSet(indices=idx, grid=grid, n_points=len(idx), n_dropped=0)


class TestQuery:
    def test_empty_obstacles_far_sentinel(self, grid, rng):
        batch = random_batch(grid, rng)
        d = query_min_distances(batch, obstacle_set(grid, np.empty((0, 3))))
        assert np.all(d == np.float32(0.5))

    def test_matches_manual_min(self, grid, rng):
        batch = random_batch(grid, rng)
        idx = rng.integers(0, 20, size=(40, 3))
        obstacles = obstacle_set(grid, idx)
        d = query_min_distances(batch, obstacles)
        manual = batch.values[
            :, obstacles.indices[:, 0], obstacles.indices[:, 1], obstacles.indices[:, 2]
        ].min(axis=1)
        assert np.array_equal(d, manual)

    def test_gather_count(self, grid, rng):
        batch = random_batch(grid, rng, n_configs=9)
        obstacles = obstacle_set(grid, rng.integers(0, 20, size=(33, 3)))
        _, stats = query_min_distances(batch, obstacles, return_stats=True)
        assert stats["gathers"] == 9 * obstacles.n_occupied

    def test_grid_mismatch(self, grid, rng):
        batch = random_batch(grid, rng)
        other = EnvGrid(extent=1.0, resolution=0.05)
        with pytest.raises(GridMismatchError):
            query_min_distances(batch, obstacle_set(other, [[0, 0, 0]]))

    def test_superset_monotone(self, grid, rng):
        batch = random_batch(grid, rng)
        a = rng.integers(0, 20, size=(25, 3))
        b = np.concatenate([a, rng.integers(0, 20, size=(25, 3))])
        da = query_min_distances(batch, obstacle_set(grid, a))
        db = query_min_distances(batch, obstacle_set(grid, b))
        assert np.all(db <= da)

    def test_permutation_invariant(self, grid, rng):
        batch = random_batch(grid, rng)
        idx = rng.integers(0, 20, size=(30, 3))
        d1 = query_min_distances(batch, obstacle_set(grid, idx))
        d2 = query_min_distances(batch, obstacle_set(grid, idx[::-1]))
        assert np.array_equal(d1, d2)


@pytest.fixture(scope="module")
def small_scene(grid):
    """One-link robot pipeline pieces shared by query-level tests."""
    link = build_link_sdf(Sphere(0.12), extent=0.3, resolution=0.01, link_id=0)
    window = WindowGeometry.build(0.3, grid)
    provider = ExactTransformProvider(window)
    rng = np.random.default_rng(42)
    rot = np.broadcast_to(np.eye(3), (4, 1, 3, 3)).copy()
    trn = rng.uniform(-0.2, 0.2, size=(4, 1, 3))
    poses = LinkPoseBatch(rotations=rot, translations=trn)
    fields = list(place_links_batch([link], poses, grid, provider))
    batch = assemble_robot_sdfs(
        ((c, f) for c, _, f in fields), grid, 4, link.d_far
    )
    return link, poses, fields, batch


class TestPipelineQueries:
    def test_voxel_inside_link_goes_negative(self, grid, small_scene):
        link, poses, fields, batch = small_scene
        for c in range(4):
            inside = voxelize_pointcloud(poses.translations[c], grid)
            d = query_min_distances(batch, inside)
            assert d[c] < 0

    def test_per_link_diagnostic_matches_single_link_query(self, grid, small_scene):
        link, poses, fields, batch = small_scene
        rng = np.random.default_rng(3)
        obstacles = obstacle_set(grid, rng.integers(0, 20, size=(50, 3)))
        per_link = per_link_min_distances(iter(fields), obstacles, 4, 1, link.d_far)
        full = query_min_distances(batch, obstacles)
        assert np.allclose(per_link[:, 0], full, atol=1e-6)


class TestSphereBaseline:
    def test_single_sphere_single_voxel(self):
        grid = EnvGrid(extent=1.0, resolution=0.2)
        spheres = SphereRobotModel(
            link_indices=np.int64([0]),
            centers=np.float64([[0, 0, 0]]),
            radii=np.float64([0.1]),
        )
        poses = LinkPoseBatch(
            rotations=np.eye(3)[None, None], translations=np.zeros((1, 1, 3))
        )
        # Voxel 6 on x has center 0.3; others centered at -0.1.
        obstacles = obstacle_set(grid, [[6, 4, 4]])
        d = sphere_baseline_distances(spheres, poses, obstacles, grid)
        expected = np.linalg.norm([0.3, -0.1, -0.1]) - 0.1
        assert d[0] == pytest.approx(expected)

    def test_voxel_inside_sphere_negative(self):
        grid = EnvGrid(extent=1.0, resolution=0.2)
        spheres = SphereRobotModel(
            link_indices=np.int64([0]),
            centers=np.float64([[0, 0, 0]]),
            radii=np.float64([0.3]),
        )
        poses = LinkPoseBatch(
            rotations=np.eye(3)[None, None],
            translations=np.float64([[[-0.1, -0.1, -0.1]]]),
        )
        obstacles = obstacle_set(grid, [[4, 4, 4]])
        assert sphere_baseline_distances(spheres, poses, obstacles, grid)[0] < 0

    def test_eval_count(self, rng):
        grid = EnvGrid(extent=1.0, resolution=0.2)
        spheres = SphereRobotModel(
            link_indices=np.int64([0, 0, 0]),
            centers=rng.normal(size=(3, 3)) * 0.02,
            radii=np.float64([0.1, 0.1, 0.1]),
        )
        poses = LinkPoseBatch(
            rotations=np.broadcast_to(np.eye(3), (5, 1, 3, 3)),
            translations=np.zeros((5, 1, 3)),
        )
        obstacles = obstacle_set(grid, rng.integers(0, 10, size=(20, 3)))
        _, stats = sphere_baseline_distances(
            spheres, poses, obstacles, grid, return_stats=True
        )
        assert stats["distance_evals"] == 5 * 3 * obstacles.n_occupied

    def test_validation_accepts_covering_model(self, arm3, rng):
        spheres = SphereRobotModel.from_robot(arm3)
        worst = validate_sphere_model(arm3, spheres, rng)
        assert worst <= 1e-9

    def test_validation_rejects_shrunk_model(self, arm3, rng):
        spheres = SphereRobotModel.from_robot(arm3)
        shrunk = SphereRobotModel(
            link_indices=spheres.link_indices,
            centers=spheres.centers,
            radii=spheres.radii * 0.7,
        )
        with pytest.raises(ValidationError):
            validate_sphere_model(arm3, shrunk, rng)


class TestStreaming:
    def test_static_cloud_deterministic(self, grid, small_scene, rng):
        *_, batch = small_scene
        cloud = rng.uniform(-0.9, 0.9, size=(200, 3))
        frames = [(float(i), cloud) for i in range(4)]
        rows = list(stream_min_distances(batch, frames))
        assert len(rows) == 4
        for _, d in rows[1:]:
            assert np.array_equal(d, rows[0][1])

    def test_empty_frame_far_sentinel(self, grid, small_scene):
        *_, batch = small_scene
        rows = list(stream_min_distances(batch, [(0.0, np.empty((0, 3)))]))
        assert np.all(rows[0][1] == np.float32(batch.d_far_global))

    def test_monotone_approach(self, grid):
        link = build_link_sdf(Sphere(0.12), extent=0.3, resolution=0.01, link_id=0)
        window = WindowGeometry.build(0.3, grid)
        poses = LinkPoseBatch(
            rotations=np.eye(3)[None, None], translations=np.zeros((1, 1, 3))
        )
        fields = place_links_batch([link], poses, grid, ExactTransformProvider(window))
        batch = assemble_robot_sdfs(
            ((c, f) for c, _, f in fields), grid, 1, link.d_far
        )
        xs = np.arange(0.85, 0.04, -0.1)
        frames = [(float(i), np.float64([[x, 0.05, 0.05]])) for i, x in enumerate(xs)]
        dists = [float(d[0]) for _, d in stream_min_distances(batch, frames)]
        assert all(b <= a + 1e-7 for a, b in zip(dists, dists[1:]))
        assert dists[-1] < dists[0]


class TestFrameFiles:
    def test_frame_round_trip(self, tmp_path, rng):
        pts = rng.normal(size=(17, 3)).astype(np.float32)
        path = tmp_path / "frame.bin"
        write_pointcloud_frame(path, pts)
        back = read_pointcloud_frame(path)
        assert np.array_equal(back.astype(np.float32), pts)

    def test_manifest(self, tmp_path, rng):
        for i in range(3):
            write_pointcloud_frame(tmp_path / f"f{i}.bin", rng.normal(size=(5, 3)))
        manifest = tmp_path / "clouds.txt"
        manifest.write_text(
            "# comment\n0 f0.bin\n33.3 f1.bin\n66.6 f2.bin\n"
        )
        entries = read_cloud_manifest(manifest)
        assert [t for t, _ in entries] == [0.0, 33.3, 66.6]
        frames = list(iter_cloud_frames(manifest))
        assert len(frames) == 3
        assert frames[1][1].shape == (5, 3)

    def test_distance_csv(self, tmp_path):
        path = tmp_path / "d.csv"
        write_distance_csv(
            path, [(0.0, np.float32([0.5, 0.25])), (10.0, np.float32([0.4, 0.2]))], 2
        )
        lines = path.read_text().splitlines()
        assert lines[0] == "timestamp_ms,d_0,d_1"
        assert lines[1].startswith("0.000,0.5")
