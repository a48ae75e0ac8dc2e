"""Robot SDF assembly, obstacle voxelization, and distance queries.

The per-configuration robot SDF is the min-merge of every link's sample
window scattered at its anchor over a dense environment grid. Distance
queries against voxelized obstacles are then pure memory gathers followed
by a min reduction: no per-query arithmetic on poses or points, so query
cost depends only on the batch size and the number of occupied voxels.

A sphere-approximation baseline with the opposite cost profile (cheap
preparation, per-query distance arithmetic) is included for comparison.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import GridMismatchError, ValidationError
from .grids import EnvGrid, SdfSampleField, voxel_index_of
from .meshes import TriangleMesh, primitive_surface_points
from .robot import LinkPoseBatch, RobotModel

DEFAULT_BATCH_BYTES = 1 << 30  # refuse to allocate robot SDF batches past 1 GiB


@dataclass(frozen=True, eq=False)
class RobotSdfBatch:
    """Dense per-configuration robot distance fields over the environment.

    ``values`` has shape (C, nx, ny, nz); voxels never exceed
    ``d_far_global`` and go negative inside the robot.
    """

    values: np.ndarray
    grid: EnvGrid
    d_far_global: float

    @property
    def n_configs(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class ObstacleVoxelSet:
    """Deduplicated occupied voxel indices derived from a point cloud."""

    indices: np.ndarray
    grid: EnvGrid
    n_points: int
    n_dropped: int

    @property
    def n_occupied(self) -> int:
        return len(self.indices)


def assemble_robot_sdfs(
    fields: Iterable[tuple[int, SdfSampleField]],
    grid: EnvGrid,
    n_configs: int,
    d_far_global: float,
    max_bytes: int = DEFAULT_BATCH_BYTES,
) -> RobotSdfBatch:
    """Min-merge per-(link, config) sample fields into dense robot SDFs.

    ``fields`` yields (config_index, field) pairs in any order; merging is
    commutative and idempotent. Window cells outside the grid are dropped.
    Fields are written per configuration, so partitioning work by
    configuration needs no synchronization.
    """
    need = n_configs * grid.n_voxels * 4
    if need > max_bytes:
        raise ValidationError(
            f"robot SDF batch needs {need / 2**20:.0f} MiB for {n_configs} "
            f"configurations x {grid.n_voxels} voxels, over the "
            f"{max_bytes / 2**20:.0f} MiB budget"
        )
    out = np.full(
        (n_configs,) + tuple(grid.dims), np.float32(d_far_global), dtype=np.float32
    )
    dims = grid.dims
    for c, field in fields:
        if not 0 <= c < n_configs:
            raise ValidationError(f"configuration index {c} out of range")
        k = field.anchor
        w = np.asarray(field.window_dims, dtype=np.int64)
        lo = np.maximum(k, 0)
        hi = np.minimum(k + w, dims)
        if np.any(lo >= hi):
            continue
        src = field.values[
            lo[0] - k[0] : hi[0] - k[0],
            lo[1] - k[1] : hi[1] - k[1],
            lo[2] - k[2] : hi[2] - k[2],
        ]
        dst = out[c, lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
        np.minimum(dst, src, out=dst)
    out.flags.writeable = False
    return RobotSdfBatch(values=out, grid=grid, d_far_global=float(d_far_global))


def voxelize_pointcloud(points: np.ndarray, grid: EnvGrid) -> ObstacleVoxelSet:
    """Snap a point cloud to occupied voxel indices, dropping out-of-bounds.

    Indices are deduplicated and sorted for deterministic downstream use.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inside = np.all((pts >= -grid.extent) & (pts < grid.extent), axis=-1)
    kept = pts[inside]
    if len(kept):
        idx = voxel_index_of(kept, grid)
        idx = np.unique(idx, axis=0)
    else:
        idx = np.empty((0, 3), dtype=np.int64)
    idx.flags.writeable = False
    return ObstacleVoxelSet(
        indices=idx,
        grid=grid,
        n_points=len(pts),
        n_dropped=int(len(pts) - inside.sum()),
    )


def query_min_distances(
    batch: RobotSdfBatch,
    obstacles: ObstacleVoxelSet,
    return_stats: bool = False,
):
    """Minimum robot-obstacle distance per configuration.

    A gather of the occupied voxels' values from every configuration's
    field followed by a min reduction; nothing else. An empty obstacle set
    yields the far sentinel everywhere.
    """
    if not batch.grid.same_geometry(obstacles.grid):
        raise GridMismatchError("obstacle set was voxelized on a different grid")
    c = batch.n_configs
    if obstacles.n_occupied == 0:
        d = np.full(c, np.float32(batch.d_far_global), dtype=np.float32)
        return (d, {"gathers": 0}) if return_stats else d
    ix, iy, iz = obstacles.indices.T
    gathered = batch.values[:, ix, iy, iz]
    d = gathered.min(axis=1)
    if return_stats:
        return d, {"gathers": int(gathered.size)}
    return d


def per_link_min_distances(
    fields: Iterable[tuple[int, int, SdfSampleField]],
    obstacles: ObstacleVoxelSet,
    n_configs: int,
    n_links: int,
    d_far_global: float,
) -> np.ndarray:
    """Optional diagnostic: per-(configuration, link) minimum distances.

    Consumes (config, link, field) triples as produced by the batched
    placement; voxels outside a link's window contribute its far sentinel.
    """
    out = np.full((n_configs, n_links), np.float32(d_far_global), dtype=np.float32)
    occupied = obstacles.indices
    for c, li, field in fields:
        rel = occupied - field.anchor
        w = np.asarray(field.window_dims, dtype=np.int64)
        ok = np.all((rel >= 0) & (rel < w), axis=-1)
        limit = min(field.d_far, float(out[c, li]))
        if np.any(ok):
            vals = field.values[rel[ok, 0], rel[ok, 1], rel[ok, 2]]
            limit = min(limit, float(vals.min()))
        out[c, li] = limit
    return out


@dataclass(frozen=True, eq=False)
class SphereRobotModel:
    """Per-link covering spheres in link-local frames, flattened for speed."""

    link_indices: np.ndarray  # (S,)
    centers: np.ndarray  # (S, 3) link-frame offsets
    radii: np.ndarray  # (S,)

    def __post_init__(self):
        if np.any(self.radii <= 0):
            raise ValidationError("sphere radii must be positive")

    @property
    def n_spheres(self) -> int:
        return len(self.radii)

    @classmethod
    def from_robot(cls, model: RobotModel) -> "SphereRobotModel":
        link_indices = []
        centers = []
        radii = []
        for link_name, spheres in model.sphere_model.items():
            li = model.link_index(link_name)
            for center, radius in spheres:
                link_indices.append(li)
                centers.append(center)
                radii.append(radius)
        if not radii:
            raise ValidationError(f"robot {model.name} declares no spheres")
        return cls(
            link_indices=np.int64(link_indices),
            centers=np.float64(centers),
            radii=np.float64(radii),
        )


def validate_sphere_model(
    model: RobotModel,
    spheres: SphereRobotModel,
    rng: np.random.Generator,
    n_samples: int = 2048,
    tol: float = 1e-9,
) -> float:
    """Check the spheres jointly contain each link's collision geometry.

    Samples each link's surface and requires every sample to lie inside
    (distance to the sphere union <= tol) the link's own spheres. Returns
    the worst signed violation; raises ``ValidationError`` beyond ``tol``.
    """
    worst = -np.inf
    for li, link in enumerate(model.links):
        if link.geometry is None:
            continue
        mine = spheres.link_indices == li
        if not np.any(mine):
            raise ValidationError(f"link {link.name} has geometry but no spheres")
        if isinstance(link.geometry, TriangleMesh):
            surface = link.geometry.sample_surface(n_samples, rng)
        else:
            surface = primitive_surface_points(link.geometry, n_samples, rng)
        d = (
            np.linalg.norm(
                surface[:, None, :] - spheres.centers[None, mine], axis=-1
            )
            - spheres.radii[mine]
        ).min(axis=1)
        worst = max(worst, float(d.max()))
        if worst > tol:
            raise ValidationError(
                f"link {link.name}: surface escapes the covering spheres "
                f"by {worst:.2e} m"
            )
    return worst


def sphere_baseline_distances(
    spheres: SphereRobotModel,
    poses: LinkPoseBatch,
    obstacles: ObstacleVoxelSet,
    grid: EnvGrid,
    chunk: int = 64,
    return_stats: bool = False,
):
    """Per-configuration minima of sphere-to-voxel-center distances.

    World sphere centers are recomputed from the poses on every call,
    mirroring the baseline's per-query cost profile: C x S x N distance
    evaluations per query. An empty obstacle set yields +inf.
    """
    if not grid.same_geometry(obstacles.grid):
        raise GridMismatchError("obstacle set was voxelized on a different grid")
    c = poses.n_configs
    if obstacles.n_occupied == 0:
        d = np.full(c, np.inf, dtype=np.float64)
        return (d, {"distance_evals": 0}) if return_stats else d

    targets = grid.voxel_centers(obstacles.indices)  # (N, 3)
    out = np.empty(c, dtype=np.float64)
    evals = 0
    for c0 in range(0, c, chunk):
        c1 = min(c0 + chunk, c)
        rot = poses.rotations[c0:c1][:, spheres.link_indices]  # (b, S, 3, 3)
        trn = poses.translations[c0:c1][:, spheres.link_indices]  # (b, S, 3)
        world = np.einsum("bsij,sj->bsi", rot, spheres.centers) + trn
        diff = world[:, :, None, :] - targets[None, None, :, :]
        d = np.sqrt(np.einsum("bsnj,bsnj->bsn", diff, diff)) - spheres.radii[
            None, :, None
        ]
        evals += d.size
        out[c0:c1] = d.min(axis=(1, 2))
    if return_stats:
        return out, {"distance_evals": evals}
    return out


def stream_min_distances(
    batch: RobotSdfBatch,
    frames: Iterable[tuple[float, np.ndarray]],
) -> Iterator[tuple[float, np.ndarray]]:
    """Per-cycle distance vectors for a stream of point-cloud frames.

    For each (timestamp, points) frame: voxelize, query, emit
    (timestamp, C distances). This is the controller-facing hook; velocity
    profiling happens downstream.
    """
    for timestamp, points in frames:
        obstacles = voxelize_pointcloud(points, batch.grid)
        yield timestamp, query_min_distances(batch, obstacles)


# ---------------------------------------------------------------------------
# Point-cloud frame files, manifests, and distance CSV output
# ---------------------------------------------------------------------------

def write_pointcloud_frame(path, points: np.ndarray) -> None:
    """Count-prefixed little-endian f32 xyz triples."""
    pts = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(pts)))
        fh.write(np.ascontiguousarray(pts, dtype="<f4").tobytes())


def read_pointcloud_frame(path) -> np.ndarray:
    with open(path, "rb") as fh:
        (count,) = struct.unpack("<I", fh.read(4))
        raw = np.frombuffer(fh.read(12 * count), dtype="<f4")
        if raw.size != 3 * count:
            raise ValidationError(f"{path}: truncated point data")
    return raw.reshape(count, 3).astype(np.float64)


def read_cloud_manifest(path) -> list[tuple[float, Path]]:
    """Manifest lines: ``<timestamp_ms> <frame file>`` relative to the manifest."""
    base = Path(path).parent
    frames = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            stamp, name = line.split(maxsplit=1)
            frames.append((float(stamp), base / name))
    return frames


def iter_cloud_frames(manifest_path) -> Iterator[tuple[float, np.ndarray]]:
    for stamp, frame_path in read_cloud_manifest(manifest_path):
        yield stamp, read_pointcloud_frame(frame_path)


def write_distance_csv(path, rows: Iterable[tuple[float, np.ndarray]], n_configs: int) -> None:
    """CSV with one row per cycle: timestamp then d_0..d_{C-1}."""
    with open(path, "w") as fh:
        header = ",".join(["timestamp_ms"] + [f"d_{i}" for i in range(n_configs)])
        fh.write(header + "\n")
        for stamp, dists in rows:
            fh.write(f"{stamp:.3f}," + ",".join(f"{d:.6f}" for d in dists) + "\n")
