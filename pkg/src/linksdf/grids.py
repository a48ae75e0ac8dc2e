"""Voxel-grid geometry, index math, and the dense SDF containers.

Conventions used throughout the library:

* grids are axis aligned and span ``[-extent, +extent]`` per axis,
* voxel ``j`` has its center at ``-extent + (j + 0.5) * resolution``,
* dense value arrays are indexed ``[ix, iy, iz]`` and laid out x-fastest
  (Fortran order) in memory and on disk,
* distances are meters, negative strictly inside a surface.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfBoundsError, ValidationError

# Magic bytes and version of the link-SDF cache file.
LSDF_MAGIC = b"LSDF"
LSDF_VERSION = 1

_DIVISIBILITY_RTOL = 1e-6


def _as_vec3(value, name: str) -> np.ndarray:
    v = np.broadcast_to(np.asarray(value, dtype=np.float64), (3,)).copy()
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise ValidationError(f"{name} must be positive and finite, got {value!r}")
    return v


def _exact_dims(extent: np.ndarray, resolution: np.ndarray, what: str) -> np.ndarray:
    """Number of cells per axis, requiring 2*extent to divide by resolution."""
    ratio = 2.0 * extent / resolution
    dims = np.rint(ratio)
    if np.any(np.abs(ratio - dims) > _DIVISIBILITY_RTOL * np.maximum(ratio, 1.0)):
        raise ValidationError(
            f"{what}: 2*extent {2 * extent} is not an integer multiple "
            f"of resolution {resolution}"
        )
    if np.any(dims < 1):
        raise ValidationError(f"{what}: dims {dims} must be positive")
    return dims.astype(np.int64)


@dataclass(frozen=True, eq=False)
class EnvGrid:
    """Environment voxelization: half-extent, resolution and index math."""

    extent: np.ndarray
    resolution: np.ndarray
    dims: np.ndarray = field(init=False)

    def __init__(self, extent, resolution):
        object.__setattr__(self, "extent", _as_vec3(extent, "extent"))
        object.__setattr__(self, "resolution", _as_vec3(resolution, "resolution"))
        object.__setattr__(
            self, "dims", _exact_dims(self.extent, self.resolution, "EnvGrid")
        )
        for arr in (self.extent, self.resolution, self.dims):
            arr.flags.writeable = False

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    def same_geometry(self, other: "EnvGrid") -> bool:
        return bool(
            np.array_equal(self.extent, other.extent)
            and np.array_equal(self.resolution, other.resolution)
        )

    def voxel_centers(self, indices: np.ndarray) -> np.ndarray:
        """Centers of voxels given integer indices, shape (..., 3)."""
        idx = np.asarray(indices, dtype=np.float64)
        return -self.extent + (idx + 0.5) * self.resolution

    def raw_voxel_indices(self, points: np.ndarray) -> np.ndarray:
        """Floor voxel indices without any bounds check (may be negative)."""
        pts = np.asarray(points, dtype=np.float64)
        return np.floor((pts + self.extent) / self.resolution).astype(np.int64)

    def flat_indices(self, indices: np.ndarray) -> np.ndarray:
        """x-fastest flat index of integer voxel indices, shape (..., 3) -> (...)."""
        idx = np.asarray(indices)
        nx, ny = int(self.dims[0]), int(self.dims[1])
        return idx[..., 0] + nx * (idx[..., 1] + ny * idx[..., 2])


def voxel_index_of(points: np.ndarray, grid: EnvGrid) -> np.ndarray:
    """Snap points to their nearest voxel index per axis.

    Boundary points exactly on a face round toward the lower index (floor
    semantics). Raises ``OutOfBoundsError`` for points outside
    ``[-extent, extent)`` on any axis.
    """
    pts = np.asarray(points, dtype=np.float64)
    scalar = pts.ndim == 1
    pts2 = pts.reshape(-1, 3)
    bad = np.any((pts2 < -grid.extent) | (pts2 >= grid.extent), axis=-1)
    if np.any(bad):
        first = pts2[np.argmax(bad)]
        raise OutOfBoundsError(
            f"{int(bad.sum())} point(s) outside grid, e.g. {first.tolist()}"
        )
    idx = np.floor((pts2 + grid.extent) / grid.resolution).astype(np.int64)
    # In-bounds points can still land on dims due to rounding right at the
    # upper face; clamp keeps the floor semantics consistent.
    np.clip(idx, 0, grid.dims - 1, out=idx)
    return idx[0] if scalar else idx.reshape(pts.shape)


@dataclass(frozen=True, eq=False)
class LinkSdf:
    """Dense signed distance grid of one robot link in its local frame."""

    extent: np.ndarray
    resolution: np.ndarray
    values: np.ndarray
    link_id: int
    dims: np.ndarray = field(init=False)

    def __init__(self, extent, resolution, values, link_id: int):
        extent = _as_vec3(extent, "extent")
        resolution = _as_vec3(resolution, "resolution")
        dims = _exact_dims(extent, resolution, "LinkSdf")
        if np.any(dims < 2):
            raise ValidationError(f"LinkSdf needs at least 2 cells per axis, got {dims}")
        values = np.asfortranarray(values, dtype=np.float32)
        if values.shape != tuple(dims):
            raise ValidationError(
                f"values shape {values.shape} does not match dims {tuple(dims)}"
            )
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "resolution", resolution)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "link_id", int(link_id))
        object.__setattr__(self, "dims", dims)
        for arr in (self.extent, self.resolution, self.values, self.dims):
            arr.flags.writeable = False

    @property
    def d_far(self) -> float:
        """Sentinel distance: the largest value this grid can vouch for."""
        return float(np.min(self.extent))

    def cell_centers_1d(self, axis: int) -> np.ndarray:
        n = int(self.dims[axis])
        return -self.extent[axis] + (np.arange(n) + 0.5) * self.resolution[axis]


def trilinear_sample(sdf: LinkSdf, points: np.ndarray) -> np.ndarray:
    """Trilinearly interpolate the link SDF at points in the link frame.

    Points outside the convex hull of the stored cell centers return the
    conservative sentinel ``sdf.d_far``; no extrapolation is performed.
    """
    pts = np.asarray(points, dtype=np.float64)
    scalar = pts.ndim == 1
    pts2 = pts.reshape(-1, 3)

    # Continuous cell coordinate: cell centers sit at integer u.
    u = (pts2 + sdf.extent) / sdf.resolution - 0.5
    hi = (sdf.dims - 1).astype(np.float64)
    inside = np.all((u >= 0.0) & (u <= hi), axis=-1)

    uc = np.clip(u, 0.0, hi)
    i0 = np.minimum(uc.astype(np.int64), sdf.dims - 2)
    f = (uc - i0).astype(np.float32)

    nx, ny = int(sdf.dims[0]), int(sdf.dims[1])
    flat = sdf.values.ravel(order="F")  # view: x-fastest layout
    base = i0[:, 0] + nx * (i0[:, 1] + ny * i0[:, 2])
    sx, sy, sz = 1, nx, nx * ny

    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz

    c00 = flat[base] * gx + flat[base + sx] * fx
    c10 = flat[base + sy] * gx + flat[base + sx + sy] * fx
    c01 = flat[base + sz] * gx + flat[base + sx + sz] * fx
    c11 = flat[base + sy + sz] * gx + flat[base + sx + sy + sz] * fx
    c0 = c00 * gy + c10 * fy
    c1 = c01 * gy + c11 * fy
    out = c0 * gz + c1 * fz

    out = np.where(inside, out, np.float32(sdf.d_far)).astype(np.float32)
    return out[0] if scalar else out.reshape(pts.shape[:-1])


@dataclass(frozen=True, eq=False)
class SdfSampleField:
    """One link's resampled window of environment-aligned distance values.

    ``values`` covers the full window of ``window_dims`` cells per axis;
    ``anchor`` is the environment voxel index of the window's first cell.
    The window may extend past the grid; out-of-grid cells are dropped when
    fields are merged into a robot SDF.
    """

    values: np.ndarray
    anchor: np.ndarray
    d_far: float

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float32))
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=np.int64))

    @property
    def window_dims(self) -> tuple[int, int, int]:
        return self.values.shape


def write_link_sdf(path, sdf: LinkSdf) -> None:
    """Write a link SDF cache file (little-endian, x-fastest values)."""
    header = struct.pack(
        "<4sI3I3f3fI",
        LSDF_MAGIC,
        LSDF_VERSION,
        *(int(d) for d in sdf.dims),
        *(float(e) for e in sdf.extent),
        *(float(r) for r in sdf.resolution),
        int(sdf.link_id),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(sdf.values.ravel(order="F"), dtype="<f4").tobytes())


def read_link_sdf(path) -> LinkSdf:
    """Read a link SDF cache file written by :func:`write_link_sdf`."""
    header_size = struct.calcsize("<4sI3I3f3fI")
    with open(path, "rb") as fh:
        header = fh.read(header_size)
        if len(header) != header_size:
            raise ValidationError(f"{path}: truncated header")
        magic, version, dx, dy, dz, ex, ey, ez, rx, ry, rz, link_id = struct.unpack(
            "<4sI3I3f3fI", header
        )
        if magic != LSDF_MAGIC:
            raise ValidationError(f"{path}: bad magic {magic!r}")
        if version != LSDF_VERSION:
            raise ValidationError(f"{path}: unsupported version {version}")
        count = dx * dy * dz
        raw = np.frombuffer(fh.read(4 * count), dtype="<f4")
        if raw.size != count:
            raise ValidationError(f"{path}: truncated values")
    values = raw.reshape((dx, dy, dz), order="F")
    return LinkSdf(
        extent=np.float64([ex, ey, ez]),
        resolution=np.float64([rx, ry, rz]),
        values=values,
        link_id=link_id,
    )
