"""
Volumetric reconstruction: truncated signed distance fusion of per-view
depth and mask buffers, marching cubes extraction and trilinear sampling.

This is a classical substitute for a learned reconstruction network. Values
are negative inside, positive outside and clamped to +-tau.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core_geometry import Mesh
from mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE
from models import EmptySurfaceError, InputError, ReconConfig
from rasterizer import project_points, with_normals

logger = logging.getLogger(__name__)

GRID_PADDING_CELLS = 2


@dataclass(frozen=True, eq=False)
class SDFGrid:
    resolution: int
    lo: np.ndarray
    hi: np.ndarray
    tau: float
    values: np.ndarray
    weights: Optional[np.ndarray] = None

    @property
    def cell_size(self):
        return float((self.hi[0] - self.lo[0]) / (self.resolution - 1))

    def corner_positions(self):
        """(N, N, N, 3) world positions; index [i, j, k] is (x, y, z)"""
        axis = [self.lo[a] + self.cell_size * np.arange(self.resolution) for a in range(3)]
        gx, gy, gz = np.meshgrid(axis[0], axis[1], axis[2], indexing='ij')
        return np.stack([gx, gy, gz], axis=-1)

    def header(self):
        return {
            'resolution': int(self.resolution),
            'bounds': [list(map(float, self.lo)), list(map(float, self.hi))],
            'tau': float(self.tau),
            'dtype': 'float32',
            'byte_order': 'little',
            'layout': 'x-major [i][j][k]',
        }

    def to_raw(self):
        """(little-endian float32 bytes, JSON sidecar text)"""
        data = np.ascontiguousarray(self.values, dtype='<f4').tobytes()
        return data, json.dumps(self.header(), indent=2, sort_keys=True)

    @classmethod
    def from_raw(cls, data, sidecar):
        header = json.loads(sidecar)
        n = int(header['resolution'])
        values = np.frombuffer(data, dtype='<f4').astype(np.float64)
        if values.size != n ** 3:
            raise InputError(f"raw grid holds {values.size} values, expected {n ** 3}")
        lo, hi = (np.asarray(b, dtype=np.float64) for b in header['bounds'])
        return cls(resolution=n, lo=lo, hi=hi, tau=float(header['tau']), values=values.reshape(n, n, n))

    @classmethod
    def empty(cls, resolution=64, tau_cells=3.0):
        if resolution < 2 * GRID_PADDING_CELLS + 2:
            raise InputError(f"grid resolution must be >= {2 * GRID_PADDING_CELLS + 2}, got {resolution}")
        # The normalized object spans [-0.5, 0.5]^3; bounds add two cells each side
        h = 1.0 / (resolution - 1 - 2 * GRID_PADDING_CELLS)
        half = 0.5 + GRID_PADDING_CELLS * h
        tau = tau_cells * h
        shape = (resolution,) * 3
        return cls(
            resolution=resolution,
            lo=np.full(3, -half),
            hi=np.full(3, half),
            tau=tau,
            values=np.full(shape, tau),
            weights=np.zeros(shape),
        )

    @classmethod
    def from_function(cls, fn, resolution=64, tau_cells=3.0):
        """Grid of a signed distance function evaluated at the corners, fully weighted"""
        grid = cls.empty(resolution, tau_cells)
        values = np.asarray(fn(grid.corner_positions()), dtype=np.float64)
        return cls(
            resolution=grid.resolution, lo=grid.lo, hi=grid.hi, tau=grid.tau,
            values=np.clip(values, -grid.tau, grid.tau),
            weights=np.ones(values.shape),
        )


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------

def _view_order(cameras):
    return sorted(range(len(cameras)), key=lambda i: cameras[i].sort_key() + (i,))


def _integrate_view(corners, view, camera, rays, tau, recon):
    """Per-corner (value*weight, weight, occluded) contribution of one view"""
    n = len(corners)
    ws = np.zeros(n)
    w = np.zeros(n)
    occluded = np.zeros(n, dtype=bool)

    pix, z, inside = project_points(corners, camera)
    idx = np.nonzero(inside)[0]
    if len(idx) == 0:
        return ws, w, occluded
    res = camera.resolution
    ix = np.clip(np.floor(pix[idx, 0]).astype(np.int64), 0, res - 1)
    iy = np.clip(np.floor(pix[idx, 1]).astype(np.int64), 0, res - 1)
    hit = view.mask[iy, ix]

    carve = idx[~hit]
    ws[carve] = recon.carve_weight * tau
    w[carve] = recon.carve_weight

    sel = idx[hit]
    if len(sel) == 0:
        return ws, w, occluded
    ix, iy = ix[hit], iy[hit]
    s = view.depth[iy, ix] - z[sel]
    ray_unit = rays[iy, ix] / np.linalg.norm(rays[iy, ix], axis=1, keepdims=True)
    cos = np.abs(np.sum(view.normal[iy, ix] * ray_unit, axis=1))

    # more than tau behind the visible surface: this view never saw the corner
    behind = s < -tau
    take = ~behind & (cos >= recon.grazing_cos)
    ws[sel[take]] = np.clip(s[take], -tau, tau)
    w[sel[take]] = 1.0
    occluded[sel[behind]] = True
    return ws, w, occluded


def fuse_views_to_sdf(views, cameras, resolution=64, config=None, workers=1):
    """
    Fuse depth + mask views into a truncated SDF grid.

    Each corner projecting onto a covered pixel samples the depth difference

        s = depth(pixel) - corner_depth,  clamped to [-tau, tau]

    with weight 1. Pixels where the cosine between surface normal and ray
    is below grazing_cos give no sample, and neither do corners more than
    tau behind the visible surface. Corners projecting onto background
    pixels are carved to +tau with carve_weight. The fused value is the
    weighted mean of the samples, accumulated in sorted camera order.
    Corners no view sampled stay at +tau, or -tau if some view saw them
    hidden behind the surface.
    """
    recon = config or ReconConfig()
    if len(views) != len(cameras):
        raise InputError(f"got {len(views)} views for {len(cameras)} cameras")
    if len(views) < 2:
        raise InputError(f"fusion needs at least 2 views, got {len(views)}")
    for view, camera in zip(views, cameras):
        if view.mask.shape != (camera.resolution, camera.resolution):
            raise InputError(
                f"view resolution {view.mask.shape} does not match camera resolution {camera.resolution}"
            )

    grid = SDFGrid.empty(resolution, recon.tau_cells)
    tau = grid.tau
    corners = grid.corner_positions()
    order = _view_order(cameras)
    prepared = [(with_normals(views[i], cameras[i]), cameras[i], cameras[i].pixel_rays()) for i in order]

    def _slab(k):
        pts = corners[k].reshape(-1, 3)
        sum_ws = np.zeros(len(pts))
        sum_w = np.zeros(len(pts))
        seen_occluded = np.zeros(len(pts), dtype=bool)
        for view, camera, rays in prepared:
            ws, w, occ = _integrate_view(pts, view, camera, rays, tau, recon)
            sum_ws += ws
            sum_w += w
            seen_occluded |= occ
        return sum_ws, sum_w, seen_occluded

    n = grid.resolution
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        slabs = list(pool.map(_slab, range(n)))

    sum_ws = np.stack([s[0] for s in slabs]).reshape(n, n, n)
    sum_w = np.stack([s[1] for s in slabs]).reshape(n, n, n)
    occluded = np.stack([s[2] for s in slabs]).reshape(n, n, n)

    observed = sum_w > 0
    values = np.where(occluded, -tau, tau)
    values[observed] = sum_ws[observed] / sum_w[observed]
    values = np.clip(values, -tau, tau)

    logger.info(
        f"Fused {len(views)} views into {n}^3 grid: "
        f"{int(observed.sum())} observed corners, {int((occluded & ~observed).sum())} occluded-only"
    )
    return SDFGrid(resolution=n, lo=grid.lo, hi=grid.hi, tau=tau, values=values, weights=sum_w)


# ---------------------------------------------------------------------------
# Marching cubes
# ---------------------------------------------------------------------------

def _table_arrays():
    tri = np.full((256, 15), -1, dtype=np.int64)
    for case, edges in enumerate(TRI_TABLE):
        # reversed winding; _orient settles the global orientation
        flipped = []
        for t in range(0, len(edges), 3):
            flipped.extend([edges[t], edges[t + 2], edges[t + 1]])
        tri[case, :len(flipped)] = flipped
    offsets = np.asarray(CORNER_OFFSETS, dtype=np.int64)
    edge_lo = np.zeros((12, 3), dtype=np.int64)
    edge_axis = np.zeros(12, dtype=np.int64)
    for e, (a, b) in enumerate(EDGE_CORNERS):
        edge_lo[e] = np.minimum(offsets[a], offsets[b])
        edge_axis[e] = int(np.argmax(np.abs(offsets[b] - offsets[a])))
    return tri, offsets, edge_lo, edge_axis


_TRI, _OFFSETS, _EDGE_LO, _EDGE_AXIS = _table_arrays()


def marching_cubes(grid, iso=0.0, min_weight=0.5):
    """
    Extract the iso surface with the 256-case table and linear edge
    interpolation. Vertices on shared edges are welded. Cells touching a
    corner with weight below min_weight emit nothing, so unobserved regions
    stay open. Vertices keep grid (world) coordinates.
    """
    if not abs(iso) < grid.tau:
        raise InputError(f"iso level {iso} must lie within (-{grid.tau}, {grid.tau})")
    n = grid.resolution
    v = np.asarray(grid.values, dtype=np.float64) - iso
    below = v < 0
    if below.all() or not below.any():
        raise EmptySurfaceError("grid has no sign change at the iso level; nothing to extract")

    m = n - 1
    case = np.zeros((m, m, m), dtype=np.int64)
    for c, (ox, oy, oz) in enumerate(_OFFSETS):
        case |= below[ox:ox + m, oy:oy + m, oz:oz + m].astype(np.int64) << c
    active = (case != 0) & (case != 255)
    if grid.weights is not None:
        weak = grid.weights < min_weight
        touches_weak = np.zeros((m, m, m), dtype=bool)
        for ox, oy, oz in _OFFSETS:
            touches_weak |= weak[ox:ox + m, oy:oy + m, oz:oz + m]
        active &= ~touches_weak

    cells = np.argwhere(active)
    if len(cells) == 0:
        raise EmptySurfaceError("no observed cell crosses the iso level")
    cell_case = case[cells[:, 0], cells[:, 1], cells[:, 2]]

    edges = _TRI[cell_case]  # (C, 15)
    tri_cells = np.repeat(np.arange(len(cells)), 5)
    edges = edges.reshape(-1, 3)
    keep = edges[:, 0] >= 0
    edges = edges[keep]
    tri_cells = tri_cells[keep]

    # global edge id = linear index of the lower corner * 3 + axis
    lower = cells[tri_cells][:, None, :] + _EDGE_LO[edges]
    linear = (lower[..., 0] * n + lower[..., 1]) * n + lower[..., 2]
    edge_ids = linear * 3 + _EDGE_AXIS[edges]

    unique_ids, faces = np.unique(edge_ids.reshape(-1), return_inverse=True)
    faces = faces.reshape(-1, 3)

    axis = unique_ids % 3
    lin = unique_ids // 3
    a = np.stack([lin // (n * n), (lin // n) % n, lin % n], axis=1)
    b = a.copy()
    b[np.arange(len(b)), axis] += 1
    va = v[a[:, 0], a[:, 1], a[:, 2]]
    vb = v[b[:, 0], b[:, 1], b[:, 2]]
    t = va / (va - vb)
    h = grid.cell_size
    pa = grid.lo + h * a
    pb = grid.lo + h * b
    vertices = pa + t[:, None] * (pb - pa)

    faces = _orient(vertices, faces, grid, iso)
    logger.info(f"Marching cubes: {len(vertices)} vertices, {len(faces)} faces from {len(cells)} cells")
    return Mesh(vertices=vertices, faces=faces)


def _orient(vertices, faces, grid, iso):
    """Flip all faces if most of them point against the field gradient"""
    tri = vertices[faces]
    normal = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    centroid = tri.mean(axis=1)
    h = grid.cell_size
    grad = np.zeros_like(centroid)
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = 0.5 * h
        grad[:, axis] = (
            sample_points(grid, np.clip(centroid + step, grid.lo, grid.hi))
            - sample_points(grid, np.clip(centroid - step, grid.lo, grid.hi))
        )
    agree = np.sum(normal * grad, axis=1)
    if np.sum(agree > 0) < np.sum(agree < 0):
        return faces[:, [0, 2, 1]]
    return faces


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_points(grid, points):
    """Trilinear interpolation of corner values at (M, 3) points inside the bounds"""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    eps = 1e-9 * max(1.0, float(np.max(np.abs(grid.hi))))
    if np.any(pts < grid.lo - eps) or np.any(pts > grid.hi + eps):
        raise InputError("sample point lies outside the grid bounds")
    n = grid.resolution
    f = np.clip((pts - grid.lo) / grid.cell_size, 0.0, n - 1)
    i0 = np.minimum(np.floor(f).astype(np.int64), n - 2)
    t = f - i0
    values = grid.values
    out = np.zeros(len(pts))
    for dx in (0, 1):
        wx = t[:, 0] if dx else 1.0 - t[:, 0]
        for dy in (0, 1):
            wy = t[:, 1] if dy else 1.0 - t[:, 1]
            for dz in (0, 1):
                wz = t[:, 2] if dz else 1.0 - t[:, 2]
                out += wx * wy * wz * values[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
    return out


def sample_sdf(grid, point):
    return float(sample_points(grid, np.asarray(point, dtype=np.float64)[None, :])[0])


def sphere_sdf(radius, center=(0.0, 0.0, 0.0)):
    c = np.asarray(center, dtype=np.float64)
    return lambda p: np.linalg.norm(p - c, axis=-1) - radius


def torus_sdf(major=0.3, minor=0.1):
    """Torus around the y axis"""
    def fn(p):
        ring = np.hypot(p[..., 0], p[..., 2]) - major
        return np.hypot(ring, p[..., 1]) - minor
    return fn
