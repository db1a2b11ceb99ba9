"""
Software rasterizer: canonical camera rig, z-buffered perspective
rasterization into per-view buffers, and point projection.

Conventions
-----------
World is Y-up. A camera looks along f = normalize(target - position) with
right r = normalize(f x up) and up u = r x f. Camera-space depth is the
coordinate along f. Pixel (x, y) has its centre at (x + 0.5, y + 0.5);
x grows to the right and y grows downwards:

    px = W/2 + fpx * x_c / z_c
    py = H/2 - fpx * y_c / z_c,   fpx = (W/2) / tan(fov/2)

Coverage follows the top-left rule, so pixel centres on an edge shared by
two triangles belong to exactly one of them. Triangles with a vertex at or
in front of the near plane are dropped (no clipping); there is no culling
and the depth test is strict, so the earlier triangle wins exact ties.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from materials import shade
from models import InputError, LightConfig

logger = logging.getLogger(__name__)

MAX_FRAGMENTS = 1 << 20


@dataclass(frozen=True)
class Camera:
    position: Tuple[float, float, float]
    target: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    up: Tuple[float, float, float] = (0.0, 1.0, 0.0)
    fov_deg: float = 40.0
    resolution: int = 512
    near: float = 0.1
    far: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, 'position', tuple(float(c) for c in self.position))
        object.__setattr__(self, 'target', tuple(float(c) for c in self.target))
        object.__setattr__(self, 'up', tuple(float(c) for c in self.up))
        if np.allclose(self.position, self.target, rtol=0.0, atol=1e-12):
            raise InputError("camera position must differ from its target")
        if not 0.0 < self.fov_deg < 180.0:
            raise InputError(f"camera fov must be in (0, 180), got {self.fov_deg}")
        if not 0.0 < self.near < self.far:
            raise InputError(f"camera planes must satisfy 0 < near < far, got {self.near}, {self.far}")
        if int(self.resolution) < 1:
            raise InputError(f"camera resolution must be positive, got {self.resolution}")

    @property
    def focal_px(self):
        return (self.resolution / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)

    def basis(self):
        """(right, up, forward) unit vectors in world space"""
        pos = np.asarray(self.position)
        f = np.asarray(self.target) - pos
        f = f / np.linalg.norm(f)
        up = np.asarray(self.up)
        r = np.cross(f, up)
        if np.linalg.norm(r) < 1e-9:
            # looking straight along the up vector
            r = np.cross(f, np.array([0.0, 0.0, -1.0]))
        r = r / np.linalg.norm(r)
        u = np.cross(r, f)
        return r, u, f

    @property
    def forward(self):
        return self.basis()[2]

    @property
    def azimuth_deg(self):
        d = np.asarray(self.position) - np.asarray(self.target)
        return math.degrees(math.atan2(d[0], d[2])) % 360.0

    @property
    def elevation_deg(self):
        d = np.asarray(self.position) - np.asarray(self.target)
        return math.degrees(math.asin(np.clip(d[1] / np.linalg.norm(d), -1.0, 1.0)))

    def sort_key(self):
        return (round(self.azimuth_deg, 9), round(self.elevation_deg, 9))

    def to_camera(self, points):
        """World points (N,3) -> camera coordinates (N,3) = (x_c, y_c, z_c)"""
        r, u, f = self.basis()
        rel = np.asarray(points, dtype=np.float64) - np.asarray(self.position)
        return np.stack([rel @ r, rel @ u, rel @ f], axis=-1)

    def to_pixels(self, cam_points):
        """Camera coordinates -> continuous pixel coordinates; NaN where z_c <= 0"""
        cam_points = np.asarray(cam_points, dtype=np.float64)
        z = cam_points[..., 2]
        safe = np.where(z > 0, z, np.nan)
        half = self.resolution / 2.0
        fpx = self.focal_px
        px = half + fpx * cam_points[..., 0] / safe
        py = half - fpx * cam_points[..., 1] / safe
        return np.stack([px, py], axis=-1)

    def pixel_rays(self):
        """World-space ray directions through every pixel centre, scaled so the forward component is 1"""
        r, u, f = self.basis()
        res = self.resolution
        centres = np.arange(res, dtype=np.float64) + 0.5
        xn = (centres - res / 2.0) / self.focal_px
        yn = -(centres - res / 2.0) / self.focal_px
        return xn[None, :, None] * r + yn[:, None, None] * u + f

    def to_dict(self):
        return {
            'position': list(self.position),
            'target': list(self.target),
            'up': list(self.up),
            'fov': self.fov_deg,
            'resolution': int(self.resolution),
            'near': self.near,
            'far': self.far,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                position=tuple(data['position']),
                target=tuple(data.get('target', (0.0, 0.0, 0.0))),
                up=tuple(data.get('up', (0.0, 1.0, 0.0))),
                fov_deg=float(data.get('fov', data.get('fov_deg', 40.0))),
                resolution=int(data['resolution']),
                near=float(data.get('near', 0.1)),
                far=float(data.get('far', 10.0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"invalid camera record: {e}")


@dataclass(frozen=True, eq=False)
class RenderedView:
    shaded: np.ndarray
    albedo: np.ndarray
    normal: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    roughness: Optional[np.ndarray] = None
    metalness: Optional[np.ndarray] = None

    @property
    def resolution(self):
        return self.mask.shape[0]

    @property
    def has_pbr(self):
        return self.roughness is not None and self.metalness is not None


@dataclass(frozen=True, eq=False)
class GBuffer:
    position: np.ndarray
    normal: np.ndarray
    uv: Optional[np.ndarray]
    face_id: np.ndarray
    depth: np.ndarray
    mask: np.ndarray


def canonical_cameras(k, elevation_deg=20.0, radius=2.2, resolution=512, fov_deg=40.0, near=0.1, far=10.0):
    """k cameras at azimuths 360*i/k, aimed at the origin, ordered by azimuth"""
    if k < 1:
        raise InputError(f"camera count must be >= 1, got {k}")
    el = math.radians(elevation_deg)
    cams = []
    for i in range(k):
        az = math.radians(360.0 * i / k)
        position = (
            radius * math.cos(el) * math.sin(az),
            radius * math.sin(el),
            radius * math.cos(el) * math.cos(az),
        )
        cams.append(Camera(position=position, fov_deg=fov_deg, resolution=resolution, near=near, far=far))
    return cams


def cameras_from_config(rig):
    return canonical_cameras(
        rig.views, elevation_deg=rig.elevation_deg, radius=rig.radius,
        resolution=rig.resolution, fov_deg=rig.fov_deg, near=rig.near, far=rig.far,
    )


def project_points(points, camera):
    """Vectorised project(): (pixels (N,2), depth (N,), in_frustum (N,))"""
    cam = camera.to_camera(np.reshape(points, (-1, 3)))
    pix = camera.to_pixels(cam)
    z = cam[:, 2]
    res = camera.resolution
    with np.errstate(invalid='ignore'):
        inside = (
            (z > camera.near) & (z < camera.far)
            & (pix[:, 0] >= 0) & (pix[:, 0] < res)
            & (pix[:, 1] >= 0) & (pix[:, 1] < res)
        )
    return pix, z, inside


def project(point, camera):
    pix, z, inside = project_points(np.asarray(point, dtype=np.float64)[None, :], camera)
    return pix[0], float(z[0]), bool(inside[0])


# ---------------------------------------------------------------------------
# Triangle coverage
# ---------------------------------------------------------------------------

def _edge(a, b, px, py):
    return (b[..., 0] - a[..., 0]) * (py - a[..., 1]) - (b[..., 1] - a[..., 1]) * (px - a[..., 0])


def _owns(w, a, b):
    """Inside test for one edge a->b, with the top-left tie rule"""
    dx = b[..., 0] - a[..., 0]
    dy = b[..., 1] - a[..., 1]
    top_left = (dy < 0) | ((dy == 0) & (dx > 0))
    return (w > 0) | ((w == 0) & top_left)


def scan_triangles(points, width, height, max_fragments=MAX_FRAGMENTS):
    """
    Yield covered pixel centres of 2D triangles in chunks.

    points: (T, 3, 2) vertex positions in pixel units.
    Yields (tri, x, y, b0, b1, b2): triangle index, integer pixel, and the
    screen-space barycentric weights of the three vertices.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3, 2)
    if len(pts) == 0:
        return
    p0, p1, p2 = pts[:, 0], pts[:, 1], pts[:, 2]
    area = _edge(p0, p1, p2[:, 0], p2[:, 1])
    finite = np.all(np.isfinite(pts.reshape(len(pts), -1)), axis=1)
    flip = area < 0
    q1 = np.where(flip[:, None], p2, p1)
    q2 = np.where(flip[:, None], p1, p2)
    area = np.abs(area)

    lo = np.where(finite[:, None], np.minimum(np.minimum(p0, p1), p2), 0.0)
    hi = np.where(finite[:, None], np.maximum(np.maximum(p0, p1), p2), -1.0)
    x0 = np.maximum(np.ceil(lo[:, 0] - 0.5), 0).astype(np.int64)
    y0 = np.maximum(np.ceil(lo[:, 1] - 0.5), 0).astype(np.int64)
    x1 = np.minimum(np.floor(hi[:, 0] - 0.5), width - 1).astype(np.int64)
    y1 = np.minimum(np.floor(hi[:, 1] - 0.5), height - 1).astype(np.int64)
    ok = finite & (area > 0) & (x1 >= x0) & (y1 >= y0)
    nx = np.where(ok, x1 - x0 + 1, 0)
    ny = np.where(ok, y1 - y0 + 1, 0)
    counts = nx * ny

    todo = np.nonzero(counts)[0]
    start = 0
    while start < len(todo):
        cum = np.cumsum(counts[todo[start:]])
        stop = start + max(1, int(np.searchsorted(cum, max_fragments, side='right')))
        ids = todo[start:stop]
        start = stop

        c = counts[ids]
        tri = np.repeat(ids, c)
        first = np.cumsum(c) - c
        local = np.arange(int(c.sum()), dtype=np.int64) - np.repeat(first, c)
        width_t = nx[tri]
        x = x0[tri] + local % width_t
        y = y0[tri] + local // width_t
        cx = x + 0.5
        cy = y + 0.5

        a, b, d = p0[tri], q1[tri], q2[tri]
        w0 = _edge(b, d, cx, cy)
        w1 = _edge(d, a, cx, cy)
        w2 = _edge(a, b, cx, cy)
        inside = _owns(w0, b, d) & _owns(w1, d, a) & _owns(w2, a, b)
        if not np.any(inside):
            continue
        tri, x, y = tri[inside], x[inside], y[inside]
        ar = area[tri]
        fl = flip[tri]
        w0, w1, w2 = w0[inside] / ar, w1[inside] / ar, w2[inside] / ar
        yield tri, x, y, w0, np.where(fl, w2, w1), np.where(fl, w1, w2)


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

def rasterize_gbuffer(mesh, camera):
    """Z-buffered surface attributes (position, normal, uv, face id, depth, mask) for one camera"""
    res = int(camera.resolution)
    mesh = mesh.with_normals()
    n_pix = res * res
    depth = np.full(n_pix, np.inf)
    face_buf = np.full(n_pix, -1, dtype=np.int64)
    lam_buf = np.zeros((n_pix, 3))

    faces = mesh.faces
    if len(faces):
        cam = camera.to_camera(mesh.vertices)
        z = cam[:, 2]
        pix = camera.to_pixels(cam)
        drawable = np.nonzero(np.all(z[faces] > camera.near, axis=1))[0]
        for local, x, y, b0, b1, b2 in scan_triangles(pix[faces[drawable]], res, res):
            tri = drawable[local]
            zf = z[faces[tri]]
            q = np.stack([b0 / zf[:, 0], b1 / zf[:, 1], b2 / zf[:, 2]], axis=1)
            inv = q.sum(axis=1)
            frag_z = 1.0 / inv
            keep = (frag_z > camera.near) & (frag_z < camera.far)
            if not np.any(keep):
                continue
            tri, frag_z, q, inv = tri[keep], frag_z[keep], q[keep], inv[keep]
            pid = y[keep] * res + x[keep]

            order = np.lexsort((tri, frag_z, pid))
            pid_sorted = pid[order]
            head = np.ones(len(order), dtype=bool)
            head[1:] = pid_sorted[1:] != pid_sorted[:-1]
            sel = order[head]
            sel = sel[frag_z[sel] < depth[pid[sel]]]

            target = pid[sel]
            depth[target] = frag_z[sel]
            face_buf[target] = tri[sel]
            lam_buf[target] = q[sel] / inv[sel, None]

    mask = face_buf >= 0
    position = np.zeros((n_pix, 3))
    normal = np.zeros((n_pix, 3))
    uv = np.zeros((n_pix, 2)) if mesh.uv is not None else None
    if np.any(mask):
        corners = faces[face_buf[mask]]
        lam = lam_buf[mask][:, :, None]
        position[mask] = np.sum(lam * mesh.vertices[corners], axis=1)
        n = np.sum(lam * mesh.normals[corners], axis=1)
        normal[mask] = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
        if uv is not None:
            uv[mask] = np.sum(lam * mesh.uv[corners], axis=1)

    shape = (res, res)
    return GBuffer(
        position=position.reshape(shape + (3,)),
        normal=normal.reshape(shape + (3,)),
        uv=None if uv is None else uv.reshape(shape + (2,)),
        face_id=face_buf.reshape(shape),
        depth=depth.reshape(shape),
        mask=mask.reshape(shape),
    )


def shade_gbuffer(gbuffer, camera, albedo, roughness, metalness, light=None):
    """Fill a RenderedView from surface attributes and per-pixel PBR values"""
    light = light or LightConfig()
    mask = gbuffer.mask
    res = mask.shape[0]
    albedo = np.broadcast_to(np.asarray(albedo, dtype=np.float64), (res, res, 3))
    roughness = np.broadcast_to(np.asarray(roughness, dtype=np.float64), (res, res))
    metalness = np.broadcast_to(np.asarray(metalness, dtype=np.float64), (res, res))

    shaded = np.zeros((res, res, 3))
    out_albedo = np.zeros((res, res, 3))
    out_rough = np.zeros((res, res))
    out_metal = np.zeros((res, res))
    if np.any(mask):
        view_dir = np.asarray(camera.position) - gbuffer.position[mask]
        shaded[mask] = shade(albedo[mask], roughness[mask], metalness[mask], gbuffer.normal[mask], view_dir, light)
        out_albedo[mask] = albedo[mask]
        out_rough[mask] = roughness[mask]
        out_metal[mask] = metalness[mask]
    return RenderedView(
        shaded=shaded,
        albedo=out_albedo,
        normal=np.where(mask[..., None], gbuffer.normal, 0.0),
        depth=gbuffer.depth,
        mask=mask,
        roughness=out_rough,
        metalness=out_metal,
    )


def rasterize(mesh, camera, materials=None, light=None, default_albedo=(0.8, 0.8, 0.8)):
    """
    Render one view. With materials the PBR maps are sampled at the
    interpolated UVs; otherwise the surface is a constant grey dielectric.
    """
    if materials is not None and mesh.uv is None:
        raise InputError("mesh has no UV coordinates; cannot sample materials")
    gb = rasterize_gbuffer(mesh, camera)
    res = gb.mask.shape[0]
    if materials is not None:
        uv = gb.uv
        albedo = sample_uv(materials.albedo, uv)
        roughness = sample_uv(materials.roughness, uv)
        metalness = sample_uv(materials.metalness, uv)
    else:
        albedo = np.broadcast_to(np.asarray(default_albedo, dtype=np.float64), (res, res, 3))
        roughness = 0.8
        metalness = 0.0
    return shade_gbuffer(gb, camera, albedo, roughness, metalness, light)


# ---------------------------------------------------------------------------
# Sampling and reconstruction helpers
# ---------------------------------------------------------------------------

def _lerp(a, b, t):
    return a + t * (b - a)


def sample_image(image, x, y):
    """
    Bilinear sample at continuous pixel coordinates (centres at +0.5) with
    clamp-to-edge. Written as nested lerps so constant regions sample exactly.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    fx = np.clip(np.asarray(x, dtype=np.float64) - 0.5, 0.0, w - 1)
    fy = np.clip(np.asarray(y, dtype=np.float64) - 0.5, 0.0, h - 1)
    ix = np.minimum(np.floor(fx).astype(np.int64), max(w - 2, 0))
    iy = np.minimum(np.floor(fy).astype(np.int64), max(h - 2, 0))
    ix1 = np.minimum(ix + 1, w - 1)
    iy1 = np.minimum(iy + 1, h - 1)
    tx = fx - ix
    ty = fy - iy
    if img.ndim == 3:
        tx = tx[..., None]
        ty = ty[..., None]
    top = _lerp(img[iy, ix], img[iy, ix1], tx)
    bottom = _lerp(img[iy1, ix], img[iy1, ix1], tx)
    return _lerp(top, bottom, ty)


def sample_uv(image, uv):
    """Bilinear texture lookup; uv (...,2) with row = v * L (origin at the top-left)"""
    h, w = np.asarray(image).shape[:2]
    uv = np.asarray(uv, dtype=np.float64)
    return sample_image(image, uv[..., 0] * w, uv[..., 1] * h)


def sample_masked(image, mask, x, y):
    """
    Bilinear sample using only pixels inside mask.
    Returns (values, valid); valid is False where no neighbour is covered.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = mask.shape
    fx = np.asarray(x, dtype=np.float64) - 0.5
    fy = np.asarray(y, dtype=np.float64) - 0.5
    ix = np.floor(fx).astype(np.int64)
    iy = np.floor(fy).astype(np.int64)
    tx = fx - ix
    ty = fy - iy
    xs = (np.clip(ix, 0, w - 1), np.clip(ix + 1, 0, w - 1))
    ys = (np.clip(iy, 0, h - 1), np.clip(iy + 1, 0, h - 1))
    wx = (1.0 - tx, tx)
    wy = (1.0 - ty, ty)

    m = [[mask[ys[j], xs[i]] for i in range(2)] for j in range(2)]
    full = m[0][0] & m[0][1] & m[1][0] & m[1][1]

    extra = (slice(None),) + (None,) * (img.ndim - 2)
    acc = 0.0
    total = 0.0
    for j in range(2):
        for i in range(2):
            wgt = wx[i] * wy[j] * m[j][i]
            acc = acc + wgt[extra] * img[ys[j], xs[i]]
            total = total + wgt
    valid = total > 0
    partial = acc / np.where(valid, total, 1.0)[extra]

    exact = _lerp(
        _lerp(img[ys[0], xs[0]], img[ys[0], xs[1]], tx[extra]),
        _lerp(img[ys[1], xs[0]], img[ys[1], xs[1]], tx[extra]),
        ty[extra],
    )
    values = np.where(full[extra], exact, partial)
    return values, valid


def unproject(depth, camera):
    """World positions of every pixel centre at the given depth (inf stays inf)"""
    rays = camera.pixel_rays()
    with np.errstate(invalid='ignore'):
        return np.asarray(camera.position) + np.asarray(depth)[..., None] * rays


def normals_from_depth(depth, mask, camera):
    """Camera-facing world normals estimated from a depth map by finite differences"""
    pts = unproject(np.where(mask, depth, 0.0), camera)

    def _diff(axis):
        fwd = np.zeros_like(pts)
        ok_f = np.zeros(mask.shape, dtype=bool)
        bwd = np.zeros_like(pts)
        ok_b = np.zeros(mask.shape, dtype=bool)
        if axis == 1:
            fwd[:, :-1] = pts[:, 1:] - pts[:, :-1]
            ok_f[:, :-1] = mask[:, 1:] & mask[:, :-1]
            bwd[:, 1:] = pts[:, 1:] - pts[:, :-1]
            ok_b[:, 1:] = ok_f[:, :-1]
        else:
            fwd[:-1] = pts[1:] - pts[:-1]
            ok_f[:-1] = mask[1:] & mask[:-1]
            bwd[1:] = pts[1:] - pts[:-1]
            ok_b[1:] = ok_f[:-1]
        return np.where(ok_f[..., None], fwd, np.where(ok_b[..., None], bwd, 0.0))

    n = np.cross(_diff(1), _diff(0))
    to_cam = np.asarray(camera.position) - pts
    flip = np.sum(n * to_cam, axis=-1) < 0
    n = np.where(flip[..., None], -n, n)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    fallback = -camera.forward
    n = np.where(norm > 1e-12, n / np.maximum(norm, 1e-12), fallback)
    return np.where(mask[..., None], n, 0.0)


def with_normals(view, camera):
    """Fill a missing or empty normal buffer from depth"""
    if view.normal is not None and np.any(view.normal[view.mask]):
        return view
    return replace(view, normal=normals_from_depth(view.depth, view.mask, camera))
