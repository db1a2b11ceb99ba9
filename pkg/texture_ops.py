"""
UV-space texture operations: view -> UV baking into partial textures,
confidence-weighted fusion, pull-push hole filling, seam repair and Lanczos
upscaling.

Texel (x, y) of an L x L texture covers u in [x/L, (x+1)/L) and
v in [y/L, (y+1)/L); row 0 is v = 0.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import ndimage, sparse

from models import InputError, ZeroCoverageError
from rasterizer import project_points, sample_masked, scan_triangles

logger = logging.getLogger(__name__)

MAX_TEXTURE_SIZE = 4096
LANCZOS_LOBES = 3


def _is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True, eq=False)
class Texture:
    pixels: np.ndarray
    coverage: np.ndarray
    chart_mask: Optional[np.ndarray] = None
    confidence: Optional[np.ndarray] = None

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[0] != pixels.shape[1]:
            raise InputError(f"texture must be L x L x C, got {pixels.shape}")
        if not _is_power_of_two(pixels.shape[0]):
            raise InputError(f"texture size must be a power of two, got {pixels.shape[0]}")
        if pixels.shape[2] not in (3, 5):
            raise InputError(f"texture must have 3 or 5 channels, got {pixels.shape[2]}")
        object.__setattr__(self, 'pixels', pixels)
        object.__setattr__(self, 'coverage', np.asarray(self.coverage, dtype=bool))

    @property
    def resolution(self):
        return self.pixels.shape[0]

    @property
    def channels(self):
        return self.pixels.shape[2]


@dataclass(frozen=True, eq=False)
class PartialTexture:
    pixels: np.ndarray
    confidence: np.ndarray
    view_index: int

    @property
    def resolution(self):
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class SurfaceSamples:
    """Texels covered by the UV layout with their surface attributes"""
    size: int
    texel: np.ndarray
    face: np.ndarray
    barycentric: np.ndarray
    position: np.ndarray
    normal: np.ndarray
    face_normal: np.ndarray

    def mask(self):
        m = np.zeros(self.size * self.size, dtype=bool)
        m[self.texel] = True
        return m.reshape(self.size, self.size)


def uv_surface_map(mesh, size):
    """
    Rasterize faces into UV space. Where UV triangles overlap the lowest
    face index claims the texel.
    """
    from core_geometry import face_normals

    if mesh.uv is None:
        raise InputError("mesh has no UV coordinates")
    if not _is_power_of_two(size):
        raise InputError(f"texture size must be a power of two, got {size}")
    mesh = mesh.with_normals()
    faces = np.asarray(mesh.faces)
    texel, face, bary = [], [], []
    for tri, x, y, b0, b1, b2 in scan_triangles(mesh.uv[faces] * size, size, size):
        texel.append(y * size + x)
        face.append(tri)
        bary.append(np.stack([b0, b1, b2], axis=1))
    if not texel:
        empty = np.zeros((0, 3))
        return SurfaceSamples(size, np.zeros(0, np.int64), np.zeros(0, np.int64), empty, empty, empty, empty)
    texel = np.concatenate(texel)
    face = np.concatenate(face)
    bary = np.concatenate(bary)
    order = np.lexsort((face, texel))
    first = np.r_[True, texel[order][1:] != texel[order][:-1]]
    keep = order[first]
    texel, face, bary = texel[keep], face[keep], bary[keep]

    corners = faces[face]
    position = np.einsum('nk,nkd->nd', bary, mesh.vertices[corners])
    normal = np.einsum('nk,nkd->nd', bary, mesh.normals[corners])
    normal /= np.maximum(np.linalg.norm(normal, axis=1, keepdims=True), 1e-12)
    fn = face_normals(mesh.vertices, faces)[face]
    return SurfaceSamples(size, texel, face, bary, position, normal, fn)


# ---------------------------------------------------------------------------
# Baking
# ---------------------------------------------------------------------------

def view_channels(view, mode=None):
    """Stack the view buffers baked into the texture: pbr (5), albedo (3) or shaded (3)"""
    mode = mode or ('pbr' if view.has_pbr else 'albedo')
    if mode == 'pbr':
        if not view.has_pbr:
            raise InputError("view has no roughness/metalness buffers for a PBR bake")
        return np.concatenate([view.albedo, view.roughness[..., None], view.metalness[..., None]], axis=2)
    if mode == 'albedo':
        return view.albedo
    if mode == 'shaded':
        return view.shaded
    raise InputError(f"unknown bake channel mode '{mode}'")


def _visible(samples, view, camera, tolerance):
    """(pixel coords, accepted flag) per surface sample"""
    pix, _, inside = project_points(samples.position, camera)
    res = camera.resolution
    accepted = np.zeros(len(pix), dtype=bool)
    idx = np.flatnonzero(inside)
    if len(idx) == 0:
        return pix, accepted
    ix = np.clip(np.floor(pix[idx, 0]).astype(np.int64), 0, res - 1)
    iy = np.clip(np.floor(pix[idx, 1]).astype(np.int64), 0, res - 1)
    covered = view.mask[iy, ix]

    # depth of the texel's face plane along the ray through the pixel centre
    rays = camera.pixel_rays()[iy, ix]
    n = samples.face_normal[idx]
    p = samples.position[idx] - np.asarray(camera.position)
    denom = np.sum(n * rays, axis=1)
    _, z, _ = project_points(samples.position[idx], camera)
    safe = np.abs(denom) > 1e-9
    plane_z = np.where(safe, np.sum(n * p, axis=1) / np.where(safe, denom, 1.0), z)
    with np.errstate(invalid='ignore'):
        close = np.abs(plane_z - view.depth[iy, ix]) < tolerance
    accepted[idx] = covered & close
    return pix, accepted


def bake_view_to_partial(mesh, view, camera, size, view_index=0, exponent=2.0,
                         tolerance=1e-3, mode=None, samples=None):
    """
    Re-project one view into UV space. A texel is written when its surface
    point is in the camera frustum, lands on a covered pixel and passes the
    depth test; confidence is max(0, n.v)^exponent with v pointing to the
    camera.
    """
    if mesh.uv is None:
        raise InputError("mesh has no UV coordinates; generate an atlas first")
    if not _is_power_of_two(size):
        raise InputError(f"texture size must be a power of two, got {size}")
    samples = samples or uv_surface_map(mesh, size)
    image = view_channels(view, mode)
    channels = image.shape[2]
    pixels = np.zeros((size * size, channels))
    confidence = np.zeros(size * size)

    if len(samples.texel):
        pix, accepted = _visible(samples, view, camera, tolerance)
        idx = np.flatnonzero(accepted)
        if len(idx):
            values, valid = sample_masked(image, view.mask, pix[idx, 0], pix[idx, 1])
            idx, values = idx[valid], values[valid]
            to_cam = np.asarray(camera.position) - samples.position[idx]
            to_cam /= np.linalg.norm(to_cam, axis=1, keepdims=True)
            cos = np.maximum(np.sum(samples.normal[idx] * to_cam, axis=1), 0.0)
            conf = cos ** exponent
            texel = samples.texel[idx]
            pixels[texel] = values
            confidence[texel] = conf
            pixels[texel[conf == 0]] = 0.0

    written = int(np.count_nonzero(confidence))
    if written == 0:
        logger.warning(f"View {view_index} contributed no texels to the partial texture")
    else:
        logger.debug(f"Baked view {view_index}: {written} texels")
    return PartialTexture(
        pixels=pixels.reshape(size, size, channels),
        confidence=confidence.reshape(size, size),
        view_index=view_index,
    )


def bake_vertex_colors(mesh, views, cameras, size, exponent=2.0, tolerance=1e-3, mode=None, samples=None):
    """
    Confidence-weighted colour per vertex from all views, interpolated into
    UV space. Texels whose vertices were seen by no view stay uncovered.
    """
    mesh = mesh.with_normals()
    samples = samples or uv_surface_map(mesh, size)
    nv = len(mesh.vertices)
    acc = None
    weight = np.zeros(nv)
    order = sorted(range(len(cameras)), key=lambda i: cameras[i].sort_key() + (i,))
    for i in order:
        view, camera = views[i], cameras[i]
        image = view_channels(view, mode)
        if acc is None:
            acc = np.zeros((nv, image.shape[2]))
        pix, z, inside = project_points(mesh.vertices, camera)
        idx = np.flatnonzero(inside)
        if len(idx) == 0:
            continue
        res = camera.resolution
        ix = np.clip(np.floor(pix[idx, 0]).astype(np.int64), 0, res - 1)
        iy = np.clip(np.floor(pix[idx, 1]).astype(np.int64), 0, res - 1)
        with np.errstate(invalid='ignore'):
            ok = view.mask[iy, ix] & (np.abs(view.depth[iy, ix] - z[idx]) < tolerance)
        idx = idx[ok]
        if len(idx) == 0:
            continue
        values, valid = sample_masked(image, view.mask, pix[idx, 0], pix[idx, 1])
        idx, values = idx[valid], values[valid]
        to_cam = np.asarray(camera.position) - mesh.vertices[idx]
        to_cam /= np.linalg.norm(to_cam, axis=1, keepdims=True)
        w = np.maximum(np.sum(mesh.normals[idx] * to_cam, axis=1), 0.0) ** exponent
        acc[idx] += w[:, None] * values
        weight[idx] += w

    if acc is None:
        raise InputError("vertex colour bake needs at least one view")
    channels = acc.shape[1]
    colour = np.zeros_like(acc)
    seen = weight > 0
    colour[seen] = acc[seen] / weight[seen, None]

    pixels = np.zeros((size * size, channels))
    coverage = np.zeros(size * size, dtype=bool)
    if len(samples.texel):
        corners = np.asarray(mesh.faces)[samples.face]
        lw = samples.barycentric * weight[corners]
        total = lw.sum(axis=1)
        hit = total > 0
        mixed = np.einsum('nk,nkc->nc', lw[hit], colour[corners[hit]]) / total[hit, None]
        pixels[samples.texel[hit]] = mixed
        coverage[samples.texel[hit]] = True
    logger.debug(f"Vertex colours: {int(seen.sum())}/{nv} vertices observed")
    return Texture(pixels=pixels.reshape(size, size, channels), coverage=coverage.reshape(size, size),
                   chart_mask=samples.mask())


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------

def _check_partials(partials):
    if not partials:
        raise InputError("fuse_partials needs at least one partial texture")
    shape = partials[0].pixels.shape
    for p in partials:
        if p.pixels.shape != shape or p.confidence.shape != shape[:2]:
            raise InputError(f"partial texture shapes differ: {p.pixels.shape} vs {shape}")


def fuse_partials(partials, floor=0.1):
    """
    Per-texel confidence-weighted mean over partials with confidence >= floor:

        fused = sum(w_k * p_k) / sum(w_k),  w_k = confidence_k

    Both sums run in view-index order and are divided once at the end.
    The fused confidence is the largest accepted confidence.
    """
    _check_partials(partials)
    ordered = sorted(partials, key=lambda p: p.view_index)
    shape = ordered[0].pixels.shape
    num = np.zeros(shape)
    den = np.zeros(shape[:2])
    best = np.zeros(shape[:2])
    for p in ordered:
        w = np.where(p.confidence >= floor, p.confidence, 0.0)
        num += w[..., None] * p.pixels
        den += w
        best = np.maximum(best, w)
    coverage = den > 0
    pixels = np.divide(num, den[..., None], out=np.zeros(shape), where=coverage[..., None])
    logger.debug(f"Fused {len(partials)} partials: {int(coverage.sum())} covered texels")
    return Texture(pixels=pixels, coverage=coverage, confidence=best)


def consolidate(partials, floor=0.1, base=None, base_weight=0.05):
    """
    Fuse partials, then blend towards a prior texture: covered texels move
    base_weight towards the base, texels only the base covers take it.
    """
    fused = fuse_partials(partials, floor)
    if base is None:
        return fused
    if base.resolution != fused.resolution:
        raise InputError(f"base texture is {base.resolution}^2, partials are {fused.resolution}^2")
    channels = fused.channels
    if base.channels < channels:
        logger.warning(f"Base texture has {base.channels} channels, partials {channels}; ignoring base")
        return fused
    prior = base.pixels[..., :channels]
    both = fused.coverage & base.coverage
    only_base = base.coverage & ~fused.coverage
    pixels = fused.pixels.copy()
    pixels[both] = pixels[both] + base_weight * (prior[both] - pixels[both])
    pixels[only_base] = prior[only_base]
    confidence = fused.confidence.copy()
    return Texture(pixels=pixels, coverage=fused.coverage | base.coverage,
                   chart_mask=base.chart_mask, confidence=confidence)


# ---------------------------------------------------------------------------
# Hole filling
# ---------------------------------------------------------------------------

def _pull(values, mask):
    h, w = mask.shape
    weight = mask.astype(np.float64).reshape(h // 2, 2, w // 2, 2).sum(axis=(1, 3))
    summed = (values * mask[..., None]).reshape(h // 2, 2, w // 2, 2, -1).sum(axis=(1, 3))
    coarse_mask = weight > 0
    coarse = np.zeros_like(summed)
    coarse[coarse_mask] = summed[coarse_mask] / weight[coarse_mask, None]
    return coarse, coarse_mask


def _push(coarse):
    """Bilinear 2x upsampling (9/16, 3/16, 3/16, 1/16) with replicated edges"""
    h, w = coarse.shape[:2]
    padded = np.pad(coarse, ((1, 1), (1, 1), (0, 0)), mode='edge')
    centre = padded[1:-1, 1:-1]
    out = np.empty((2 * h, 2 * w, coarse.shape[2]))
    for dy in (0, 1):
        rows = padded[0:-2, 1:-1] if dy == 0 else padded[2:, 1:-1]
        for dx in (0, 1):
            side = padded[1:-1, 0:-2] if dx == 0 else padded[1:-1, 2:]
            if dy == 0:
                diag = padded[0:-2, 0:-2] if dx == 0 else padded[0:-2, 2:]
            else:
                diag = padded[2:, 0:-2] if dx == 0 else padded[2:, 2:]
            near = centre + 0.25 * (side - centre)
            far = rows + 0.25 * (diag - rows)
            out[dy::2, dx::2] = near + 0.25 * (far - near)
    return out


def pull_push(values, mask):
    """Fill texels outside mask from a coverage-aware mip pyramid; covered texels are kept bit-exactly"""
    if mask.shape[0] == 1:
        return values
    coarse, coarse_mask = _pull(values, mask)
    filled = pull_push(coarse, coarse_mask)
    up = _push(filled)
    return np.where(mask[..., None], values, up)


def fill_holes(texture, padding=4):
    """
    Complete uncovered texels inside the charts by pull-push. Texels outside
    all charts within `padding` texels of a chart copy the nearest chart
    texel; the rest take the per-channel mean of the covered texels.
    """
    covered = texture.coverage
    if not np.any(covered):
        raise ZeroCoverageError("texture has no covered texels; nothing was observed")
    filled = pull_push(texture.pixels, covered)
    if texture.chart_mask is None:
        return replace(texture, pixels=filled, coverage=np.ones_like(covered))

    inside = texture.chart_mask | covered
    out = filled.copy()
    outside = ~inside
    if np.any(outside):
        dist, (iy, ix) = ndimage.distance_transform_edt(outside, return_indices=True)
        neutral = texture.pixels[covered].mean(axis=0)
        near = outside & (dist <= padding)
        out[near] = filled[iy[near], ix[near]]
        out[outside & ~near] = neutral
    logger.debug(f"Filled {int((inside & ~covered).sum())} texels inside charts")
    return Texture(pixels=out, coverage=inside, chart_mask=texture.chart_mask, confidence=texture.confidence)


# ---------------------------------------------------------------------------
# Seam repair
# ---------------------------------------------------------------------------

def _inward_offset(segment, inward, size):
    e = segment[1] - segment[0]
    length = np.linalg.norm(e)
    if length == 0:
        return np.zeros(2)
    e = e / length
    w = inward - segment[0]
    perp = w - (w @ e) * e
    norm = np.linalg.norm(perp)
    return perp / norm * (0.5 / size) if norm > 0 else np.zeros(2)


def seam_sample_pairs(mesh, seams, size, samples_per_texel=2):
    """
    Texel index pairs (a, b) facing each other across every seam edge.
    Each edge gets max(1, ceil(S * length_in_texels)) samples, offset half a
    texel into each incident face.
    """
    face_count = len(mesh.faces)
    vertex_count = len(mesh.vertices)
    pairs_a, pairs_b = [], []
    for edge in seams:
        if not (0 <= edge.face_a < face_count and 0 <= edge.face_b < face_count):
            raise InputError(f"seam edge {edge.key} references a face outside the mesh")
        if not (0 <= edge.key[0] < vertex_count and 0 <= edge.key[1] < vertex_count):
            raise InputError(f"seam edge {edge.key} references a vertex outside the mesh")
        length = max(np.linalg.norm(edge.uv_a[1] - edge.uv_a[0]), np.linalg.norm(edge.uv_b[1] - edge.uv_b[0])) * size
        n = max(1, int(math.ceil(samples_per_texel * length)))
        t = ((np.arange(n) + 0.5) / n)[:, None]
        sides = []
        for segment, inward in ((edge.uv_a, edge.inward_a), (edge.uv_b, edge.inward_b)):
            pts = segment[0] + t * (segment[1] - segment[0]) + _inward_offset(segment, inward, size)
            texel = np.clip(np.floor(pts * size).astype(np.int64), 0, size - 1)
            sides.append(texel[:, 1] * size + texel[:, 0])
        pairs_a.append(sides[0])
        pairs_b.append(sides[1])
    if not pairs_a:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    a = np.concatenate(pairs_a)
    b = np.concatenate(pairs_b)
    distinct = a != b
    return a[distinct], b[distinct]


def seam_discontinuity(mesh, seams, texture, samples_per_texel=2):
    """Mean absolute difference across seams over all sample pairs and channels"""
    a, b = seam_sample_pairs(mesh, seams, texture.resolution, samples_per_texel)
    if len(a) == 0:
        return 0.0
    flat = texture.pixels.reshape(-1, texture.channels)
    return float(np.mean(np.abs(flat[a] - flat[b])))


def fix_seams_with_history(mesh, seams, texture, iterations=8, relaxation=0.7, samples_per_texel=2):
    """
    Relax texels facing each other across seams towards their common
    average. Each iteration moves every seam texel by the mean of its
    pairwise corrections, then carries that correction into the chart
    with weight 1 - d/(it + 2) for texels within it + 1 texels of the seam.
    Returns (texture, discontinuity after each iteration).
    """
    from uv_atlas import chart_id_map

    size = texture.resolution
    channels = texture.channels
    a, b = seam_sample_pairs(mesh, seams, size, samples_per_texel)
    values = texture.pixels.reshape(-1, channels).copy()
    history = []
    if len(a) == 0:
        return replace(texture, pixels=values.reshape(texture.pixels.shape)), history

    ids, _ = chart_id_map(mesh, seams.face_charts, size)
    ids = ids.reshape(-1)
    seam_texels = np.zeros(size * size, dtype=bool)
    seam_texels[a] = True
    seam_texels[b] = True
    dist, (ny, nx) = ndimage.distance_transform_edt(~seam_texels.reshape(size, size), return_indices=True)
    dist = dist.reshape(-1)
    nearest = (ny * size + nx).reshape(-1)
    same_chart = (ids >= 0) & (ids == ids[nearest])

    for it in range(iterations):
        va, vb = values[a], values[b]
        mid = 0.5 * (va + vb)
        acc = np.zeros_like(values)
        count = np.zeros(len(values))
        np.add.at(acc, a, relaxation * (mid - va))
        np.add.at(acc, b, relaxation * (mid - vb))
        np.add.at(count, a, 1.0)
        np.add.at(count, b, 1.0)
        delta = np.zeros_like(values)
        touched = count > 0
        delta[touched] = acc[touched] / count[touched, None]

        ring = same_chart & (dist > 0) & (dist <= it + 1)
        carried = delta[nearest[ring]] * (1.0 - dist[ring] / (it + 2))[:, None]
        values = values + delta
        values[ring] += carried
        np.clip(values, 0.0, 1.0, out=values)
        history.append(float(np.mean(np.abs(values[a] - values[b]))))

    logger.debug(f"Seam repair over {len(a)} sample pairs: {history[0] if history else 0:.4f} -> "
                 f"{history[-1] if history else 0:.4f}")
    return replace(texture, pixels=values.reshape(texture.pixels.shape)), history


def fix_seams(mesh, seams, texture, iterations=8, relaxation=0.7, samples_per_texel=2):
    fixed, _ = fix_seams_with_history(mesh, seams, texture, iterations, relaxation, samples_per_texel)
    return fixed


# ---------------------------------------------------------------------------
# Upscaling
# ---------------------------------------------------------------------------

def lanczos(x, a=LANCZOS_LOBES):
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < a, np.sinc(x) * np.sinc(x / a), 0.0)


def lanczos_matrix(size, factor, a=LANCZOS_LOBES):
    """Sparse (size*factor, size) resampling matrix with normalized rows and replicated edges"""
    out = size * factor
    centre = (np.arange(out) + 0.5) / factor - 0.5
    base = np.floor(centre).astype(np.int64)
    taps = np.arange(-a + 1, a + 1)
    src = base[:, None] + taps[None, :]
    weights = lanczos(centre[:, None] - src)
    weights /= weights.sum(axis=1, keepdims=True)
    rows = np.repeat(np.arange(out), len(taps))
    cols = np.clip(src, 0, size - 1).reshape(-1)
    m = sparse.coo_matrix((weights.reshape(-1), (rows, cols)), shape=(out, size)).tocsr()
    m.sum_duplicates()
    return m


def upscale(texture, factor):
    """Lanczos-3 resampling of every channel; masks are repeated (nearest neighbour)"""
    if factor not in (2, 4):
        raise InputError(f"upscale factor must be 2 or 4, got {factor}")
    size = texture.resolution
    if size * factor > MAX_TEXTURE_SIZE:
        raise InputError(f"upscaled size {size * factor} exceeds {MAX_TEXTURE_SIZE}")
    m = lanczos_matrix(size, factor)
    channels = []
    for c in range(texture.channels):
        rows = m @ texture.pixels[..., c]
        channels.append(np.asarray((m @ rows.T).T))
    pixels = np.stack(channels, axis=-1)

    def _nearest(mask):
        if mask is None:
            return None
        return np.repeat(np.repeat(mask, factor, axis=0), factor, axis=1)

    logger.info(f"Upscaled texture {size} -> {size * factor}")
    return Texture(
        pixels=pixels,
        coverage=_nearest(texture.coverage),
        chart_mask=_nearest(texture.chart_mask),
        confidence=_nearest(texture.confidence),
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def texture_error(texture, reference, mask=None):
    """(mean, max) absolute per-channel error over masked texels"""
    diff = np.abs(np.asarray(texture, dtype=np.float64) - np.asarray(reference, dtype=np.float64))
    if mask is not None:
        diff = diff[np.asarray(mask, dtype=bool)]
    if diff.size == 0:
        return 0.0, 0.0
    return float(diff.mean()), float(diff.max())
