"""
Automatic UV atlas: normal-coherent chart segmentation, orthographic chart
parameterization and shelf packing, plus seam enumeration.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import List, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError

from core_geometry import face_areas, face_normals, weld_positions
from models import InputError, PackingOverflowError
from rasterizer import scan_triangles

logger = logging.getLogger(__name__)

BISECTION_STEPS = 40


@dataclass(frozen=True, eq=False)
class Chart:
    id: int
    faces: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    bitangent: np.ndarray
    rect: Tuple[float, float]
    uv_rect: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def to_dict(self):
        return {
            'id': self.id,
            'faces': int(len(self.faces)),
            'normal': [float(c) for c in self.normal],
            'rect': [float(c) for c in self.rect],
            'uv_rect': [float(c) for c in self.uv_rect],
        }


@dataclass(frozen=True, eq=False)
class SeamEdge:
    key: Tuple[int, int]
    face_a: int
    face_b: int
    uv_a: np.ndarray
    uv_b: np.ndarray
    chart_a: int
    chart_b: int
    inward_a: np.ndarray
    inward_b: np.ndarray


@dataclass(frozen=True, eq=False)
class SeamEdgeList:
    edges: List[SeamEdge] = field(default_factory=list)
    face_charts: np.ndarray = None

    def __len__(self):
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)


# ---------------------------------------------------------------------------
# Adjacency
# ---------------------------------------------------------------------------

def _edge_groups(faces):
    """
    Group the 3F face edges by undirected vertex pair.
    Returns (pairs (E, 2), half-edge group ids (3F,), face of each half-edge).
    """
    f = np.asarray(faces, dtype=np.int64)
    half = np.stack([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=1).reshape(-1, 2)
    pairs, group = np.unique(np.sort(half, axis=1), axis=0, return_inverse=True)
    owner = np.repeat(np.arange(len(f)), 3)
    return pairs, group.reshape(-1), owner


def face_adjacency(faces):
    """Sparse symmetric face adjacency across shared edges (CSR, sorted neighbours)"""
    f = np.asarray(faces, dtype=np.int64)
    n = len(f)
    _, group, owner = _edge_groups(f)
    order = np.argsort(group, kind='stable')
    g_sorted = group[order]
    starts = np.flatnonzero(np.r_[True, g_sorted[1:] != g_sorted[:-1]])
    ends = np.r_[starts[1:], len(order)]
    rows, cols = [], []
    for s, e in zip(starts, ends):
        if e - s < 2:
            continue
        members = owner[order[s:e]]
        for i in range(len(members)):
            for j in range(len(members)):
                if members[i] != members[j]:
                    rows.append(members[i])
                    cols.append(members[j])
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    adj.sum_duplicates()
    adj.sort_indices()
    return adj


# ---------------------------------------------------------------------------
# Segmentation and parameterization
# ---------------------------------------------------------------------------

def _grow_charts(adj, normals, areas, cos_max):
    n = len(normals)
    degenerate = ~np.any(normals != 0, axis=1)
    chart_of = np.full(n, -1, dtype=np.int64)
    seeds = []
    order = np.lexsort((np.arange(n), -areas))
    for seed in order:
        if chart_of[seed] >= 0:
            continue
        cid = len(seeds)
        seeds.append(seed)
        n0 = normals[seed]
        chart_of[seed] = cid
        queue = deque([seed])
        while queue:
            f = queue.popleft()
            for g in adj.indices[adj.indptr[f]:adj.indptr[f + 1]]:
                if chart_of[g] >= 0:
                    continue
                if degenerate[g] or float(normals[g] @ n0) >= cos_max:
                    chart_of[g] = cid
                    queue.append(g)
    return chart_of, seeds


def _plane_basis(normal):
    n = normal if np.any(normal) else np.array([0.0, 0.0, 1.0])
    helper = np.eye(3)[int(np.argmin(np.abs(n)))]
    a = np.cross(n, helper)
    a /= np.linalg.norm(a)
    return n, a, np.cross(n, a)


def _min_area_direction(xy):
    """Unit 2D direction whose bounding rectangle of xy has the least area; None when xy is degenerate"""
    try:
        hull = xy[ConvexHull(xy).vertices]
    except (QhullError, ValueError):
        return None
    edges = np.roll(hull, -1, axis=0) - hull
    lengths = np.linalg.norm(edges, axis=1)
    edges = edges[lengths > 0] / lengths[lengths > 0, None]
    if not len(edges):
        return None
    along = hull @ edges.T
    across = hull @ np.stack([-edges[:, 1], edges[:, 0]], axis=1).T
    areas = np.ptp(along, axis=0) * np.ptp(across, axis=0)
    return edges[int(np.argmin(areas))]


def _chart_frame(points, normal):
    """(normal, tangent, bitangent) with the tangent along the long side of the tightest bounding rectangle"""
    n, a, b = _plane_basis(normal)
    xy = np.stack([points @ a, points @ b], axis=1)
    xy = xy - xy.mean(axis=0)
    d = _min_area_direction(xy)
    if d is None:
        _, vecs = np.linalg.eigh(xy.T @ xy)
        d = vecs[:, -1]
    if d[int(np.argmax(np.abs(d)))] < 0:
        d = -d
    t = d[0] * a + d[1] * b
    t /= np.linalg.norm(t)
    bt = np.cross(n, t)
    u, v = points @ t, points @ bt
    if np.ptp(u) < np.ptp(v):
        t, bt = bt, -t
    return n, t, bt


def _shelf_layout(sizes, order, scale, gutter):
    offsets = np.zeros_like(sizes)
    x, y, shelf = gutter, gutter, 0.0
    for c in order:
        w, h = sizes[c] * scale
        if x + w + gutter > 1.0 and x > gutter:
            y += shelf + gutter
            x, shelf = gutter, 0.0
        if x + w + gutter > 1.0:
            return None
        offsets[c] = (x, y)
        x += w + gutter
        shelf = max(shelf, h)
    if y + shelf + gutter > 1.0:
        return None
    return offsets


def pack_charts(sizes, gutter):
    """
    Shelf-pack rectangles (C, 2) into the unit square by decreasing height.
    Returns (offsets, scale). The scale starts at an area-based upper bound
    and is bisected down to at most half of it.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    order = sorted(range(len(sizes)), key=lambda c: (-sizes[c, 1], c))
    free = 1.0 - 2.0 * gutter
    if free <= 0:
        raise PackingOverflowError(f"gutter {gutter} leaves no room for charts")
    bounds = []
    area = float(np.sum(sizes[:, 0] * sizes[:, 1]))
    if area > 0:
        bounds.append(math.sqrt(1.0 / area))
    if sizes[:, 0].max(initial=0.0) > 0:
        bounds.append(free / sizes[:, 0].max())
    if sizes[:, 1].max(initial=0.0) > 0:
        bounds.append(free / sizes[:, 1].max())
    s_max = min(bounds) if bounds else 1.0

    offsets = _shelf_layout(sizes, order, s_max, gutter)
    if offsets is not None:
        return offsets, s_max
    lo, hi = 0.5 * s_max, s_max
    best = _shelf_layout(sizes, order, lo, gutter)
    if best is None:
        raise PackingOverflowError(
            f"{len(sizes)} charts do not fit the atlas even at half scale; "
            "raise atlas.reference_resolution or lower atlas.padding"
        )
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        trial = _shelf_layout(sizes, order, mid, gutter)
        if trial is None:
            hi = mid
        else:
            lo, best = mid, trial
    logger.debug(f"Atlas packing settled at {lo / s_max:.3f} of the area-bound scale")
    return best, lo


def generate_atlas(mesh, max_angle_deg=45.0, padding=4, reference_resolution=1024):
    """
    Segment faces into normal-coherent charts, project each chart onto its
    frame and shelf-pack the charts into [0,1]^2. Vertices on chart
    boundaries are duplicated; face order is kept. Returns (mesh, charts).
    """
    if not 0.0 < max_angle_deg < 90.0:
        raise InputError(f"chart angle must be in (0, 90) degrees, got {max_angle_deg}")
    vertices = np.asarray(mesh.vertices, dtype=np.float64)
    faces = np.asarray(mesh.faces, dtype=np.int64)
    welded = weld_positions(vertices)[faces]
    normals = face_normals(vertices, faces)
    areas = face_areas(vertices, faces)

    adj = face_adjacency(welded)
    chart_of, seeds = _grow_charts(adj, normals, areas, math.cos(math.radians(max_angle_deg)))
    n_charts = len(seeds)

    # one output vertex per (chart, input vertex)
    nv = len(vertices)
    keys = (np.repeat(chart_of, 3) * nv + faces.reshape(-1))
    unique_keys, new_faces = np.unique(keys, return_inverse=True)
    new_faces = new_faces.reshape(-1, 3)
    src = unique_keys % nv
    vert_chart = unique_keys // nv
    new_vertices = vertices[src]
    new_normals = None if mesh.normals is None else np.asarray(mesh.normals)[src]

    frames = []
    local = np.zeros((len(new_vertices), 2))
    sizes = np.zeros((n_charts, 2))
    for cid, seed in enumerate(seeds):
        members = np.flatnonzero(vert_chart == cid)
        pts = new_vertices[members]
        n, t, bt = _chart_frame(pts, normals[seed])
        uv = np.stack([pts @ t, pts @ bt], axis=1)
        lo = uv.min(axis=0)
        local[members] = uv - lo
        sizes[cid] = uv.max(axis=0) - lo
        frames.append((n, t, bt))

    gutter = padding / float(reference_resolution)
    offsets, scale = pack_charts(sizes, gutter)
    uv = offsets[vert_chart] + local * scale

    charts = []
    for cid in range(n_charts):
        n, t, bt = frames[cid]
        x, y = offsets[cid]
        w, h = sizes[cid] * scale
        charts.append(Chart(
            id=cid,
            faces=np.flatnonzero(chart_of == cid),
            normal=n, tangent=t, bitangent=bt,
            rect=(float(sizes[cid, 0]), float(sizes[cid, 1])),
            uv_rect=(float(x), float(y), float(x + w), float(y + h)),
        ))

    out = replace(mesh, vertices=new_vertices, faces=new_faces, uv=uv, normals=new_normals)
    logger.info(
        f"Generated atlas: {n_charts} charts over {len(faces)} faces, "
        f"{len(new_vertices) - nv} duplicated vertices, scale {scale:.4f}"
    )
    return out, charts


def face_chart_ids(charts, face_count):
    ids = np.full(face_count, -1, dtype=np.int64)
    for chart in charts:
        ids[np.asarray(chart.faces, dtype=np.int64)] = chart.id
    if np.any(ids < 0):
        raise InputError("charts do not cover every face")
    return ids


def charts_from_uv(mesh):
    """
    Charts of an existing UV layout: faces connected through shared vertex
    indices (continuous UVs) form one chart.
    """
    if mesh.uv is None:
        raise InputError("mesh has no UV coordinates")
    faces = np.asarray(mesh.faces, dtype=np.int64)
    adj = face_adjacency(faces)
    n_charts, labels = connected_components(adj, directed=False)
    # relabel by first face so ids follow face order
    _, first = np.unique(labels, return_index=True)
    rank = np.empty(n_charts, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(n_charts)
    labels = rank[labels]

    normals = face_normals(mesh.vertices, faces)
    areas = face_areas(mesh.vertices, faces)
    charts = []
    for cid in range(n_charts):
        members = np.flatnonzero(labels == cid)
        mean = np.sum(normals[members] * areas[members, None], axis=0)
        norm = np.linalg.norm(mean)
        n = mean / norm if norm > 0 else np.array([0.0, 0.0, 1.0])
        _, t, bt = _plane_basis(n)
        uv = mesh.uv[np.unique(faces[members])]
        lo, hi = uv.min(axis=0), uv.max(axis=0)
        charts.append(Chart(
            id=cid, faces=members, normal=n, tangent=t, bitangent=bt,
            rect=(float(hi[0] - lo[0]), float(hi[1] - lo[1])),
            uv_rect=(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])),
        ))
    return charts


# ---------------------------------------------------------------------------
# Id map and coverage
# ---------------------------------------------------------------------------

def chart_id_map(mesh, face_charts, size=1024):
    """
    Rasterize every face into UV space at size^2.
    Returns (ids (size, size) with -1 for empty texels, texels claimed by
    more than one chart).
    """
    if mesh.uv is None:
        raise InputError("mesh has no UV coordinates")
    face_charts = np.asarray(face_charts, dtype=np.int64)
    ids = np.full(size * size, -1, dtype=np.int64)
    claims = []
    pts = np.asarray(mesh.uv)[np.asarray(mesh.faces)] * size
    for tri, x, y, _, _, _ in scan_triangles(pts, size, size):
        pid = y * size + x
        claims.append(np.stack([pid, face_charts[tri]], axis=1))
    if not claims:
        return ids.reshape(size, size), 0
    claims = np.unique(np.concatenate(claims), axis=0)
    pid, chart = claims[:, 0], claims[:, 1]
    first = np.r_[True, pid[1:] != pid[:-1]]
    ids[pid[first]] = chart[first]
    _, counts = np.unique(pid, return_counts=True)
    return ids.reshape(size, size), int(np.sum(counts > 1))


def uv_coverage(mesh, size=1024):
    """Fraction of texels covered by at least one face"""
    ids, _ = chart_id_map(mesh, np.zeros(len(mesh.faces), dtype=np.int64), size)
    return float(np.mean(ids >= 0))


def chart_id_image(ids):
    """Debug RGB image with a distinct colour per chart and black background"""
    ids = np.asarray(ids, dtype=np.int64)
    rgb = np.stack([(ids * 97 + 31) % 223, (ids * 57 + 113) % 223, (ids * 151 + 7) % 223], axis=-1) + 32
    return np.where(ids[..., None] >= 0, rgb, 0).astype(np.uint8)


# ---------------------------------------------------------------------------
# Seams
# ---------------------------------------------------------------------------

def find_seam_edges(mesh, charts):
    """
    Hash undirected 3D edges (after welding coincident positions) and list
    every edge shared by exactly two faces that lie in different charts or
    whose UVs disagree along it. Sorted by welded endpoint ids.
    """
    if mesh.uv is None:
        raise InputError("mesh has no UV coordinates")
    faces = np.asarray(mesh.faces, dtype=np.int64)
    face_charts = charts if isinstance(charts, np.ndarray) else face_chart_ids(charts, len(faces))
    uv = np.asarray(mesh.uv, dtype=np.float64)
    welded = weld_positions(mesh.vertices)
    wf = welded[faces]

    _, group, owner = _edge_groups(wf)
    corner = np.tile(np.arange(3), len(faces))
    order = np.lexsort((owner, group))
    g_sorted = group[order]
    starts = np.flatnonzero(np.r_[True, g_sorted[1:] != g_sorted[:-1]])
    ends = np.r_[starts[1:], len(order)]

    def _side(half):
        f = owner[half]
        j = corner[half]
        ia, ib, ic = faces[f, j], faces[f, (j + 1) % 3], faces[f, (j + 2) % 3]
        wa, wb = welded[ia], welded[ib]
        if wa > wb:
            ia, ib = ib, ia
        return f, np.stack([uv[ia], uv[ib]]), uv[ic], (int(min(wa, wb)), int(max(wa, wb)))

    edges = []
    for s, e in zip(starts, ends):
        if e - s != 2:
            continue
        fa, uv_a, in_a, key = _side(order[s])
        fb, uv_b, in_b, _ = _side(order[s + 1])
        ca, cb = int(face_charts[fa]), int(face_charts[fb])
        if ca == cb and np.array_equal(uv_a, uv_b):
            continue
        edges.append(SeamEdge(
            key=key, face_a=int(fa), face_b=int(fb), uv_a=uv_a, uv_b=uv_b,
            chart_a=ca, chart_b=cb, inward_a=in_a, inward_b=in_b,
        ))
    edges.sort(key=lambda edge: (edge.key, edge.face_a, edge.face_b))
    logger.debug(f"Found {len(edges)} seam edges")
    return SeamEdgeList(edges=edges, face_charts=np.asarray(face_charts))
