"""
Parametric primitive meshes used as fixtures and as the geometry source of
the unconditioned procedural backend. All faces wind counter-clockwise seen
from outside.
"""

import math

import numpy as np

from core_geometry import Mesh, face_cross


def _orient_outward(vertices, faces, inside_points):
    """Flip faces whose normal points towards the given interior reference points"""
    cross = face_cross(vertices, faces)
    centroid = vertices[faces].mean(axis=1)
    flip = np.sum(cross * (centroid - inside_points), axis=1) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def icosphere(radius=0.4, subdivisions=3, center=(0.0, 0.0, 0.0)):
    """Subdivided icosahedron: 10 * 4^s + 2 vertices, 20 * 4^s faces"""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    vertices = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    vertices /= np.linalg.norm(vertices, axis=1, keepdims=True)

    for _ in range(subdivisions):
        edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
        unique, inverse = np.unique(edges, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        mid = vertices[unique].mean(axis=1)
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        base = len(vertices)
        vertices = np.concatenate([vertices, mid])
        f = len(faces)
        m01 = base + inverse[:f]
        m12 = base + inverse[f:2 * f]
        m20 = base + inverse[2 * f:]
        a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
        faces = np.concatenate([
            np.stack([a, m01, m20], axis=1),
            np.stack([b, m12, m01], axis=1),
            np.stack([c, m20, m12], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ])

    faces = _orient_outward(vertices, faces, np.zeros(3))
    return Mesh(vertices=vertices * radius + np.asarray(center), faces=faces, normals=vertices.copy())


_CUBE_FACES = [
    # (normal axis, sign, u axis, v axis)
    (2, 1.0, 0, 1),
    (0, 1.0, 2, 1),
    (2, -1.0, 0, 1),
    (0, -1.0, 2, 1),
    (1, 1.0, 0, 2),
    (1, -1.0, 0, 2),
]


def cube(size=1.0, center=(0.0, 0.0, 0.0), shared=False, with_uv=True, uv_margin=0.02):
    """
    Axis-aligned cube. The default has 24 vertices (flat normals, one UV
    cell per face in a 3 x 2 layout); shared=True gives the 8-vertex form.
    """
    h = size / 2.0
    c = np.asarray(center, dtype=np.float64)
    if shared:
        vertices = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)]) + c
        faces = np.array([
            [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
            [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
            [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
        ], dtype=np.int64)
        return Mesh(vertices=vertices, faces=_orient_outward(vertices, faces, c))

    vertices, normals, uvs, faces = [], [], [], []
    cell_w, cell_h = 1.0 / 3.0, 1.0 / 2.0
    for i, (axis, sign, ua, va) in enumerate(_CUBE_FACES):
        col, row = i % 3, i // 3
        for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
            p = np.zeros(3)
            p[axis] = sign * h
            p[ua] = (du * 2 - 1) * h
            p[va] = (dv * 2 - 1) * h
            vertices.append(p + c)
            n = np.zeros(3)
            n[axis] = sign
            normals.append(n)
            uvs.append([
                (col + uv_margin + du * (1 - 2 * uv_margin)) * cell_w,
                (row + uv_margin + dv * (1 - 2 * uv_margin)) * cell_h,
            ])
        k = 4 * i
        faces.extend([[k, k + 1, k + 2], [k, k + 2, k + 3]])
    vertices = np.asarray(vertices)
    faces = _orient_outward(vertices, np.asarray(faces, dtype=np.int64), c)
    return Mesh(
        vertices=vertices,
        faces=faces,
        uv=np.asarray(uvs) if with_uv else None,
        normals=np.asarray(normals),
    )


def torus(major=0.3, minor=0.1, segments=48, rings=24, center=(0.0, 0.0, 0.0)):
    """Watertight torus around the y axis"""
    u = 2.0 * np.pi * np.arange(segments) / segments
    v = 2.0 * np.pi * np.arange(rings) / rings
    uu, vv = np.meshgrid(u, v, indexing='ij')
    ring = major + minor * np.cos(vv)
    vertices = np.stack([ring * np.cos(uu), minor * np.sin(vv), ring * np.sin(uu)], axis=-1).reshape(-1, 3)
    normals = np.stack([np.cos(vv) * np.cos(uu), np.sin(vv), np.cos(vv) * np.sin(uu)], axis=-1).reshape(-1, 3)

    i, j = np.meshgrid(np.arange(segments), np.arange(rings), indexing='ij')
    a = (i * rings + j).reshape(-1)
    b = (((i + 1) % segments) * rings + j).reshape(-1)
    c = (((i + 1) % segments) * rings + (j + 1) % rings).reshape(-1)
    d = (i * rings + (j + 1) % rings).reshape(-1)
    faces = np.concatenate([np.stack([a, b, c], axis=1), np.stack([a, c, d], axis=1)])

    centroid = vertices[faces].mean(axis=1)
    angle = np.arctan2(centroid[:, 2], centroid[:, 0])
    spine = np.stack([major * np.cos(angle), np.zeros_like(angle), major * np.sin(angle)], axis=1)
    faces = _orient_outward(vertices, faces, spine)
    return Mesh(vertices=vertices + np.asarray(center), faces=faces, normals=normals)


def capsule(radius=0.2, length=0.4, segments=32, rings=8, center=(0.0, 0.0, 0.0)):
    """Cylinder of the given length capped by hemispheres, axis y"""
    lat = np.concatenate([
        np.linspace(-np.pi / 2, 0.0, rings + 1)[1:],
        np.linspace(0.0, np.pi / 2, rings + 1)[:-1],
    ])
    offset = np.where(np.arange(len(lat)) < rings, -length / 2, length / 2)
    az = 2.0 * np.pi * np.arange(segments) / segments
    la, azz = np.meshgrid(lat, az, indexing='ij')
    off = np.repeat(offset[:, None], segments, axis=1)
    body = np.stack([
        radius * np.cos(la) * np.cos(azz),
        radius * np.sin(la) + off,
        radius * np.cos(la) * np.sin(azz),
    ], axis=-1).reshape(-1, 3)
    bottom = np.array([[0.0, -length / 2 - radius, 0.0]])
    top = np.array([[0.0, length / 2 + radius, 0.0]])
    vertices = np.concatenate([body, bottom, top])
    n_rows = len(lat)
    ib, it = len(body), len(body) + 1

    faces = []
    for r in range(n_rows - 1):
        for s in range(segments):
            a = r * segments + s
            b = r * segments + (s + 1) % segments
            c = (r + 1) * segments + (s + 1) % segments
            d = (r + 1) * segments + s
            faces.extend([[a, b, c], [a, c, d]])
    for s in range(segments):
        faces.append([ib, (s + 1) % segments, s])
        last = (n_rows - 1) * segments
        faces.append([it, last + s, last + (s + 1) % segments])
    faces = np.asarray(faces, dtype=np.int64)

    centroid = vertices[faces].mean(axis=1)
    axis_point = np.zeros_like(centroid)
    axis_point[:, 1] = np.clip(centroid[:, 1], -length / 2, length / 2)
    faces = _orient_outward(vertices, faces, axis_point)
    return Mesh(vertices=vertices + np.asarray(center), faces=faces)


def quad(size=1.0, z=0.0):
    """Square in the xy plane facing +z with UVs spanning [0,1]^2"""
    h = size / 2.0
    vertices = np.array([[-h, -h, z], [h, -h, z], [h, h, z], [-h, h, z]])
    uv = np.array([[0.0, 1.0], [1.0, 1.0], [1.0, 0.0], [0.0, 0.0]])
    faces = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
    return Mesh(vertices=vertices, faces=faces, uv=uv, normals=np.tile([0.0, 0.0, 1.0], (4, 1)))


def plane_grid(n=8, size=1.0):
    """n x n quad grid in the xy plane with UVs following the positions"""
    t = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(t, t, indexing='xy')
    uv = np.stack([xx, 1.0 - yy], axis=-1).reshape(-1, 2)
    vertices = np.stack([(xx - 0.5) * size, (yy - 0.5) * size, np.zeros_like(xx)], axis=-1).reshape(-1, 3)
    faces = []
    for r in range(n):
        for c in range(n):
            a = r * (n + 1) + c
            faces.extend([[a, a + 1, a + n + 2], [a, a + n + 2, a + n + 1]])
    return Mesh(vertices=vertices, faces=np.asarray(faces, dtype=np.int64), uv=uv)


def merge(meshes):
    """Concatenate meshes; UVs and normals are kept only when every part has them"""
    offset = 0
    vertices, faces = [], []
    for m in meshes:
        vertices.append(m.vertices)
        faces.append(np.asarray(m.faces) + offset)
        offset += len(m.vertices)
    keep_uv = all(m.uv is not None for m in meshes)
    keep_n = all(m.normals is not None for m in meshes)
    return Mesh(
        vertices=np.concatenate(vertices),
        faces=np.concatenate(faces),
        uv=np.concatenate([m.uv for m in meshes]) if keep_uv else None,
        normals=np.concatenate([m.normals for m in meshes]) if keep_n else None,
    )


SHAPES = {
    'sphere': lambda scale, center: icosphere(radius=0.4 * scale, subdivisions=4, center=center),
    'cube': lambda scale, center: cube(size=0.7 * scale, center=center),
    'torus': lambda scale, center: torus(major=0.3 * scale, minor=0.1 * scale, center=center),
    'capsule': lambda scale, center: capsule(radius=0.2 * scale, length=0.4 * scale, center=center),
}


def shape_mesh(names):
    """
    Union of prompt-selected primitives. Several shapes are spaced along x
    and shrunk so the union stays inside the unit cube.
    """
    names = [n for n in names if n in SHAPES] or ['sphere']
    if len(names) == 1:
        return SHAPES[names[0]](1.0, (0.0, 0.0, 0.0))
    scale = 1.2 / len(names)
    step = 0.9 / len(names)
    parts = []
    for i, name in enumerate(names):
        x = (i - (len(names) - 1) / 2.0) * step
        parts.append(SHAPES[name](scale, (x, 0.0, 0.0)))
    return merge(parts)
