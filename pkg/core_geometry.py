"""
Mesh representation, validation, normals and file I/O (OBJ in, GLB out).

Meshes are normalised on load so the bounding box has max extent 1.0 and is
centred at the origin. UVs are per-vertex; OBJ corners with distinct
(position, uv) pairs become distinct vertices.
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from models import EmptyMeshError, InputError, MeshParseError
import gltf_io

logger = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12


def _frozen(arr, dtype):
    if arr is None:
        return None
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    uv: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, 'vertices', _frozen(np.reshape(self.vertices, (-1, 3)), np.float64))
        object.__setattr__(self, 'faces', _frozen(np.reshape(self.faces, (-1, 3)), np.int64))
        if self.uv is not None:
            object.__setattr__(self, 'uv', _frozen(np.reshape(self.uv, (-1, 2)), np.float64))
        if self.normals is not None:
            object.__setattr__(self, 'normals', _frozen(np.reshape(self.normals, (-1, 3)), np.float64))

    @property
    def vertex_count(self):
        return len(self.vertices)

    @property
    def face_count(self):
        return len(self.faces)

    @property
    def has_uv(self):
        return self.uv is not None

    def with_normals(self):
        """Same mesh with per-vertex normals filled in when absent"""
        if self.normals is not None:
            return self
        return replace(self, normals=vertex_normals(self.vertices, self.faces))

    def triangles(self):
        return self.vertices[self.faces]


@dataclass(frozen=True)
class ValidationReport:
    out_of_range_indices: int
    degenerate_faces: int
    out_of_range_uvs: int
    non_manifold_edges: int

    @property
    def passed(self):
        # non-manifold edges are reported as a warning only
        return self.out_of_range_indices == 0 and self.degenerate_faces == 0 and self.out_of_range_uvs == 0

    def to_dict(self):
        return {
            'pass': self.passed,
            'out_of_range_indices': self.out_of_range_indices,
            'degenerate_faces': self.degenerate_faces,
            'out_of_range_uvs': self.out_of_range_uvs,
            'non_manifold_edges': self.non_manifold_edges,
        }


# ---------------------------------------------------------------------------
# Normals and measures
# ---------------------------------------------------------------------------

def face_cross(vertices, faces):
    """Unnormalised face normals (length = 2 x area)"""
    tri = np.asarray(vertices, dtype=np.float64)[np.asarray(faces)]
    return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])


def face_areas(vertices, faces):
    return 0.5 * np.linalg.norm(face_cross(vertices, faces), axis=1)


def face_normals(vertices, faces):
    cross = face_cross(vertices, faces)
    norm = np.linalg.norm(cross, axis=1, keepdims=True)
    return np.divide(cross, norm, out=np.zeros_like(cross), where=norm > 0)


def vertex_normals(vertices, faces):
    """Area-weighted average of incident face normals, normalised"""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    cross = face_cross(vertices, faces)
    acc = np.zeros_like(vertices)
    for corner in range(3):
        np.add.at(acc, faces[:, corner], cross)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    # isolated vertices get +z so normals stay unit length everywhere
    out = np.tile(np.array([0.0, 0.0, 1.0]), (len(vertices), 1))
    ok = norm[:, 0] > 0
    out[ok] = acc[ok] / norm[ok]
    return out


def bounding_box(vertices):
    v = np.asarray(vertices, dtype=np.float64)
    return v.min(axis=0), v.max(axis=0)


def normalize_mesh(mesh):
    """Scale to max bounding-box extent 1.0 and centre the box at the origin"""
    lo, hi = bounding_box(mesh.vertices)
    extent = float(np.max(hi - lo))
    if extent <= 0:
        raise EmptyMeshError("mesh has zero extent and cannot be normalised")
    centre = (lo + hi) * 0.5
    vertices = (mesh.vertices - centre) / extent
    return replace(mesh, vertices=vertices)


def mesh_hash(mesh):
    from utils import array_digest
    return array_digest(mesh.vertices, mesh.faces, mesh.uv, mesh.normals)


def weld_positions(vertices):
    """Ids that identify vertices at exactly the same position"""
    _, inverse = np.unique(np.asarray(vertices), axis=0, return_inverse=True)
    return inverse.reshape(-1)


def undirected_edges(faces):
    """(3F, 2) sorted vertex pairs for every face edge, in face order"""
    f = np.asarray(faces, dtype=np.int64)
    e = np.stack([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=1).reshape(-1, 2)
    return np.sort(e, axis=1)


def euler_characteristic(mesh):
    edges = np.unique(undirected_edges(mesh.faces), axis=0)
    used = np.unique(mesh.faces)
    return len(used) - len(edges) + len(mesh.faces)


# ---------------------------------------------------------------------------
# OBJ
# ---------------------------------------------------------------------------

def _resolve_index(token, count, line_no, kind):
    try:
        idx = int(token)
    except ValueError:
        raise MeshParseError(f"invalid {kind} index '{token}'", line=line_no)
    if idx == 0:
        raise MeshParseError(f"{kind} index 0 is invalid (OBJ indices are 1-based)", line=line_no)
    resolved = idx - 1 if idx > 0 else count + idx
    if resolved < 0 or resolved >= count:
        raise MeshParseError(f"{kind} index {idx} out of range (have {count})", line=line_no)
    return resolved


def _floats(args, n, line_no, record):
    if len(args) < n:
        raise MeshParseError(f"'{record}' record needs {n} values", line=line_no)
    try:
        return [float(a) for a in args[:n]]
    except ValueError:
        raise MeshParseError(f"malformed '{record}' record", line=line_no)


def load_mesh(data, normalize=True):
    """
    Parse an OBJ document (bytes or str) into a Mesh.
    Quads and larger polygons are fanned from their first corner, so a quad
    splits along its v0-v2 diagonal.
    """
    if isinstance(data, bytes):
        try:
            text = data.decode('utf-8')
        except UnicodeDecodeError:
            text = data.decode('latin-1')
    else:
        text = data

    positions, texcoords, normals = [], [], []
    corners = []  # (v, vt or None, vn or None)
    triangles = []
    any_vt = False
    any_missing_vt = False

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        args = line.split()
        cmd, args = args[0], args[1:]
        if cmd == 'v':
            positions.append(_floats(args, 3, line_no, 'v'))
        elif cmd == 'vt':
            texcoords.append(_floats(args, 2, line_no, 'vt'))
        elif cmd == 'vn':
            normals.append(_floats(args, 3, line_no, 'vn'))
        elif cmd == 'f':
            if len(args) < 3:
                raise MeshParseError("face needs at least 3 corners", line=line_no)
            ids = []
            for token in args:
                parts = token.split('/')
                if len(parts) > 3 or not parts[0]:
                    raise MeshParseError(f"malformed face corner '{token}'", line=line_no)
                v = _resolve_index(parts[0], len(positions), line_no, 'vertex')
                vt = vn = None
                if len(parts) > 1 and parts[1]:
                    vt = _resolve_index(parts[1], len(texcoords), line_no, 'texcoord')
                if len(parts) > 2 and parts[2]:
                    vn = _resolve_index(parts[2], len(normals), line_no, 'normal')
                if vt is None:
                    any_missing_vt = True
                else:
                    any_vt = True
                corners.append((v, vt, vn))
                ids.append(len(corners) - 1)
            for k in range(1, len(ids) - 1):
                triangles.append((ids[0], ids[k], ids[k + 1]))
        # o, g, s, usemtl, mtllib and other records carry nothing we keep

    if not positions or not triangles:
        raise EmptyMeshError("OBJ document contains no faces")
    if any_vt and any_missing_vt:
        raise MeshParseError("faces mix corners with and without texture coordinates")

    if any_vt:
        # vertex-split so every (position, uv) pair is its own vertex
        key_to_vertex = {}
        corner_vertex = np.empty(len(corners), dtype=np.int64)
        out_v, out_uv, out_vn = [], [], []
        for i, (v, vt, vn) in enumerate(corners):
            key = (v, vt)
            if key not in key_to_vertex:
                key_to_vertex[key] = len(out_v)
                out_v.append(positions[v])
                out_uv.append(texcoords[vt])
                out_vn.append(vn)
            corner_vertex[i] = key_to_vertex[key]
        vertices = np.array(out_v, dtype=np.float64)
        uv = np.array(out_uv, dtype=np.float64)
        vn_per_vertex = out_vn
    else:
        corner_vertex = np.array([c[0] for c in corners], dtype=np.int64)
        vertices = np.array(positions, dtype=np.float64)
        uv = None
        vn_per_vertex = [None] * len(vertices)
        for v, _, vn in corners:
            if vn_per_vertex[v] is None:
                vn_per_vertex[v] = vn

    faces = corner_vertex[np.array(triangles, dtype=np.int64)]

    mesh_normals = None
    if normals and all(vn is not None for vn in vn_per_vertex):
        n = np.array([normals[i] for i in vn_per_vertex], dtype=np.float64)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        if np.all(norm > 0):
            mesh_normals = n / norm

    mesh = Mesh(vertices=vertices, faces=faces, uv=uv, normals=mesh_normals)
    if normalize:
        mesh = normalize_mesh(mesh)
    mesh = mesh.with_normals()
    logger.debug(f"Loaded OBJ mesh: {mesh.vertex_count} vertices, {mesh.face_count} faces, uv={mesh.has_uv}")
    return mesh


def load_mesh_file(path, normalize=True):
    try:
        with open(path, 'rb') as fh:
            data = fh.read()
    except OSError as e:
        raise InputError(f"cannot read mesh file {path}: {e.strerror}")
    if str(path).lower().endswith(('.glb', '.gltf')):
        return gltf_io.load_glb_mesh(data)
    return load_mesh(data, normalize=normalize)


def save_obj(mesh, include_normals=True):
    """Serialise to OBJ text bytes; corners reference matching v/vt/vn indices"""
    lines = ['# gen3d mesh']
    for x, y, z in mesh.vertices:
        lines.append(f"v {float(x)!r} {float(y)!r} {float(z)!r}")
    if mesh.uv is not None:
        for u, v in mesh.uv:
            lines.append(f"vt {float(u)!r} {float(v)!r}")
    normals = mesh.normals if include_normals else None
    if normals is not None:
        for x, y, z in normals:
            lines.append(f"vn {float(x)!r} {float(y)!r} {float(z)!r}")
    for face in mesh.faces + 1:
        if mesh.uv is not None and normals is not None:
            corners = [f"{i}/{i}/{i}" for i in face]
        elif mesh.uv is not None:
            corners = [f"{i}/{i}" for i in face]
        elif normals is not None:
            corners = [f"{i}//{i}" for i in face]
        else:
            corners = [str(i) for i in face]
        lines.append('f ' + ' '.join(corners))
    return ('\n'.join(lines) + '\n').encode('utf-8')


# ---------------------------------------------------------------------------
# Validation and export
# ---------------------------------------------------------------------------

def validate_mesh(mesh):
    """Count structural problems without modifying the mesh"""
    faces = np.asarray(mesh.faces, dtype=np.int64)
    n = len(mesh.vertices)
    bad_face = np.any((faces < 0) | (faces >= n), axis=1) if len(faces) else np.zeros(0, bool)
    out_of_range = int(np.count_nonzero(bad_face))

    good = faces[~bad_face]
    degenerate = int(np.count_nonzero(face_areas(mesh.vertices, good) <= DEGENERATE_AREA)) if len(good) else 0

    bad_uv = 0
    if mesh.uv is not None:
        uv = np.asarray(mesh.uv)
        if len(uv) != n:
            bad_uv = abs(len(uv) - n)
        in_range = np.all((uv >= 0.0) & (uv <= 1.0) & np.isfinite(uv), axis=1)
        bad_uv += int(np.count_nonzero(~in_range))

    non_manifold = 0
    if len(good):
        _, counts = np.unique(undirected_edges(good), axis=0, return_counts=True)
        non_manifold = int(np.count_nonzero(counts > 2))

    return ValidationReport(
        out_of_range_indices=out_of_range,
        degenerate_faces=degenerate,
        out_of_range_uvs=bad_uv,
        non_manifold_edges=non_manifold,
    )


def save_gltf(mesh, materials=None):
    """
    Export as binary glTF 2.0. With materials the primitive gets a
    pbrMetallicRoughness material: baseColorTexture = albedo, and the
    metallicRoughnessTexture packs roughness in G and metalness in B.
    """
    if materials is not None:
        if mesh.uv is None:
            raise InputError("mesh has no UV coordinates; cannot attach PBR textures")
        shapes = {materials.albedo.shape[:2], materials.roughness.shape[:2], materials.metalness.shape[:2]}
        if len(shapes) != 1:
            raise InputError(f"PBR texture size mismatch: {sorted(shapes)}")
    return gltf_io.build_glb(mesh.with_normals(), materials)
