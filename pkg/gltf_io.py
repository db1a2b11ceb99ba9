"""
Binary glTF 2.0 (GLB) writer and reader.

One mesh / node / scene per file. Buffer views are 4-byte aligned; the JSON
chunk is padded with spaces and the BIN chunk with zeros.
"""

import json
import logging
import struct

import numpy as np

from models import InputError

logger = logging.getLogger(__name__)

GLB_MAGIC = 0x46546C67
GLB_VERSION = 2
CHUNK_JSON = 0x4E4F534A
CHUNK_BIN = 0x004E4942

FLOAT = 5126
UNSIGNED_INT = 5125
ARRAY_BUFFER = 34962
ELEMENT_ARRAY_BUFFER = 34963

_COMPONENTS = {'SCALAR': 1, 'VEC2': 2, 'VEC3': 3, 'VEC4': 4}
_DTYPES = {5120: np.int8, 5121: np.uint8, 5122: np.int16, 5123: np.uint16, 5125: np.uint32, 5126: np.float32}


def _pad(data, fill=b'\x00'):
    return data + fill * ((4 - len(data) % 4) % 4)


class GlbBuilder:
    def __init__(self, generator='gen3d'):
        self.data = bytearray()
        self.json = {
            'asset': {'version': '2.0', 'generator': generator},
            'scene': 0,
            'scenes': [{'nodes': [0]}],
            'nodes': [{'name': 'asset', 'mesh': 0}],
            'buffers': [{'byteLength': 0}],
            'bufferViews': [],
            'accessors': [],
            'meshes': [{'primitives': [{'attributes': {}, 'mode': 4}]}],
        }
        self.primitive = self.json['meshes'][0]['primitives'][0]

    def add_buffer_view(self, payload, target=None):
        self.data.extend(b'\x00' * ((4 - len(self.data) % 4) % 4))
        view = {'buffer': 0, 'byteOffset': len(self.data), 'byteLength': len(payload)}
        if target is not None:
            view['target'] = target
        self.data.extend(payload)
        self.json['bufferViews'].append(view)
        return len(self.json['bufferViews']) - 1

    def add_accessor(self, array, component_type, kind, target, with_bounds=False):
        view = self.add_buffer_view(array.tobytes(), target)
        accessor = {
            'bufferView': view,
            'byteOffset': 0,
            'componentType': component_type,
            'count': int(len(array)),
            'type': kind,
        }
        if with_bounds:
            accessor['min'] = [float(v) for v in array.min(axis=0)]
            accessor['max'] = [float(v) for v in array.max(axis=0)]
        self.json['accessors'].append(accessor)
        return len(self.json['accessors']) - 1

    def add_mesh(self, mesh):
        attrs = self.primitive['attributes']
        positions = np.ascontiguousarray(mesh.vertices, dtype='<f4')
        attrs['POSITION'] = self.add_accessor(positions, FLOAT, 'VEC3', ARRAY_BUFFER, with_bounds=True)
        if mesh.normals is not None:
            normals = np.asarray(mesh.normals, dtype=np.float64)
            normals = normals / np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-12)
            attrs['NORMAL'] = self.add_accessor(np.ascontiguousarray(normals, dtype='<f4'), FLOAT, 'VEC3', ARRAY_BUFFER)
        if mesh.uv is not None:
            attrs['TEXCOORD_0'] = self.add_accessor(np.ascontiguousarray(mesh.uv, dtype='<f4'), FLOAT, 'VEC2', ARRAY_BUFFER)
        indices = np.ascontiguousarray(np.asarray(mesh.faces).reshape(-1), dtype='<u4')
        self.primitive['indices'] = self.add_accessor(indices, UNSIGNED_INT, 'SCALAR', ELEMENT_ARRAY_BUFFER)

    def add_image(self, png_bytes, name):
        view = self.add_buffer_view(png_bytes)
        self.json.setdefault('images', []).append({'name': name, 'bufferView': view, 'mimeType': 'image/png'})
        self.json.setdefault('samplers', [{'magFilter': 9729, 'minFilter': 9987, 'wrapS': 33071, 'wrapT': 33071}])
        self.json.setdefault('textures', []).append({'sampler': 0, 'source': len(self.json['images']) - 1})
        return len(self.json['textures']) - 1

    def add_pbr_material(self, materials):
        from utils import encode_png, quantize8

        albedo = quantize8(materials.albedo)
        alpha = np.full(albedo.shape[:2] + (1,), 255, dtype=np.uint8)
        base = self.add_image(encode_png(np.concatenate([albedo, alpha], axis=2)), 'baseColor')

        mr = np.zeros(albedo.shape[:2] + (3,), dtype=np.uint8)
        mr[..., 1] = quantize8(materials.roughness)
        mr[..., 2] = quantize8(materials.metalness)
        packed = self.add_image(encode_png(mr), 'metallicRoughness')

        self.json['materials'] = [{
            'name': 'pbr',
            'pbrMetallicRoughness': {
                'baseColorTexture': {'index': base, 'texCoord': 0},
                'metallicRoughnessTexture': {'index': packed, 'texCoord': 0},
                'metallicFactor': 1.0,
                'roughnessFactor': 1.0,
            },
            'doubleSided': False,
        }]
        self.primitive['material'] = 0

    def to_bytes(self):
        self.json['buffers'][0]['byteLength'] = len(self.data)
        json_bytes = _pad(json.dumps(self.json, separators=(',', ':'), sort_keys=True).encode('utf-8'), b' ')
        bin_bytes = _pad(bytes(self.data))
        total = 12 + 8 + len(json_bytes) + 8 + len(bin_bytes)
        out = bytearray()
        out += struct.pack('<III', GLB_MAGIC, GLB_VERSION, total)
        out += struct.pack('<II', len(json_bytes), CHUNK_JSON)
        out += json_bytes
        out += struct.pack('<II', len(bin_bytes), CHUNK_BIN)
        out += bin_bytes
        return bytes(out)


def build_glb(mesh, materials=None):
    builder = GlbBuilder()
    builder.add_mesh(mesh)
    if materials is not None:
        builder.add_pbr_material(materials)
    data = builder.to_bytes()
    logger.debug(f"Built GLB: {len(data)} bytes, {len(mesh.faces)} faces, textured={materials is not None}")
    return data


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

def read_glb(data):
    """Split a GLB into (json document, binary chunk)"""
    if len(data) < 20:
        raise InputError("GLB data is too short")
    magic, version, length = struct.unpack_from('<III', data, 0)
    if magic != GLB_MAGIC:
        raise InputError("not a GLB file (bad magic)")
    if version != GLB_VERSION:
        raise InputError(f"unsupported GLB version {version}")
    if length != len(data):
        raise InputError(f"GLB length field {length} does not match data size {len(data)}")
    offset = 12
    doc, binary = None, b''
    while offset < length:
        chunk_len, chunk_type = struct.unpack_from('<II', data, offset)
        offset += 8
        chunk = data[offset:offset + chunk_len]
        if chunk_type == CHUNK_JSON:
            doc = json.loads(chunk.decode('utf-8'))
        elif chunk_type == CHUNK_BIN:
            binary = bytes(chunk)
        offset += chunk_len
    if doc is None:
        raise InputError("GLB has no JSON chunk")
    return doc, binary


def read_accessor(doc, binary, index):
    accessor = doc['accessors'][index]
    view = doc['bufferViews'][accessor['bufferView']]
    dtype = np.dtype(_DTYPES[accessor['componentType']]).newbyteorder('<')
    width = _COMPONENTS[accessor['type']]
    start = view.get('byteOffset', 0) + accessor.get('byteOffset', 0)
    count = accessor['count']
    arr = np.frombuffer(binary, dtype=dtype, count=count * width, offset=start)
    return arr.reshape(count, width) if width > 1 else arr.copy()


def read_image(doc, binary, texture_index):
    from utils import decode_png
    image = doc['images'][doc['textures'][texture_index]['source']]
    view = doc['bufferViews'][image['bufferView']]
    start = view.get('byteOffset', 0)
    return decode_png(binary[start:start + view['byteLength']])


def load_glb_mesh(data):
    """Mesh (positions, faces, uv, normals) of the first primitive in a GLB"""
    from core_geometry import Mesh

    doc, binary = read_glb(data)
    prim = doc['meshes'][0]['primitives'][0]
    attrs = prim['attributes']
    vertices = read_accessor(doc, binary, attrs['POSITION']).astype(np.float64)
    faces = read_accessor(doc, binary, prim['indices']).astype(np.int64).reshape(-1, 3)
    uv = read_accessor(doc, binary, attrs['TEXCOORD_0']).astype(np.float64) if 'TEXCOORD_0' in attrs else None
    normals = read_accessor(doc, binary, attrs['NORMAL']).astype(np.float64) if 'NORMAL' in attrs else None
    return Mesh(vertices=vertices, faces=faces, uv=uv, normals=normals)


def load_glb_materials(data):
    """PBRTextureSet from the first material's textures, or None if untextured"""
    from materials import PBRTextureSet

    doc, binary = read_glb(data)
    if not doc.get('materials'):
        return None
    pbr = doc['materials'][0].get('pbrMetallicRoughness', {})
    if 'baseColorTexture' not in pbr or 'metallicRoughnessTexture' not in pbr:
        return None
    base = read_image(doc, binary, pbr['baseColorTexture']['index']).astype(np.float64) / 255.0
    mr = read_image(doc, binary, pbr['metallicRoughnessTexture']['index']).astype(np.float64) / 255.0
    return PBRTextureSet(albedo=base[..., :3], roughness=mr[..., 1], metalness=mr[..., 2])
