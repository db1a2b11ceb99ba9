#!/usr/bin/env python3
"""
Write the demo and test fixtures: primitive meshes as OBJ, a textured quad,
the two-tone cube texture and a sample pipeline config.

    python make_fixtures.py [output_dir]
"""

import os
import sys

import numpy as np

from core_geometry import save_obj
from materials import materials_from_texture
from models import PipelineConfig
from primitives import cube, icosphere, quad, torus
from texture_ops import Texture, fill_holes
from utils import float_to_png, write_bytes
from uv_atlas import chart_id_map, charts_from_uv, face_chart_ids

TONE_A = (0.85, 0.25, 0.2)
TONE_B = (0.2, 0.3, 0.85)

# +z, -z and +y faces take tone A; +x, -x and -y take tone B
TONE_A_CHARTS = (0, 2, 4)


def two_tone_cube(size=256, padding=4):
    """
    Cube with its 3 x 2 UV layout and a texture whose charts alternate
    between two flat tones, so every cube edge between an A and a B face is
    a hard seam. Returns (mesh, texture, charts).
    """
    mesh = cube()
    charts = charts_from_uv(mesh)
    ids, _ = chart_id_map(mesh, face_chart_ids(charts, len(mesh.faces)), size)
    inside = ids >= 0
    pixels = np.zeros((size, size, 3))
    pixels[np.isin(ids, TONE_A_CHARTS)] = TONE_A
    pixels[inside & ~np.isin(ids, TONE_A_CHARTS)] = TONE_B
    texture = Texture(pixels=pixels, coverage=inside, chart_mask=inside)
    # texels in the gutter copy their nearest chart
    return mesh, fill_holes(texture, padding), charts


def gradient_texture(mesh, size=256):
    """Texture holding a smooth colour ramp of the surface position, pull-push filled outside the layout"""
    from texture_ops import uv_surface_map

    samples = uv_surface_map(mesh, size)
    pixels = np.zeros((size * size, 3))
    pixels[samples.texel] = 0.5 + 0.3 * samples.position
    mask = samples.mask()
    filled = fill_holes(Texture(pixels=pixels.reshape(size, size, 3), coverage=mask))
    return Texture(pixels=filled.pixels, coverage=mask, chart_mask=mask)


def write_fixtures(directory='fixtures'):
    """Write every fixture under directory; returns {name: path}"""
    os.makedirs(directory, exist_ok=True)
    paths = {}

    for name, mesh in (('cube', cube()), ('icosphere', icosphere(subdivisions=3)),
                       ('torus', torus()), ('quad', quad())):
        path = os.path.join(directory, f"{name}.obj")
        write_bytes(path, save_obj(mesh))
        paths[name] = path

    _, texture, _ = two_tone_cube()
    path = os.path.join(directory, 'two_tone_cube.png')
    write_bytes(path, float_to_png(materials_from_texture(texture).albedo))
    paths['two_tone_cube'] = path

    config = PipelineConfig().with_overrides({
        'rig.resolution': '128',
        'recon.resolution': '48',
        'texture.size': '256',
    })
    path = os.path.join(directory, 'config.json')
    write_bytes(path, (config.to_json() + '\n').encode('utf-8'))
    paths['config'] = path
    return paths


def main(argv):
    directory = argv[0] if argv else 'fixtures'
    print(f"🔄 Writing fixtures to {directory}/ ...")
    try:
        paths = write_fixtures(directory)
    except Exception as e:
        print(f"❌ Fixture generation failed: {e}")
        return 1
    for name, path in sorted(paths.items()):
        print(f"✅ {name}: {path}")
    print(f"🎉 {len(paths)} fixtures written")
    return 0


if __name__ == '__main__':
    sys.exit(main(sys.argv[1:]))
