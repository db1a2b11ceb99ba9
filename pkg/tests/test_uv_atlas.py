import math

import numpy as np
import pytest

from core_geometry import face_normals
from models import InputError, PackingOverflowError
from primitives import cube, icosphere, quad, torus
from uv_atlas import (chart_id_image, chart_id_map, charts_from_uv, face_adjacency, face_chart_ids, find_seam_edges,
                      generate_atlas, pack_charts, uv_coverage)

PADDING = 4
REFERENCE = 1024


def _atlas(mesh, angle=45.0):
    return generate_atlas(mesh, max_angle_deg=angle, padding=PADDING, reference_resolution=REFERENCE)


def test_cube_splits_into_one_chart_per_side():
    mesh, charts = _atlas(cube())
    assert len(charts) == 6
    assert sorted(len(c.faces) for c in charts) == [2] * 6


@pytest.mark.parametrize('make', [cube, icosphere, torus], ids=['cube', 'icosphere', 'torus'])
def test_atlas_charts_never_share_texels(make):
    mesh, charts = _atlas(make())
    ids, collisions = chart_id_map(mesh, face_chart_ids(charts, mesh.face_count), REFERENCE)
    assert collisions == 0
    assert np.unique(ids[ids >= 0]).tolist() == list(range(len(charts)))


@pytest.mark.parametrize('make', [cube, icosphere, torus], ids=['cube', 'icosphere', 'torus'])
def test_atlas_uvs_respect_the_gutter(make):
    mesh, _ = _atlas(make())
    gutter = PADDING / REFERENCE
    assert mesh.uv.min() >= gutter - 1e-9
    assert mesh.uv.max() <= 1.0 - gutter + 1e-9


def test_atlas_keeps_face_order_and_positions():
    source = torus()
    mesh, _ = _atlas(source)
    assert mesh.face_count == source.face_count
    np.testing.assert_array_equal(mesh.vertices[mesh.faces], source.vertices[source.faces])


def test_chart_faces_stay_within_the_angle_of_their_seed():
    mesh, charts = _atlas(icosphere(), angle=30.0)
    normals = face_normals(mesh.vertices, mesh.faces)
    limit = math.cos(math.radians(30.0)) - 1e-9
    for chart in charts:
        assert np.all(normals[chart.faces] @ chart.normal >= limit)


def test_tighter_angle_gives_more_charts():
    _, wide = _atlas(icosphere(), angle=60.0)
    _, tight = _atlas(icosphere(), angle=20.0)
    assert len(tight) > len(wide)


def test_atlas_angle_bounds():
    for angle in (0.0, 90.0, 120.0):
        with pytest.raises(InputError):
            generate_atlas(cube(), max_angle_deg=angle)


def test_existing_cube_layout_has_six_charts_and_twelve_seams():
    mesh = cube()
    charts = charts_from_uv(mesh)
    assert len(charts) == 6
    assert charts[0].faces.tolist() == [0, 1]
    seams = find_seam_edges(mesh, charts)
    assert len(seams) == 12
    for edge in seams:
        assert edge.chart_a != edge.chart_b
        assert edge.key[0] < edge.key[1]
    keys = [edge.key for edge in seams]
    assert keys == sorted(keys)


def test_generated_atlas_seams_separate_charts():
    mesh, charts = _atlas(icosphere(subdivisions=2))
    seams = find_seam_edges(mesh, charts)
    assert len(seams) > 0
    assert all(e.chart_a != e.chart_b or not np.array_equal(e.uv_a, e.uv_b) for e in seams)
    np.testing.assert_array_equal(seams.face_charts, face_chart_ids(charts, mesh.face_count))


def test_seams_need_uvs():
    with pytest.raises(InputError):
        find_seam_edges(torus(), np.zeros(torus().face_count, dtype=np.int64))


def test_face_adjacency_of_closed_cube():
    adj = face_adjacency(cube(shared=True).faces)
    assert adj.shape == (12, 12)
    assert np.all(np.diff(adj.indptr) == 3)


def test_packing_places_rectangles_without_overlap():
    sizes = np.array([[0.5, 0.2], [0.3, 0.3], [0.1, 0.4], [0.2, 0.2]])
    gutter = 0.01
    offsets, scale = pack_charts(sizes, gutter)
    rects = np.concatenate([offsets, offsets + sizes * scale], axis=1)
    assert rects[:, :2].min() >= gutter - 1e-12
    assert rects[:, 2:].max() <= 1.0 - gutter + 1e-12
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            a, b = rects[i], rects[j]
            apart = a[2] + gutter <= b[0] + 1e-12 or b[2] + gutter <= a[0] + 1e-12 \
                or a[3] + gutter <= b[1] + 1e-12 or b[3] + gutter <= a[1] + 1e-12
            assert apart


def test_packing_overflow():
    with pytest.raises(PackingOverflowError):
        pack_charts(np.array([[0.1, 0.1]]), 0.5)


def test_full_quad_covers_the_whole_texture():
    assert uv_coverage(quad(), 64) == 1.0


@pytest.mark.parametrize('make', [cube, icosphere, torus], ids=['cube', 'icosphere', 'torus'])
def test_generated_atlas_covers_enough_of_the_texture(make):
    mesh, _ = generate_atlas(make())
    assert uv_coverage(mesh) >= 0.35


def test_face_chart_ids_must_cover_every_face():
    _, charts = _atlas(cube())
    with pytest.raises(InputError):
        face_chart_ids(charts[:5], 12)


def test_chart_id_image_leaves_background_black():
    ids = np.array([[-1, 0], [1, 2]])
    image = chart_id_image(ids)
    assert image.shape == (2, 2, 3)
    assert image.dtype == np.uint8
    assert np.all(image[0, 0] == 0)
    assert np.all(image[1, 1] > 0)
