import math

import numpy as np
import pytest

from materials import PBRTextureSet, constant_texture_set, interleave, materials_from_texture, shade, split_channels
from models import InputError, LightConfig
from primitives import cube
from rasterizer import Camera, rasterize
from texture_ops import Texture


def _five_channel(size=8):
    rng = np.random.default_rng(4)
    return Texture(pixels=rng.random((size, size, 5)), coverage=np.ones((size, size), dtype=bool))


def test_split_then_interleave_keeps_channel_meaning():
    texture = _five_channel()
    materials = split_channels(texture)
    np.testing.assert_array_equal(materials.albedo, texture.pixels[..., :3])
    np.testing.assert_array_equal(materials.roughness, texture.pixels[..., 3])
    np.testing.assert_array_equal(materials.metalness, texture.pixels[..., 4])
    np.testing.assert_array_equal(interleave(materials).pixels, texture.pixels)


def test_split_needs_five_channels():
    with pytest.raises(InputError):
        split_channels(Texture(pixels=np.zeros((8, 8, 3)), coverage=np.ones((8, 8))))


def test_three_channel_texture_gets_constant_pbr_maps():
    texture = Texture(pixels=np.full((4, 4, 3), 0.3), coverage=np.ones((4, 4)))
    materials = materials_from_texture(texture, roughness=0.6, metalness=0.1)
    assert np.all(materials.roughness == 0.6)
    assert np.all(materials.metalness == 0.1)
    assert materials.resolution == 4


def test_texture_set_clips_and_checks_shapes():
    materials = PBRTextureSet(albedo=np.full((4, 4, 3), 1.5), roughness=np.full((4, 4), -1.0),
                              metalness=np.zeros((4, 4)))
    assert materials.albedo.max() == 1.0
    assert materials.roughness.min() == 0.0
    with pytest.raises(InputError):
        PBRTextureSet(albedo=np.zeros((4, 4, 3)), roughness=np.zeros((8, 8)), metalness=np.zeros((4, 4)))
    with pytest.raises(InputError):
        PBRTextureSet(albedo=np.zeros((4, 4)), roughness=np.zeros((4, 4)), metalness=np.zeros((4, 4)))


def test_backlit_point_receives_ambient_only():
    light = LightConfig(direction=(0.0, 0.0, 1.0), color=(1.0, 1.0, 1.0), ambient=0.2)
    albedo = np.array([0.5, 0.4, 0.3])
    out = shade(albedo, 0.5, 0.0, normal=(0.0, 0.0, -1.0), view_dir=(0.0, 0.0, -1.0), light=light)
    np.testing.assert_allclose(out, 0.2 * albedo)


def test_shading_stays_in_unit_range_and_brightens_facing_points():
    light = LightConfig()
    rng = np.random.default_rng(9)
    normals = rng.normal(size=(200, 3))
    views = rng.normal(size=(200, 3))
    out = shade(rng.random((200, 3)), rng.random(200), rng.random(200), normals, views, light)
    assert out.min() >= 0.0 and out.max() <= 1.0

    l = np.asarray(light.direction, dtype=float)
    l /= np.linalg.norm(l)
    facing = shade((0.8, 0.8, 0.8), 1.0, 0.0, normal=l, view_dir=l, light=light)
    grazing = shade((0.8, 0.8, 0.8), 1.0, 0.0, normal=np.cross(l, (0.0, 0.0, 1.0)) + 0.05 * l, view_dir=l,
                    light=light)
    assert np.all(facing > grazing)


def test_metal_has_no_diffuse_term():
    light = LightConfig(ambient=0.0)
    l = np.asarray(light.direction, dtype=float)
    l /= np.linalg.norm(l)
    # off-specular view so only diffuse would contribute
    side = np.cross(l, (0.0, 1.0, 0.0))
    side /= np.linalg.norm(side)
    view = l + 2.0 * side
    dielectric = shade((0.9, 0.9, 0.9), 1.0, 0.0, normal=l, view_dir=view, light=light)
    metal = shade((0.9, 0.9, 0.9), 1.0, 1.0, normal=l, view_dir=view, light=light)
    assert np.all(metal < dielectric)


def test_constant_set_is_constant():
    materials = constant_texture_set(16, (0.1, 0.2, 0.3), roughness=0.4, metalness=0.5)
    assert materials.albedo.shape == (16, 16, 3)
    np.testing.assert_array_equal(materials.albedo[7, 3], [0.1, 0.2, 0.3])
    assert np.all(materials.roughness == 0.4)
    assert np.all(materials.metalness == 0.5)


# ---------------------------------------------------------------------------
# BRDF values
# ---------------------------------------------------------------------------

def _normalized(v):
    length = math.sqrt(sum(c * c for c in v))
    return [c / length for c in v]


def _ggx_reference(albedo, roughness, metalness, n, v, l, color, ambient):
    """Scalar, per-channel GGX evaluation written out longhand"""
    n, v, l = _normalized(n), _normalized(v), _normalized(l)
    h = _normalized([a + b for a, b in zip(l, v)])
    nl, nv, nh, vh = (max(sum(x * y for x, y in zip(a, b)), 0.0) for a, b in ((n, l), (n, v), (n, h), (v, h)))
    a = max(roughness * roughness, 1e-3)
    d = a * a / (math.pi * (nh * nh * (a * a - 1.0) + 1.0) ** 2)
    k = a / 2.0
    g = (nl / (nl * (1.0 - k) + k)) * (nv / (nv * (1.0 - k) + k))
    out = []
    for c in range(3):
        f0 = 0.04 * (1.0 - metalness) + albedo[c] * metalness
        f = f0 + (1.0 - f0) * (1.0 - vh) ** 5
        spec = d * f * g / (4.0 * max(nv, 1e-4))
        diffuse = albedo[c] * (1.0 - metalness) * nl
        value = ambient[c] * albedo[c] + color[c] * min(diffuse + spec, 1.0)
        out.append(min(max(value, 0.0), 1.0))
    return out


@pytest.mark.parametrize('albedo, roughness, metalness, n, v, l', [
    ((0.8, 0.3, 0.2), 0.5, 0.0, (0.0, 0.0, 1.0), (0.3, -0.2, 0.9), (0.0, 0.6, 0.8)),
    ((0.2, 0.5, 0.9), 0.25, 1.0, (0.1, 0.2, 0.95), (0.0, 0.0, 1.0), (0.4, 0.0, 0.9)),
    ((0.6, 0.6, 0.6), 0.9, 0.4, (0.0, 1.0, 0.2), (0.5, 0.5, 0.5), (-0.3, 0.8, 0.1)),
])
def test_shade_matches_a_longhand_ggx(albedo, roughness, metalness, n, v, l):
    light = LightConfig(direction=tuple(_normalized(l)), color=(1.0, 0.9, 0.8), ambient=(0.1, 0.1, 0.1))
    out = shade(albedo, roughness, metalness, normal=n, view_dir=v, light=light)
    expected = _ggx_reference(albedo, roughness, metalness, n, v, l, light.color, light.ambient)
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-15)


def test_shade_at_normal_incidence_by_hand():
    light = LightConfig(direction=(0.0, 0.0, 1.0), color=(1.0, 1.0, 1.0), ambient=(0.1, 0.1, 0.1))
    out = shade((0.5, 0.5, 0.5), 1.0, 0.0, normal=(0.0, 0.0, 1.0), view_dir=(0.0, 0.0, 1.0), light=light)
    # ambient 0.05 + diffuse 0.5 + D F G / 4 = (1/pi) * 0.04 / 4
    np.testing.assert_allclose(out, 0.55 + 0.01 / math.pi, rtol=1e-12)


@pytest.mark.parametrize('channel', ['roughness', 'metalness'])
def test_shade_is_continuous_in_roughness_and_metalness(channel):
    light = LightConfig()
    sweep = np.linspace(0.0, 1.0, 2001)
    params = {'roughness': np.full(2001, 0.5), 'metalness': np.full(2001, 0.3)}
    params[channel] = sweep
    out = shade((0.7, 0.5, 0.3), params['roughness'], params['metalness'],
                normal=(0.0, 0.0, 1.0), view_dir=(0.3, -0.2, 0.9), light=light)
    steps = np.abs(np.diff(out, axis=0))
    assert steps.max() < 2e-3
    assert np.ptp(out) > 1e-3


def test_albedo_buffer_does_not_depend_on_the_light():
    rng = np.random.default_rng(21)
    materials = PBRTextureSet(albedo=rng.random((64, 64, 3)), roughness=rng.random((64, 64)),
                              metalness=rng.random((64, 64)))
    camera = Camera(position=(1.5, 1.2, 2.0), resolution=64)
    warm = LightConfig()
    cold = LightConfig(direction=(0.6, 0.0, 0.8), color=(0.4, 0.5, 1.0), ambient=(0.3, 0.3, 0.3))
    a = rasterize(cube(), camera, materials=materials, light=warm)
    b = rasterize(cube(), camera, materials=materials, light=cold)
    np.testing.assert_array_equal(a.albedo, b.albedo)
    np.testing.assert_array_equal(a.roughness, b.roughness)
    np.testing.assert_array_equal(a.metalness, b.metalness)
    assert not np.allclose(a.shaded[a.mask], b.shaded[b.mask])
