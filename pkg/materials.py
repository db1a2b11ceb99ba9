"""
PBR material model: five-channel texture semantics, channel splitting and the
fixed analytic shading used to produce the "shaded" view channel.

Shading formula (all vectors unit length, dot products clamped at 0):

    a        = max(roughness^2, 1e-3)
    h        = normalize(l + v)
    D        = a^2 / (pi * ((n.h)^2 * (a^2 - 1) + 1)^2)
    F0       = 0.04 * (1 - metalness) + albedo * metalness
    F        = F0 + (1 - F0) * (1 - v.h)^5
    k        = a / 2
    G        = G1(n.l) * G1(n.v),  G1(x) = x / (x * (1 - k) + k)
    specular = D * F * G / (4 * max(n.v, 1e-4))
    diffuse  = albedo * (1 - metalness) * n.l
    out      = clip(ambient * albedo + light * min(diffuse + specular, 1), 0, 1)

G1(n.l) vanishes at n.l = 0, so a backlit point receives ambient only.
"""

import logging
from dataclasses import dataclass

import numpy as np

from models import InputError, LightConfig

logger = logging.getLogger(__name__)

__all__ = ['PBRTextureSet', 'LightConfig', 'shade', 'split_channels', 'interleave', 'constant_texture_set']

MIN_ALPHA = 1e-3
DIELECTRIC_F0 = 0.04


@dataclass(frozen=True, eq=False)
class PBRTextureSet:
    albedo: np.ndarray
    roughness: np.ndarray
    metalness: np.ndarray

    def __post_init__(self):
        albedo = np.clip(np.asarray(self.albedo, dtype=np.float64), 0.0, 1.0)
        roughness = np.clip(np.asarray(self.roughness, dtype=np.float64), 0.0, 1.0)
        metalness = np.clip(np.asarray(self.metalness, dtype=np.float64), 0.0, 1.0)
        if albedo.ndim != 3 or albedo.shape[2] != 3:
            raise InputError(f"albedo must be (L, L, 3), got {albedo.shape}")
        if roughness.shape != albedo.shape[:2] or metalness.shape != albedo.shape[:2]:
            raise InputError(
                f"PBR maps must share a resolution: albedo {albedo.shape[:2]}, "
                f"roughness {roughness.shape}, metalness {metalness.shape}"
            )
        object.__setattr__(self, 'albedo', albedo)
        object.__setattr__(self, 'roughness', roughness)
        object.__setattr__(self, 'metalness', metalness)

    @property
    def resolution(self):
        return self.albedo.shape[0]


def constant_texture_set(size, albedo, roughness=0.8, metalness=0.0):
    return PBRTextureSet(
        albedo=np.broadcast_to(np.asarray(albedo, dtype=np.float64), (size, size, 3)).copy(),
        roughness=np.full((size, size), float(roughness)),
        metalness=np.full((size, size), float(metalness)),
    )


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _unit(v):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(norm, 1e-12)


def shade(albedo, roughness, metalness, normal, view_dir, light):
    """
    Evaluate the documented BRDF. Inputs broadcast: albedo (..., 3),
    roughness/metalness (...), normal/view_dir (..., 3).
    """
    albedo = np.clip(np.asarray(albedo, dtype=np.float64), 0.0, 1.0)
    roughness = np.clip(np.asarray(roughness, dtype=np.float64), 0.0, 1.0)[..., None]
    metalness = np.clip(np.asarray(metalness, dtype=np.float64), 0.0, 1.0)[..., None]
    n = _unit(np.asarray(normal, dtype=np.float64))
    v = _unit(np.asarray(view_dir, dtype=np.float64))
    l = _unit(np.asarray(light.direction, dtype=np.float64))
    light_rgb = np.asarray(light.color, dtype=np.float64)
    ambient = np.asarray(light.ambient, dtype=np.float64)

    n_dot_l = np.maximum(_dot(n, l), 0.0)[..., None]
    n_dot_v = np.maximum(_dot(n, v), 0.0)[..., None]
    h = _unit(l + v)
    n_dot_h = np.maximum(_dot(n, h), 0.0)[..., None]
    v_dot_h = np.maximum(_dot(v, h), 0.0)[..., None]

    alpha = np.maximum(roughness ** 2, MIN_ALPHA)
    a2 = alpha ** 2
    denom = n_dot_h ** 2 * (a2 - 1.0) + 1.0
    d = a2 / (np.pi * denom ** 2)

    f0 = DIELECTRIC_F0 * (1.0 - metalness) + albedo * metalness
    fresnel = f0 + (1.0 - f0) * (1.0 - v_dot_h) ** 5

    k = alpha / 2.0
    g = (n_dot_l / (n_dot_l * (1.0 - k) + k)) * (n_dot_v / (n_dot_v * (1.0 - k) + k))

    specular = d * fresnel * g / (4.0 * np.maximum(n_dot_v, 1e-4))
    diffuse = albedo * (1.0 - metalness) * n_dot_l
    out = ambient * albedo + light_rgb * np.minimum(diffuse + specular, 1.0)
    return np.clip(out, 0.0, 1.0)


def split_channels(texture):
    """Five-channel texture -> PBRTextureSet (albedo RGB, roughness, metalness)"""
    pixels = np.asarray(texture.pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 5:
        raise InputError(f"split_channels needs a 5-channel texture, got {pixels.shape[-1] if pixels.ndim == 3 else 1}")
    return PBRTextureSet(albedo=pixels[..., 0:3], roughness=pixels[..., 3], metalness=pixels[..., 4])


def interleave(materials, coverage=None):
    """PBRTextureSet -> five-channel Texture"""
    from texture_ops import Texture

    pixels = np.concatenate(
        [materials.albedo, materials.roughness[..., None], materials.metalness[..., None]], axis=2
    )
    if coverage is None:
        coverage = np.ones(pixels.shape[:2], dtype=bool)
    return Texture(pixels=pixels, coverage=coverage)


def materials_from_texture(texture, roughness=0.8, metalness=0.0):
    """
    Five channels split directly; three channels are taken as albedo with
    constant roughness and metalness maps.
    """
    channels = texture.pixels.shape[2]
    if channels == 5:
        return split_channels(texture)
    size = texture.pixels.shape[0]
    return PBRTextureSet(
        albedo=texture.pixels[..., :3],
        roughness=np.full((size, size), float(roughness)),
        metalness=np.full((size, size), float(metalness)),
    )
