"""
Keyword-driven procedural materials evaluated in object space.

A prompt is tokenized and matched against data/keyword_table.csv: colour
keywords pick the base colours in prompt order, the first pattern keyword
picks the pattern (solid, stripes, checker, noise), material keywords set
roughness and metalness and shape keywords pick the primitives for
unconditioned generation. Prompts without colour keywords hash to a
palette.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from utils import load_keyword_table, tokenize_prompt

logger = logging.getLogger(__name__)

DEFAULT_ROUGHNESS = 0.8
DEFAULT_METALNESS = 0.0
SECOND_COLOR = (0.9, 0.9, 0.9)

STRIPE_PERIOD = 0.2
CHECKER_PERIOD = 0.2
NOISE_FREQUENCY = 4
NOISE_LATTICE_PERIOD = 8
NOISE_OCTAVES = 4


@dataclass(frozen=True)
class PromptStyle:
    colors: Tuple[Tuple[float, float, float], ...]
    pattern: str
    roughness: float
    metalness: float
    shapes: Tuple[str, ...]
    matched: Tuple[str, ...]


def hash_palette(text):
    digest = hashlib.sha256(text.encode('utf-8')).digest()
    c1 = tuple(b / 255.0 * 0.8 + 0.1 for b in digest[0:3])
    c2 = tuple(b / 255.0 * 0.8 + 0.1 for b in digest[3:6])
    return c1, c2


def parse_prompt(text):
    table = load_keyword_table()
    colors: List[Tuple[float, float, float]] = []
    pattern = None
    roughness, metalness = DEFAULT_ROUGHNESS, DEFAULT_METALNESS
    shapes: List[str] = []
    matched: List[str] = []
    for token in tokenize_prompt(text):
        entry = table.get(token)
        if entry is None:
            continue
        matched.append(token)
        category = entry['category']
        if category == 'color':
            rgb = (entry['r'], entry['g'], entry['b'])
            if rgb not in colors:
                colors.append(rgb)
        elif category == 'pattern':
            pattern = pattern or token
        elif category == 'material':
            if entry['roughness'] is not None:
                roughness = entry['roughness']
            if entry['metalness'] is not None:
                metalness = entry['metalness']
        elif category == 'shape':
            shapes.append(token)

    if not colors:
        colors = list(hash_palette(text))
    elif len(colors) == 1:
        colors.append(SECOND_COLOR)
    return PromptStyle(
        colors=tuple(colors),
        pattern=pattern or 'solid',
        roughness=float(roughness),
        metalness=float(metalness),
        shapes=tuple(shapes),
        matched=tuple(matched),
    )


def smoothstep(edge0, edge1, x):
    t = np.clip((x - edge0) / (edge1 - edge0), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def _lattice(ix, iy, iz, seed):
    """Uniform [0,1) value per integer lattice point"""
    with np.errstate(over='ignore'):
        h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)) \
            ^ (iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)) \
            ^ (iz.astype(np.uint64) * np.uint64(0x165667B19E3779F9)) \
            ^ np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        h ^= h >> np.uint64(33)
        h *= np.uint64(0xFF51AFD7ED558CCD)
        h ^= h >> np.uint64(33)
        h *= np.uint64(0xC4CEB9FE1A85EC53)
        h ^= h >> np.uint64(33)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def value_noise(points, frequency, period, seed):
    """Trilinear value noise on a lattice that repeats every `period` cells"""
    p = np.asarray(points, dtype=np.float64) * frequency
    cell = np.floor(p)
    t = _fade(p - cell)
    cell = cell.astype(np.int64)
    out = 0.0
    for dx in (0, 1):
        wx = t[:, 0] if dx else 1.0 - t[:, 0]
        for dy in (0, 1):
            wy = t[:, 1] if dy else 1.0 - t[:, 1]
            for dz in (0, 1):
                wz = t[:, 2] if dz else 1.0 - t[:, 2]
                v = _lattice((cell[:, 0] + dx) % period, (cell[:, 1] + dy) % period, (cell[:, 2] + dz) % period, seed)
                out = out + wx * wy * wz * v
    return out


def fbm(points, seed, octaves=NOISE_OCTAVES):
    """Layered value noise in [0, 1]; repeats every NOISE_LATTICE_PERIOD / NOISE_FREQUENCY units"""
    total = np.zeros(len(points))
    amplitude, norm = 1.0, 0.0
    for octave in range(octaves):
        scale = 2 ** octave
        total += amplitude * value_noise(points, NOISE_FREQUENCY * scale, NOISE_LATTICE_PERIOD * scale, seed + octave)
        norm += amplitude
        amplitude *= 0.5
    return total / norm


def pattern_mix(style, points, seed):
    """Blend factor between the first and second colour per point"""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if style.pattern == 'stripes':
        return smoothstep(0.35, 0.65, 0.5 + 0.5 * np.sin(2.0 * np.pi * p[:, 1] / STRIPE_PERIOD))
    if style.pattern == 'checker':
        s = np.prod(np.sin(np.pi * p / CHECKER_PERIOD), axis=1)
        return smoothstep(-0.2, 0.2, s)
    if style.pattern == 'noise':
        return fbm(p, seed)
    return np.zeros(len(p))


def procedural_texture(prompt, points, normals=None):
    """
    Five-channel material (albedo RGB, roughness, metalness) at object-space
    points. Normals are accepted for interface symmetry; the patterns are
    volumetric.
    """
    style = parse_prompt(prompt.text)
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    c1 = np.asarray(style.colors[0])
    c2 = np.asarray(style.colors[1])
    f = pattern_mix(style, p, prompt.seed)[:, None]
    albedo = c1 + f * (c2 - c1)
    out = np.empty((len(p), 5))
    out[:, :3] = albedo
    out[:, 3] = style.roughness
    out[:, 4] = style.metalness
    return out
