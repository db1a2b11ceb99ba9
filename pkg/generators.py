"""
View generation backends. A backend turns a prompt and a camera rig into
per-camera view buffers, optionally conditioned on the depth and normals of
an existing mesh.
"""

import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from materials import shade
from models import InputError, LightConfig
from procedural import parse_prompt, procedural_texture
from rasterizer import RenderedView, rasterize_gbuffer, shade_gbuffer, unproject

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GeometryConditioning:
    depths: List[np.ndarray]
    normals: List[np.ndarray]
    masks: List[np.ndarray]

    def __post_init__(self):
        if not (len(self.depths) == len(self.normals) == len(self.masks)):
            raise InputError("conditioning depth, normal and mask counts differ")

    def __len__(self):
        return len(self.depths)


@dataclass(frozen=True, eq=False)
class GeneratedViewSet:
    views: List[RenderedView]
    conditioned: bool
    backend: str = "procedural"
    raw_response: Optional[str] = None
    notes: List[str] = field(default_factory=list)

    def __len__(self):
        return len(self.views)


def render_conditioning(mesh, cameras, workers=1):
    """Depth, normal and mask buffers of a mesh seen from every camera"""
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        buffers = list(pool.map(lambda cam: rasterize_gbuffer(mesh, cam), cameras))
    return GeometryConditioning(
        depths=[b.depth for b in buffers],
        normals=[b.normal for b in buffers],
        masks=[b.mask for b in buffers],
    )


class ViewBackend(ABC):
    name = "base"

    @abstractmethod
    def generate_views(self, prompt, cameras, conditioning=None) -> GeneratedViewSet:
        """Views for every camera; conditioned when conditioning is given"""

    def health_check(self):
        return {'success': True, 'message': f"{self.name} backend ready"}


class ProceduralBackend(ViewBackend):
    """
    Deterministic stand-in generator. Conditioned views texture the given
    geometry with the prompt's procedural material; unconditioned views
    render prompt-selected primitives. `jitter` adds a seeded per-view
    colour offset to simulate slightly inconsistent views.
    """

    name = "procedural"

    def __init__(self, jitter=0.0, light=None, workers=1):
        if jitter < 0:
            raise InputError(f"jitter must be >= 0, got {jitter}")
        self.jitter = float(jitter)
        self.light = light or LightConfig()
        self.workers = workers

    def _perturb(self, view, seed, index):
        if self.jitter == 0:
            return view
        rng = np.random.default_rng([seed & 0xFFFFFFFF, seed >> 32, index])
        offset = rng.normal(0.0, self.jitter, 3)
        m = view.mask[..., None]
        return RenderedView(
            shaded=np.where(m, np.clip(view.shaded + offset, 0.0, 1.0), 0.0),
            albedo=np.where(m, np.clip(view.albedo + offset, 0.0, 1.0), 0.0),
            normal=view.normal,
            depth=view.depth,
            mask=view.mask,
            roughness=view.roughness,
            metalness=view.metalness,
        )

    def _conditioned_view(self, prompt, camera, depth, normal, mask):
        res = camera.resolution
        points = unproject(np.where(mask, depth, 0.0), camera)[mask]
        n = normal[mask]
        material = procedural_texture(prompt, points, n)
        albedo = np.zeros((res, res, 3))
        roughness = np.zeros((res, res))
        metalness = np.zeros((res, res))
        shaded = np.zeros((res, res, 3))
        albedo[mask] = material[:, :3]
        roughness[mask] = material[:, 3]
        metalness[mask] = material[:, 4]
        if len(points):
            view_dir = np.asarray(camera.position) - points
            shaded[mask] = shade(material[:, :3], material[:, 3], material[:, 4], n, view_dir, self.light)
        return RenderedView(
            shaded=shaded,
            albedo=albedo,
            normal=np.where(mask[..., None], normal, 0.0),
            depth=np.where(mask, depth, np.inf),
            mask=mask.copy(),
            roughness=roughness,
            metalness=metalness,
        )

    def _unconditioned_view(self, prompt, camera, mesh):
        gb = rasterize_gbuffer(mesh, camera)
        res = camera.resolution
        material = np.zeros((res, res, 5))
        if np.any(gb.mask):
            material[gb.mask] = procedural_texture(prompt, gb.position[gb.mask], gb.normal[gb.mask])
        return shade_gbuffer(gb, camera, material[..., :3], material[..., 3], material[..., 4], self.light)

    def generate_views(self, prompt, cameras, conditioning=None):
        check_request(cameras, conditioning)
        if conditioning is not None:
            def _make(i):
                return self._conditioned_view(
                    prompt, cameras[i], conditioning.depths[i], conditioning.normals[i], conditioning.masks[i]
                )
        else:
            from primitives import shape_mesh
            style = parse_prompt(prompt.text)
            mesh = shape_mesh(style.shapes)
            logger.info(f"Unconditioned views of {', '.join(style.shapes) or 'sphere'} for '{prompt.text}'")

            def _make(i):
                return self._unconditioned_view(prompt, cameras[i], mesh)

        with ThreadPoolExecutor(max_workers=max(1, self.workers)) as pool:
            views = list(pool.map(_make, range(len(cameras))))
        views = [self._perturb(v, prompt.seed, i) for i, v in enumerate(views)]
        return GeneratedViewSet(views=views, conditioned=conditioning is not None, backend=self.name)


def check_request(cameras, conditioning):
    if not cameras:
        raise InputError("view generation needs at least one camera")
    if conditioning is not None and len(conditioning) != len(cameras):
        raise InputError(f"conditioning has {len(conditioning)} views for {len(cameras)} cameras")


def generate_views(backend, prompt, cameras, conditioning=None):
    check_request(cameras, conditioning)
    result = backend.generate_views(prompt, cameras, conditioning)
    if len(result.views) != len(cameras):
        raise InputError(f"backend returned {len(result.views)} views for {len(cameras)} cameras")
    return result


def make_backend(config):
    """Backend selected by config.backend.name ('procedural' or 'remote')"""
    name = config.backend.name
    if name == 'procedural':
        return ProceduralBackend(jitter=config.backend.jitter, light=config.light, workers=config.workers)
    if name == 'remote':
        from view_service import RemoteViewBackend
        return RemoteViewBackend.from_config(config.backend)
    raise InputError(f"unknown backend '{name}'")
