"""
Stage orchestration.

Stage I     generate_views -> fuse_views_to_sdf -> marching_cubes -> generate_atlas
            -> bake_views -> fuse_partials -> fill_holes -> fix_seams
Stage II    render_conditioning -> generate_views -> bake_views -> fuse_partials
            -> fill_holes -> fix_seams [-> upscale]

Every step runs inside StageRunner.step(name), which appends the name to the
provenance stage log, records the wall time and wraps failures in StageError.
"""

import copy
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np

from core_geometry import mesh_hash, save_gltf
from generators import ProceduralBackend, generate_views, make_backend, render_conditioning
from materials import materials_from_texture
from models import (Asset, BackendError, GenError, InputError, InternalError, PipelineConfig,
                    Prompt, Provenance, StageError)
from procedural import parse_prompt
from rasterizer import Camera, RenderedView, cameras_from_config
from texture_ops import (bake_vertex_colors, bake_view_to_partial, consolidate, fill_holes, fix_seams,
                         seam_discontinuity, upscale, uv_surface_map)
from utils import (array_digest, bytes_digest, confidence_to_png16, depth_to_png16,
                   encode_png, float_to_png, mask_to_png, png16_to_depth, png_to_float, png_to_mask,
                   write_bytes)
from uv_atlas import (chart_id_image, chart_id_map, charts_from_uv, face_chart_ids, find_seam_edges,
                      generate_atlas, uv_coverage)
from volume_recon import fuse_views_to_sdf, marching_cubes

logger = logging.getLogger(__name__)

STAGE1_STEPS = ('generate_views', 'fuse_views_to_sdf', 'marching_cubes', 'generate_atlas',
                'bake_views', 'fuse_partials', 'fill_holes', 'fix_seams')
STAGE2_STEPS = ('render_conditioning', 'generate_views', 'bake_views', 'fuse_partials',
                'fill_holes', 'fix_seams')


class StageRunner:
    def __init__(self, stage, provenance):
        self.stage = stage
        self.provenance = provenance
        self.responses = []
        provenance.stage_log.setdefault(stage, [])

    @contextmanager
    def step(self, name):
        logger.info(f"[{self.stage}] {name}")
        start = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except GenError as e:
            raise StageError(name, e) from e
        except Exception as e:
            logger.exception(f"[{self.stage}] {name} failed unexpectedly")
            raise StageError(name, InternalError(f"{type(e).__name__}: {e}")) from e
        finally:
            elapsed = time.perf_counter() - start
            self.provenance.stage_log[self.stage].append(name)
            self.provenance.timings[f"{self.stage}.{name}"] = round(elapsed, 6)
        logger.debug(f"[{self.stage}] {name} took {elapsed:.3f}s")


def new_provenance(prompt, config, backend_name):
    return Provenance(
        prompt=prompt.text,
        seed=prompt.seed,
        config=config.to_dict(),
        config_hash=config.config_hash(),
        backend=backend_name,
    )


def _prompt_for(prompt, config):
    if config.seed is not None and prompt.seed != config.seed:
        return Prompt(text=prompt.text, seed=config.seed)
    return prompt


def _generate(run, backend, prompt, cameras, conditioning, config):
    """Run a backend; a failing remote backend degrades to the procedural one"""
    try:
        result = generate_views(backend, prompt, cameras, conditioning)
    except BackendError as e:
        if isinstance(backend, ProceduralBackend):
            raise
        logger.warning(f"View backend '{backend.name}' failed, falling back to procedural: {str(e)}")
        run.provenance.notes.append(f"backend {backend.name} failed ({e}); used procedural")
        fallback = ProceduralBackend(jitter=config.backend.jitter, light=config.light, workers=config.workers)
        result = generate_views(fallback, prompt, cameras, conditioning)
    if result.raw_response is not None:
        run.provenance.responses.append(bytes_digest(result.raw_response.encode('utf-8')))
        run.responses.append(result.raw_response)
    run.provenance.notes.extend(result.notes)
    return result


def _bake_all(mesh, views, cameras, config, tolerance, workers):
    size = config.texture.size
    samples = uv_surface_map(mesh, size)
    mode = 'pbr' if all(v.has_pbr for v in views) else 'albedo'

    def _bake(i):
        return bake_view_to_partial(
            mesh, views[i], cameras[i], size, view_index=i,
            exponent=config.texture.confidence_exponent, tolerance=tolerance, mode=mode, samples=samples,
        )

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        partials = list(pool.map(_bake, range(len(views))))
    return partials, samples, mode


def _finish_materials(texture, prompt):
    style = parse_prompt(prompt.text)
    return materials_from_texture(texture, roughness=style.roughness, metalness=style.metalness)


def _record_outputs(asset):
    prov = asset.provenance
    prov.mesh_hash = mesh_hash(asset.mesh)
    prov.texture_hash = array_digest(asset.materials.albedo, asset.materials.roughness, asset.materials.metalness)
    prov.metrics = {
        'vertices': int(len(asset.mesh.vertices)),
        'faces': int(len(asset.mesh.faces)),
        'texture_resolution': int(asset.materials.resolution),
        'covered_fraction': float(np.mean(asset.texture.coverage)) if asset.texture is not None else 0.0,
        'seam_edges': int(len(asset.seams)) if asset.seams is not None else 0,
    }
    if asset.texture is not None and asset.seams is not None:
        prov.metrics['seam_discontinuity'] = seam_discontinuity(
            asset.mesh, asset.seams, asset.texture, prov.config['texture']['seam_samples'])


# ---------------------------------------------------------------------------
# Stage I
# ---------------------------------------------------------------------------

def stage1_generate(prompt, config, backend=None, debug_dir=None):
    """Text -> textured asset: views, volumetric reconstruction, atlas, bake and fusion"""
    config = config.validate()
    prompt = _prompt_for(prompt, config)
    backend = backend or make_backend(config)
    prov = new_provenance(prompt, config, backend.name)
    run = StageRunner('stage1', prov)
    cameras = cameras_from_config(config.rig)
    tex = config.texture
    logger.info(f"Stage I for '{prompt.text}' (seed {prompt.seed}, {len(cameras)} views)")

    with run.step('generate_views'):
        view_set = _generate(run, backend, prompt, cameras, None, config)
        views = view_set.views
    if debug_dir:
        save_view_dir(os.path.join(debug_dir, 'stage1_views'), views, cameras)

    with run.step('fuse_views_to_sdf'):
        grid = fuse_views_to_sdf(views, cameras, config.recon.resolution, config.recon, workers=config.workers)
    if debug_dir:
        raw, sidecar = grid.to_raw()
        write_bytes(os.path.join(debug_dir, 'sdf.raw'), raw)
        write_bytes(os.path.join(debug_dir, 'sdf.json'), sidecar.encode('utf-8'))

    with run.step('marching_cubes'):
        mesh = marching_cubes(grid, config.recon.iso, config.recon.min_weight)

    with run.step('generate_atlas'):
        mesh, charts = generate_atlas(mesh, config.atlas.max_angle_deg, config.atlas.padding,
                                      config.atlas.reference_resolution)

    with run.step('bake_views'):
        tolerance = max(tex.depth_tolerance, config.recon.bake_tolerance_cells * grid.cell_size)
        partials, samples, mode = _bake_all(mesh, views, cameras, config, tolerance, config.workers)
        base = bake_vertex_colors(mesh, views, cameras, tex.size, tex.confidence_exponent, tolerance,
                                  mode=mode, samples=samples)
    if debug_dir:
        _dump_partials(os.path.join(debug_dir, 'stage1_partials'), partials)

    with run.step('fuse_partials'):
        texture = consolidate(partials, tex.floor, base=base, base_weight=tex.base_weight)
        texture = _with_chart_mask(texture, samples)

    with run.step('fill_holes'):
        texture = fill_holes(texture, config.atlas.padding)

    with run.step('fix_seams'):
        seams = find_seam_edges(mesh, charts)
        texture = fix_seams(mesh, seams, texture, tex.seam_iterations, tex.relaxation, tex.seam_samples)
    if debug_dir:
        _dump_chart_ids(debug_dir, mesh, charts, tex.size)

    asset = Asset(mesh=mesh, materials=_finish_materials(texture, prompt), provenance=prov,
                  texture=texture, charts=charts, seams=seams, raw_responses=run.responses)
    _record_outputs(asset)
    logger.info(f"Stage I done: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces, {len(charts)} charts")
    return asset


def _with_chart_mask(texture, samples):
    if texture.chart_mask is not None:
        return texture
    from texture_ops import Texture
    return Texture(pixels=texture.pixels, coverage=texture.coverage, chart_mask=samples.mask(),
                   confidence=texture.confidence)


# ---------------------------------------------------------------------------
# Stage II
# ---------------------------------------------------------------------------

def _texture_stage(run, mesh, charts, seams, prompt, config, backend, base, debug_dir, label):
    cameras = cameras_from_config(config.rig)
    tex = config.texture
    before = mesh_hash(mesh)

    with run.step('render_conditioning'):
        conditioning = render_conditioning(mesh, cameras, workers=config.workers)

    with run.step('generate_views'):
        view_set = _generate(run, backend, prompt, cameras, conditioning, config)
        views = view_set.views
    if debug_dir:
        save_view_dir(os.path.join(debug_dir, f"{label}_views"), views, cameras)

    with run.step('bake_views'):
        partials, samples, _ = _bake_all(mesh, views, cameras, config, tex.depth_tolerance, config.workers)
    if debug_dir:
        _dump_partials(os.path.join(debug_dir, f"{label}_partials"), partials)

    with run.step('fuse_partials'):
        if base is not None and base.resolution != tex.size:
            logger.warning(f"Prior texture is {base.resolution}^2, refining at {tex.size}^2; ignoring the prior")
            run.provenance.notes.append("prior texture resolution differs; not blended")
            base = None
        texture = consolidate(partials, tex.floor, base=base, base_weight=tex.base_weight)
        texture = _with_chart_mask(texture, samples)

    with run.step('fill_holes'):
        texture = fill_holes(texture, config.atlas.padding)

    with run.step('fix_seams'):
        if seams is None:
            seams = find_seam_edges(mesh, charts)
        texture = fix_seams(mesh, seams, texture, tex.seam_iterations, tex.relaxation, tex.seam_samples)

    if tex.upscale > 1:
        with run.step('upscale'):
            texture = upscale(texture, tex.upscale)

    if mesh_hash(mesh) != before:
        raise InternalError("texture stage modified the mesh")
    return texture, seams


def stage2_refine(asset, prompt, config, backend=None, debug_dir=None):
    """Replace the asset's texture with one fused from geometry-conditioned views; the mesh is kept bit-exactly"""
    config = config.validate()
    prompt = _prompt_for(prompt, config)
    if asset.mesh.uv is None:
        raise StageError('render_conditioning', InputError("asset mesh has no UV coordinates"))
    backend = backend or make_backend(config)
    prov = copy.deepcopy(asset.provenance)
    prov.backend = backend.name
    run = StageRunner('stage2', prov)
    charts = asset.charts if asset.charts is not None else charts_from_uv(asset.mesh)
    logger.info(f"Stage II refinement for '{prompt.text}'")

    texture, seams = _texture_stage(run, asset.mesh, charts, asset.seams, prompt, config, backend,
                                    asset.texture, debug_dir, 'stage2')
    refined = Asset(mesh=asset.mesh, materials=_finish_materials(texture, prompt), provenance=prov,
                    texture=texture, charts=charts, seams=seams,
                    raw_responses=list(asset.raw_responses) + run.responses)
    _record_outputs(refined)
    return refined


def retexture(mesh, prompt, config, backend=None, debug_dir=None):
    """Texture a bare mesh; existing UVs are honoured, missing ones come from generate_atlas"""
    config = config.validate()
    prompt = _prompt_for(prompt, config)
    if mesh is None or len(mesh.faces) == 0:
        raise StageError('retexture', InputError("mesh has no faces"))
    backend = backend or make_backend(config)
    prov = new_provenance(prompt, config, backend.name)
    run = StageRunner('retexture', prov)

    if mesh.uv is None:
        with run.step('generate_atlas'):
            mesh, charts = generate_atlas(mesh, config.atlas.max_angle_deg, config.atlas.padding,
                                          config.atlas.reference_resolution)
        prov.notes.append("mesh had no UVs; atlas generated")
    else:
        charts = charts_from_uv(mesh)
    logger.info(f"Retexturing {len(mesh.faces)} faces ({len(charts)} charts) with '{prompt.text}'")

    texture, seams = _texture_stage(run, mesh, charts, None, prompt, config, backend, None, debug_dir, 'retexture')
    asset = Asset(mesh=mesh, materials=_finish_materials(texture, prompt), provenance=prov,
                  texture=texture, charts=charts, seams=seams, raw_responses=run.responses)
    _record_outputs(asset)
    return asset


def generate(prompt, config, backend=None, stage1_only=False, debug_dir=None):
    """Full flow: Stage I, then Stage II refinement with the same prompt"""
    asset = stage1_generate(prompt, config, backend=backend, debug_dir=debug_dir)
    if stage1_only:
        return asset
    return stage2_refine(asset, prompt, config, backend=backend, debug_dir=debug_dir)


def bake_from_views(mesh, views, cameras, prompt_text, config):
    """Atlas (when missing), bake and fuse a mesh against explicit views"""
    config = config.validate()
    prov = Provenance(prompt=prompt_text or "", seed=0, config=config.to_dict(),
                      config_hash=config.config_hash(), backend="views")
    run = StageRunner('bake', prov)
    tex = config.texture
    if len(views) != len(cameras):
        raise StageError('bake_views', InputError(f"{len(views)} views for {len(cameras)} cameras"))

    with run.step('generate_atlas'):
        if mesh.uv is None:
            mesh, charts = generate_atlas(mesh, config.atlas.max_angle_deg, config.atlas.padding,
                                          config.atlas.reference_resolution)
        else:
            charts = charts_from_uv(mesh)
    with run.step('bake_views'):
        partials, samples, _ = _bake_all(mesh, views, cameras, config, tex.depth_tolerance, config.workers)
    with run.step('fuse_partials'):
        texture = _with_chart_mask(consolidate(partials, tex.floor), samples)
    with run.step('fill_holes'):
        texture = fill_holes(texture, config.atlas.padding)

    if prompt_text:
        style = parse_prompt(prompt_text)
        materials = materials_from_texture(texture, roughness=style.roughness, metalness=style.metalness)
    else:
        materials = materials_from_texture(texture)
    asset = Asset(mesh=mesh, materials=materials, provenance=prov, texture=texture, charts=charts,
                  seams=find_seam_edges(mesh, charts))
    _record_outputs(asset)
    return asset


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

def write_asset(asset, out_dir):
    """Write <out>/asset.glb, <out>/provenance.json and any raw backend responses"""
    os.makedirs(out_dir, exist_ok=True)
    glb = save_gltf(asset.mesh, asset.materials)
    write_bytes(os.path.join(out_dir, 'asset.glb'), glb)
    for i, raw in enumerate(asset.raw_responses):
        write_bytes(os.path.join(out_dir, 'responses', f"{i:03d}.json"), raw.encode('utf-8'))
    text = json.dumps(asset.provenance.to_dict(), indent=2, sort_keys=True)
    write_bytes(os.path.join(out_dir, 'provenance.json'), text.encode('utf-8'))
    logger.info(f"Wrote {os.path.join(out_dir, 'asset.glb')} ({len(glb)} bytes)")
    return os.path.join(out_dir, 'asset.glb')


def load_provenance(path):
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            data = json.load(fh)
    except OSError as e:
        raise InputError(f"cannot read provenance {path}: {e.strerror}")
    except ValueError as e:
        raise InputError(f"provenance {path} is not valid JSON: {e}")
    return Provenance.from_dict(data)


def load_responses(provenance, directory):
    """Raw responses recorded next to a provenance file, checked against their digests"""
    raws = []
    for i, digest in enumerate(provenance.responses):
        path = os.path.join(directory, 'responses', f"{i:03d}.json")
        try:
            with open(path, 'rb') as fh:
                data = fh.read()
        except OSError as e:
            raise InputError(f"cannot read recorded response {path}: {e.strerror}")
        if bytes_digest(data) != digest:
            raise InputError(f"recorded response {path} does not match its digest")
        raws.append(data.decode('utf-8'))
    return raws


def replay_config(provenance):
    config = PipelineConfig.from_dict(provenance.config)
    return config, Prompt(text=provenance.prompt, seed=provenance.seed)


# ---------------------------------------------------------------------------
# View directories and debug dumps
# ---------------------------------------------------------------------------

def save_view_dir(directory, views, cameras):
    """cameras.json plus view_NN_{shaded,albedo,depth,mask}.png (and roughness/metalness when present)"""
    os.makedirs(directory, exist_ok=True)
    write_bytes(os.path.join(directory, 'cameras.json'),
                json.dumps([c.to_dict() for c in cameras], indent=2).encode('utf-8'))
    for i, view in enumerate(views):
        stem = os.path.join(directory, f"view_{i:02d}")
        write_bytes(f"{stem}_shaded.png", float_to_png(view.shaded))
        write_bytes(f"{stem}_albedo.png", float_to_png(view.albedo))
        write_bytes(f"{stem}_depth.png", depth_to_png16(view.depth, view.mask))
        write_bytes(f"{stem}_mask.png", mask_to_png(view.mask))
        if view.has_pbr:
            write_bytes(f"{stem}_roughness.png", float_to_png(view.roughness))
            write_bytes(f"{stem}_metalness.png", float_to_png(view.metalness))


def _read(path):
    try:
        with open(path, 'rb') as fh:
            return fh.read()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}")


def load_view_dir(directory):
    """(views, cameras) from a directory written by save_view_dir"""
    from rasterizer import normals_from_depth

    try:
        cams = json.loads(_read(os.path.join(directory, 'cameras.json')).decode('utf-8'))
    except ValueError as e:
        raise InputError(f"{directory}/cameras.json is not valid JSON: {e}")
    if not isinstance(cams, list) or not cams:
        raise InputError(f"{directory}/cameras.json must list at least one camera")
    cameras = [Camera.from_dict(c) for c in cams]
    views = []
    for i, camera in enumerate(cameras):
        stem = os.path.join(directory, f"view_{i:02d}")
        try:
            shaded = png_to_float(_read(f"{stem}_shaded.png"))[..., :3]
            albedo = png_to_float(_read(f"{stem}_albedo.png"))[..., :3]
            depth, _ = png16_to_depth(_read(f"{stem}_depth.png"))
            mask = png_to_mask(_read(f"{stem}_mask.png"))
        except ValueError as e:
            raise InputError(f"view {i} in {directory}: {e}")
        if depth.shape != mask.shape or mask.shape != (camera.resolution, camera.resolution):
            raise InputError(f"view {i} in {directory}: buffers do not match camera resolution {camera.resolution}")
        roughness = metalness = None
        if os.path.exists(f"{stem}_roughness.png") and os.path.exists(f"{stem}_metalness.png"):
            roughness = png_to_float(_read(f"{stem}_roughness.png"))
            metalness = png_to_float(_read(f"{stem}_metalness.png"))
        depth = np.where(mask, depth, np.inf)
        views.append(RenderedView(
            shaded=shaded, albedo=albedo, normal=normals_from_depth(depth, mask, camera),
            depth=depth, mask=mask, roughness=roughness, metalness=metalness,
        ))
    return views, cameras


def _dump_partials(directory, partials):
    for p in partials:
        stem = os.path.join(directory, f"partial_{p.view_index:02d}")
        write_bytes(f"{stem}.png", float_to_png(p.pixels[..., :3]))
        write_bytes(f"{stem}_confidence.png", confidence_to_png16(p.confidence))


def _dump_chart_ids(debug_dir, mesh, charts, size):
    ids, _ = chart_id_map(mesh, face_chart_ids(charts, len(mesh.faces)), size)
    write_bytes(os.path.join(debug_dir, 'chart_ids.png'), encode_png(chart_id_image(ids)))


def inspect_asset(data):
    """Statistics of a GLB: counts, UV coverage, seam count and texture resolution"""
    from gltf_io import load_glb_materials, load_glb_mesh

    try:
        mesh = load_glb_mesh(data)
        materials = load_glb_materials(data)
    except (KeyError, ValueError, IndexError) as e:
        raise InputError(f"not a readable GLB asset: {e}")
    stats = {
        'vertices': int(len(mesh.vertices)),
        'faces': int(len(mesh.faces)),
        'has_uv': mesh.uv is not None,
        'texture_resolution': int(materials.resolution) if materials is not None else 0,
    }
    if mesh.uv is not None:
        size = materials.resolution if materials is not None else 1024
        stats['uv_coverage'] = uv_coverage(mesh, size)
        charts = charts_from_uv(mesh)
        stats['charts'] = len(charts)
        stats['seam_edges'] = len(find_seam_edges(mesh, charts))
    return stats
