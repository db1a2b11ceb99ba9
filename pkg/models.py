"""
Shared records for the text-to-3D pipeline: error hierarchy, run configuration,
prompts, assets and provenance.
"""

import dataclasses
import hashlib
import json
import logging
import math
import typing
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class GenError(Exception):
    """Base class for every error raised by the pipeline"""


class InputError(GenError):
    """User-correctable problem: bad file, bad config, failed precondition"""


class InternalError(GenError):
    """An invariant the pipeline maintains itself was violated"""


class MeshParseError(InputError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyMeshError(InputError):
    pass


class ConfigError(InputError, ValueError):
    pass


class EmptySurfaceError(GenError):
    pass


class PackingOverflowError(GenError):
    pass


class ZeroCoverageError(GenError):
    pass


class BackendError(GenError):
    def __init__(self, message, retries=0, code=None):
        self.retries = retries
        self.code = code
        super().__init__(message)


class ProtocolError(BackendError):
    pass


class StageError(GenError):
    """Wraps a module failure with the name of the pipeline stage that raised it"""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")

    @property
    def is_input_error(self):
        return isinstance(self.cause, InputError)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LightConfig:
    direction: Tuple[float, float, float] = (0.0, 0.6, 0.8)
    color: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    ambient: Tuple[float, float, float] = (0.1, 0.1, 0.1)

    def validate(self):
        norm = math.sqrt(sum(c * c for c in self.direction))
        if abs(norm - 1.0) > 1e-6:
            raise ConfigError(f"light.direction must be unit length, got norm {norm:.6f}")
        if min(self.color) < 0 or min(self.ambient) < 0:
            raise ConfigError("light intensities must be >= 0")


@dataclass(frozen=True)
class RigConfig:
    views: int = 4
    elevation_deg: float = 20.0
    radius: float = 2.2
    fov_deg: float = 40.0
    resolution: int = 512
    near: float = 0.1
    far: float = 10.0


@dataclass(frozen=True)
class ReconConfig:
    resolution: int = 64
    tau_cells: float = 3.0
    carve_weight: float = 0.25
    min_weight: float = 0.5
    grazing_cos: float = 0.3
    iso: float = 0.0
    bake_tolerance_cells: float = 2.0


@dataclass(frozen=True)
class AtlasConfig:
    max_angle_deg: float = 45.0
    padding: int = 4
    reference_resolution: int = 1024


@dataclass(frozen=True)
class TextureConfig:
    size: int = 1024
    confidence_exponent: float = 2.0
    floor: float = 0.1
    depth_tolerance: float = 1e-3
    relaxation: float = 0.7
    seam_samples: int = 2
    seam_iterations: int = 8
    upscale: int = 1
    base_weight: float = 0.05


@dataclass(frozen=True)
class BackendConfig:
    name: str = "procedural"
    jitter: float = 0.0
    endpoint: str = ""
    # seconds for one generate_views call, retries and backoff included
    timeout: float = 30.0
    max_in_flight: int = 2
    retries: int = 2


def _is_power_of_two(n):
    return isinstance(n, int) and n > 0 and (n & (n - 1)) == 0


def _coerce(value, hint, path):
    """Convert an override value (usually a CLI string) to the field's declared type"""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union and type(None) in args:
        if value is None or (isinstance(value, str) and value.strip().lower() in ('none', 'null', '')):
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner, path)
    if origin in (tuple, Tuple):
        if isinstance(value, str):
            text = value.strip()
            try:
                items = json.loads(text) if text.startswith('[') else [p for p in text.split(',')]
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: cannot parse {value!r} as a list: {e}")
        else:
            items = list(value)
        item_type = args[0] if args else float
        if args and len(args) != len(items) and args[-1] is not Ellipsis:
            raise ConfigError(f"{path}: expected {len(args)} values, got {len(items)}")
        return tuple(_coerce(v, item_type, path) for v in items)
    try:
        if hint is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ('1', 'true', 'yes', 'on'):
                return True
            if text in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if hint is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(f"not an integer: {value!r}")
            return int(value)
        if hint is float:
            if isinstance(value, bool):
                raise ValueError(f"not a number: {value!r}")
            return float(value)
        if hint is str:
            return str(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}")
    raise ConfigError(f"{path}: unsupported field type {hint!r}")


def _from_dict(cls, data, prefix=''):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _from_dict(hint, value, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(value, hint, prefix + name)
    return cls(**kwargs)


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of a pipeline run; serialises to JSON with exact round-trip"""

    rig: RigConfig = field(default_factory=RigConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)
    atlas: AtlasConfig = field(default_factory=AtlasConfig)
    texture: TextureConfig = field(default_factory=TextureConfig)
    light: LightConfig = field(default_factory=LightConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    seed: Optional[int] = None
    output_dir: str = "out"
    debug_dumps: bool = False
    workers: int = 4

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        # asdict keeps tuples; lists keep the JSON form stable
        def _lists(obj):
            if isinstance(obj, dict):
                return {k: _lists(v) for k, v in obj.items()}
            if isinstance(obj, (tuple, list)):
                return [_lists(v) for v in obj]
            return obj
        return _lists(data)

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, data) -> 'PipelineConfig':
        return _from_dict(cls, data)

    @classmethod
    def from_json(cls, text) -> 'PipelineConfig':
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}")
        return cls.from_dict(data)

    @classmethod
    def from_file(cls, path) -> 'PipelineConfig':
        try:
            with open(path, 'r', encoding='utf-8') as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e.strerror}")
        return cls.from_json(text)

    def with_overrides(self, overrides) -> 'PipelineConfig':
        """Apply dotted-path overrides such as {"texture.floor": "0.2"}"""
        data = self.to_dict()
        for key, value in overrides.items():
            parts = key.split('.')
            node = data
            cls = PipelineConfig
            for part in parts[:-1]:
                hints = typing.get_type_hints(cls)
                if part not in hints or not dataclasses.is_dataclass(hints[part]):
                    raise ConfigError(f"unknown config field: {key}")
                cls = hints[part]
                node = node[part]
            leaf = parts[-1]
            hints = typing.get_type_hints(cls)
            if leaf not in hints or dataclasses.is_dataclass(hints[leaf]):
                raise ConfigError(f"unknown config field: {key}")
            coerced = _coerce(value, hints[leaf], key)
            node[leaf] = list(coerced) if isinstance(coerced, tuple) else coerced
        return PipelineConfig.from_dict(data)

    def validate(self) -> 'PipelineConfig':
        rig, recon, atlas, tex, be = self.rig, self.recon, self.atlas, self.texture, self.backend
        checks = [
            (rig.views >= 1, "rig.views must be >= 1"),
            (-90.0 < rig.elevation_deg < 90.0, "rig.elevation_deg must be in (-90, 90)"),
            (rig.radius > 1.0, "rig.radius must be > 1.0 (outside the unit cube)"),
            (0.0 < rig.fov_deg < 180.0, "rig.fov_deg must be in (0, 180)"),
            (rig.resolution >= 16, "rig.resolution must be >= 16"),
            (0.0 < rig.near < rig.far, "rig.near must satisfy 0 < near < far"),
            (8 <= recon.resolution <= 256, "recon.resolution must be in [8, 256]"),
            (recon.tau_cells > 0, "recon.tau_cells must be > 0"),
            (0.0 < recon.carve_weight <= 1.0, "recon.carve_weight must be in (0, 1]"),
            (recon.min_weight >= 0, "recon.min_weight must be >= 0"),
            (0.0 <= recon.grazing_cos < 1.0, "recon.grazing_cos must be in [0, 1)"),
            (abs(recon.iso) < 1.0, "recon.iso must be in (-1, 1)"),
            (recon.bake_tolerance_cells >= 0, "recon.bake_tolerance_cells must be >= 0"),
            (0.0 < atlas.max_angle_deg < 90.0, "atlas.max_angle_deg must be in (0, 90)"),
            (atlas.padding >= 0, "atlas.padding must be >= 0"),
            (_is_power_of_two(atlas.reference_resolution), "atlas.reference_resolution must be a power of two"),
            (_is_power_of_two(tex.size) and 8 <= tex.size <= 4096, "texture.size must be a power of two in [8, 4096]"),
            (tex.confidence_exponent > 0, "texture.confidence_exponent must be > 0"),
            (0.0 <= tex.floor <= 1.0, "texture.floor must be in [0, 1]"),
            (tex.depth_tolerance > 0, "texture.depth_tolerance must be > 0"),
            (0.0 < tex.relaxation <= 1.0, "texture.relaxation must be in (0, 1]"),
            (tex.seam_samples >= 1, "texture.seam_samples must be >= 1"),
            (tex.seam_iterations >= 0, "texture.seam_iterations must be >= 0"),
            (tex.upscale in (1, 2, 4), "texture.upscale must be 1, 2 or 4"),
            (tex.size * tex.upscale <= 4096, "texture.size * texture.upscale must be <= 4096"),
            (0.0 <= tex.base_weight <= 1.0, "texture.base_weight must be in [0, 1]"),
            (be.name in ('procedural', 'remote'), "backend.name must be 'procedural' or 'remote'"),
            (be.jitter >= 0, "backend.jitter must be >= 0"),
            (be.timeout > 0, "backend.timeout must be > 0"),
            (be.max_in_flight >= 1, "backend.max_in_flight must be >= 1"),
            (be.retries >= 0, "backend.retries must be >= 0"),
            (self.seed is None or 0 <= self.seed < 2 ** 64, "seed must be a 64-bit unsigned integer"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        self.light.validate()
        return self

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


# ---------------------------------------------------------------------------
# Prompt, asset, provenance
# ---------------------------------------------------------------------------

def prompt_seed(text):
    """64-bit seed from the first eight bytes of the prompt's SHA-256"""
    digest = hashlib.sha256(text.encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'big')


@dataclass(frozen=True)
class Prompt:
    text: str
    seed: int

    @classmethod
    def from_text(cls, text, seed=None) -> 'Prompt':
        if text is None or not str(text).strip():
            raise InputError("prompt text must be non-empty")
        text = str(text)
        return cls(text=text, seed=prompt_seed(text) if seed is None else int(seed))


@dataclass
class Provenance:
    prompt: str
    seed: int
    config: Dict[str, Any]
    config_hash: str
    backend: str
    stage_log: Dict[str, List[str]] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    responses: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    mesh_hash: str = ""
    texture_hash: str = ""
    metrics: Dict[str, float] = field(default_factory=dict)
    command: Dict[str, Any] = field(default_factory=dict)

    def deterministic_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data.pop('timings')
        return data

    def determinism_hash(self) -> str:
        canonical = json.dumps(self.deterministic_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data['determinism_hash'] = self.determinism_hash()
        return data

    @classmethod
    def from_dict(cls, data) -> 'Provenance':
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class Asset:
    """A textured mesh with its PBR maps and the record of how it was made"""

    mesh: Any
    materials: Any
    provenance: Provenance
    texture: Any = None
    charts: Any = None
    seams: Any = None
    raw_responses: List[str] = field(default_factory=list)
