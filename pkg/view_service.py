"""
Remote view generation over HTTP.

POST {endpoint}/v1/generate_views

    request  {prompt, seed, cameras: [{position, target, fov, resolution}],
              conditioning?: {depth_png_b64: [...], normal_png_b64: [...]}}
    response {views: [{shaded_png_b64, albedo_png_b64, depth_png_b64?, mask_png_b64?}]}

Errors come back as an HTTP status with {code, message}. Images are base64
PNG; depth is a 16-bit PNG in units of utils.DEPTH_SCALE with 0 marking
background.
"""

import json
import logging
import os
import threading
import time

import numpy as np
import requests

from generators import GeneratedViewSet, GeometryConditioning, ViewBackend, check_request
from models import BackendError, ConfigError, InputError, Prompt, ProtocolError
from rasterizer import Camera, RenderedView, normals_from_depth
from utils import (b64decode, b64encode, depth_to_png16, float_to_png, mask_to_png, normals_to_png,
                   png16_to_depth, png_to_float, png_to_mask, png_to_normals)

logger = logging.getLogger(__name__)

GENERATE_PATH = '/v1/generate_views'


# ---------------------------------------------------------------------------
# Wire format
# ---------------------------------------------------------------------------

def encode_request(prompt, cameras, conditioning=None):
    payload = {
        'prompt': prompt.text,
        'seed': int(prompt.seed),
        'cameras': [
            {'position': list(c.position), 'target': list(c.target), 'fov': c.fov_deg, 'resolution': int(c.resolution)}
            for c in cameras
        ],
    }
    if conditioning is not None:
        payload['conditioning'] = {
            'depth_png_b64': [b64encode(depth_to_png16(d, m)) for d, m in zip(conditioning.depths, conditioning.masks)],
            'normal_png_b64': [b64encode(normals_to_png(n, m)) for n, m in zip(conditioning.normals, conditioning.masks)],
        }
    return payload


def decode_request(payload):
    """Server side: (Prompt, cameras, conditioning or None); raises InputError on malformed input"""
    if not isinstance(payload, dict):
        raise InputError("request body must be a JSON object")
    try:
        prompt = Prompt.from_text(payload['prompt'], seed=payload.get('seed'))
        cameras = [Camera.from_dict(c) for c in payload['cameras']]
    except KeyError as e:
        raise InputError(f"request is missing field {e}")
    conditioning = None
    if payload.get('conditioning'):
        cond = payload['conditioning']
        try:
            depths, masks = zip(*(png16_to_depth(b64decode(d)) for d in cond['depth_png_b64']))
            normals = [png_to_normals(b64decode(n)) for n in cond['normal_png_b64']]
        except (KeyError, ValueError) as e:
            raise InputError(f"invalid conditioning: {e}")
        conditioning = GeometryConditioning(depths=list(depths), normals=normals, masks=list(masks))
    check_request(cameras, conditioning)
    return prompt, cameras, conditioning


def encode_response(view_set):
    views = []
    for view in view_set.views:
        entry = {
            'shaded_png_b64': b64encode(float_to_png(view.shaded)),
            'albedo_png_b64': b64encode(float_to_png(view.albedo)),
        }
        if not view_set.conditioned:
            entry['depth_png_b64'] = b64encode(depth_to_png16(view.depth, view.mask))
            entry['mask_png_b64'] = b64encode(mask_to_png(view.mask))
        views.append(entry)
    return {'views': views}


def decode_response(payload, cameras, conditioning=None):
    """Client side: response JSON -> list of RenderedView; raises ProtocolError on any mismatch"""
    if not isinstance(payload, dict) or not isinstance(payload.get('views'), list):
        raise ProtocolError("response has no 'views' list")
    entries = payload['views']
    if len(entries) != len(cameras):
        raise ProtocolError(f"server returned {len(entries)} views for {len(cameras)} cameras")
    views = []
    for i, (entry, camera) in enumerate(zip(entries, cameras)):
        res = camera.resolution
        try:
            shaded = png_to_float(b64decode(entry['shaded_png_b64']))[..., :3]
            albedo = png_to_float(b64decode(entry['albedo_png_b64']))[..., :3]
            if conditioning is not None:
                depth, mask = conditioning.depths[i], conditioning.masks[i]
                normal = conditioning.normals[i]
            else:
                if 'depth_png_b64' not in entry or 'mask_png_b64' not in entry:
                    raise ProtocolError(f"view {i}: unconditioned views must carry depth and mask")
                depth, _ = png16_to_depth(b64decode(entry['depth_png_b64']))
                mask = png_to_mask(b64decode(entry['mask_png_b64']))
                normal = None
        except (KeyError, ValueError, OSError) as e:
            raise ProtocolError(f"view {i}: undecodable payload ({e})")
        for name, buf in (('shaded', shaded), ('albedo', albedo), ('mask', mask)):
            if buf.shape[:2] != (res, res):
                raise ProtocolError(f"view {i}: {name} is {buf.shape[:2]}, camera expects {res}x{res}")
        if depth.shape != (res, res):
            raise ProtocolError(f"view {i}: depth is {depth.shape}, camera expects {res}x{res}")
        depth = np.where(mask, depth, np.inf)
        if normal is None:
            normal = normals_from_depth(depth, mask, camera)
        views.append(RenderedView(
            shaded=np.where(mask[..., None], shaded, 0.0),
            albedo=np.where(mask[..., None], albedo, 0.0),
            normal=normal,
            depth=depth,
            mask=mask,
        ))
    return views


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------

class RemoteViewBackend(ViewBackend):
    """HTTP client for a hosted view generator with bounded in-flight requests and retries"""

    name = "remote"

    def __init__(self, endpoint=None, token=None, timeout=30.0, max_in_flight=2, retries=2,
                 session=None, backoff=0.5):
        self.endpoint = (endpoint or os.environ.get('VIEWGEN_ENDPOINT') or '').rstrip('/')
        self.token = token or os.environ.get('VIEWGEN_TOKEN')
        self.timeout = float(timeout)
        self.retries = int(retries)
        self.backoff = backoff
        if not self.endpoint:
            raise ConfigError("VIEWGEN_ENDPOINT environment variable or backend.endpoint is required")
        self.session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(max(1, int(max_in_flight)))
        self.last_raw = None

    @classmethod
    def from_config(cls, backend_config, session=None):
        return cls(
            endpoint=backend_config.endpoint or None,
            timeout=backend_config.timeout,
            max_in_flight=backend_config.max_in_flight,
            retries=backend_config.retries,
            session=session,
        )

    def _headers(self):
        headers = {'Content-Type': 'application/json'}
        if self.token:
            headers['Authorization'] = f"Bearer {self.token}"
        return headers

    def _attempt(self, url, payload, deadline):
        """One POST inside a request slot; None when the deadline passes while waiting for the slot"""
        remaining = deadline - time.monotonic()
        if remaining <= 0 or not self._slots.acquire(timeout=remaining):
            return None
        try:
            return self.session.post(url, json=payload, headers=self._headers(),
                                     timeout=max(deadline - time.monotonic(), 1e-3))
        finally:
            self._slots.release()

    def post(self, payload):
        """
        POST with retries on transport errors and 5xx; returns the raw response
        text. self.timeout bounds the whole call: waiting for a slot, every
        attempt and the backoff sleeps between them.
        """
        url = self.endpoint + GENERATE_PATH
        deadline = time.monotonic() + self.timeout
        last_error = None
        attempts = 0
        for attempt in range(self.retries + 1):
            if attempt and self.backoff:
                delay = self.backoff * 2 ** (attempt - 1)
                if time.monotonic() + delay >= deadline:
                    break
                time.sleep(delay)
            try:
                response = self._attempt(url, payload, deadline)
            except requests.RequestException as e:
                attempts += 1
                last_error = f"transport error: {e}"
                logger.warning(f"View service attempt {attempt + 1} failed: {last_error}")
                continue
            if response is None:
                break
            attempts += 1
            if response.status_code >= 500:
                last_error = f"HTTP {response.status_code}: {_error_message(response)}"
                logger.warning(f"View service attempt {attempt + 1} failed: {last_error}")
                continue
            if response.status_code >= 400:
                raise BackendError(
                    f"view service rejected the request: {_error_message(response)}",
                    retries=attempt, code=_error_code(response) or response.status_code,
                )
            return response.text
        retries = max(attempts - 1, 0)
        if attempts < self.retries + 1:
            raise BackendError(
                f"view service call ran out of its {self.timeout:g}s budget after {attempts} attempts ({last_error})",
                retries=retries,
            )
        raise BackendError(f"view service failed after {attempts} attempts ({last_error})", retries=retries)

    def generate_views(self, prompt, cameras, conditioning=None):
        check_request(cameras, conditioning)
        raw = self.post(encode_request(prompt, cameras, conditioning))
        self.last_raw = raw
        return parse_raw_response(raw, cameras, conditioning, backend=self.name)

    def health_check(self):
        try:
            response = self.session.get(self.endpoint + '/health', timeout=self.timeout)
        except requests.RequestException as e:
            return {'success': False, 'error': f"View service unreachable: {e}"}
        if response.status_code != 200:
            return {'success': False, 'error': f"View service unhealthy: HTTP {response.status_code}"}
        return {'success': True, 'message': f"View service at {self.endpoint} is healthy"}


class RecordedViewBackend(ViewBackend):
    """Replays stored raw responses in request order"""

    name = "recorded"

    def __init__(self, responses):
        self.responses = list(responses)
        self._next = 0
        self.last_raw = None

    def generate_views(self, prompt, cameras, conditioning=None):
        check_request(cameras, conditioning)
        if self._next >= len(self.responses):
            raise BackendError("no recorded response left to replay")
        raw = self.responses[self._next]
        self._next += 1
        self.last_raw = raw
        return parse_raw_response(raw, cameras, conditioning, backend=self.name)


def parse_raw_response(raw, cameras, conditioning, backend="remote"):
    try:
        payload = json.loads(raw)
    except ValueError as e:
        raise ProtocolError(f"response is not JSON: {e}")
    views = decode_response(payload, cameras, conditioning)
    return GeneratedViewSet(views=views, conditioned=conditioning is not None, backend=backend, raw_response=raw)


def _error_body(response):
    try:
        body = response.json()
    except ValueError:
        return {}
    return body if isinstance(body, dict) else {}


def _error_message(response):
    return _error_body(response).get('message') or (response.text or '')[:200]


def _error_code(response):
    return _error_body(response).get('code')
