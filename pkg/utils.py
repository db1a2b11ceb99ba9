import base64
import hashlib
import io
import logging
import os
import re
from functools import lru_cache

import numpy as np
import pandas as pd
from PIL import Image

logger = logging.getLogger(__name__)

KEYWORD_TABLE_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data', 'keyword_table.csv')

# Depth travels as 16-bit PNG in units of DEPTH_SCALE; 0 marks background
DEPTH_SCALE = 1e-4

_KEYWORD_ALIASES = {
    'striped': 'stripes',
    'stripe': 'stripes',
    'checkered': 'checker',
    'checkerboard': 'checker',
    'checkers': 'checker',
    'metallic': 'metal',
    'shiny': 'glossy',
    'grey': 'gray',
    'ball': 'sphere',
    'box': 'cube',
    'donut': 'torus',
    'doughnut': 'torus',
    'ring': 'torus',
    'pill': 'capsule',
    'marble': 'noise',
    'fbm': 'noise',
    'noisy': 'noise',
}


def normalize_keyword(word):
    """
    Normalize keyword spelling variations to the table's canonical form
    """
    if not word:
        return ''
    word = str(word).lower().strip()
    return _KEYWORD_ALIASES.get(word, word)


def tokenize_prompt(text):
    """Lower-case word tokens of a prompt, aliases resolved, order preserved"""
    return [normalize_keyword(w) for w in re.findall(r'[a-zA-Z]+', text or '')]


@lru_cache(maxsize=4)
def load_keyword_table(path=KEYWORD_TABLE_PATH):
    """
    Load the prompt keyword table (keyword, category, r, g, b, roughness, metalness).
    Returns a dict keyword -> row dict; empty cells are None.
    """
    df = pd.read_csv(path, comment='#', skipinitialspace=True)
    required = {'keyword', 'category', 'r', 'g', 'b', 'roughness', 'metalness'}
    missing = required - set(df.columns)
    if missing:
        raise ValueError(f"keyword table {path} is missing columns: {', '.join(sorted(missing))}")

    table = {}
    for _, row in df.iterrows():
        keyword = normalize_keyword(row['keyword'])
        if not keyword:
            continue
        entry = {'keyword': keyword, 'category': str(row['category']).strip().lower()}
        for col in ('r', 'g', 'b', 'roughness', 'metalness'):
            value = row[col]
            entry[col] = None if pd.isna(value) else float(value)
        if keyword in table:
            logger.warning(f"Duplicate keyword '{keyword}' in {path}; keeping the first entry")
            continue
        table[keyword] = entry
    logger.debug(f"Loaded {len(table)} keywords from {path}")
    return table


# ---------------------------------------------------------------------------
# Hashing
# ---------------------------------------------------------------------------

def array_digest(*arrays):
    """SHA-256 over dtype, shape and bytes of each array (None allowed)"""
    h = hashlib.sha256()
    for arr in arrays:
        if arr is None:
            h.update(b'none')
            continue
        arr = np.ascontiguousarray(arr)
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def bytes_digest(data):
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# PNG codecs
# ---------------------------------------------------------------------------

def quantize8(values):
    return np.round(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_png(image):
    """Encode a uint8 (H,W), (H,W,3), (H,W,4) or uint16 (H,W) array as PNG bytes"""
    arr = np.ascontiguousarray(image)
    if arr.dtype == np.uint16 and arr.ndim != 2:
        raise ValueError("16-bit PNG export supports single-channel images only")
    if arr.dtype not in (np.uint8, np.uint16):
        raise ValueError(f"unsupported PNG dtype {arr.dtype}")
    pil = Image.fromarray(arr)
    buf = io.BytesIO()
    pil.save(buf, format='PNG')
    return buf.getvalue()


def decode_png(data):
    """Decode PNG bytes to a numpy array (uint8, or uint16 for 16-bit grayscale)"""
    with Image.open(io.BytesIO(data)) as pil:
        pil.load()
        if pil.mode in ('I;16', 'I;16B', 'I;16L', 'I'):
            return np.array(pil, dtype=np.int64).astype(np.uint16)
        if pil.mode == 'P':
            pil = pil.convert('RGBA')
        return np.array(pil)


def float_to_png(values):
    """[0,1] float image -> 8-bit PNG bytes"""
    return encode_png(quantize8(values))


def png_to_float(data):
    arr = decode_png(data)
    if arr.dtype == np.uint16:
        return arr.astype(np.float64) / 65535.0
    return arr.astype(np.float64) / 255.0


def confidence_to_png16(confidence):
    """[0,1] confidence map -> 16-bit grayscale PNG bytes"""
    q = np.round(np.clip(confidence, 0.0, 1.0) * 65535.0).astype(np.uint16)
    return encode_png(q)


def depth_to_png16(depth, mask):
    q = np.zeros(depth.shape, dtype=np.uint16)
    valid = mask & np.isfinite(depth)
    q[valid] = np.clip(np.round(depth[valid] / DEPTH_SCALE), 1, 65535).astype(np.uint16)
    return encode_png(q)


def png16_to_depth(data):
    """16-bit depth PNG -> (depth with +inf background, mask)"""
    q = decode_png(data)
    if q.ndim != 2:
        raise ValueError("depth PNG must be single-channel")
    q = q.astype(np.int64)
    mask = q > 0
    depth = np.full(q.shape, np.inf)
    depth[mask] = q[mask] * DEPTH_SCALE
    return depth, mask


def normals_to_png(normals, mask=None):
    enc = (np.asarray(normals, dtype=np.float64) + 1.0) * 0.5
    if mask is not None:
        enc = np.where(mask[..., None], enc, 0.5)
    return float_to_png(enc)


def png_to_normals(data):
    enc = png_to_float(data)[..., :3]
    n = enc * 2.0 - 1.0
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    return n / np.maximum(norm, 1e-12)


def mask_to_png(mask):
    return encode_png(np.where(mask, 255, 0).astype(np.uint8))


def png_to_mask(data):
    arr = decode_png(data)
    if arr.ndim == 3:
        arr = arr[..., 0]
    return arr > 127


def b64encode(data):
    return base64.b64encode(data).decode('ascii')


def b64decode(text):
    try:
        return base64.b64decode(text.encode('ascii'), validate=True)
    except (ValueError, AttributeError) as e:
        raise ValueError(f"invalid base64 payload: {e}")


def write_bytes(path, data):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as fh:
        fh.write(data)
