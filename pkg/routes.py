"""
View generation API served by the reference service: the remote protocol of
view_service implemented on top of the procedural backend.
"""

import hmac
import logging
import os

from flask import jsonify, request

from app import app
from generators import ProceduralBackend
from models import GenError, InputError
from view_service import GENERATE_PATH, decode_request, encode_response

logger = logging.getLogger(__name__)

backend = ProceduralBackend(
    jitter=float(os.environ.get('VIEWGEN_JITTER', 0.0)),
    workers=int(os.environ.get('VIEWGEN_WORKERS', 2)),
)


def _authorized():
    token = app.config.get('VIEWGEN_TOKEN')
    if not token:
        return True
    header = request.headers.get('Authorization', '')
    return hmac.compare_digest(header, f"Bearer {token}")


def _error(code, message, status):
    return jsonify({'code': code, 'message': message}), status


@app.route(GENERATE_PATH, methods=['POST'])
def generate_views_route():
    if not _authorized():
        return _error('unauthorized', 'missing or invalid bearer token', 401)
    payload = request.get_json(silent=True)
    if payload is None:
        return _error('invalid_request', 'request body must be JSON', 400)

    try:
        prompt, cameras, conditioning = decode_request(payload)
        view_set = backend.generate_views(prompt, cameras, conditioning)
    except InputError as e:
        logger.warning(f"Rejected view request: {str(e)}")
        return _error('invalid_request', str(e), 400)
    except GenError as e:
        logger.error(f"View generation failed: {str(e)}")
        return _error('generation_failed', str(e), 500)

    logger.info(f"Generated {len(view_set)} {'conditioned' if view_set.conditioned else 'unconditioned'} "
                f"views for '{prompt.text}'")
    return jsonify(encode_response(view_set)), 200
