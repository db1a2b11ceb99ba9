"""
Health Check Module for the gen3d view service
Provides endpoints for monitoring the service and its configuration
"""

import os
import sys
from datetime import datetime, timezone

from flask import jsonify

from app import app
from utils import load_keyword_table

VERSION = "1.0.0"


def _now():
    return datetime.now(timezone.utc).isoformat()


@app.route('/health')
def health_check():
    """
    Basic health check endpoint
    Returns 200 OK if application is running
    """
    return jsonify({
        "status": "healthy",
        "timestamp": _now(),
        "version": VERSION,
        "service": "gen3d-viewgen"
    }), 200


@app.route('/health/detailed')
def detailed_health_check():
    """
    Detailed health check: keyword table and procedural backend
    """
    from routes import backend

    health_status = {
        "status": "healthy",
        "timestamp": _now(),
        "version": VERSION,
        "service": "gen3d-viewgen",
        "checks": {}
    }
    status_code = 200

    try:
        table = load_keyword_table()
        health_status["checks"]["keyword_table"] = {
            "status": "healthy",
            "message": f"{len(table)} keywords loaded"
        }
    except Exception as e:
        health_status["checks"]["keyword_table"] = {
            "status": "unhealthy",
            "message": f"Keyword table failed to load: {str(e)}"
        }
        status_code = 503

    result = backend.health_check()
    health_status["checks"]["backend"] = {
        "status": "healthy" if result.get('success') else "unhealthy",
        "message": result.get('message') or result.get('error'),
    }
    if not result.get('success'):
        status_code = 503

    health_status["checks"]["auth"] = {
        "status": "configured" if app.config.get('VIEWGEN_TOKEN') else "not_configured"
    }
    if status_code != 200:
        health_status["status"] = "unhealthy"
    return jsonify(health_status), status_code


@app.route('/version')
def version_info():
    """
    Application version information
    """
    return jsonify({
        "application": "gen3d",
        "version": VERSION,
        "environment": os.environ.get("GEN3D_ENV", "default"),
        "python_version": f"{sys.version_info.major}.{sys.version_info.minor}.{sys.version_info.micro}",
        "timestamp": _now()
    }), 200
