"""
Environment configuration for the gen3d tools and the reference view service.
Pipeline knobs live in models.PipelineConfig; this module holds what comes
from the process environment.
"""

import logging
import os
import sys

from pythonjsonlogger import jsonlogger


def _env_bool(name, default='False'):
    return os.environ.get(name, default).lower() == 'true'


class ProductionConfig:
    """Production configuration class"""

    DEBUG = False
    TESTING = False

    # Remote view generation
    VIEWGEN_ENDPOINT = os.environ.get('VIEWGEN_ENDPOINT', '')
    VIEWGEN_TOKEN = os.environ.get('VIEWGEN_TOKEN')
    VIEWGEN_TIMEOUT = float(os.environ.get('VIEWGEN_TIMEOUT', 30))
    VIEWGEN_MAX_IN_FLIGHT = int(os.environ.get('VIEWGEN_MAX_IN_FLIGHT', 2))
    VIEWGEN_RETRIES = int(os.environ.get('VIEWGEN_RETRIES', 2))

    # Rate Limiting Configuration
    RATELIMIT_STORAGE_URL = os.environ.get('REDIS_URL', 'memory://')
    RATELIMIT_DEFAULT = os.environ.get('RATELIMIT_DEFAULT', "600 per hour, 60 per minute")
    RATELIMIT_HEADERS_ENABLED = True

    # Logging Configuration
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')
    LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s %(message)s'
    LOG_FILE = os.environ.get('LOG_FILE')
    JSON_LOGS = _env_bool('JSON_LOGS')

    DEBUG_DUMPS = _env_bool('DEBUG_DUMPS')

    # Request bodies carry base64 PNG buffers
    MAX_CONTENT_LENGTH = 64 * 1024 * 1024

    @staticmethod
    def init_app(app):
        """Initialize the view service with this configuration"""
        from flask import jsonify

        if not app.debug and not app.testing:
            init_logging(ProductionConfig.LOG_LEVEL, ProductionConfig.JSON_LOGS, ProductionConfig.LOG_FILE)
            app.logger.info('gen3d view service startup in production mode')

        @app.after_request
        def security_headers(response):
            response.headers['X-Content-Type-Options'] = 'nosniff'
            response.headers['X-Frame-Options'] = 'DENY'
            return response

        @app.errorhandler(413)
        def too_large(error):
            app.logger.warning(f'413 error: {error}')
            return jsonify({'code': 'too_large', 'message': 'request body too large'}), 413

        @app.errorhandler(500)
        def internal_error(error):
            app.logger.error(f'500 error: {error}')
            return jsonify({'code': 'internal', 'message': 'internal server error'}), 500


class DevelopmentConfig(ProductionConfig):
    """Development configuration (for local development)"""
    DEBUG = True
    LOG_LEVEL = 'DEBUG'


class TestingConfig(ProductionConfig):
    """Testing configuration"""
    TESTING = True
    DEBUG = True
    VIEWGEN_TOKEN = None
    RATELIMIT_ENABLED = False


# Configuration mapping
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': ProductionConfig
}


def get_config(name=None):
    return config.get(name or os.environ.get('GEN3D_ENV', 'default'), ProductionConfig)


def init_logging(level=None, json_logs=False, log_file=None):
    """
    Configure the root logger once: one stderr handler, plain or JSON, plus an
    optional file handler. Calling again replaces the handlers it installed.
    """
    level = level or os.environ.get('LOG_LEVEL', 'INFO')
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    if json_logs:
        formatter = jsonlogger.JsonFormatter(ProductionConfig.LOG_FORMAT)
    else:
        formatter = logging.Formatter(ProductionConfig.LOG_FORMAT)

    root = logging.getLogger()
    for handler in [h for h in root.handlers if getattr(h, '_gen3d', False)]:
        root.removeHandler(handler)

    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setFormatter(formatter)
    stream_handler._gen3d = True
    root.addHandler(stream_handler)

    if log_file:
        directory = os.path.dirname(log_file)
        if directory and not os.path.exists(directory):
            os.makedirs(directory, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(formatter)
        file_handler._gen3d = True
        root.addHandler(file_handler)

    root.setLevel(level)
    return root
