import logging

from flask import Flask, jsonify
from flask_limiter import Limiter
from flask_limiter.util import get_remote_address
from werkzeug.middleware.proxy_fix import ProxyFix

from production_config import get_config

logger = logging.getLogger(__name__)

settings = get_config()

# Initialize Flask app
app = Flask(__name__)
app.config.from_object(settings)
app.wsgi_app = ProxyFix(app.wsgi_app, x_proto=1, x_host=1)

# Initialize rate limiting
limiter = Limiter(
    key_func=get_remote_address,
    default_limits=[limit.strip() for limit in settings.RATELIMIT_DEFAULT.split(',')],
    storage_uri=settings.RATELIMIT_STORAGE_URL,
)
limiter.init_app(app)

settings.init_app(app)


@app.errorhandler(429)
def rate_limited(e):
    return jsonify({'code': 'rate_limited', 'message': str(e.description)}), 429


@app.errorhandler(404)
def not_found(e):
    return jsonify({'code': 'not_found', 'message': 'no such endpoint'}), 404
