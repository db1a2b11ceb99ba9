import json
import os

os.environ.setdefault('GEN3D_ENV', 'testing')

import pytest

from models import PipelineConfig
from primitives import cube, icosphere, torus


def small_overrides():
    return {
        'rig.resolution': '128',
        'texture.size': '256',
        'recon.resolution': '48',
        'workers': '2',
    }


@pytest.fixture
def small_config():
    return PipelineConfig().with_overrides(small_overrides()).validate()


@pytest.fixture
def tiny_config():
    return PipelineConfig().with_overrides({
        'rig.resolution': '96',
        'texture.size': '128',
        'recon.resolution': '40',
        'workers': '2',
    }).validate()


@pytest.fixture
def cube_mesh():
    return cube()


@pytest.fixture
def sphere_mesh():
    return icosphere(radius=0.4, subdivisions=3)


@pytest.fixture
def torus_mesh():
    return torus()


class _Reply:
    """requests.Response look-alike over a Flask test response"""

    def __init__(self, response):
        self.status_code = response.status_code
        self.text = response.get_data(as_text=True)

    def json(self):
        return json.loads(self.text)


class FlaskSession:
    """requests.Session stand-in that routes calls to the view service's test client"""

    def __init__(self, client, endpoint='http://viewgen.test'):
        self.client = client
        self.endpoint = endpoint
        self.calls = 0

    def _path(self, url):
        return url[len(self.endpoint):] if url.startswith(self.endpoint) else url

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls += 1
        return _Reply(self.client.post(self._path(url), json=json, headers=headers or {}))

    def get(self, url, timeout=None):
        self.calls += 1
        return _Reply(self.client.get(self._path(url)))


@pytest.fixture
def service_app():
    from main import load_service
    from app import limiter

    app = load_service()
    limiter.enabled = False
    saved = app.config.get('VIEWGEN_TOKEN')
    yield app
    app.config['VIEWGEN_TOKEN'] = saved


@pytest.fixture
def client(service_app):
    return service_app.test_client()


@pytest.fixture
def flask_session(client):
    return FlaskSession(client)
