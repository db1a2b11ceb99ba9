import json

import numpy as np
import pytest
import requests

from generators import ProceduralBackend, render_conditioning
from models import BackendError, ConfigError, Prompt, ProtocolError
from rasterizer import canonical_cameras
import view_service
from view_service import (GENERATE_PATH, RecordedViewBackend, RemoteViewBackend, decode_request, decode_response,
                          encode_request, parse_raw_response)

ENDPOINT = 'http://viewgen.test'


class _Canned:
    def __init__(self, status_code, body):
        self.status_code = status_code
        self.text = json.dumps(body)

    def json(self):
        return json.loads(self.text)


class _ScriptedSession:
    """Plays back a fixed list of replies or exceptions"""

    def __init__(self, *replies):
        self.replies = list(replies)
        self.calls = 0

    def _next(self):
        self.calls += 1
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply

    def post(self, url, json=None, headers=None, timeout=None):
        return self._next()

    def get(self, url, timeout=None):
        return self._next()


def _remote(session, **kwargs):
    kwargs.setdefault('backoff', 0)
    return RemoteViewBackend(endpoint=ENDPOINT, session=session, **kwargs)


def _cameras(resolution=32):
    return canonical_cameras(4, resolution=resolution)


# ---------------------------------------------------------------------------
# Client against the reference service
# ---------------------------------------------------------------------------

def test_remote_unconditioned_views_match_local_generation(flask_session):
    cameras = _cameras()
    prompt = Prompt.from_text("red striped sphere", seed=9)
    remote = _remote(flask_session).generate_views(prompt, cameras)
    local = ProceduralBackend().generate_views(prompt, cameras)
    assert remote.backend == 'remote'
    assert remote.raw_response
    for r, l in zip(remote.views, local.views):
        assert np.array_equal(r.mask, l.mask)
        np.testing.assert_allclose(r.albedo[r.mask], l.albedo[l.mask], atol=1 / 255)
        np.testing.assert_allclose(r.depth[r.mask], l.depth[l.mask], atol=1e-4)
        assert np.all(np.isinf(r.depth[~r.mask]))


def test_remote_conditioned_views_keep_the_geometry(flask_session, sphere_mesh):
    cameras = _cameras()
    conditioning = render_conditioning(sphere_mesh, cameras)
    result = _remote(flask_session).generate_views(Prompt.from_text("solid blue"), cameras, conditioning)
    assert result.conditioned
    for view, mask in zip(result.views, conditioning.masks):
        assert np.array_equal(view.mask, mask)
        np.testing.assert_allclose(view.albedo[mask], np.tile((0.0, 0.0, 1.0), (int(mask.sum()), 1)))


def test_bearer_token_is_enforced(service_app, flask_session):
    service_app.config['VIEWGEN_TOKEN'] = 'secret'
    with pytest.raises(BackendError) as err:
        _remote(flask_session, token='wrong', retries=3).generate_views(Prompt.from_text("red"), _cameras(16))
    assert err.value.code == 'unauthorized'
    assert flask_session.calls == 1
    ok = _remote(flask_session, token='secret').generate_views(Prompt.from_text("red"), _cameras(16))
    assert len(ok) == 4


def test_malformed_requests_get_400(client):
    response = client.post(GENERATE_PATH, json={'prompt': 'red'})
    assert response.status_code == 400
    assert response.get_json()['code'] == 'invalid_request'
    response = client.post(GENERATE_PATH, data='not json', content_type='text/plain')
    assert response.status_code == 400


def test_unknown_paths_answer_json_404(client):
    response = client.get('/nope')
    assert response.status_code == 404
    assert response.get_json()['code'] == 'not_found'


# ---------------------------------------------------------------------------
# Retries and failures
# ---------------------------------------------------------------------------

def test_client_errors_are_not_retried():
    session = _ScriptedSession(_Canned(400, {'code': 'invalid_request', 'message': 'bad camera'}))
    with pytest.raises(BackendError) as err:
        _remote(session, retries=3).post({})
    assert session.calls == 1
    assert err.value.code == 'invalid_request'
    assert 'bad camera' in str(err.value)


def test_server_and_transport_errors_are_retried():
    session = _ScriptedSession(
        _Canned(503, {'code': 'busy', 'message': 'try later'}),
        requests.ConnectionError("connection reset"),
        _Canned(200, {'views': []}),
    )
    assert _remote(session, retries=2).post({}) == json.dumps({'views': []})
    assert session.calls == 3


def test_retries_exhausted():
    session = _ScriptedSession(*[_Canned(500, {'message': 'boom'})] * 3)
    with pytest.raises(BackendError) as err:
        _remote(session, retries=2).post({})
    assert session.calls == 3
    assert err.value.retries == 2
    assert not isinstance(err.value, ProtocolError)


class _FakeClock:
    def __init__(self):
        self.now = 0.0

    def monotonic(self):
        return self.now

    def sleep(self, seconds):
        self.now += seconds


class _SlowSession:
    """Every POST takes `latency` fake seconds and answers 503"""

    def __init__(self, clock, latency):
        self.clock = clock
        self.latency = latency
        self.timeouts = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.timeouts.append(timeout)
        self.clock.now += self.latency
        return _Canned(503, {'message': 'busy'})


def test_timeout_bounds_the_whole_call_including_retries(monkeypatch):
    clock = _FakeClock()
    monkeypatch.setattr(view_service, 'time', clock)
    session = _SlowSession(clock, latency=4.0)
    with pytest.raises(BackendError) as err:
        _remote(session, timeout=10, retries=5, backoff=1).post({})
    # 0-4 first attempt, 4-5 backoff, 5-9 second attempt, a 2s backoff would overrun
    assert session.timeouts == [10.0, 5.0]
    assert clock.now <= 10.0
    assert err.value.retries == 1
    assert '10s budget' in str(err.value)


def test_view_count_mismatch_is_a_protocol_error():
    with pytest.raises(ProtocolError):
        decode_response({'views': []}, _cameras(16))
    with pytest.raises(ProtocolError):
        decode_response({'something': 1}, _cameras(16))
    with pytest.raises(ProtocolError):
        parse_raw_response('not json', _cameras(16), None)


def test_undecodable_view_is_a_protocol_error():
    with pytest.raises(ProtocolError):
        decode_response({'views': [{'shaded_png_b64': '!!', 'albedo_png_b64': '!!'}] * 4}, _cameras(16))


def test_missing_endpoint_is_a_config_error(monkeypatch):
    monkeypatch.delenv('VIEWGEN_ENDPOINT', raising=False)
    with pytest.raises(ConfigError):
        RemoteViewBackend(session=_ScriptedSession())


def test_remote_health_check(flask_session):
    assert _remote(flask_session).health_check()['success'] is True
    down = _remote(_ScriptedSession(requests.ConnectionError("refused")))
    assert down.health_check()['success'] is False
    sick = _remote(_ScriptedSession(_Canned(503, {})))
    assert 'HTTP 503' in sick.health_check()['error']


# ---------------------------------------------------------------------------
# Wire format and replay
# ---------------------------------------------------------------------------

def test_request_round_trip_keeps_prompt_and_cameras(sphere_mesh):
    cameras = _cameras(16)
    conditioning = render_conditioning(sphere_mesh, cameras)
    payload = json.loads(json.dumps(encode_request(Prompt.from_text("teal torus", seed=5), cameras, conditioning)))
    prompt, decoded, cond = decode_request(payload)
    assert prompt == Prompt(text="teal torus", seed=5)
    assert decoded == cameras
    for a, b in zip(cond.masks, conditioning.masks):
        assert np.array_equal(a, b)
    for a, b, m in zip(cond.depths, conditioning.depths, conditioning.masks):
        np.testing.assert_allclose(a[m], b[m], atol=1e-4)


def test_recorded_backend_replays_then_runs_dry(flask_session):
    cameras = _cameras(16)
    prompt = Prompt.from_text("orange cube")
    live = _remote(flask_session).generate_views(prompt, cameras)
    replay = RecordedViewBackend([live.raw_response])
    again = replay.generate_views(prompt, cameras)
    for a, b in zip(live.views, again.views):
        assert np.array_equal(a.albedo, b.albedo)
        assert np.array_equal(a.depth, b.depth)
    with pytest.raises(BackendError):
        replay.generate_views(prompt, cameras)


# ---------------------------------------------------------------------------
# Health endpoints
# ---------------------------------------------------------------------------

def test_health_endpoints(client):
    assert client.get('/health').get_json()['status'] == 'healthy'
    detailed = client.get('/health/detailed')
    assert detailed.status_code == 200
    body = detailed.get_json()
    assert body['checks']['keyword_table']['status'] == 'healthy'
    assert body['checks']['backend']['status'] == 'healthy'
    assert body['checks']['auth']['status'] == 'not_configured'
    version = client.get('/version').get_json()
    assert version['application'] == 'gen3d'
    assert version['environment'] == 'testing'
