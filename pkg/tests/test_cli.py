import json

import pytest

import cli
import pipeline
from core_geometry import save_obj
from models import PipelineConfig, Prompt
from primitives import cube, torus
from rasterizer import canonical_cameras, rasterize

TINY = ['--set', 'rig.resolution=96', '--set', 'texture.size=128', '--set', 'recon.resolution=40',
        '--set', 'workers=2']


def _obj(tmp_path, mesh, name='mesh.obj'):
    path = tmp_path / name
    path.write_bytes(save_obj(mesh))
    return str(path)


def _error_lines(err):
    return [line for line in err.splitlines() if line.startswith('error: ')]


@pytest.fixture(scope='module')
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp('generated')
    code = cli.run(['generate', '--prompt', 'red striped sphere', '-o', str(out)] + TINY)
    return code, out


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def test_generate_writes_asset_and_provenance(generated):
    code, out = generated
    assert code == cli.EXIT_OK
    assert (out / 'asset.glb').stat().st_size > 0
    prov = json.loads((out / 'provenance.json').read_text())
    assert prov['prompt'] == 'red striped sphere'
    assert prov['seed'] == Prompt.from_text('red striped sphere').seed
    assert prov['command'] == {'subcommand': 'generate', 'stage1_only': False}
    assert list(prov['stage_log']) == ['stage1', 'stage2']
    assert prov['config']['texture']['size'] == 128


def test_generate_twice_gives_identical_bytes(generated, tmp_path):
    _, first = generated
    code = cli.run(['generate', '--prompt', 'red striped sphere', '-o', str(tmp_path)] + TINY)
    assert code == cli.EXIT_OK
    assert (tmp_path / 'asset.glb').read_bytes() == (first / 'asset.glb').read_bytes()
    a = json.loads((first / 'provenance.json').read_text())
    b = json.loads((tmp_path / 'provenance.json').read_text())
    assert a['determinism_hash'] == b['determinism_hash']


def test_replay_reproduces_the_asset(generated, tmp_path):
    _, first = generated
    code = cli.run(['generate', '--replay', str(first / 'provenance.json'), '-o', str(tmp_path)])
    assert code == cli.EXIT_OK
    assert (tmp_path / 'asset.glb').read_bytes() == (first / 'asset.glb').read_bytes()


def test_seed_flag_changes_the_record(tmp_path):
    code = cli.run(['generate', '--prompt', 'noisy teal sphere', '--seed', '5', '--stage1-only',
                    '-o', str(tmp_path)] + TINY)
    assert code == cli.EXIT_OK
    prov = json.loads((tmp_path / 'provenance.json').read_text())
    assert prov['seed'] == 5
    assert prov['command']['stage1_only'] is True
    assert list(prov['stage_log']) == ['stage1']


def test_config_file_is_read(tmp_path):
    config = PipelineConfig().with_overrides({'rig.resolution': '96', 'texture.size': '128',
                                              'recon.resolution': '40', 'seed': '11'})
    path = tmp_path / 'config.json'
    path.write_text(config.to_json())
    out = tmp_path / 'out'
    code = cli.run(['generate', '--prompt', 'solid red', '--stage1-only', '--config', str(path), '-o', str(out)])
    assert code == cli.EXIT_OK
    prov = json.loads((out / 'provenance.json').read_text())
    assert prov['seed'] == 11
    assert prov['config_hash'] == config.validate().config_hash()


# ---------------------------------------------------------------------------
# retexture, bake, inspect, validate
# ---------------------------------------------------------------------------

def test_retexture_then_inspect(tmp_path, capsys):
    mesh = _obj(tmp_path, torus())
    out = tmp_path / 'out'
    assert cli.run(['retexture', '--mesh', mesh, '--prompt', 'blue checker', '-o', str(out)] + TINY) == 0
    prov = json.loads((out / 'provenance.json').read_text())
    assert prov['command'] == {'subcommand': 'retexture', 'mesh': 'mesh.obj'}
    assert "mesh had no UVs; atlas generated" in prov['notes']

    capsys.readouterr()
    assert cli.run(['inspect', str(out / 'asset.glb')]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats['faces'] == torus().face_count
    assert stats['has_uv'] is True
    assert stats['texture_resolution'] == 128
    assert 0.0 < stats['uv_coverage'] <= 1.0


def test_bake_from_a_view_directory(tmp_path):
    views_dir = tmp_path / 'views'
    cameras = canonical_cameras(4, resolution=64)
    pipeline.save_view_dir(str(views_dir), [rasterize(cube(), c) for c in cameras], cameras)
    out = tmp_path / 'out'
    code = cli.run(['bake', '--mesh', _obj(tmp_path, cube()), '--views', str(views_dir), '-o', str(out)] + TINY)
    assert code == cli.EXIT_OK
    prov = json.loads((out / 'provenance.json').read_text())
    assert prov['stage_log'] == {'bake': ['generate_atlas', 'bake_views', 'fuse_partials', 'fill_holes']}


def test_validate_reports_a_clean_mesh(tmp_path, capsys):
    assert cli.run(['validate', _obj(tmp_path, cube())]) == cli.EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report == {'pass': True, 'out_of_range_indices': 0, 'degenerate_faces': 0,
                      'out_of_range_uvs': 0, 'non_manifold_edges': 0}


def test_validate_flags_out_of_range_uvs(tmp_path, capsys):
    path = tmp_path / 'bad_uv.obj'
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1.5 0\nvt 0 1\nf 1/1 2/2 3/3\n")
    assert cli.run(['validate', str(path)]) == cli.EXIT_INPUT
    report = json.loads(capsys.readouterr().out)
    assert report['pass'] is False
    assert report['out_of_range_uvs'] == 1


# ---------------------------------------------------------------------------
# Exit codes and error lines
# ---------------------------------------------------------------------------

def test_malformed_obj_names_the_line(tmp_path, capsys):
    path = tmp_path / 'broken.obj'
    path.write_text("v 0 0 0\nv 1 0 0\nf 1 2 7\n")
    assert cli.run(['validate', str(path)]) == cli.EXIT_INPUT
    assert _error_lines(capsys.readouterr().err) == ['error: validate: line 3: vertex index 7 out of range (have 2)']


def test_input_errors_exit_with_one(tmp_path, capsys):
    cases = [
        (['generate'] + TINY, 'error: generate: generate needs --prompt or --replay'),
        (['retexture', '--mesh', str(tmp_path / 'nope.obj'), '--prompt', 'red'],
         'error: retexture: mesh file not found'),
        (['generate', '--prompt', 'red', '--set', 'texture.bogus=1'], 'error: generate: unknown config field'),
        (['generate', '--prompt', 'red', '--set', 'texture.size=1000'], 'error: generate:'),
        (['bake', '--mesh', _obj(tmp_path, cube()), '--views', str(tmp_path / 'none')], 'error: bake: views'),
        (['inspect', str(_obj(tmp_path, cube()))], 'error: inspect: not a GLB file'),
        (['frobnicate'], 'error: usage:'),
    ]
    for argv, expected in cases:
        capsys.readouterr()
        assert cli.run(argv) == cli.EXIT_INPUT, argv
        lines = _error_lines(capsys.readouterr().err)
        assert len(lines) == 1, argv
        assert lines[0].startswith(expected), lines[0]


def test_empty_camera_list_is_rejected(tmp_path, capsys):
    views_dir = tmp_path / 'views'
    views_dir.mkdir()
    (views_dir / 'cameras.json').write_text('[]')
    assert cli.run(['bake', '--mesh', _obj(tmp_path, cube()), '--views', str(views_dir)]) == cli.EXIT_INPUT
    assert _error_lines(capsys.readouterr().err)[0].startswith('error: bake: ')


def test_unexpected_failures_exit_with_two(tmp_path, capsys, monkeypatch):
    def _boom(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(pipeline, 'retexture', _boom)
    code = cli.run(['retexture', '--mesh', _obj(tmp_path, cube()), '--prompt', 'red', '-o', str(tmp_path / 'o')])
    assert code == cli.EXIT_INTERNAL
    assert _error_lines(capsys.readouterr().err) == ['error: retexture: RuntimeError: boom']
