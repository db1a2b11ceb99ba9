"""
Command-line interface.

    generate   --prompt P [-o DIR] [--stage1-only] | --replay provenance.json
    retexture  --mesh M.obj --prompt P [-o DIR]
    bake       --mesh M.obj --views DIR [--prompt P] [-o DIR]
    inspect    asset.glb
    validate   mesh.obj|asset.glb

Exit codes: 0 success, 1 input error, 2 internal error. Logs go to stderr;
inspect and validate print JSON on stdout.
"""

import argparse
import json
import logging
import os
import sys

from core_geometry import load_mesh_file, validate_mesh
from models import GenError, InputError, PipelineConfig, Prompt, StageError
from production_config import get_config, init_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INTERNAL = 2


class ArgumentError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting so run() owns the exit code"""

    def error(self, message):
        raise ArgumentError(message)


def _common(parser):
    parser.add_argument('--config', metavar='FILE', help='JSON pipeline config')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='override a config field by dotted path, e.g. texture.size=512 (repeatable)')
    parser.add_argument('--seed', type=int, help='64-bit seed (default: derived from the prompt)')
    parser.add_argument('--backend', choices=['procedural', 'remote'], help='view generation backend')
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    parser.add_argument('--json-logs', action='store_true', help='structured JSON logs on stderr')


def build_parser():
    parser = _Parser(prog='gen3d', description='Deterministic text-to-3D asset generation and retexturing')
    sub = parser.add_subparsers(dest='command', metavar='COMMAND', parser_class=_Parser)
    sub.required = True

    p = sub.add_parser('generate', help='Stage I then Stage II refinement from a prompt')
    _common(p)
    p.add_argument('--prompt', help='text prompt')
    p.add_argument('-o', '--output', metavar='DIR', help='output directory (default: config output_dir)')
    p.add_argument('--stage1-only', action='store_true', help='stop after Stage I')
    p.add_argument('--replay', metavar='PROVENANCE', help='re-run the invocation recorded in a provenance.json')

    p = sub.add_parser('retexture', help='texture an existing mesh from a prompt')
    _common(p)
    p.add_argument('--mesh', required=True, help='OBJ or GLB mesh')
    p.add_argument('--prompt', required=True, help='text prompt')
    p.add_argument('-o', '--output', metavar='DIR')

    p = sub.add_parser('bake', help='atlas, bake and fuse a mesh against a directory of views')
    _common(p)
    p.add_argument('--mesh', required=True, help='OBJ or GLB mesh')
    p.add_argument('--views', required=True, metavar='DIR', help='cameras.json + view_NN_*.png')
    p.add_argument('--prompt', help='prompt used for roughness/metalness of 3-channel views')
    p.add_argument('-o', '--output', metavar='DIR')

    p = sub.add_parser('inspect', help='print asset statistics as JSON')
    _common(p)
    p.add_argument('path', help='asset.glb')

    p = sub.add_parser('validate', help='validate a mesh and print the report as JSON')
    _common(p)
    p.add_argument('path', help='OBJ or GLB mesh')
    return parser


def _parse_overrides(items):
    overrides = {}
    for item in items:
        key, sep, value = item.partition('=')
        if not sep or not key.strip():
            raise ArgumentError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    return overrides


def load_config(args):
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    overrides = _parse_overrides(args.overrides)
    if args.seed is not None:
        overrides['seed'] = str(args.seed)
    if args.backend:
        overrides['backend.name'] = args.backend
    if get_config().DEBUG_DUMPS:
        overrides.setdefault('debug_dumps', 'true')
    if overrides:
        config = config.with_overrides(overrides)
    return config.validate()


def _output_dir(args, config):
    return args.output or config.output_dir


def _debug_dir(config, out_dir):
    return os.path.join(out_dir, 'debug') if config.debug_dumps else None


def _load_mesh(path):
    if not os.path.exists(path):
        raise InputError(f"mesh file not found: {path}")
    return load_mesh_file(path)


def cmd_generate(args):
    import pipeline
    from view_service import RecordedViewBackend

    if args.replay:
        provenance = pipeline.load_provenance(args.replay)
        config, prompt = pipeline.replay_config(provenance)
        config = config.validate()
        backend = None
        if provenance.responses:
            raws = pipeline.load_responses(provenance, os.path.dirname(os.path.abspath(args.replay)))
            backend = RecordedViewBackend(raws)
        stage1_only = bool(provenance.command.get('stage1_only', False))
        logger.info(f"Replaying '{prompt.text}' (seed {prompt.seed}) from {args.replay}")
    else:
        if not args.prompt:
            raise ArgumentError("generate needs --prompt or --replay")
        config = load_config(args)
        prompt = Prompt.from_text(args.prompt, seed=config.seed)
        backend = None
        stage1_only = args.stage1_only

    out_dir = _output_dir(args, config)
    asset = pipeline.generate(prompt, config, backend=backend, stage1_only=stage1_only,
                              debug_dir=_debug_dir(config, out_dir))
    asset.provenance.command = {'subcommand': 'generate', 'stage1_only': stage1_only}
    pipeline.write_asset(asset, out_dir)
    return EXIT_OK


def cmd_retexture(args):
    import pipeline

    config = load_config(args)
    prompt = Prompt.from_text(args.prompt, seed=config.seed)
    mesh = _load_mesh(args.mesh)
    out_dir = _output_dir(args, config)
    asset = pipeline.retexture(mesh, prompt, config, debug_dir=_debug_dir(config, out_dir))
    asset.provenance.command = {'subcommand': 'retexture', 'mesh': os.path.basename(args.mesh)}
    pipeline.write_asset(asset, out_dir)
    return EXIT_OK


def cmd_bake(args):
    import pipeline

    config = load_config(args)
    mesh = _load_mesh(args.mesh)
    if not os.path.isdir(args.views):
        raise InputError(f"views directory not found: {args.views}")
    views, cameras = pipeline.load_view_dir(args.views)
    asset = pipeline.bake_from_views(mesh, views, cameras, args.prompt, config)
    asset.provenance.command = {'subcommand': 'bake', 'mesh': os.path.basename(args.mesh)}
    pipeline.write_asset(asset, _output_dir(args, config))
    return EXIT_OK


def cmd_inspect(args):
    import pipeline

    try:
        with open(args.path, 'rb') as fh:
            data = fh.read()
    except OSError as e:
        raise InputError(f"cannot read {args.path}: {e.strerror}")
    stats = pipeline.inspect_asset(data)
    print(json.dumps(stats, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_validate(args):
    if not os.path.exists(args.path):
        raise InputError(f"mesh file not found: {args.path}")
    mesh = load_mesh_file(args.path, normalize=False)
    report = validate_mesh(mesh)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK if report.passed else EXIT_INPUT


COMMANDS = {
    'generate': cmd_generate,
    'retexture': cmd_retexture,
    'bake': cmd_bake,
    'inspect': cmd_inspect,
    'validate': cmd_validate,
}


def _fail(where, error, code):
    print(f"error: {where}: {error}", file=sys.stderr)
    return code


def run(argv=None):
    """Parse argv, run one subcommand and return its exit code"""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except ArgumentError as e:
        return _fail('usage', e, EXIT_INPUT)

    settings = get_config()
    level = 'DEBUG' if args.verbose else settings.LOG_LEVEL
    init_logging(level, json_logs=args.json_logs or settings.JSON_LOGS, log_file=settings.LOG_FILE)

    try:
        return COMMANDS[args.command](args)
    except StageError as e:
        return _fail(e.stage, e.cause, EXIT_INPUT if e.is_input_error else EXIT_INTERNAL)
    except InputError as e:
        return _fail(args.command, e, EXIT_INPUT)
    except GenError as e:
        return _fail(args.command, e, EXIT_INTERNAL)
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly")
        return _fail(args.command, f"{type(e).__name__}: {e}", EXIT_INTERNAL)
