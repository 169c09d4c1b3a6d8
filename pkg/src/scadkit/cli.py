"""``scad`` command line.

Exit codes: 0 on success, 1 on usage errors, 2 on data errors (unparseable
programs, malformed JSONL, degenerate geometry, missing files).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .csg import CompileError, DegenerateGeometry, ZeroExtent, compile_source, normalize, sample_surface, write_ply, write_xyz
from .dataset import InvalidFractions, build_dataset, evaluate_predictions, load_gold, load_predictions, run_eval
from .metrics import chamfer
from .mutate import ErrorType, ExhaustedRetries, NotApplicable, mutate, record_to_json_text
from .quantize import quantize
from .render import depth_image, render, render_views, sample_views, silhouette_image, write_pgm
from .review import (
    FeedbackRecord,
    SampleMismatch,
    SchemaError,
    build_dpo_pairs,
    candidate_cloud,
    group_candidates,
    read_jsonl,
    visual_reward,
)
from .segment import EmptyProgram, annotate, block_to_json, segment
from .syntax import LexError, ParseError, parse, print_program, to_json

DATA_ERRORS = (
    CompileError, DegenerateGeometry, ZeroExtent, LexError, ParseError, SchemaError, SampleMismatch,
    EmptyProgram, NotApplicable, ExhaustedRetries, InvalidFractions, OSError, json.JSONDecodeError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _dumps(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2)


def _read_program(path):
    return parse(Path(path).read_text(encoding="utf-8"))


def _write_text(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# --------------------------------------------------------------------------
# verbs


def cmd_parse(args) -> int:
    program = _read_program(args.file)
    if args.ast_json:
        print(_dumps(to_json(program)))
    else:
        sys.stdout.write(print_program(program))
    return 0


def cmd_segment(args) -> int:
    program = _read_program(args.file)
    if args.annotate:
        sys.stdout.write(print_program(annotate(program)))
        return 0
    blocks = segment(program)
    if args.json:
        print(_dumps({"blocks": [block_to_json(b) for b in blocks]}))
    else:
        for b in blocks:
            print(f"Block {b.id}  {b.kind.value:<10} lines {b.span.line}  statements {len(b.statements)}")
    return 0


def cmd_compile(args) -> int:
    node = compile_source(Path(args.file).read_text(encoding="utf-8"))
    cloud = sample_surface(node, args.points, args.seed)
    if args.normalize:
        cloud = normalize(cloud)
    if args.out:
        out = Path(args.out)
        if out.suffix == ".ply":
            write_ply(out, cloud)
        elif out.suffix == ".xyz":
            write_xyz(out, cloud)
        else:
            raise UsageError("--out must end in .ply or .xyz")
    lo, hi = cloud.points.min(axis=0), cloud.points.max(axis=0)
    print(_dumps({"points": len(cloud.points), "bbox_min": lo.tolist(), "bbox_max": hi.tolist()}))
    return 0


def cmd_render(args) -> int:
    node = compile_source(Path(args.file).read_text(encoding="utf-8"))
    views = sample_views(args.seed, node, args.size)
    cameras = list(views.cameras)
    while len(cameras) < args.views:
        extra = sample_views(args.seed + len(cameras), node, args.size)
        cameras.extend(extra.cameras)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, cam in enumerate(cameras[:args.views]):
        raster = render(node, cam)
        write_pgm(out / f"view_{k}.pgm", silhouette_image(raster))
        write_pgm(out / f"view_{k}_depth.pgm", depth_image(raster))
    print(_dumps({"views": args.views, "size": args.size, "out_dir": str(out)}))
    return 0


def cmd_quantize(args) -> int:
    sys.stdout.write(print_program(quantize(_read_program(args.file), args.bits)))
    return 0


def cmd_mutate(args) -> int:
    program = _read_program(args.file)
    mutant, record = mutate(program, args.type, args.seed)
    _write_text(args.out, print_program(mutant))
    if args.record:
        _write_text(args.record, record_to_json_text(record))
    return 0


def cmd_build_dataset(args) -> int:
    manifest = build_dataset(args.sources, args.seed, tuple(args.fracs), args.out_dir, args.size, args.jobs)
    print(_dumps({"counts": manifest.counts, "histogram": manifest.histogram, "sha256": manifest.digest(),
                  "skipped": len(manifest.skipped)}))
    return 0


def cmd_eval(args) -> int:
    options = dict(n_points=args.points, seed=args.seed, jsd_resolution=args.jsd_res, clouds_dir=args.clouds_dir)
    if args.manifest:
        report = run_eval(args.pred, args.manifest, args.split, **options)
    elif args.gold:
        report = evaluate_predictions(load_predictions(args.pred), load_gold(args.gold), **options)
    else:
        raise UsageError("eval needs --manifest or --gold")
    if args.json:
        _write_text(args.json, _dumps(report.to_json()) + "\n")
    print(report.table())
    return 0


def _fill_rewards(rows: list[dict], gold_rows: dict, mode: str, size: int, points: int, seed: int) -> None:
    # compute missing visual rewards / chamfer distances from the gold program
    needs = "cd" if mode == "pointcloud" else "visual_reward"
    cache: dict = {}
    for row in rows:
        if row.get(needs) is not None:
            continue
        gold = gold_rows.get(str(row["sample_id"]))
        if gold is None or "correct_program" not in gold:
            raise SchemaError(f"candidate {row['sample_id']!r} lacks {needs} and no gold program is available")
        key = gold["sample_id"]
        if key not in cache:
            node = compile_source(gold["correct_program"])
            views = sample_views(seed, node, size)
            cache[key] = (views, render_views(node, views), normalize(sample_surface(node, points, seed)))
        views, refs, gold_cloud = cache[key]
        if mode == "pointcloud":
            cloud = candidate_cloud(row.get("edited_program"), gold_cloud, points, seed)
            if cloud is not None:
                row["cd"] = chamfer(cloud, gold_cloud)
        else:
            try:
                node = compile_source(row.get("edited_program") or "")
                row["visual_reward"] = visual_reward(refs, render_views(node, views))
            except (CompileError, DegenerateGeometry, ZeroExtent):
                row["visual_reward"] = -1.0


def cmd_dpo_pairs(args) -> int:
    rows = read_jsonl(args.candidates)
    gold_rows = {str(r["sample_id"]): r for r in read_jsonl(args.gold)}
    _fill_rewards(rows, gold_rows, args.mode, args.size, args.points, args.seed)
    lines = []
    for sid, cset in sorted(group_candidates(rows).items()):
        if sid not in gold_rows:
            raise SchemaError(f"no gold record for {sid!r}")
        gold = FeedbackRecord.from_json(gold_rows[sid])
        for pair in build_dpo_pairs(cset, gold, args.mode, args.margin):
            lines.append(json.dumps(pair.to_json(), sort_keys=True))
    _write_text(args.out, "".join(line + "\n" for line in lines))
    print(f"{len(lines)} pairs", file=sys.stderr)
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--jobs", type=int, help="worker processes (default 1)")
    common.add_argument("--config", help="TOML file of option defaults")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="scad", description=__doc__.splitlines()[0], parents=[common])
    parser.set_defaults(seed=0, jobs=1, config=None, verbose=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def verb(name, func, help_text):
        p = sub.add_parser(name, help=help_text, parents=[common])
        p.set_defaults(func=func)
        return p

    p = verb("parse", cmd_parse, "print the canonical form or the AST of a program")
    p.add_argument("file")
    p.add_argument("--ast-json", action="store_true")

    p = verb("segment", cmd_segment, "list the blocks of a program")
    p.add_argument("file")
    p.add_argument("--json", action="store_true")
    p.add_argument("--annotate", action="store_true", help="print the program with // Block n comments")

    p = verb("compile", cmd_compile, "evaluate a program and sample its surface")
    p.add_argument("file")
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", help="point cloud file (.ply or .xyz)")

    p = verb("render", cmd_render, "render silhouette and depth views")
    p.add_argument("file")
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--out-dir", required=True)

    p = verb("quantize", cmd_quantize, "quantize translate offsets to integer levels")
    p.add_argument("file")
    p.add_argument("--bits", type=int, default=8)

    p = verb("mutate", cmd_mutate, "inject one error into a program")
    p.add_argument("file")
    p.add_argument("--type", required=True, choices=[t.value for t in ErrorType])
    p.add_argument("--out")
    p.add_argument("--record")

    p = verb("build-dataset", cmd_build_dataset, "generate a synthetic review dataset")
    p.add_argument("--sources", type=int, default=100)
    p.add_argument("--fracs", type=float, nargs=3, default=[0.8, 0.1, 0.1], metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--size", type=int, default=128, help="view resolution")
    p.add_argument("--out-dir", required=True)

    p = verb("eval", cmd_eval, "score predictions against a dataset split")
    p.add_argument("--pred", required=True)
    p.add_argument("--manifest")
    p.add_argument("--gold", help="gold JSONL instead of a manifest")
    p.add_argument("--split", default="test")
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--jsd-res", type=int, default=16)
    p.add_argument("--clouds-dir")
    p.add_argument("--json", help="also write the report as JSON here")

    p = verb("dpo-pairs", cmd_dpo_pairs, "build preference pairs from scored candidates")
    p.add_argument("--candidates", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--mode", choices=["and", "or", "pointcloud"], default="and")
    p.add_argument("--margin", type=float, default=0.25)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--out")
    return parser


def _apply_config(parser: argparse.ArgumentParser, path: str) -> None:
    """Top-level keys set global defaults; a ``[verb]`` table sets that verb's defaults."""
    with open(path, "rb") as fh:
        config = tomllib.load(fh)
    flat = {k.replace("-", "_"): v for k, v in config.items() if not isinstance(v, dict)}
    parser.set_defaults(**flat)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, table in config.items():
        if isinstance(table, dict):
            if name not in subparsers.choices:
                raise UsageError(f"config table [{name}] is not a command")
            subparsers.choices[name].set_defaults(**{k.replace("-", "_"): v for k, v in table.items()})


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv)
        if known.config:
            _apply_config(parser, known.config)
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error from argparse
        return exc.code if isinstance(exc.code, int) else 1
    except UsageError as exc:
        print(f"scad: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, tomllib.TOMLDecodeError) as exc:
        print(f"scad: error: cannot read config: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"scad: error: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"scad: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"scad: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
