"""Command-line interface.

Subcommands::

    vidage bench gen     --out DIR [--seed S]
    vidage gallery build --config CFG [--out FILE]
    vidage policy train  --config CFG [--episodes E] [--out CKPT]
    vidage video synth   --config CFG --video DIR --out DIR [--no-rl]
    vidage video eval    --config CFG --original DIR --synth DIR [--out FILE]
    vidage invert        --config CFG --frame PGM --out PGM [--alpha A]

``--config``, ``--seed``, ``--alpha``, ``--epsilon``, ``--k`` and ``--n`` are
accepted by every subcommand and override the config file.  Exit status is 0
on success, 1 on usage errors and 2 on runtime failures.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchmarkSizes, generate_synthetic_benchmark, write_benchmark
from .embedder import EmbedderSpec
from .evaluation import metrics_report
from .io import read_pgm, read_video, write_json, write_pgm, write_video
from .pipeline import (PipelineError, RunConfig, build_gallery, invert_frame, load_config,
                       synthesize_video, train_policy)
from .policy import check_compatible, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p):
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--k", type=int, dest="K")
    p.add_argument("--n", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vidage", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"vidage {__version__}")
    top = parser.add_subparsers(dest="group", parser_class=_Parser)

    bench = top.add_parser("bench").add_subparsers(dest="cmd", parser_class=_Parser)
    p = bench.add_parser("gen", help="write a synthetic benchmark")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--entries", type=int, default=BenchmarkSizes.entries_per_group)
    p.add_argument("--videos", type=int, default=BenchmarkSizes.videos)
    p.add_argument("--frames", type=int, default=BenchmarkSizes.frames)
    p.add_argument("--size", type=int, default=BenchmarkSizes.height)
    p.add_argument("--embedder", choices=["synthetic", "file-backed"], default="synthetic")

    gallery = top.add_parser("gallery").add_subparsers(dest="cmd", parser_class=_Parser)
    p = gallery.add_parser("build", help="embed a gallery and write its summary")
    _common(p)
    p.add_argument("--out", help="summary JSON (default: <gallery>.summary.json)")

    policy = top.add_parser("policy").add_subparsers(dest="cmd", parser_class=_Parser)
    p = policy.add_parser("train", help="train the selection policy with REINFORCE")
    _common(p)
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", help="checkpoint path (default: config policy_checkpoint)")
    p.add_argument("--log", help="CSV training log")

    video = top.add_parser("video").add_subparsers(dest="cmd", parser_class=_Parser)
    p = video.add_parser("synth", help="age every frame of a video")
    _common(p)
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-rl", action="store_true", help="keep the plain K-NN sets")
    p = video.add_parser("eval", help="metrics for a synthesized video")
    _common(p)
    p.add_argument("--original", required=True)
    p.add_argument("--synth", required=True)
    p.add_argument("--out")

    p = top.add_parser("invert", help="age a single frame (traversal + inversion)")
    _common(p)
    p.add_argument("--frame", required=True)
    p.add_argument("--out", required=True)
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed, alpha=args.alpha, epsilon=args.epsilon,
                              K=args.K, n=args.n)


def _require_config(args):
    if not args.config:
        name = " ".join(x for x in (args.group, getattr(args, "cmd", None)) if x)
        raise UsageError(f"vidage {name}: --config is required")


def _run_info(out_dir, argv, started):
    write_json(Path(out_dir) / "run_info.json", {
        "argv": list(argv),
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "tool_version": __version__,
    })


def cmd_bench_gen(args, argv):
    seed = 0 if args.seed is None else args.seed
    sizes = BenchmarkSizes(entries_per_group=args.entries, videos=args.videos,
                           frames=args.frames, height=args.size, width=args.size)
    bench = generate_synthetic_benchmark(seed, sizes)
    out = Path(args.out)
    paths = write_benchmark(out, bench)
    base = load_config(args.config) if args.config else RunConfig()
    cfg = replace(base.with_overrides(alpha=args.alpha, epsilon=args.epsilon, K=args.K, n=args.n),
                  embedder=EmbedderSpec(kind=args.embedder, seed=seed, height=args.size,
                                        width=args.size),
                  gallery=paths["gallery"], young_group=sizes.young_group,
                  old_group=sizes.old_group, seed=seed, train_videos=paths["videos"],
                  policy_checkpoint="policy.json")
    write_json(out / "config.json", cfg.to_dict())
    print(f"wrote benchmark (seed {seed}) to {out}")


def cmd_gallery_build(args, argv):
    _require_config(args)
    cfg = _config(args)
    gallery = build_gallery(cfg)
    out = Path(args.out) if args.out else cfg.resolve(cfg.gallery).with_suffix(".summary.json")
    groups = sorted({e.age_group for e in gallery.entries.values()})
    write_json(out, {
        "gallery": cfg.gallery,
        "fingerprint": hashlib.sha256(gallery.fingerprint().tobytes()).hexdigest(),
        "entries": len(gallery.entries),
        "groups": {str(g): len(gallery.group_ids(g)) for g in groups},
        "synthesis_dim": gallery.embedder.synthesis_dim,
        "policy_dim": gallery.embedder.policy_dim,
    })
    print(f"gallery: {len(gallery.entries)} entries in {len(groups)} groups -> {out}")


def cmd_policy_train(args, argv):
    _require_config(args)
    cfg = _config(args)
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    if not cfg.train_videos:
        raise UsageError("vidage policy train: config lists no train_videos")
    gallery = build_gallery(cfg)
    videos = [read_video(cfg.resolve(v)) for v in cfg.train_videos]
    trainer = train_policy(videos, gallery, cfg, episodes=args.episodes)
    target = args.out or cfg.policy_checkpoint
    if not target:
        raise UsageError("vidage policy train: no --out and no policy_checkpoint in config")
    out = Path(args.out) if args.out else cfg.resolve(target)
    save_checkpoint(out, trainer.params, {"episodes": trainer.episodes,
                                          "train": cfg.train.to_dict()})
    if args.log:
        trainer.write_log(args.log)
    print(f"trained {trainer.episodes} episodes -> {out}")


def cmd_video_synth(args, argv):
    _require_config(args)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    cfg = _config(args)
    gallery = build_gallery(cfg)
    video = read_video(args.video)
    policy = None
    if not args.no_rl:
        if not cfg.policy_checkpoint:
            raise UsageError("vidage video synth: no policy_checkpoint configured (use --no-rl)")
        policy, _ = load_checkpoint(cfg.resolve(cfg.policy_checkpoint))
        check_compatible(policy, gallery.embedder.policy_dim, cfg.K, cfg.N)
    out = Path(args.out)
    try:
        aged, manifest = synthesize_video(video, gallery, policy, cfg)
    except PipelineError as exc:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "manifest.json", exc.manifest)
        _run_info(out, argv, started)
        raise
    write_video(out, aged)
    write_json(out / "manifest.json", manifest)
    _run_info(out, argv, started)
    print(f"synthesized {len(aged)} frames -> {out}")


def cmd_video_eval(args, argv):
    _require_config(args)
    cfg = _config(args)
    original = read_video(args.original)
    synth = read_video(args.synth)
    manifest_path = Path(args.synth) / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{manifest_path} not found (run 'video synth' first)")
    frames = json.loads(manifest_path.read_text())["frames"]
    deltas = [np.asarray(f["delta"]) for f in frames]
    gallery = build_gallery(cfg)
    old = [gallery[i] for i in gallery.group_ids(cfg.old_group)]
    refs = [e.frame for e in old] if all(e.has_frame for e in old) else None
    report = metrics_report(deltas, cfg.epsilon, original.frames, synth.frames,
                            embedder=gallery.embedder, references=refs,
                            patch=cfg.flow_patch, radius=cfg.flow_radius)
    out = Path(args.out) if args.out else Path(args.synth) / "metrics.json"
    write_json(out, report)
    print(f"consistency={report['consistency']} smoothness={report['smoothness']} -> {out}")


def cmd_invert(args, argv):
    _require_config(args)
    cfg = _config(args)
    gallery = build_gallery(cfg)
    frame = read_pgm(args.frame)
    aged, record = invert_frame(frame, gallery, cfg)
    write_pgm(args.out, aged)
    write_json(Path(args.out).with_suffix(".json"), record)
    print(f"inverted frame -> {args.out} (objective {record['inversion_objective']:.6g})")


def _known_flags(parser) -> set:
    flags = set()
    stack = [parser]
    while stack:
        p = stack.pop()
        for action in p._actions:
            flags.update(action.option_strings)
            if isinstance(action, argparse._SubParsersAction):
                stack.extend(action.choices.values())
    return flags


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


COMMANDS = {
    ("bench", "gen"): cmd_bench_gen,
    ("gallery", "build"): cmd_gallery_build,
    ("policy", "train"): cmd_policy_train,
    ("video", "synth"): cmd_video_synth,
    ("video", "eval"): cmd_video_eval,
    ("invert", None): cmd_invert,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        if not argv:
            raise UsageError(parser.format_usage().strip())
        known = _known_flags(parser)
        unknown = [a for a in argv
                   if a.startswith("-") and not _is_number(a) and a.split("=")[0] not in known]
        if unknown:
            raise UsageError(f"vidage: unrecognized argument: {unknown[0]}")
        args = parser.parse_args(argv)
        key = (args.group, getattr(args, "cmd", None))
        if key not in COMMANDS:
            raise UsageError(parser.format_usage().strip()
                             + f"\nvidage: '{args.group}' needs a subcommand")
        COMMANDS[key](args, argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    except Exception as exc:
        print(f"vidage: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
