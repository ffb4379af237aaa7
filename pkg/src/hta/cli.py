"""Command-line entry point: mask dumps, training, evaluation, curation.

Exit codes: 0 success, 1 contract/config error, 2 I/O or transport error.
Every run that writes an artifact also writes a reproducibility manifest
(<out>.manifest.json) with the config hash, seed, and package version.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import datapipe, retrieval
from .alignment import AlignmentBatch, TrainConfig, train
from .masks import TokenLayout, gst_stacked_mask, mask_to_csv, mask_to_pgm, slt_mask
from .tensor_io import read_tensor, save_checkpoint
from .towers import TextTowerConfig, VideoTowerConfig, init_text_params, \
    init_video_params


def _write_manifest(out_path, args_dict: dict, seed: int) -> None:
    args_dict = {k: v for k, v in args_dict.items() if not callable(v)}
    blob = json.dumps(args_dict, sort_keys=True, default=str)
    manifest = {
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "seed": seed,
        "version": __version__,
        "args": args_dict,
    }
    Path(str(out_path) + ".manifest.json").write_text(json.dumps(manifest, indent=2))


def _parse_layout(text: str) -> TokenLayout:
    parts = [int(x) for x in text.split(",")]
    if len(parts) != 5:
        raise ValueError(f"--layout wants T,N,U,V,r, got {text!r}")
    t, n, u, v, r = parts
    return TokenLayout(T=t, N=n, U=u, V=v, r=r)


def cmd_mask(args) -> int:
    layout = _parse_layout(args.layout)
    mask = slt_mask(layout) if args.family == "slt" else gst_stacked_mask(layout)
    text = mask_to_csv(mask) if args.format == "csv" else mask_to_pgm(mask)
    if args.out:
        Path(args.out).write_text(text)
        _write_manifest(args.out, vars(args), args.seed)
    else:
        sys.stdout.write(text)
    return 0


def _read_config_file(path) -> dict:
    """Flat key=value config file; '#' starts a comment."""
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def cmd_train(args) -> int:
    file_cfg = _read_config_file(args.config) if args.config else {}
    fields = {f: t for f, t in (
        ("steps", int), ("base_lr", float), ("final_lr", float),
        ("beta1", float), ("beta2", float), ("weight_decay", float),
        ("clip_norm", float), ("init_tau", float), ("batch_size", int))}
    kwargs = {}
    for name, cast in fields.items():
        if name in file_cfg:
            kwargs[name] = cast(file_cfg[name])
        flag = getattr(args, name, None)
        if flag is not None:            # flags take precedence over the file
            kwargs[name] = flag
    config = TrainConfig(**kwargs)

    data = Path(args.data)
    clips = read_tensor(data / "clips.hta")
    if clips.ndim != 5:
        raise ValueError(f"clips.hta must be [B, T, H, W, 3], got {clips.shape}")
    texts = json.loads((data / "texts.json").read_text())
    dataset = AlignmentBatch(list(clips), texts["subtitles"], texts["captions"])

    t, h, _w, _ = clips.shape[1:]
    n = (h // args.patch) * (clips.shape[3] // args.patch)
    layout = TokenLayout(T=t, N=n, U=args.hierarchies, V=args.mst_per_level,
                         r=args.temporal_scale, d=args.width)
    vcfg = VideoTowerConfig(layout=layout, L=args.layers, heads=args.heads,
                            D=args.embed_dim, patch=args.patch)
    tcfg = TextTowerConfig(vocab=args.vocab, context=args.context,
                           D=args.embed_dim, width=args.embed_dim)
    rng = np.random.default_rng(args.seed)
    params = init_video_params(vcfg, rng)
    params.update(init_text_params(tcfg, rng))

    trace = train(dataset, params, vcfg, tcfg, config, seed=args.seed)
    save_checkpoint(args.out, params, config={
        "video": {"layout": [layout.T, layout.N, layout.U, layout.V, layout.r],
                  "d": layout.d, "L": vcfg.L, "heads": vcfg.heads,
                  "D": vcfg.D, "patch": vcfg.patch},
        "text": {"vocab": tcfg.vocab, "context": tcfg.context,
                 "D": tcfg.D, "width": tcfg.width},
    })
    trace_path = Path(args.out) / "trace.csv"
    with open(trace_path, "w") as f:
        f.write("step,loss,lr,tau\n")
        for step, loss, lr, tau in trace:
            f.write(f"{step},{loss:.10g},{lr:.10g},{tau:.10g}\n")
    _write_manifest(args.out, vars(args), args.seed)
    print(f"trained {config.steps} steps, final loss {trace[-1][1]:.6f}")
    return 0


def cmd_eval(args) -> int:
    video = read_tensor(args.video_emb)
    text = read_tensor(args.text_emb)
    if args.direction == "t2v":
        s = retrieval.similarity(text, video)
    else:
        s = retrieval.similarity(video, text)
    if args.dsl:
        s = retrieval.dual_softmax(s, alpha=args.alpha)
    report = retrieval.evaluate(s)
    payload = json.dumps(report.as_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(payload)
        _write_manifest(args.out, vars(args), args.seed)
    print(payload)
    return 0


def cmd_curate(args) -> int:
    scales = tuple(float(x) for x in args.scales.split(","))
    if len(scales) != 3:
        raise ValueError(f"--scales wants three targets, got {args.scales!r}")
    if args.summarizer == "fallback":
        spec = datapipe.SummarizerSpec(kind="extractive-fallback")
    else:
        spec = datapipe.SummarizerSpec(kind="external-llm",
                                       endpoint=args.summarizer)
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_clips = []
    for path in sorted(in_dir.glob("*.jsonl")):
        records = []
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            vid, sentences = datapipe.read_transcript_line(line)
            clips = datapipe.extract_clips(vid, sentences, scales)
            for clip in clips:
                clip.caption = " ".join(
                    f"frame at {tstamp:.1f}s"
                    for tstamp in datapipe.caption_frames(clip, args.fps)
                ) if args.placeholder_captions else clip.caption
            datapipe.summarize_clips(clips, spec)
            records.extend(clips)
        out_path = out_dir / path.name
        out_path.write_text(
            "\n".join(datapipe.clip_to_json(c) for c in records) + "\n")
        all_clips.extend(records)
    if not all_clips:
        raise ValueError(f"no transcripts found in {in_dir}")
    table = datapipe.stats(all_clips)
    (out_dir / "stats.json").write_text(json.dumps(table, indent=2))
    _write_manifest(out_dir / "clips", vars(args), args.seed)
    print(json.dumps(table, indent=2))
    return 0


def cmd_selftest(args) -> int:
    from . import selftest
    return selftest.run(seed=args.seed)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hta",
                                description="hierarchical temporal attention toolkit")
    p.add_argument("--seed", type=int, default=0, help="global RNG seed")
    sub = p.add_subparsers(dest="verb", required=True)

    m = sub.add_parser("mask", help="dump attention masks")
    msub = m.add_subparsers(dest="mask_verb", required=True)
    md = msub.add_parser("dump")
    md.add_argument("--layout", required=True, help="T,N,U,V,r")
    md.add_argument("--family", choices=["slt", "gst"], required=True)
    md.add_argument("--format", choices=["csv", "pgm"], default="csv")
    md.add_argument("--out")
    md.set_defaults(func=cmd_mask)

    t = sub.add_parser("train", help="train the toy aligner")
    t.add_argument("--config", help="flat key=value TrainConfig file")
    t.add_argument("--data", required=True, help="dir with clips.hta + texts.json")
    t.add_argument("--out", required=True, help="checkpoint directory")
    for name, cast in (("steps", int), ("base-lr", float), ("final-lr", float),
                       ("beta1", float), ("beta2", float),
                       ("weight-decay", float), ("clip-norm", float),
                       ("init-tau", float), ("batch-size", int)):
        t.add_argument(f"--{name}", type=cast, default=None)
    t.add_argument("--width", type=int, default=64, help="token width d")
    t.add_argument("--layers", type=int, default=4)
    t.add_argument("--heads", type=int, default=4)
    t.add_argument("--embed-dim", type=int, default=32)
    t.add_argument("--patch", type=int, default=4)
    t.add_argument("--hierarchies", type=int, default=2)
    t.add_argument("--mst-per-level", type=int, default=1)
    t.add_argument("--temporal-scale", type=int, default=2)
    t.add_argument("--vocab", type=int, default=256)
    t.add_argument("--context", type=int, default=32)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="retrieval metrics from embedding files")
    e.add_argument("--video-emb", required=True)
    e.add_argument("--text-emb", required=True)
    e.add_argument("--dsl", action="store_true", help="dual-softmax re-scoring")
    e.add_argument("--alpha", type=float, default=100.0)
    e.add_argument("--direction", choices=["t2v", "v2t"], default="t2v")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("curate", help="multi-scale clip curation")
    c.add_argument("--in", dest="in_dir", required=True)
    c.add_argument("--out", dest="out_dir", required=True)
    c.add_argument("--scales", default="13,30,60")
    c.add_argument("--fps", type=float, default=0.1)
    c.add_argument("--summarizer", default="fallback",
                   help='"fallback" or an external endpoint URL')
    c.add_argument("--placeholder-captions", action="store_true",
                   help="fill captions with the frame schedule (no captioner)")
    c.set_defaults(func=cmd_curate)

    s = sub.add_parser("selftest", help="run the invariant suite")
    s.set_defaults(func=cmd_selftest)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, datapipe.TransportError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
