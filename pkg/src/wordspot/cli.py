"""Command line entry point: ``wordspot <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

import numpy as np
import yaml

from . import arch
from . import checkpoint as ckpt_io
from . import training
from .config import load_config
from .data import load_manifest, load_stop_words
from .errors import EXIT_CODES, WordSpotError
from .phoc import PhocConfig, encode, normalize_transcription
from .retrieval import evaluate, read_descriptors, read_report_map, write_descriptors, write_report


def cmd_train(args) -> int:
    config = load_config(args.config)
    overrides = {k: getattr(args, k) for k in ("total_iterations", "lr_step", "batch_size", "seed")
                 if getattr(args, k) is not None}
    config = dataclasses.replace(config, **overrides)
    res = training.train(config, out_dir=args.out)
    print(f"wrote {res.out_dir / 'checkpoint.bin'} after {res.checkpoint.iteration} iterations")
    return 0


def cmd_extract(args) -> int:
    expect = arch.build(args.arch, args.phoc_dim) if args.arch else None
    ckpt = ckpt_io.load(args.checkpoint, expect=expect)
    samples = load_manifest(args.manifest)
    dset = training.extract(ckpt, samples)
    write_descriptors(args.out, dset)
    print(f"wrote {len(dset)} descriptors of length {dset.descriptors.shape[1]} to {args.out}")
    return 0


def cmd_eval(args) -> int:
    dset = read_descriptors(args.descriptors)
    phoc = PhocConfig.from_dict(dset.phoc) if dset.phoc else PhocConfig()
    stop = load_stop_words(args.stop_words, phoc) if args.stop_words else set()
    result = evaluate(dset, args.mode, stop, phoc)
    if args.out:
        write_report(args.out, result)
    print(f"{args.mode} mAP {result.mean_average_precision:.4f} over {len(result.lists)} queries")
    return 0


def cmd_report(args) -> int:
    results = {}
    for arch_name, dataset, mode, path in args.entry:
        file_mode, value = read_report_map(path)
        if file_mode != mode:
            raise WordSpotError(f"{path} holds a {file_mode} evaluation, not {mode}")
        results[(arch_name, dataset, mode)] = value
    rows = training.results_table(results)
    if args.out:
        training.write_results_table(args.out, results)
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for row in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return 0


def cmd_inspect(args) -> int:
    options = {"width_divisor": args.width_divisor} if args.width_divisor != 1 else {}
    graph = arch.build(args.arch, args.phoc_dim, **options)
    rows = arch.infer_shapes(graph, args.height, args.width)
    name_w = max(len(r.name) for r in rows)
    for r in rows:
        shape = "x".join(str(s) for s in r.shape)
        print(f"{r.name.ljust(name_w)}  {r.kind:<8} {shape:<16} {r.params:>12,}")
    print(f"parameters {arch.count_params(graph):,}")
    print(f"conv layers {arch.conv_layer_count(graph)}")
    print(f"final feature maps {arch.final_feature_maps(graph)}")
    print(f"minimum input {'x'.join(map(str, arch.minimum_input(graph)))}")
    return 0


def cmd_phoc(args) -> int:
    config = PhocConfig()
    if args.levels:
        config = PhocConfig(levels=tuple(args.levels))
    if args.phoc_command == "dim":
        print(config.dimension)
        return 0
    word = normalize_transcription(args.word, config)
    vec = encode(word, config)
    if args.bits:
        print(" ".join(str(i) for i in np.flatnonzero(vec.bits)))
    else:
        print(vec)
    return 0


def cmd_gradcheck(args) -> int:
    from . import diffcore as dc

    graph = arch.build(args.arch, args.phoc_dim, width_divisor=args.width_divisor)
    net = arch.Network(graph, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    image = rng.random((args.height, args.width))
    target = (rng.random(args.phoc_dim) > 0.5).astype(float)

    def loss():
        return dc.bce_loss(net.forward(image, train=True, rng=np.random.default_rng(args.seed)), target)

    report = dc.grad_check(loss, net.params, max_entries=args.max_entries,
                           rng=np.random.default_rng(args.seed))
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def cmd_toy(args) -> int:
    from .toy import copy_corpus

    dest = copy_corpus(args.dir)
    config = {
        "arch": "lenet",
        "learning_rate": 1e-4,
        "lr_step": max(1, args.iterations * 7 // 8),
        "total_iterations": args.iterations,
        "batch_size": 4,
        "seed": 0,
        "data": {"split": "official", "train_manifest": "train.tsv",
                 "test_manifest": "test.tsv", "stop_words": "stopwords.txt"},
        "augmentation": {"target_total": 1200},
        "output_dir": "run",
        "log_period": 250,
    }
    (dest / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    print(f"toy corpus and config.yaml written to {dest}")
    return 0


def _int_list(text: str) -> list:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wordspot", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network from a YAML config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="output directory (default: output_dir from the config)")
    t.add_argument("--total-iterations", type=int, dest="total_iterations")
    t.add_argument("--lr-step", type=int, dest="lr_step")
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("extract", help="write descriptors for a manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--arch", choices=arch.ARCHITECTURES,
                   help="refuse checkpoints not built for this architecture")
    e.add_argument("--phoc-dim", type=int, default=540)
    e.set_defaults(func=cmd_extract)

    v = sub.add_parser("eval", help="QbE or QbS mAP over a descriptor file")
    v.add_argument("--descriptors", required=True)
    v.add_argument("--mode", choices=("qbe", "qbs"), required=True)
    v.add_argument("--stop-words")
    v.add_argument("--out", help="per-query CSV report")
    v.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="assemble evaluation reports into a results table")
    r.add_argument("--entry", nargs=4, action="append", required=True,
                   metavar=("ARCH", "DATASET", "MODE", "REPORT_CSV"))
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    i = sub.add_parser("inspect", help="print the layer shape table of an architecture")
    i.add_argument("--arch", choices=arch.ARCHITECTURES, required=True)
    i.add_argument("--height", type=int, default=60)
    i.add_argument("--width", type=int, default=160)
    i.add_argument("--phoc-dim", type=int, default=540)
    i.add_argument("--width-divisor", type=int, default=1)
    i.set_defaults(func=cmd_inspect)

    h = sub.add_parser("phoc", help="PHOC utilities")
    h.add_argument("--levels", type=_int_list, help="comma separated, e.g. 1,2,4,8")
    hs = h.add_subparsers(dest="phoc_command", required=True)
    enc = hs.add_parser("encode")
    enc.add_argument("word")
    enc.add_argument("--bits", action="store_true", help="print indices of set bits")
    hs.add_parser("dim")
    h.set_defaults(func=cmd_phoc)

    g = sub.add_parser("gradcheck", help="finite-difference check of a miniature network")
    g.add_argument("--arch", choices=arch.ARCHITECTURES, default="lenet")
    g.add_argument("--phoc-dim", type=int, default=12)
    g.add_argument("--width-divisor", type=int, default=8)
    g.add_argument("--height", type=int, default=16)
    g.add_argument("--width", type=int, default=24)
    g.add_argument("--max-entries", type=int, default=4)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    y = sub.add_parser("toy", help="copy the bundled toy corpus and a desk-scale config")
    y.add_argument("dir")
    y.add_argument("--iterations", type=int, default=5000)
    y.set_defaults(func=cmd_toy)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except WordSpotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES["value"]
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES["data"]


if __name__ == "__main__":
    sys.exit(main())
