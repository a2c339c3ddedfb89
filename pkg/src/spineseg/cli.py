"""Command-line entry points.

Subcommands: ``gen-data``, ``train``, ``eval``, ``predict``, ``gradcheck``,
``bench-scan``.  Every run logs its fully resolved configuration to stderr;
all file writes go through temp-then-rename.  Exit code 0 on success, 2 on
usage errors, 1 with a one-line diagnostic on runtime failures.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from .bench import VARIANTS, fit_exponent, format_records, run_scan_bench
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import SpinesegError
from .gradsuite import run_gradcheck_suite
from .network import NetworkConfig, build_network
from .phantom import VolumeSample, generate_phantom
from .training import (TrainConfig, evaluate, kfold_split, predict_labels,
                       train_network)
from .volio import read_volume, write_volume


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _log_config(name: str, cfg: dict) -> None:
    _log(f"[{name}] resolved config: {json.dumps(cfg, sort_keys=True)}")


def _atomic_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _parse_patch(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"patch must be one or three comma-separated ints, got {text!r}")
    return tuple(parts)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    cfg = {"seed": args.seed, "count": args.count, "patch": list(args.patch),
           "classes": args.classes, "out": args.out}
    _log_config("gen-data", cfg)
    os.makedirs(args.out, exist_ok=True)
    class_names = ["background"] + [f"vertebra_{i}" for i in range(1, args.classes)]
    for i in range(args.count):
        sample = generate_phantom(args.seed + i, args.patch, args.classes - 1)
        base = os.path.join(args.out, f"case_{i:03d}")
        write_volume(base + "_img", sample.image, kind="image",
                     meta=sample.meta)
        write_volume(base + "_lab", sample.labels, kind="labels",
                     class_names=class_names, meta=sample.meta)
    _atomic_text(os.path.join(args.out, "dataset.json"),
                 json.dumps(cfg, indent=1) + "\n")
    _log(f"[gen-data] wrote {args.count} cases to {args.out}")
    return 0


def _load_cases(data_dir: str) -> list[VolumeSample]:
    imgs = sorted(glob.glob(os.path.join(data_dir, "case_*_img.json")))
    if not imgs:
        raise SpinesegError(f"no case_*_img.json volumes under {data_dir}")
    samples = []
    for img_path in imgs:
        lab_path = img_path.replace("_img.json", "_lab.json")
        img = read_volume(img_path)
        lab = read_volume(lab_path)
        samples.append(VolumeSample(image=img.array[None].astype(np.float32),
                                    labels=lab.array.astype(np.int32),
                                    meta=img.meta))
    return samples


def _cmd_train(args) -> int:
    with open(args.config) as f:
        doc = json.load(f)
    net_cfg = NetworkConfig.from_dict(doc["network"])
    train_cfg = TrainConfig.from_dict(doc.get("train", {}))
    data_dir = doc["data"]["dir"]
    resolved = {"network": net_cfg.to_dict(), "train": train_cfg.to_dict(),
                "data": {"dir": data_dir}, "out": args.out,
                "resume": args.resume}
    _log_config("train", resolved)
    os.makedirs(args.out, exist_ok=True)
    samples = _load_cases(data_dir)
    train_ids, val_ids = kfold_split(
        list(range(len(samples))), train_cfg.fold_count,
        train_cfg.fold_index, train_cfg.seed)
    if args.resume:
        net, state = load_checkpoint(args.resume)
    else:
        net = build_network(net_cfg, seed=train_cfg.seed)
        state = None
    metrics_path = os.path.join(args.out, "metrics.jsonl")
    state = train_network(net, samples, train_ids, train_cfg,
                          val_ids=val_ids, metrics_path=metrics_path,
                          state=state)
    ckpt = os.path.join(args.out, "checkpoint")
    save_checkpoint(net, ckpt, state=state)
    final = state.history[-1] if state.history else {}
    _log(f"[train] done at epoch {state.epoch}; "
         f"loss={final.get('loss', float('nan')):.4f}; "
         f"checkpoint={ckpt}.json")
    return 0


def _cmd_eval(args) -> int:
    _log_config("eval", {"ckpt": args.ckpt, "data": args.data,
                         "report": args.report})
    net, _ = load_checkpoint(args.ckpt)
    samples = _load_cases(args.data)
    report = evaluate(net, samples)
    _atomic_text(args.report, json.dumps(report, indent=1) + "\n")
    _log(f"[eval] mean foreground dice "
         f"{report['mean_foreground_dice']:.4f} over {report['n_samples']} cases")
    return 0


def _cmd_predict(args) -> int:
    _log_config("predict", {"ckpt": args.ckpt, "in": args.infile,
                            "out": args.outfile})
    net, _ = load_checkpoint(args.ckpt)
    vol = read_volume(args.infile)
    if vol.kind != "image":
        raise SpinesegError(f"predict expects an image volume, got {vol.kind!r}")
    labels = predict_labels(net, vol.array[None].astype(np.float32))
    write_volume(args.outfile, labels, kind="labels",
                 spacing_mm=vol.spacing_mm)
    _log(f"[predict] wrote labels {labels.shape} to {args.outfile}")
    return 0


def _cmd_gradcheck(args) -> int:
    modules = [args.module] if args.module else None
    _log_config("gradcheck", {"module": args.module})
    results = run_gradcheck_suite(modules=modules)
    failed = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.module:8s} {r.name:24s} max rel err {r.max_rel_err:.3e} "
              f"(tol {r.tol:g}) {status}")
        failed += 0 if r.passed else 1
    if failed:
        _log(f"[gradcheck] {failed} of {len(results)} checks failed")
        return 1
    _log(f"[gradcheck] all {len(results)} checks passed")
    return 0


def _cmd_bench_scan(args) -> int:
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    cfg = {"lmin": args.lmin, "lmax": args.lmax, "variants": list(variants),
           "report": args.report}
    _log_config("bench-scan", cfg)
    records = run_scan_bench(args.lmin, args.lmax, variants)
    text = format_records(records)
    if args.report:
        _atomic_text(args.report, text)
    print(text, end="")
    for v in variants:
        if sum(r["variant"] == v for r in records) >= 2:
            _log(f"[bench-scan] {v}: fitted runtime exponent "
                 f"{fit_exponent(records, v):.3f}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spineseg",
        description="Selective state-space segmentation stack (desk scale).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate labeled phantom volumes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--patch", type=_parse_patch, default=(32, 32, 32))
    p.add_argument("--classes", type=int, default=5,
                   help="label count including background")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, metavar="CKPT")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a data directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="segment one volume")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--module", default=None,
                   choices=["tensor", "ssm", "mamba", "vsp", "losses", "network"])
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("bench-scan", help="scan kernel scaling benchmark")
    p.add_argument("--lmin", type=int, default=256)
    p.add_argument("--lmax", type=int, default=16384)
    p.add_argument("--variants", default="seq,chunked,conv",
                   help=f"comma list from {','.join(VARIANTS)}")
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_bench_scan)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except SpinesegError as e:
        _log(f"error: {e}")
        return 1
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as e:
        _log(f"error: {type(e).__name__}: {e}")
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
