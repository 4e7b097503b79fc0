"""Command-line entry point: ``dualhead generate | train | eval | gradcheck | ablate``.

Machine-readable records go to stdout as one JSON object per line and are
copied to a file under ``--out``.  Exit codes: 0 success, 1 invalid input,
2 numeric failure (non-finite loss or a failed gradient check).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import generate_synthetic, load_manifest, save_sequence, write_manifest
from .errors import DualHeadError, NumericError, UsageError
from .experiment import ablate, build_model, features, skeleton, synthetic_spec, train_run
from .gradcheck import check_model, micro_model
from .model import ensemble
from .train import accuracy, predict_scores

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class Emitter:
    """Writes each record to stdout and appends it to a file."""

    def __init__(self, path: Path, append: bool = False):
        self.fh = open(path, "a" if append else "w")

    def __call__(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True)
        print(line, flush=True)
        self.fh.write(line + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def _common(p: argparse.ArgumentParser, top: bool) -> None:
    # top-level flags get real defaults; the copies on each verb use SUPPRESS
    # so that a flag given before the verb is not reset by the verb parser
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    p.add_argument("--config", type=Path, default=d(None), help="run configuration file")
    p.add_argument("--seed", type=_u64, default=d(None), help="override run.seed (unsigned 64-bit)")
    p.add_argument("--threads", type=_positive, default=d(1), help="worker threads for evaluation / ablation")
    p.add_argument("--out", type=Path, default=d(Path("run")), help="output directory")


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualhead", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--print-defaults", action="store_true", help="print the default configuration and exit")
    _common(parser, top=True)
    sub = parser.add_subparsers(dest="verb")

    p = sub.add_parser("generate", help="write a seeded synthetic dataset and manifests")
    _common(p, top=False)

    p = sub.add_parser("train", help="train a model from manifests")
    _common(p, top=False)
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate checkpoints and their score ensemble")
    _common(p, top=False)
    p.add_argument("--stream", action="append", default=[], metavar="CKPT[:MODALITY]",
                   help="checkpoint and input modality; repeat for an ensemble")
    p.add_argument("--manifest", type=Path, help="test manifest (default: data.test_manifest)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    _common(p, top=False)
    p.add_argument("--corrupt", metavar="PARAM", help=argparse.SUPPRESS)

    p = sub.add_parser("ablate", help="train the variant table over several seeds")
    _common(p, top=False)
    return parser


def load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config is not None else RunConfig.defaults()
    if args.seed is not None:
        cfg = cfg.with_overrides(run={"seed": args.seed})
    return cfg


def _manifest_path(cfg: RunConfig, out: Path, split: str) -> Path:
    given = cfg["data"][f"{split}_manifest"]
    return Path(given) if given else out / f"{split}.manifest"


# ---------------------------------------------------------------------------
# verbs

def cmd_generate(cfg: RunConfig, args) -> int:
    out: Path = args.out
    seed = cfg["run"]["seed"]
    _mkdir(out)
    emit = Emitter(out / "generate.jsonl")
    try:
        for split in ("train", "test"):
            seqs = generate_synthetic(synthetic_spec(cfg, split, seed))
            folder = out / "data" / split
            folder.mkdir(parents=True, exist_ok=True)
            entries = []
            for seq in seqs:
                rel = Path("data") / split / f"{seq.id}.skel"
                save_sequence(seq, out / rel)
                entries.append((rel.as_posix(), seq.label))
            manifest = _manifest_path(cfg, out, split)
            write_manifest(_relative_to(entries, out, manifest.parent), manifest)
            counts = np.bincount([s.label for s in seqs], minlength=_classes(cfg)).tolist() if seqs else []
            emit({"record": "generate", "split": split, "sequences": len(seqs), "per_class": counts,
                  "manifest": os.path.relpath(manifest, out)})
    finally:
        emit.close()
    return EXIT_OK


def _relative_to(entries, root: Path, base: Path):
    """Rewrite root-relative sequence paths relative to the manifest's folder."""
    root, base = root.resolve(), base.resolve()
    out = []
    for rel, lab in entries:
        target = root / rel
        try:
            out.append((target.relative_to(base).as_posix(), lab))
        except ValueError:
            out.append((str(target), lab))
    return out


def _classes(cfg: RunConfig) -> int:
    return cfg["data"]["num_coarse"] * cfg["data"]["fine_variants"]


def _mkdir(path: Path) -> None:
    path.mkdir(parents=True, exist_ok=True)


def _load_split(cfg: RunConfig, path: Path, graph):
    seqs = load_manifest(path, cfg["model"]["num_classes"])
    if not seqs:
        raise UsageError(f"manifest {path} lists no sequences")
    return features(cfg, seqs, graph)


def cmd_train(cfg: RunConfig, args) -> int:
    out: Path = args.out
    _mkdir(out)
    seed = cfg["run"]["seed"]
    graph = skeleton(cfg)
    train = _load_split(cfg, _manifest_path(cfg, out, "train"), graph)
    test_path = _manifest_path(cfg, out, "test")
    test = _load_split(cfg, test_path, graph) if test_path.exists() else None
    net = build_model(cfg, seed, graph)
    start = 0
    if args.resume is not None:
        meta = load_checkpoint(args.resume, net)
        start = int(meta.get("epoch", "-1")) + 1
    emit = Emitter(out / "metrics.jsonl", append=args.resume is not None)
    timing = open(out / "timing.jsonl", "a" if args.resume is not None else "w")
    best = {"score": -1.0}

    def on_epoch(rec, net_):
        emit({"record": "epoch", **rec.as_dict(with_time=False)})
        timing.write(json.dumps({"epoch": rec.epoch, "wall_time": rec.wall_time}) + "\n")
        meta = {"epoch": str(rec.epoch), "seed": str(seed)}
        save_checkpoint(out / "final.ckpt", net_, meta)
        score = rec.test_acc if rec.test_acc is not None else rec.train_acc
        if score > best["score"]:
            best["score"] = score
            save_checkpoint(out / "best.ckpt", net_, meta)

    try:
        train_run(cfg, net, train, test, seed, start_epoch=start, on_epoch=on_epoch, threads=args.threads)
    finally:
        emit.close()
        timing.close()
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    out: Path = args.out
    _mkdir(out)
    graph = skeleton(cfg)
    streams = args.stream or [str(out / "final.ckpt")]
    manifest = args.manifest or _manifest_path(cfg, out, "test")
    seqs = load_manifest(manifest, cfg["model"]["num_classes"])
    if not seqs:
        raise UsageError(f"manifest {manifest} lists no sequences")
    emit = Emitter(out / "eval.jsonl")
    try:
        scores, y = [], None
        for spec in streams:
            path, _, modality = spec.partition(":")
            scfg = cfg.with_overrides(data={"modality": modality}) if modality else cfg
            X, y = features(scfg, seqs, graph)
            net = build_model(scfg, cfg["run"]["seed"], graph)
            load_checkpoint(path, net)
            s = predict_scores(net, X, threads=args.threads)[2]
            scores.append(s)
            emit({"record": "stream", "checkpoint": path, "modality": scfg["data"]["modality"],
                  "acc": accuracy(s, y)})
        pred = ensemble(scores)
        emit({"record": "ensemble", "streams": len(scores), "acc": float(np.mean(pred == y))})
    finally:
        emit.close()
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    g = cfg["gradcheck"]
    out: Path = args.out
    _mkdir(out)
    net, x, y = micro_model(joints=g["joints"], frames=g["frames"], channels=g["channels"], classes=g["classes"],
                            scales=g["scales"], batch=g["batch"], seed=cfg["run"]["seed"])
    names = {n for n, _ in net.named_parameters()}
    if args.corrupt is not None and args.corrupt not in names:
        raise UsageError(f"--corrupt names no parameter: {args.corrupt}")
    emit = Emitter(out / "gradcheck.jsonl")
    try:
        reports = check_model(net, x, y, h=g["step"], tol=g["tolerance"], corrupt=args.corrupt)
        for r in reports:
            emit({"record": "gradcheck", "param": r.name, "size": r.size, "max_rel_error": r.max_rel_error,
                  "passed": r.passed})
        failed = [r.name for r in reports if not r.passed]
        emit({"record": "gradcheck_summary", "groups": len(reports), "failed": failed,
              "worst": max(r.max_rel_error for r in reports)})
    finally:
        emit.close()
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_ablate(cfg: RunConfig, args) -> int:
    out: Path = args.out
    _mkdir(out)
    emit = Emitter(out / "ablate.jsonl")
    try:
        rows, results = ablate(cfg, threads=args.threads)
        for r in results:
            emit({"record": "ablate_run", "variant": r.variant, "seed": r.seed, "test_acc": r.test_acc,
                  "test_acc_coarse": r.test_acc_coarse, "test_acc_fine": r.test_acc_fine,
                  "train_acc": r.train_acc, "epochs": r.epochs})
        for row in rows:
            emit({"record": "ablate", "variant": row.variant, "mean": row.mean, "std": row.std,
                  "n": len(row.accs)})
    finally:
        emit.close()
    table = "variant          acc(%)   std\n" + "\n".join(row.line() for row in rows) + "\n"
    (out / "ablation.txt").write_text(table)
    print(table, end="", file=sys.stderr)
    return EXIT_OK


VERBS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
         "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        if args.print_defaults:
            print(cfg.to_text(), end="")
            return EXIT_OK
        if args.verb is None:
            parser.print_usage(sys.stderr)
            print("dualhead: error: a verb is required", file=sys.stderr)
            return EXIT_INVALID
        with threadpool_limits(limits=1):
            return VERBS[args.verb](cfg, args)
    except NumericError as exc:
        print(f"dualhead: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DualHeadError, OSError) as exc:
        print(f"dualhead: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
