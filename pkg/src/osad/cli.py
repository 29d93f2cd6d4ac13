"""Command-line entry point (``osad`` / ``python -m osad``).

Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .config import Config, load_config
from .errors import InvalidArgumentError, OsadError
from .evaluation import EvalConfig, TaskSplit
from .gradcheck import run_all
from .jsonio import detections_from_json, detections_to_json, read_json, write_json
from .model import ToyModel, train_toy
from .pipeline import (
    default_splits,
    lpg_report,
    pseudo_labels_to_json,
    render_table,
    run_inference,
    run_task_suite,
    scene_pseudo_labels,
    sweep,
)
from .synthetic import EmbeddingDataset, SceneDataset, gen_embedding_dataset, gen_scene_dataset

log = logging.getLogger("osad")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
GRADCHECK_TOL = 1e-5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def _config(args) -> Config:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.synthetic.seed = args.seed
    return cfg


def cmd_gen_embeddings(args) -> int:
    cfg = _config(args)
    write_json(args.out, gen_embedding_dataset(cfg.synthetic).to_json())
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_gen_scenes(args) -> int:
    cfg = _config(args)
    data = gen_scene_dataset(cfg.synthetic)
    write_json(args.out, data.to_json())
    if args.pseudo_out:
        payload = pseudo_labels_to_json(scene_pseudo_labels(data, cfg.lpg))
        payload["lpg_loss"] = lpg_report(data, cfg.lpg, cfg.synthetic.seed)
        write_json(args.pseudo_out, payload, indent=2)
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.no_pcl:
        cfg.train.pcl_enabled = False
    data = EmbeddingDataset.from_json(read_json(args.data))
    seed_feats = None
    if args.pseudo:
        rows = read_json(args.pseudo).get("pseudo_labels", [])
        seed_feats = np.array([r["feature"] for r in rows], dtype=np.float64) if rows else None
        cfg.train.use_pseudo_labels = True
    model = train_toy(data.train_x, data.train_y, data.known, cfg.train, seed=cfg.synthetic.seed,
                      unknown_seed=seed_feats)
    model.meta["config"] = cfg.to_dict()
    write_json(args.out, model.to_json())
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = _config(args)
    model = ToyModel.from_json(read_json(args.model))
    scenes = SceneDataset.from_json(read_json(args.scenes))
    write_json(args.out, detections_to_json(run_inference(scenes.scenes, model, cfg.pipeline)))
    log.info("wrote %s", args.out)
    return EXIT_OK


def _eval_config(cfg: Config) -> EvalConfig:
    return EvalConfig(cfg.eval.iou_thresh, cfg.eval.conf)


def _write_reports(out: Path, reports, table: str, cfg: Config) -> None:
    write_json(out, {"reports": [r.to_dict() for r in reports], "config": cfg.to_dict()}, indent=2)
    out.with_suffix(".txt").write_text(table, encoding="utf-8")


def cmd_eval(args) -> int:
    cfg = _config(args)
    scenes = SceneDataset.from_json(read_json(args.scenes))
    dets = detections_from_json(read_json(args.detections))
    if args.task:
        splits = [s for s in default_splits(scenes) if s.name == args.task]
        if not splits:
            raise InvalidArgumentError(f"no task named {args.task!r} for this dataset")
    else:
        splits = [TaskSplit("all", frozenset(scenes.known), frozenset(scenes.unknown), None, None)]
    reports, table = run_task_suite(splits, scenes, dets, _eval_config(cfg))
    _write_reports(Path(args.out), reports, table, cfg)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_suite(args) -> int:
    cfg = _config(args)
    scenes = SceneDataset.from_json(read_json(args.scenes))
    if args.detections:
        dets = detections_from_json(read_json(args.detections))
    else:
        model = ToyModel.from_json(read_json(args.model))
        dets = run_inference(scenes.scenes, model, cfg.pipeline)
    reports, table = run_task_suite(default_splits(scenes), scenes, dets, _eval_config(cfg))
    _write_reports(Path(args.out), reports, table, cfg)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    rows = sweep(cfg, args.task)
    write_json(args.out, {"rows": rows, "config": cfg.to_dict()}, indent=2)
    for r in rows:
        print(f"Q={r['queue_size']:<3} T={r['margin']:<6g} lambdas={r['lambdas']} sampling={r['sampling']} "
              f"WI={_num(r['wi'])} AOSE={_num(r['aose'])} mAP_k={_num(r['map_k'], 100)} "
              f"AP_u={_num(r['ap_u'], 100)} L_LPG={r['lpg_loss']:.4f}")
    return EXIT_OK


def _num(v, scale=1.0) -> str:
    return "-" if v is None else f"{v * scale:.2f}"


def cmd_gradcheck(args) -> int:
    errors = run_all(args.instances, args.seed or 0)
    worst = 0.0
    for name, err in errors.items():
        print(f"{name:<24} max relative error {err:.3e}")
        worst = max(worst, err)
    ok = worst < GRADCHECK_TOL
    print(f"{'PASS' if ok else 'FAIL'} (tolerance {GRADCHECK_TOL:g})")
    return EXIT_OK if ok else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override synthetic.seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="osad", description="Open-set detection toy pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-embeddings", parents=[common], help="write a labelled feature dataset")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_embeddings)

    s = sub.add_parser("gen-scenes", parents=[common], help="write a scene/proposal dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--pseudo-out", help="also write pseudo-unknown labels and proposal-loss report")
    s.set_defaults(func=cmd_gen_scenes)

    s = sub.add_parser("train", parents=[common], help="train the toy model")
    s.add_argument("--data", required=True, help="embedding dataset from gen-embeddings")
    s.add_argument("--pseudo", help="pseudo-label file; seeds an extra unknown queue")
    s.add_argument("--no-pcl", action="store_true", help="cross-entropy only (baseline)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", parents=[common], help="run the detection pipeline")
    s.add_argument("--model", required=True)
    s.add_argument("--scenes", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", parents=[common], help="evaluate detections")
    s.add_argument("--scenes", required=True)
    s.add_argument("--detections", required=True)
    s.add_argument("--task", help="evaluate one suite split (e.g. T-6) instead of the full dataset")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("suite", parents=[common], help="evaluate every task split")
    s.add_argument("--scenes", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--model")
    g.add_argument("--detections")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_suite)

    s = sub.add_parser("sweep", parents=[common], help="hyper-parameter grid over Q / T / lambda / sampling")
    s.add_argument("--task", default="T-6")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    s.add_argument("--instances", type=int, default=100)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except InvalidArgumentError as exc:
        print(f"osad {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OsadError, ValueError, KeyError) as exc:
        print(f"osad {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
