"""``sea`` command line: train, eval, verify, sweep, export, graph."""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import data as D
from .config import TrainConfig, dump_config, load_config
from .evaluator import evaluate, evaluate_popularity
from .graphs import build_item_graph
from .model import Graphs
from .theory import sample_angle_distribution, verify_club, verify_distancing, verify_angles, verify_variance
from .trainer import CheckpointError, Trainer, load_checkpoint, save_checkpoint

log = logging.getLogger("sea")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _apply_threads() -> None:
    n = os.environ.get("SEA_THREADS")
    if n:
        torch.set_num_threads(max(1, int(n)))


def load_inputs(interactions, visual, textual, seed):
    ds = D.load_interactions(interactions)
    vis = D.read_matrix(visual)
    txt = D.read_matrix(textual)
    if vis.shape[0] != txt.shape[0]:
        raise ValueError(f"visual has {vis.shape[0]} rows, textual has {txt.shape[0]}")
    ds = D.align_items(ds, vis.shape[0])
    ds = D.split_dataset(ds, seed)
    return ds, D.FeatureMatrix("visual", vis), D.FeatureMatrix("textual", txt)


def write_manifest(out: Path, config: TrainConfig, inputs: dict[str, str], started: float) -> dict:
    outputs = {}
    for p in sorted(out.iterdir()):
        if p.is_file() and p.name != "manifest.json":
            outputs[p.name] = file_digest(p)
    combined = hashlib.sha256("".join(f"{k}:{v}\n" for k, v in outputs.items()).encode()).hexdigest()
    manifest = {
        "config": config.to_dict(),
        "config_digest": config.digest(),
        "inputs": {k: {"path": str(Path(v).resolve()), "sha256": file_digest(v)} for k, v in inputs.items()},
        "outputs": outputs,
        "output_digest": combined,
        "started": started,
        "finished": time.time(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def run_training(config: TrainConfig, interactions, visual, textual, out: Path) -> dict:
    """Train one configuration into ``out``; returns val/test metrics."""
    started = time.time()
    out.mkdir(parents=True, exist_ok=True)
    ds, vis, txt = load_inputs(interactions, visual, textual, config.seed)
    D.save_split(ds, out / "split.csv")
    D.save_id_map(ds, out / "id_map.csv")
    dump_config(config, out / "config.toml")
    log_path = out / "train_log.jsonl"
    log_path.unlink(missing_ok=True)

    trainer = Trainer(ds, vis, txt, config)
    best, _ = trainer.fit(log_path)
    save_checkpoint(trainer.state_checkpoint(), out / "state.seac")
    save_checkpoint(best, out / "checkpoint.seac")
    with (out / "loss_steps.jsonl").open("w") as fh:
        for k, rep in enumerate(trainer.steps, start=1):
            fh.write(rep.to_json(k) + "\n")

    trainer.params.load_tensors(best.param_tensors())
    metrics = {
        "val": trainer.evaluate(D.VAL).to_dict(),
        "test": trainer.evaluate(D.TEST).to_dict(),
        "val_popularity": evaluate_popularity(ds, D.VAL).to_dict(),
        "best_epoch": best.epoch,
        "epochs_run": trainer.epoch,
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    write_manifest(out, config, {"interactions": interactions, "visual": visual, "textual": textual}, started)
    return metrics


def _config_from(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    return cfg.override(args.set or [])


# ------------------------------------------------------------------- commands


def cmd_train(args) -> int:
    cfg = _config_from(args)
    metrics = run_training(cfg, args.interactions, args.visual, args.textual, Path(args.out))
    print(json.dumps({"val": metrics["val"], "test": metrics["test"]}, indent=2, sort_keys=True))
    return EXIT_OK


def restore_run(ckpt_path: Path):
    """Rebuild dataset, graphs and parameters for a trained run directory."""
    run_dir = ckpt_path.parent
    manifest = json.loads((run_dir / "manifest.json").read_text())
    ckpt = load_checkpoint(ckpt_path)
    cfg = load_config(run_dir / "config.toml")
    if ckpt.config_digest != cfg.digest():
        raise CheckpointError(f"checkpoint config digest {ckpt.config_digest} != config.toml digest {cfg.digest()}")
    for name, entry in manifest["inputs"].items():
        digest = file_digest(entry["path"])
        if digest != entry["sha256"]:
            raise CheckpointError(f"{name} input {entry['path']} has digest {digest}, run used {entry['sha256']}")
    inputs = manifest["inputs"]
    base = D.load_interactions(inputs["interactions"]["path"])
    vis = D.FeatureMatrix("visual", D.read_matrix(inputs["visual"]["path"]))
    txt = D.FeatureMatrix("textual", D.read_matrix(inputs["textual"]["path"]))
    base = D.align_items(base, vis.n_items)
    ds = D.load_split(run_dir / "split.csv", base)
    trainer = Trainer(ds, vis, txt, cfg, Graphs.build(ds, vis, txt, cfg.knn_k))
    trainer.params.load_tensors(ckpt.param_tensors())
    return trainer


def cmd_eval(args) -> int:
    ks = tuple(int(k) for k in args.k.split(","))
    trainer = restore_run(Path(args.checkpoint))
    split = D.VAL if args.split == "val" else D.TEST
    E_u, E_i = trainer.embeddings()
    table = evaluate(E_u, E_i, trainer.ds, split, ks)
    print(table.to_text())
    print(table.to_json())
    return EXIT_OK


def cmd_export(args) -> int:
    trainer = restore_run(Path(args.checkpoint))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    E_u, E_i = trainer.embeddings()
    D.write_matrix(out / "users.seaf", E_u)
    D.write_matrix(out / "items.seaf", E_i)
    D.save_id_map(trainer.ds, out / "id_map.csv")
    print(f"wrote {E_u.shape} user and {E_i.shape} item embeddings to {out}")
    return EXIT_OK


def cmd_graph(args) -> int:
    feats = D.read_matrix(args.features)
    graph = build_item_graph(feats, args.k)
    graph.dump_csv(args.out)
    print(f"{graph.n_rows} items, {graph.nnz} edges -> {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.what == "theorem1":
        res = verify_angles(args.dim, args.samples, args.seed)
        if args.histogram:
            st = sample_angle_distribution(args.dim, args.samples, np.random.default_rng(args.seed))
            with open(args.histogram, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["left", "right", "count"])
                for a, b, c in zip(st.bin_edges[:-1], st.bin_edges[1:], st.counts):
                    w.writerow([a, b, c])
    elif args.what == "variance":
        res = verify_variance()
    elif args.what == "distancing":
        res = verify_distancing(args.rho if args.rho > 0 else 0.9, args.seed)
    else:
        res = verify_club(args.rho, args.samples, args.steps, args.seed)
    print(json.dumps(res, indent=2, default=float))
    if not res["passed"]:
        failed = [k for k, ok in res["checks"].items() if not ok]
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def parse_grid(items: list[str]) -> dict[str, list[str]]:
    grid = {}
    for item in items:
        key, sep, vals = item.partition("=")
        values = [v for v in vals.split(",") if v.strip()]
        if not sep or not values:
            raise ValueError(f"bad grid entry {item!r}")
        grid[key.strip()] = values
    return grid


def cmd_sweep(args) -> int:
    base = _config_from(args)
    grid = parse_grid(args.grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(grid)
    rows = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cfg = base.override([f"{k}={v}" for k, v in zip(keys, combo)])
        point = out / "points" / cfg.digest()[:16]
        manifest = point / "manifest.json"
        if manifest.exists() and json.loads(manifest.read_text()).get("config_digest") == cfg.digest():
            log.info("skipping completed point %s", point.name)
            metrics = json.loads((point / "metrics.json").read_text())
        else:
            metrics = run_training(cfg, args.interactions, args.visual, args.textual, point)
        row = dict(zip(keys, combo))
        row.update({f"val_{k.replace('@', '')}": v for k, v in metrics["val"].items() if "@" in k})
        row["digest"] = cfg.digest()[:16]
        rows.append(row)
    rows.sort(key=lambda r: -r["val_recall20"])
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"{len(rows)} grid points -> {out / 'summary.csv'}")
    return EXIT_OK


# --------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dim(value: str) -> int:
    n = int(value)
    if n < 2:
        raise argparse.ArgumentTypeError("dimension must be >= 2")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sea", description="Separate-learning multimodal recommender.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(sp, config_required):
        sp.add_argument("--config", required=config_required)
        sp.add_argument("--interactions", required=True)
        sp.add_argument("--visual", required=True)
        sp.add_argument("--textual", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE")

    tr = sub.add_parser("train", help="train one configuration")
    data_args(tr, True)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a trained checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", choices=("val", "test"), default="test")
    ev.add_argument("--k", default="10,20")
    ev.set_defaults(func=cmd_eval)

    ex = sub.add_parser("export", help="export fused user/item embeddings")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export)

    gr = sub.add_parser("graph", help="build and dump a kNN item graph")
    gr.add_argument("--features", required=True)
    gr.add_argument("--k", type=int, default=10)
    gr.add_argument("--out", required=True)
    gr.set_defaults(func=cmd_graph)

    ve = sub.add_parser("verify", help="theory checks")
    ve.add_argument("what", choices=("theorem1", "variance", "club", "distancing"))
    ve.add_argument("--dim", type=_dim, default=64)
    ve.add_argument("--samples", type=int, default=None)
    ve.add_argument("--rho", type=float, default=0.0)
    ve.add_argument("--steps", type=int, default=1500)
    ve.add_argument("--seed", type=int, default=0)
    ve.add_argument("--histogram", help="write the angle histogram CSV here")
    ve.set_defaults(func=cmd_verify)

    sw = sub.add_parser("sweep", help="grid sweep over config values")
    data_args(sw, False)
    sw.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2,...")
    sw.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _apply_threads()
    if args.command == "sweep" and not args.grid:
        parser.error("sweep needs at least one --grid KEY=V1,V2")
    if args.command == "sweep":
        try:
            parse_grid(args.grid)
        except ValueError as exc:
            parser.error(str(exc))
    if args.command == "verify" and args.samples is None:
        args.samples = 100_000 if args.what == "theorem1" else 10_000
    try:
        return args.func(args)
    except (ValueError, OSError, CheckpointError, FloatingPointError) as exc:
        print(f"sea {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
