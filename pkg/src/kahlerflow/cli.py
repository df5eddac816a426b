"""Command-line entry point: train, sample, diagnose, verify, surgery-demo, dump-dataset.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from kahlerflow.continuous import ContinuousFlow
from kahlerflow.datasets import (GENERATORS, Dataset, complexify, make_dataset, realify,
                                 sample_complex_gaussian, standardization, standardize, write_csv)
from kahlerflow.diagnostics import (histogram_density, holomorphy_probe, kahler_curvature_map,
                                    render_heatmap, score_curvature_proxy, write_field_csv)
from kahlerflow.flow import FlowStack
from kahlerflow.grids import Grid, d1
from kahlerflow.krf_lab import singularity_monitor
from kahlerflow.layers import CouplingLayer
from kahlerflow.training import TrainConfig, nll_loss, train
from kahlerflow.verify import run_suite, worker_count, write_results_csv

log = logging.getLogger("kahlerflow")

MANIFEST = "manifest.json"
FAILED = ".failed"

RUN_KEYS = {"n": 4000, "data_seed": 7, "layers": 8, "hidden": None, "steps": 16,
            "standardize": True, "eval_every": 50}


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Artifacts:
    """Tracks emitted files; ``finish`` writes manifest.json last."""

    def __init__(self, root: Path, config: dict):
        self.root = root
        self.config = config
        self.files: list[Path] = []
        root.mkdir(parents=True, exist_ok=True)
        for stale in (root / FAILED, root / MANIFEST):
            if stale.exists():
                stale.unlink()

    def path(self, name) -> Path:
        p = self.root / name
        self.files.append(p)
        return p

    def add(self, p: Path) -> Path:
        self.files.append(Path(p))
        return Path(p)

    def finish(self):
        entries = []
        for p in sorted(set(self.files)):
            rel = os.path.relpath(p, self.root)
            entries.append({"path": rel, "sha256": sha256(p)})
        with open(self.root / MANIFEST, "w") as fh:
            json.dump({"config": self.config, "files": entries}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def fail(self, reason: str):
        with open(self.root / FAILED, "w") as fh:
            fh.write(reason + "\n")


def load_json(path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return data


def split_config(raw: dict):
    """Split a run config into (TrainConfig, run options); unknown keys are rejected."""
    train_keys = {f.name for f in fields(TrainConfig)}
    unknown = set(raw) - train_keys - set(RUN_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg = TrainConfig.from_dict({k: v for k, v in raw.items() if k in train_keys})
    opts = dict(RUN_KEYS)
    opts.update({k: v for k, v in raw.items() if k in RUN_KEYS})
    return cfg, opts


def load_model(path):
    data = load_json(path)
    kind = data.get("kind")
    if kind == "discrete":
        model = FlowStack.from_dict(data)
    elif kind == "continuous":
        model = ContinuousFlow.from_dict(data)
    else:
        raise ValueError(f"{path}: unknown checkpoint kind {kind!r}")
    std = data.get("standardization")
    mean = np.array(std["mean"], dtype=float) if std else None
    scale = np.array(std["scale"], dtype=float) if std else None
    return model, mean, scale


def cmd_train(args):
    cfg, opts = split_config(load_json(args.config) if args.config else {})
    out = Path(args.out).resolve()
    losscsv = Path(args.losscsv).resolve() if args.losscsv else out.with_suffix(".loss.csv")
    config = {"command": "train", "dataset": args.dataset, "flow": args.flow, "out": str(out),
              "losscsv": str(losscsv), "train": cfg.to_dict(), **opts}
    art = Artifacts(out.parent, config)
    try:
        data = make_dataset(args.dataset, opts["n"], seed=opts["data_seed"])
        mean, scale = standardization(data) if opts["standardize"] else (None, None)
        if opts["standardize"]:
            data = standardize(data, mean, scale)
        if args.flow == "discrete":
            model = FlowStack.init(opts["layers"], opts["hidden"] or 8, seed=cfg.seed)
        else:
            model = ContinuousFlow.init(2, opts["hidden"] or 16, cfg.seed, opts["steps"])
        rows = []
        every = max(1, int(opts["eval_every"]))

        def record(epoch, loss):
            full = nll_loss(model, data) if (epoch % every == 0 or epoch == cfg.epochs - 1) else None
            rows.append((epoch, loss, full))
            if full is not None:
                log.info("epoch %d train nll %.6f", epoch, full)

        train(model, data, cfg, record)
        ckpt = model.to_dict()
        ckpt["dataset"] = args.dataset
        ckpt["train_config"] = cfg.to_dict()
        if mean is not None:
            ckpt["standardization"] = {"mean": [float(m) for m in mean], "scale": [float(s) for s in scale]}
        with open(art.add(out), "w") as fh:
            json.dump(ckpt, fh)
        losscsv.parent.mkdir(parents=True, exist_ok=True)
        with open(art.add(losscsv), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "batch_nll", "train_nll"])
            for epoch, loss, full in rows:
                w.writerow([epoch, repr(float(loss)), "" if full is None else repr(float(full))])
    except BaseException as exc:
        art.fail(f"{type(exc).__name__}: {exc}")
        raise
    art.finish()


def cmd_sample(args):
    model, mean, scale = load_model(args.checkpoint)
    out = Path(args.out).resolve()
    art = Artifacts(out.parent, {"command": "sample", "checkpoint": str(Path(args.checkpoint).resolve()),
                                 "n": args.n, "seed": args.seed, "out": str(out)})
    try:
        if args.n <= 0:
            raise ValueError("--n must be positive")
        pts = model.sample(args.n, args.seed).points
        if mean is not None:
            pts = complexify(realify(pts) * scale + mean)
        write_csv(Dataset(pts, "flow_sample", args.seed), art.add(out))
    except BaseException as exc:
        art.fail(f"{type(exc).__name__}: {exc}")
        raise
    art.finish()


def cmd_diagnose(args):
    if args.grid < 5:
        raise ValueError("--grid must be at least 5")
    model, mean, scale = load_model(args.checkpoint)
    out = Path(args.out).resolve()
    config = {"command": "diagnose", "checkpoint": str(Path(args.checkpoint).resolve()),
              "dataset": args.dataset, "grid": args.grid, "sigma": args.sigma, "n": args.n,
              "seed": args.seed, "coord": args.coord, "half_width": args.half_width}
    art = Artifacts(out, config)
    try:
        if args.dataset not in GENERATORS:
            raise ValueError(f"unknown dataset {args.dataset!r}")
        grid = Grid.square(args.grid, args.half_width)
        samples = model.sample(args.n, args.seed)
        dens = histogram_density(samples, grid, args.sigma, args.coord)
        data = make_dataset(args.dataset, args.n, seed=args.seed)
        if mean is not None:
            data = standardize(data, mean, scale)
        data_dens = histogram_density(data, grid, args.sigma, args.coord)
        kahler = kahler_curvature_map(dens)
        proxy = score_curvature_proxy(dens)
        for name, obj, fld in (("density", dens, dens.p), ("data_density", data_dens, data_dens.p),
                               ("kahler_R", kahler, kahler.values), ("score_proxy", proxy, proxy.values)):
            cols = {name: fld} if name.endswith("density") else {"value": fld, "raw": obj.raw}
            write_field_csv(grid, cols, art.path(f"{name}.csv"))
            render_heatmap(obj, art.path(f"{name}.png"))
        with np.errstate(divide="ignore"):
            phi = -np.log(np.where(dens.p > 1e-12, dens.p, np.nan))
        write_field_csv(grid, {"dphi_dx": d1(phi, 0, grid.spacing), "dphi_dy": d1(phi, 1, grid.spacing)},
                        art.path("potential_gradient.csv"))
        if isinstance(model, FlowStack):
            for st in holomorphy_probe(model, args.n, args.seed):
                with open(art.path(f"holomorphy_layer_{st.layer}.csv"), "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["dz_norm", "dzbar_norm"])
                    w.writerows([repr(float(a)), repr(float(b))] for a, b in zip(st.dz_norm, st.dzbar_norm))
    except BaseException as exc:
        art.fail(f"{type(exc).__name__}: {exc}")
        raise
    art.finish()


def cmd_verify(args):
    out = Path(args.out).resolve()
    art = Artifacts(out, {"command": "verify", "suite": args.suite, "workers": worker_count()})
    try:
        results = run_suite(args.suite)
        for r in results:
            print(r.line())
        write_results_csv(results, art.path("verify.csv"))
    except BaseException as exc:
        art.fail(f"{type(exc).__name__}: {exc}")
        raise
    art.finish()
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise ChecksFailed("failed checks: " + ", ".join(failed))


class ChecksFailed(ArithmeticError):
    pass


def cmd_surgery_demo(args):
    out = Path(args.out).resolve()
    art = Artifacts(out, {"command": "surgery-demo", "layer": args.layer, "seed": args.seed,
                          "det_floor": args.det_floor, "n": args.n})
    try:
        stack = FlowStack.init(8, seed=args.seed)
        if not 0 <= args.layer < len(stack):
            raise ValueError("--layer out of range")
        stack.layers[args.layer] = CouplingLayer.constant(-30.0, 0.1, parity=args.layer % 2, clamp=None)
        event = singularity_monitor(stack, sample_complex_gaussian(args.n, 2, args.seed), args.det_floor)
        if event is None:
            raise ArithmeticError("no collapse detected")
        g = event.grid
        write_field_csv(g, {"logq": event.logq, "density": np.exp(event.logq)}, art.path("before.csv"))
        write_field_csv(g, {"density": event.rescued.p, "phi": event.phi, "metric": event.metric},
                        art.path("after.csv"))
        with open(art.path("event.json"), "w") as fh:
            json.dump({"trigger_layer": event.trigger_layer, "det_floor": event.det_floor,
                       "mean_det": event.mean_det, "rescued_Z": event.rescued_Z, "sigma": event.sigma},
                      fh, indent=2, sort_keys=True)
    except BaseException as exc:
        art.fail(f"{type(exc).__name__}: {exc}")
        raise
    art.finish()


def cmd_dump_dataset(args):
    out = Path(args.out).resolve()
    art = Artifacts(out.parent, {"command": "dump-dataset", "dataset": args.dataset, "n": args.n,
                                 "seed": args.seed, "standardize": args.standardize, "out": str(out)})
    try:
        ds = make_dataset(args.dataset, args.n, seed=args.seed)
        if args.standardize:
            ds = standardize(ds)
        write_csv(ds, art.add(out))
    except BaseException as exc:
        art.fail(f"{type(exc).__name__}: {exc}")
        raise
    art.finish()


def build_parser():
    p = Parser(prog="kahlerflow", description="Complex normalizing flows and Kähler-geometric diagnostics.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a flow by maximum likelihood")
    t.add_argument("--dataset", required=True, choices=sorted(GENERATORS))
    t.add_argument("--flow", default="discrete", choices=["discrete", "continuous"])
    t.add_argument("--config", help="JSON run config (TrainConfig keys plus n, data_seed, layers, ...)")
    t.add_argument("--out", required=True, help="checkpoint JSON path")
    t.add_argument("--losscsv", help="loss curve CSV path")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="CSV path")
    s.set_defaults(func=cmd_sample)

    d = sub.add_parser("diagnose", help="density, curvature maps and holomorphy probes")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--dataset", required=True)
    d.add_argument("--grid", type=int, default=100)
    d.add_argument("--sigma", type=float, default=1.0)
    d.add_argument("--n", type=int, default=5000)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--coord", type=int, default=0, choices=[0, 1])
    d.add_argument("--half-width", type=float, default=3.0)
    d.add_argument("--out", required=True, help="output directory")
    d.set_defaults(func=cmd_diagnose)

    v = sub.add_parser("verify", help="run the identity/acceptance checks")
    v.add_argument("--suite", default="identities", choices=["identities", "training", "all"])
    v.add_argument("--out", default="verify_out", help="output directory")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("surgery-demo", help="force a layer collapse and rescue it")
    g.add_argument("--layer", type=int, default=3)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--n", type=int, default=500)
    g.add_argument("--det-floor", type=float, default=1e-12)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_surgery_demo)

    x = sub.add_parser("dump-dataset", help="write a dataset as CSV (re1,im1,re2,im2)")
    x.add_argument("--dataset", required=True, choices=sorted(GENERATORS))
    x.add_argument("--n", type=int, default=4000)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--standardize", action="store_true")
    x.add_argument("--out", required=True, help="CSV path")
    x.set_defaults(func=cmd_dump_dataset)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        with np.errstate(over="ignore", under="ignore"):
            args.func(args)
    except ArithmeticError as exc:
        print(f"kahlerflow: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"kahlerflow: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
