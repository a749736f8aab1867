"""Command-line interface.

Subcommands mirror the experiment stages plus a few standalone tools:

    cflow datasets export --name circles --n 1000 --seed 7 --out pts.csv
    cflow train   --config exp.yaml            # learn pipeline
    cflow unlearn --config exp.yaml            # energy-reweighted unlearning
    cflow refit   --config exp.yaml            # OT refit onto the retain set
    cflow sweep   --config exp.yaml            # lambda grid of unlearn runs
    cflow invert  --config exp.yaml            # inverted-energy retraining
    cflow sample  --ckpt ckpt.bin --n 1000 --steps 10 --out samples.csv
    cflow traj    --ckpt ckpt.bin --snapshots 5 --out traj.csv
    cflow energy eval --spec energy.yaml --points pts.csv --out scored.csv
    cflow eval run --ckpt ckpt.bin --dataset circles --classifier clf.bin --out report.csv
    cflow report  --runs runs/exp1 runs/exp2 --out consolidated.csv

Common flags: --seed and --out override the config where they apply.
Exit status: 0 on success, 2 for configuration errors, 3 for missing
dependencies, 4 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np
import yaml

from . import datasets as ds
from . import energy as en
from . import flow
from . import harness
from . import metrics as me
from .diffcore import CheckpointError, load_mlp


def _load_spec(args, force_pipeline: str | None = None) -> harness.ExperimentSpec:
    spec = harness.load_spec(args.config)
    overrides = {}
    if force_pipeline is not None:
        overrides["pipeline"] = force_pipeline
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if overrides:
        data = spec.to_dict()
        data.update(overrides)
        spec = harness.spec_from_dict(data)
    return spec


def _cmd_datasets(args) -> int:
    data = ds.generate(args.name, args.n, args.seed if args.seed is not None else 0)
    ds.export_csv(data, args.out)
    print(f"wrote {len(data)} points to {args.out}")
    return 0


def _run_pipeline(args, pipeline: str) -> int:
    spec = _load_spec(args, force_pipeline=pipeline)
    artifact = harness.run(spec)
    artifacts = artifact if isinstance(artifact, list) else [artifact]
    for art in artifacts:
        print(f"stage {art.stage}: artifacts in {art.stage_dir}")
    return 0


def _cmd_sample(args) -> int:
    model = flow.load_model(args.ckpt)
    pts = model.sample(args.n, n_steps=args.steps, seed=args.seed if args.seed is not None else 0)
    with Path(args.out).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y"])
        for x, y in pts:
            writer.writerow([repr(float(x)), repr(float(y))])
    print(f"wrote {len(pts)} samples to {args.out}")
    return 0


def _cmd_traj(args) -> int:
    model = flow.load_model(args.ckpt)
    seed = args.seed if args.seed is not None else 0
    x0 = model.base_states(args.n, seed=seed, n_steps=args.steps)
    snaps = flow.trajectory(model, x0, args.steps, args.snapshots)
    with Path(args.out).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["snapshot_index", "t", "x", "y"])
        for idx, (t, batch) in enumerate(snaps):
            for x, y in batch:
                writer.writerow([idx, repr(float(t)), repr(float(x)), repr(float(y))])
    print(f"wrote {len(snaps)} snapshots to {args.out}")
    return 0


def _cmd_energy_eval(args) -> int:
    with Path(args.spec).open() as fh:
        raw = yaml.safe_load(fh)
    allowed = {"kind", "lam", "sharpness", "benchmark", "classifier_ckpt"}
    unknown = set(raw) - allowed
    if unknown:
        raise harness.ConfigError(f"unknown energy spec keys: {sorted(unknown)}")
    lam = float(raw.get("lam", 5.0))
    if raw.get("kind", "analytic") == "classifier":
        net, kind = load_mlp(raw["classifier_ckpt"])
        if not kind.startswith("classifier"):
            raise harness.ConfigError(f"{args.spec}: checkpoint kind {kind!r} is not a classifier")
        clf = en.BinaryClassifier(net=net, trained_on=kind, trained=True)
        spec = en.from_classifier(clf, lam)
    else:
        spec = en.RegionEnergy(
            raw["benchmark"], lam, sharpness=float(raw.get("sharpness", en.DEFAULT_SHARPNESS))
        )
    points, _ = ds.load_csv(args.points)
    values = spec.evaluate(points)
    weights = spec.weight(points)
    with Path(args.out).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "F", "weight"])
        for (x, y), f, w in zip(points, values, weights):
            writer.writerow([repr(float(x)), repr(float(y)), repr(float(f)), repr(float(w))])
    print(f"scored {len(points)} points into {args.out}")
    return 0


def _cmd_eval_run(args) -> int:
    model = flow.load_model(args.ckpt)
    net, kind = load_mlp(args.classifier)
    if not kind.startswith("classifier"):
        raise harness.ConfigError(f"checkpoint kind {kind!r} is not a classifier")
    clf = en.BinaryClassifier(net=net, trained_on=args.dataset, trained=True)
    inference_ms, _ = me.measure_inference_ms(model, repeats=2)
    rows = [
        me.evaluate_model(
            model,
            args.dataset,
            clf,
            n_eval=args.n,
            eval_seed=s,
            method=args.method,
            inference_ms=inference_ms,
        )
        for s in args.seeds
    ]
    harness.write_report_csv(Path(args.out), rows)
    print(f"wrote {len(rows)} report rows to {args.out}")
    return 0


def _cmd_report(args) -> int:
    rows = []
    for root in args.runs:
        found = sorted(Path(root).rglob("report.csv"))
        if not found:
            raise harness.HarnessError(f"no report.csv under {root}")
        for path in found:
            rows.extend(harness.read_report_csv(path))
    aggregated = harness.report(rows)
    harness.write_consolidated(Path(args.out), aggregated)
    md = harness.format_markdown(aggregated)
    md_path = Path(args.out).with_suffix(".md")
    md_path.write_text(md)
    print(md)
    print(f"wrote {args.out} and {md_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=False):
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=str, default=None, help="override the output path")
        if config:
            p.add_argument("--config", type=str, required=True, help="experiment YAML")

    p = sub.add_parser("datasets", help="benchmark dataset tools")
    dsub = p.add_subparsers(dest="verb", required=True)
    p_exp = dsub.add_parser("export", help="write a labeled sample as CSV")
    p_exp.add_argument("--name", required=True, choices=ds.BENCHMARKS)
    p_exp.add_argument("--n", type=int, required=True)
    p_exp.add_argument("--seed", type=int, default=0)
    p_exp.add_argument("--out", required=True)
    p_exp.set_defaults(func=_cmd_datasets)

    for cmd, pipeline in [
        ("train", "learn"),
        ("unlearn", "unlearn-erfm"),
        ("refit", "refit-ot"),
        ("finetune", "finetune"),
        ("retrain", "retrain"),
        ("sweep", "sweep-lambda"),
        ("invert", "invert"),
    ]:
        p = sub.add_parser(cmd, help=f"run the {pipeline} pipeline")
        add_common(p, config=True)
        p.set_defaults(func=lambda a, pl=pipeline: _run_pipeline(a, pl))

    p = sub.add_parser("sample", help="generate points from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("traj", help="integration snapshots for plotting")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--snapshots", type=int, default=5)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_traj)

    p = sub.add_parser("energy", help="energy field tools")
    esub = p.add_subparsers(dest="verb", required=True)
    p_ev = esub.add_parser("eval", help="score points with an energy spec")
    p_ev.add_argument("--spec", required=True, help="energy YAML (kind, lam, ...)")
    p_ev.add_argument("--points", required=True, help="CSV with x,y columns")
    p_ev.add_argument("--out", required=True)
    p_ev.set_defaults(func=_cmd_energy_eval)

    p = sub.add_parser("eval", help="metrics tools")
    msub = p.add_subparsers(dest="verb", required=True)
    p_run = msub.add_parser("run", help="evaluate a checkpoint against a benchmark")
    p_run.add_argument("--ckpt", required=True)
    p_run.add_argument("--dataset", required=True, choices=ds.BENCHMARKS)
    p_run.add_argument("--classifier", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--n", type=int, default=1000)
    p_run.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p_run.add_argument("--method", default="eval")
    p_run.set_defaults(func=_cmd_eval_run)

    p = sub.add_parser("report", help="consolidate run reports into one table")
    p.add_argument("--runs", nargs="+", required=True, help="run directories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except harness.DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return 3
    except (harness.HarnessError, CheckpointError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
