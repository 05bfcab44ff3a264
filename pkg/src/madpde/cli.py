"""Command-line experiment driver.

Subcommands cover the full study cycle: ``pretrain`` builds a model
over S1, ``finetune`` adapts it to S2, ``baseline`` runs the
comparison methods over the same S2 with the same evaluation cadence,
``eval`` tabulates any finished run directory, and ``viz`` emits
plot-ready CSV bundles with a rendered figure next to each file.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 I/O error.  All outputs land under the run directory from the config
(or --out); nothing is written elsewhere.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import evaluation, reporting
from .experiment import (
    ConfigError,
    ExperimentConfig,
    latent_free_network,
    load_config,
    sample_s1,
    sample_s2,
    transfer_source_indices,
)
from .network import forward
from .persist import CheckpointMissing, PersistError, WeightsCheckpoint, load, save
from .problems import BurgersBlowupError
from .training import (
    NonFiniteResidualError,
    PretrainedModel,
    RunTrace,
    TrainingDiverged,
    TrainingError,
    finetune,
    from_scratch,
    pretrain,
    reptile_pretrain,
    transfer_learning,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

BASELINES = ("from-scratch", "transfer", "reptile")
VIZ_TARGETS = ("pca", "curves", "fields", "gap")
FIELD_TIMES = (0.0, 0.5, 1.0)


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _final_rel(trace: RunTrace) -> float:
    rel = [r for r in trace.column("relative_l2") if np.isfinite(r)]
    return float(rel[-1]) if rel else float("nan")


def _write_summary(out_dir: str, method: str, traces: list[RunTrace]) -> None:
    finals = [_final_rel(t) for t in traces]
    reporting.write_error_table(os.path.join(out_dir, "summary.csv"), finals)
    report = evaluation.ErrorReport.from_errors(finals)
    reporting.write_ci_summary(os.path.join(out_dir, "ci.csv"),
                               {method: report})


def _load_model(path: str) -> PretrainedModel:
    if path is None:
        raise CliError("this subcommand requires --checkpoint", EXIT_CONFIG)
    obj = load(path)
    if not isinstance(obj, PretrainedModel):
        raise CliError(f"{path} does not hold a pre-trained model",
                       EXIT_CONFIG)
    return obj


def _check_family(model: PretrainedModel, config: ExperimentConfig) -> None:
    if model.family != config.kind:
        raise CliError(
            f"checkpoint family {model.family!r} does not match "
            f"config family {config.kind!r}", EXIT_CONFIG)


def cmd_pretrain(config: ExperimentConfig, args) -> int:
    out = os.path.join(config.out, "pretrain")
    os.makedirs(out, exist_ok=True)
    instances = sample_s1(config)
    overrides = {"strict": args.strict}
    if args.seed is not None:
        overrides["seed"] = args.seed
    tc = config.train_config(**overrides)
    model, trace = pretrain(tc, instances)
    save(model, os.path.join(out, "checkpoint.ckpt"))
    trace.write_csv(os.path.join(out, "trace.csv"))
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(model.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"pretrain: {len(instances)} tasks, {tc.iterations} iterations, "
          f"final mean relative L2 {_final_rel(trace):.4g}")
    print(f"checkpoint: {os.path.join(out, 'checkpoint.ckpt')}")
    return EXIT_OK


def cmd_finetune(config: ExperimentConfig, args) -> int:
    model = _load_model(args.checkpoint)
    _check_family(model, config)
    mode = args.mode or config.finetune.get("mode", config.train.get("mode", "mad-lm"))
    out = os.path.join(config.out, f"finetune-{mode}")
    os.makedirs(out, exist_ok=True)
    tasks = sample_s2(config)
    theta_before = model.weights.theta_bytes()
    traces = []
    for i, inst in enumerate(tasks):
        overrides = {"mode": mode, "seed": config.finetune_seed + i,
                     "strict": args.strict}
        if args.seed is not None:
            overrides["seed"] = args.seed + i
        fc = config.finetune_config(**overrides)
        weights, z, trace = finetune(fc, model, inst)
        if mode == "mad-l" and weights.theta_bytes() != theta_before:
            raise TrainingError("mad-l moved the decoder weights")
        trace.write_csv(os.path.join(out, f"task-{i:03d}.csv"))
        traces.append(trace)
        print(f"task {i:03d}: final relative L2 {_final_rel(trace):.4g}")
    _write_summary(out, mode, traces)
    return EXIT_OK


def cmd_baseline(config: ExperimentConfig, args) -> int:
    which = args.which
    out = os.path.join(config.out, f"baseline-{which}")
    os.makedirs(out, exist_ok=True)
    tasks = sample_s2(config)
    twin = latent_free_network(config.network)
    base_seed = args.seed if args.seed is not None else config.finetune_seed
    traces = []

    if which == "from-scratch":
        if args.checkpoint is not None:
            print("warning: from-scratch ignores --checkpoint", file=sys.stderr)
        for i, inst in enumerate(tasks):
            fc = config.finetune_config(network=twin, mode="mad-lm",
                                        seed=base_seed + i, strict=args.strict)
            _, trace = from_scratch(fc, inst)
            trace.write_csv(os.path.join(out, f"task-{i:03d}.csv"))
            traces.append(trace)
            print(f"task {i:03d}: final relative L2 {_final_rel(trace):.4g}")
    elif which == "transfer":
        sources = sample_s1(config)
        picks = transfer_source_indices(config)
        for i, inst in enumerate(tasks):
            fc = config.finetune_config(
                network=twin, mode="mad-lm", seed=base_seed + i,
                source_iterations=config.train.get("iterations", 1000),
                strict=args.strict)
            _, trace = transfer_learning(fc, sources[picks[i]], inst)
            trace.write_csv(os.path.join(out, f"task-{i:03d}.csv"))
            traces.append(trace)
            print(f"task {i:03d}: source S1[{picks[i]}], "
                  f"final relative L2 {_final_rel(trace):.4g}")
    else:
        meta_sources = sample_s1(config)
        mc = config.train_config(network=twin, strict=args.strict)
        meta_weights, meta_trace = reptile_pretrain(mc, meta_sources)
        save(WeightsCheckpoint(meta_weights, {"method": "reptile"}),
             os.path.join(out, "meta.ckpt"))
        meta_trace.write_csv(os.path.join(out, "meta-trace.csv"))
        for i, inst in enumerate(tasks):
            fc = config.finetune_config(network=twin, mode="mad-lm",
                                        seed=base_seed + i, strict=args.strict)
            _, trace = from_scratch(fc, inst, initial_weights=meta_weights.copy())
            trace.write_csv(os.path.join(out, f"task-{i:03d}.csv"))
            traces.append(trace)
            print(f"task {i:03d}: final relative L2 {_final_rel(trace):.4g}")

    _write_summary(out, which, traces)
    return EXIT_OK


def _method_dirs(run_dir: str) -> dict:
    out = {}
    try:
        entries = sorted(os.listdir(run_dir))
    except OSError as exc:
        raise CliError(f"cannot read run directory {run_dir}: {exc}", EXIT_IO)
    for name in entries:
        full = os.path.join(run_dir, name)
        if not os.path.isdir(full) or name in ("pretrain", "viz", "eval"):
            continue
        tasks = sorted(f for f in os.listdir(full)
                       if f.startswith("task-") and f.endswith(".csv"))
        if tasks:
            out[name] = [os.path.join(full, f) for f in tasks]
    return out


def cmd_eval(config: ExperimentConfig, args) -> int:
    run_dir = config.out
    methods = _method_dirs(run_dir)
    if not methods:
        raise CliError(f"no per-task traces under {run_dir}", EXIT_IO)
    out = os.path.join(run_dir, "eval")
    os.makedirs(out, exist_ok=True)
    rows = []
    reports = {}
    for method, files in methods.items():
        finals = []
        for i, path in enumerate(files):
            trace = RunTrace.read_csv(path)
            final = _final_rel(trace)
            hit = evaluation.iterations_to_threshold(trace, args.threshold)
            rows.append((method, i, final, "" if hit is None else hit))
            finals.append(final)
        reports[method] = evaluation.ErrorReport.from_errors(finals)
    reporting.write_rows(
        os.path.join(out, "report.csv"),
        ("method", "task", "final_relative_l2", "iterations_to_threshold"),
        rows)
    reporting.write_ci_summary(os.path.join(out, "summary.csv"), reports)
    for method, report in reports.items():
        print(f"{method}: mean relative L2 {report.mean:.4g} "
              f"+/- {report.ci_half_width:.4g}")
    return EXIT_OK


def _viz_pca(config: ExperimentConfig, args, out: str) -> None:
    model = _load_model(args.checkpoint)
    _check_family(model, config)
    instances = sample_s1(config)
    exact, decoded = [], []
    for inst, z in zip(instances, model.bank.latents):
        pts, vals = inst.eval_grid()
        exact.append(vals.ravel())
        decoded.append(forward(model.weights, pts, z).ravel())
    samples = np.vstack(exact + decoded)
    labels = ["exact"] * len(exact) + ["decoded"] * len(decoded)
    proj = evaluation.pca_project(samples, labels)
    reporting.write_pca(os.path.join(out, "pca.csv"), proj.coords[:, :2],
                        labels, proj.explained)


def _viz_curves(config: ExperimentConfig, args, out: str) -> None:
    methods = _method_dirs(config.out)
    wanted = f"task-{args.task:03d}.csv"
    traces = {}
    for method, files in methods.items():
        for path in files:
            if os.path.basename(path) == wanted:
                traces[method] = RunTrace.read_csv(path)
    if not traces:
        raise CliError(f"no traces named {wanted} under {config.out}", EXIT_IO)
    reporting.write_curves(os.path.join(out, "curves.csv"), traces)


def _viz_fields(config: ExperimentConfig, args, out: str) -> None:
    if config.kind != "burgers":
        raise CliError("viz fields applies to the burgers family",
                       EXIT_CONFIG)
    model = _load_model(args.checkpoint)
    _check_family(model, config)
    instances = sample_s1(config)
    if not 0 <= args.task < len(instances):
        raise CliError(f"--task must lie in [0, {len(instances) - 1}]",
                       EXIT_CONFIG)
    inst = instances[args.task]
    z = model.bank.latents[args.task]
    x = np.linspace(0.0, 1.0, 257)
    slices = {}
    for t in FIELD_TIMES:
        pts = np.column_stack([x, np.full_like(x, t)])
        ref = inst.reference(pts)
        pred = forward(model.weights, pts, z).ravel()
        slices[t] = (x, ref, pred)
    reporting.write_fields(os.path.join(out, "fields.csv"), slices)


def _viz_gap(config: ExperimentConfig, args, out: str) -> None:
    model = _load_model(args.checkpoint)
    _check_family(model, config)
    tasks = sample_s2(config)
    if not tasks:
        raise CliError("viz gap needs s2 > 0", EXIT_CONFIG)
    rows = []
    for budget in (max(args.gap_budget // 4, 1), args.gap_budget):
        fields, grid = [], None
        for inst in tasks:
            pts, vals = inst.eval_grid()
            # dense space-time grids are overkill for the gap estimate
            step = max(1, len(vals) // 4096)
            grid = pts[::step]
            fields.append(vals[::step])
        gaps = evaluation.empirical_manifold_gap(
            model.weights, model.weights.config.latent_dim, fields, grid,
            iterations=budget)
        rows.extend((f"task-{i:03d}", budget, g) for i, g in enumerate(gaps))
    reporting.write_gap_table(os.path.join(out, "gap.csv"), rows)


def cmd_viz(config: ExperimentConfig, args) -> int:
    out = os.path.join(config.out, "viz")
    os.makedirs(out, exist_ok=True)
    handler = {"pca": _viz_pca, "curves": _viz_curves,
               "fields": _viz_fields, "gap": _viz_gap}[args.what]
    handler(config, args, out)
    print(f"viz {args.what}: wrote bundle under {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="madpde",
        description="Meta-learned PDE solver experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment YAML")
        p.add_argument("--checkpoint", default=None,
                       help="pre-trained model file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the stage seed")
        p.add_argument("--strict", action="store_true",
                       help="bit-reproducible outputs")
        p.add_argument("--out", default=None,
                       help="override the run directory")

    common(sub.add_parser("pretrain", help="train decoder and latents on S1"))
    p = sub.add_parser("finetune", help="adapt a checkpoint to S2")
    common(p)
    p.add_argument("--mode", choices=["mad-l", "mad-lm"], default=None)
    p = sub.add_parser("baseline", help="run a comparison method over S2")
    common(p)
    p.add_argument("--which", choices=list(BASELINES), required=True)
    p = sub.add_parser("eval", help="tabulate a finished run directory")
    common(p)
    p.add_argument("--threshold", type=float, default=0.1,
                   help="iterations-to-threshold target")
    p = sub.add_parser("viz", help="emit plot-ready CSV bundles")
    common(p)
    p.add_argument("--what", choices=list(VIZ_TARGETS), required=True)
    p.add_argument("--task", type=int, default=0,
                   help="task index for curves and fields")
    p.add_argument("--gap-budget", type=int, default=400,
                   help="optimization budget for the gap table")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.out is not None:
            config = dataclasses.replace(config, out=args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

    handler = {"pretrain": cmd_pretrain, "finetune": cmd_finetune,
               "baseline": cmd_baseline, "eval": cmd_eval,
               "viz": cmd_viz}[args.command]
    try:
        return handler(config, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, NonFiniteResidualError, BurgersBlowupError) as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointMissing, PersistError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
