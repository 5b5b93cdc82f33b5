"""Command-line experiment harness.

Verbs: model-check, testset, sensitivity, generate, simulate, select,
calibrate, study, report. All take --config (YAML) plus optional --seed,
--out and --jobs overrides. Exit codes: 0 success, 1 config error, 2 runtime
failure (partial results are flushed where possible).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .estimation import ParameterVector
from .experiments import ConfigError, ExperimentConfig, load_experiment_config
from .measurement import TASK, Measurement, stacked_jacobian
from .models import load_hand_config
from .oed import CandidatePool, select_detmax, select_greedy, select_random
from .sampling import (
    load_dataset,
    load_trajectories,
    save_dataset,
    save_trajectories,
    simulate_contacts,
    uniform_task_test_set,
)


def _config_from_args(args) -> ExperimentConfig:
    src = args.config if args.config else {}
    return load_experiment_config(src, seed=args.seed, output_dir=args.out,
                                  jobs=args.jobs)


def cmd_model_check(args) -> int:
    cfg = _config_from_args(args)
    doc = experiments.run_model_check(cfg)
    print(f"model {doc['model']}: {doc['n_parameters']} parameters, "
          f"{doc['n_active_joints']} active joints, ok={doc['ok']}")
    return 0 if doc["ok"] else 2


def cmd_testset(args) -> int:
    cfg = _config_from_args(args)
    model = load_hand_config(cfg.model)
    testset = uniform_task_test_set(
        model.tree, cfg.testset_n, cfg.testset_cell,
        np.random.default_rng(experiments._seed_seq(cfg, 0)), cfg.testset_pool)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(out / "testset.jsonl", [Measurement(TASK, q) for q in testset.Q])
    print(f"wrote {len(testset)} test configurations to {out / 'testset.jsonl'}")
    return 0


def cmd_sensitivity(args) -> int:
    cfg = _config_from_args(args)
    doc = experiments.run_sensitivity(cfg)
    for name, mdoc in doc["models"].items():
        for mode, entry in mdoc["modes"].items():
            c, t = entry["contact"], entry["task"]
            inc = entry["kernel_inclusion"]["passes"]
            print(f"{name} {mode}: contact {c['n_identifiable']}/{c['n_parameters']}, "
                  f"task {t['n_identifiable']}/{t['n_parameters']}, inclusion={inc}")
    return 0


def cmd_generate(args) -> int:
    cfg = _config_from_args(args)
    model = load_hand_config(cfg.model)
    trajs = experiments.plan_all_trajectories(cfg, model)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_trajectories(out / "trajectories.jsonl", trajs)
    print(f"wrote {len(trajs)} search trajectories to {out / 'trajectories.jsonl'}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    model = load_hand_config(cfg.model)
    tree = model.tree
    trajs = load_trajectories(args.trajectories)
    if args.nominal:
        gt_values = tree.parameter_values()
    else:
        gt_values = experiments.perturb_parameters(
            tree, math.radians(cfg.perturb_rot_deg), cfg.perturb_trans_mm * 1e-3,
            experiments._rng(cfg, 2, args.model_index, 0))
    tree_gt = tree.with_parameters(gt_values)
    sigma = cfg.study_noise_contact if not args.nominal else 0.0
    events = simulate_contacts(trajs, tree_gt, sigma,
                               experiments._seed_seq(cfg, 2, args.model_index, 1))
    ok = [e.to_measurement() for e in events if e is not None]
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(out / "dataset.jsonl", ok)
    with open(out / "ground_truth.json", "w") as f:
        json.dump({"parameters": [float(v) for v in gt_values]}, f, sort_keys=True)
    print(f"{len(ok)}/{len(trajs)} contacts -> {out / 'dataset.jsonl'}")
    return 0


def cmd_select(args) -> int:
    cfg = _config_from_args(args)
    model = load_hand_config(cfg.model)
    tree = model.tree
    dataset = load_dataset(args.dataset)
    testset = uniform_task_test_set(
        tree, cfg.testset_n, cfg.testset_cell,
        np.random.default_rng(experiments._seed_seq(cfg, 0)), cfg.testset_pool)
    Jt = stacked_jacobian(tree, [Measurement(TASK, q) for q in testset.Q])
    Jc = stacked_jacobian(tree, dataset)
    offsets = np.cumsum([0] + [1 if m.kind == "contact" else 3 for m in dataset])
    jacs = tuple(Jc[offsets[i]:offsets[i + 1]] for i in range(len(dataset)))
    pool = CandidatePool(tuple(dataset), jacs, Jt.T @ Jt)
    noise = cfg.study_noise()
    prior = ParameterVector.nominal(tree, *cfg.prior_sigmas())
    if args.method == "greedy":
        sel = select_greedy(pool, args.budget, noise, prior)
    elif args.method == "detmax":
        sel = select_detmax(pool, args.budget, noise, prior)
    else:
        sel = select_random(pool, args.budget, noise, prior,
                            np.random.default_rng(experiments._seed_seq(cfg, 3)))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "selection.json", "w") as f:
        json.dump({
            "method": sel.method,
            "selected_indices": [int(i) for i in sel.selected_indices],
            "log_objective_trace": [float(v) for v in sel.log_objective_trace],
        }, f, sort_keys=True, indent=1)
    print(f"{sel.method} selected {len(sel.selected_indices)} samples "
          f"-> {out / 'selection.json'}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _config_from_args(args)
    doc = experiments.run_calibration(cfg, args.dataset)
    for variant, entry in doc["variants"].items():
        print(f"{variant}: cv max |residual| {entry['cv']['max_abs'] * 1000:.2f} mm, "
              f"mean {entry['cv']['mean_abs'] * 1000:.2f} mm")
    return 0


def cmd_study(args) -> int:
    cfg = _config_from_args(args)
    doc = experiments.run_simulation_study(cfg)
    agg = doc["aggregate"]
    print(f"uncalibrated mean task deviation: "
          f"{agg['uncalibrated_task_error_mean'] * 1000:.2f} mm "
          f"({agg['n_models_ok']}/{agg['n_models']} models)")
    for method, budgets in agg["methods"].items():
        curve = ", ".join(f"{b}: {v['task_error_mean'] * 1000:.3f}mm"
                          for b, v in sorted(budgets.items(), key=lambda kv: int(kv[0])))
        print(f"  {method}: {curve}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out or "out")
    found = False
    for name in ("model_check", "sensitivity", "study", "calibration"):
        path = out / f"{name}.json"
        if not path.exists():
            continue
        found = True
        with open(path) as f:
            doc = json.load(f)
        print(f"{name}: config_hash={doc.get('config_hash')}")
        if name == "study" and "aggregate" in doc:
            agg = doc["aggregate"]
            print(f"  uncalibrated mean: {agg['uncalibrated_task_error_mean']}")
            for method, budgets in agg["methods"].items():
                for b, v in sorted(budgets.items(), key=lambda kv: int(kv[0])):
                    print(f"  {method} @ {b}: mean {v['task_error_mean']}")
        if name == "sensitivity":
            for mname, mdoc in doc["models"].items():
                for mode, entry in mdoc["modes"].items():
                    print(f"  {mname} {mode}: contact "
                          f"{entry['contact']['n_identifiable']}/{entry['contact']['n_parameters']}")
    if not found:
        print(f"no report artifacts under {out}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="handcal",
                                 description="Contact-based hand calibration toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config YAML (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--jobs", type=int, help="parallel workers for the study")

    p = sub.add_parser("model-check", help="structural sanity checks of the hand model")
    common(p)
    p.set_defaults(fn=cmd_model_check)

    p = sub.add_parser("testset", help="write the uniform cartesian task test set")
    common(p)
    p.set_defaults(fn=cmd_testset)

    p = sub.add_parser("sensitivity", help="eigenvalue spectra and kernel inclusion")
    common(p)
    p.set_defaults(fn=cmd_sensitivity)

    p = sub.add_parser("generate", help="plan contact search trajectories")
    common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("simulate", help="simulate contact events along trajectories")
    common(p)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--nominal", action="store_true",
                   help="use the nominal model as ground truth (no perturbation)")
    p.add_argument("--model-index", type=int, default=0,
                   help="index of the perturbed ground-truth model")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("select", help="task D-optimal subset selection")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--method", choices=("random", "greedy", "detmax"), default="greedy")
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("calibrate", help="cross-validated calibration of a dataset")
    common(p)
    p.add_argument("--dataset", required=True)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("study", help="full simulation study (perturb/simulate/select/calibrate)")
    common(p)
    p.set_defaults(fn=cmd_study)

    p = sub.add_parser("report", help="summarize existing report artifacts")
    p.add_argument("--out", help="directory holding the artifacts")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure: report and signal partial results
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
