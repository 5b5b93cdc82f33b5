"""Experiment harness: sensitivity study, simulation study, CV calibration.

Everything here is driven by one YAML config with explicit seeds and writes
JSON (structured results) plus CSV (plot-ready curves). Reports embed the
config hash so every number can be traced back to its generating setup; two
runs of the same config produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .estimation import NoiseModel, ParameterVector, SolverOptions, calibrate, parameter_covariance
from .identifiability import kernel_included, propagate_to_task, sensitivity
from .kinematics import REVOLUTE, PRISMATIC, KinematicTree
from .measurement import CONTACT, TASK, Measurement, all_pairs, stacked_jacobian, task_measurement_batch
from .models import HandModel, load_hand_config
from .oed import CandidatePool, SelectionResult, select_detmax, select_greedy, select_random
from .sampling import (
    SearchTrajectory,
    generate_search_trajectories,
    load_dataset,
    simulate_contacts,
    uniform_task_test_set,
)

CONFIG_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment settings; see configs/experiment_default.yaml."""

    model: str = "dlr_like_hand"
    generic_model: str = "generic_hand"
    seed: int = 12345
    output_dir: str = "out"
    jobs: int = 1
    # uniform cartesian test set
    testset_n: int = 100
    testset_cell: float = 0.02
    testset_pool: int = 20000
    # workspace / trajectory generation
    workspace_samples: int = 30000
    workspace_cell: float = 0.012
    trajectories_per_pair: int = 200
    collision_threshold: float = -0.002
    start_margin: float = 0.015
    clearance: float = 0.003
    # noise: hardware-scale defaults; the simulation study uses its own level
    noise_contact: float = 5e-4
    noise_cartesian: float = 5e-4
    study_noise_contact: float = 5e-5
    # prior and ground-truth perturbation scales
    prior_rot_deg: float = 5.0
    prior_trans_mm: float = 5.0
    perturb_rot_deg: float = 5.0
    perturb_trans_mm: float = 5.0
    # study
    study_models: int = 10
    study_budgets: tuple[int, ...] = (50, 100, 200, 300)
    study_methods: tuple[str, ...] = ("random", "greedy", "detmax")
    # sensitivity
    sens_samples_per_pair: int = 100
    sens_task_samples: int = 100
    sens_threshold: float = 1e-6
    # cross-validated calibration
    cv_folds: int = 5
    cv_variants: tuple[str, ...] = ("joint_offsets", "full_dh")
    # solver
    solver_max_iterations: int = 200

    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def noise(self) -> NoiseModel:
        return NoiseModel(contact=self.noise_contact, cartesian=self.noise_cartesian)

    def study_noise(self) -> NoiseModel:
        return NoiseModel(contact=self.study_noise_contact, cartesian=self.noise_cartesian)

    def prior_sigmas(self) -> tuple[float, float]:
        return math.radians(self.prior_rot_deg), self.prior_trans_mm * 1e-3

    def solver_options(self) -> SolverOptions:
        return SolverOptions(max_iterations=self.solver_max_iterations)

    def config_hash(self) -> str:
        # output_dir and jobs do not influence any computed number
        skip = {"raw", "output_dir", "jobs"}
        doc = {k: v for k, v in self.__dict__.items() if k not in skip}
        blob = json.dumps(doc, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_experiment_config(path_or_dict, seed: int | None = None,
                           output_dir: str | None = None,
                           jobs: int | None = None) -> ExperimentConfig:
    if isinstance(path_or_dict, dict):
        doc = dict(path_or_dict)
    else:
        p = Path(path_or_dict)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        with open(p) as f:
            doc = yaml.safe_load(f) or {}
    if doc.get("schema_version", CONFIG_SCHEMA_VERSION) != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {doc.get('schema_version')!r}")

    def get(section, key, default):
        sec = doc.get(section, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        return sec.get(key, default)

    try:
        cfg = ExperimentConfig(
            model=doc.get("model", "dlr_like_hand"),
            generic_model=doc.get("generic_model", "generic_hand"),
            seed=int(doc.get("seed", 12345)) if seed is None else int(seed),
            output_dir=doc.get("output_dir", "out") if output_dir is None else output_dir,
            jobs=int(doc.get("jobs", 1)) if jobs is None else int(jobs),
            testset_n=int(get("testset", "n", 100)),
            testset_cell=float(get("testset", "cell_size", 0.02)),
            testset_pool=int(get("testset", "pool", 20000)),
            workspace_samples=int(get("workspace", "n_samples", 30000)),
            workspace_cell=float(get("workspace", "cell_size", 0.012)),
            trajectories_per_pair=int(get("trajectories", "per_pair", 200)),
            collision_threshold=float(get("trajectories", "collision_threshold", -0.002)),
            start_margin=float(get("trajectories", "start_margin", 0.015)),
            clearance=float(get("trajectories", "clearance", 0.003)),
            noise_contact=float(get("noise", "contact", 5e-4)),
            noise_cartesian=float(get("noise", "cartesian", 5e-4)),
            study_noise_contact=float(get("noise", "study_contact", 5e-5)),
            prior_rot_deg=float(get("prior", "rot_deg", 5.0)),
            prior_trans_mm=float(get("prior", "trans_mm", 5.0)),
            perturb_rot_deg=float(get("perturbation", "rot_deg", 5.0)),
            perturb_trans_mm=float(get("perturbation", "trans_mm", 5.0)),
            study_models=int(get("study", "n_models", 10)),
            study_budgets=tuple(int(b) for b in get("study", "budgets", [50, 100, 200, 300])),
            study_methods=tuple(get("study", "methods", ["random", "greedy", "detmax"])),
            sens_samples_per_pair=int(get("sensitivity", "samples_per_pair", 100)),
            sens_task_samples=int(get("sensitivity", "task_samples", 100)),
            sens_threshold=float(get("sensitivity", "threshold", 1e-6)),
            cv_folds=int(get("calibration", "folds", 5)),
            cv_variants=tuple(get("calibration", "variants", ["joint_offsets", "full_dh"])),
            solver_max_iterations=int(get("solver", "max_iterations", 200)),
            raw=doc,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    for m in cfg.study_methods:
        if m not in ("random", "greedy", "detmax"):
            raise ConfigError(f"unknown selection method {m!r}")
    for v in cfg.cv_variants:
        if v not in ("joint_offsets", "full_dh"):
            raise ConfigError(f"unknown calibration variant {v!r}")
    if max(cfg.study_budgets) > cfg.trajectories_per_pair * 6:
        raise ConfigError("largest budget exceeds the candidate pool upper bound")
    return cfg


def _seed_seq(cfg: ExperimentConfig, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=cfg.seed, spawn_key=tuple(path))


def _rng(cfg: ExperimentConfig, *path: int) -> np.random.Generator:
    return np.random.default_rng(_seed_seq(cfg, *path))


# -- shared helpers -------------------------------------------------------------


def perturb_parameters(tree: KinematicTree, rot_rad: float, trans_m: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Uniform DH perturbation: rotational entries +-rot_rad, lengths +-trans_m."""
    base = tree.parameter_values()
    rot = tree.parameter_is_rotational()
    delta = np.where(rot, rng.uniform(-rot_rad, rot_rad, base.size),
                     rng.uniform(-trans_m, trans_m, base.size))
    return base + delta


def task_error(tree_a: KinematicTree, tree_b: KinematicTree,
               Q: np.ndarray) -> tuple[float, float]:
    """Mean and max norm of per-finger task differences between two models."""
    ya = task_measurement_batch(tree_a, Q)
    yb = task_measurement_batch(tree_b, Q)
    d = (ya - yb).reshape(Q.shape[0], -1, 3)
    norms = np.linalg.norm(d, axis=2)
    return float(norms.mean()), float(norms.max())


def restrict_calibration(tree: KinematicTree, variant: str) -> KinematicTree:
    """Variant masks: all DH fields, or only the active-joint angle offsets."""
    if variant == "full_dh":
        return tree
    if variant != "joint_offsets":
        raise ConfigError(f"unknown calibration variant {variant!r}")
    from dataclasses import replace
    links = []
    for link in tree.links:
        if link.kind in (REVOLUTE, PRISMATIC):
            mask = (False, False, False, link.kind == REVOLUTE)
            if link.kind == PRISMATIC:
                mask = (True, False, False, False)
            links.append(replace(link, calibrate=mask))
        else:
            links.append(replace(link, calibrate=(False, False, False, False)))
    return replace(tree, links=tuple(links))


def plan_all_trajectories(cfg: ExperimentConfig, model: HandModel
                          ) -> list[SearchTrajectory]:
    """Search trajectories for every pair, planned once on the nominal model."""
    out: list[SearchTrajectory] = []
    for i, pair in enumerate(all_pairs(model.tree.n_end_effectors)):
        out.extend(generate_search_trajectories(
            model, pair, cfg.trajectories_per_pair,
            collision_threshold=cfg.collision_threshold,
            start_margin=cfg.start_margin, clearance=cfg.clearance,
            seed=np.random.default_rng(_seed_seq(cfg, 1, i)),
            n_workspace=cfg.workspace_samples, cell_size=cfg.workspace_cell))
    return out


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


# -- sensitivity study ------------------------------------------------------------


def run_sensitivity(cfg: ExperimentConfig) -> dict:
    """Eigenvalue spectra for mode x kind on the nominal and generic hand."""
    out: dict = {"schema_version": CONFIG_SCHEMA_VERSION, "config_hash": cfg.config_hash(),
                 "models": {}}
    csv_rows: list[list] = []
    for m_idx, name in enumerate((cfg.model, cfg.generic_model)):
        model = load_hand_config(name)
        tree = model.tree
        pairs = all_pairs(tree.n_end_effectors)
        contact_samples: list[Measurement] = []
        for p_idx, pair in enumerate(pairs):
            trajs = generate_search_trajectories(
                model, pair, cfg.sens_samples_per_pair,
                collision_threshold=cfg.collision_threshold,
                start_margin=cfg.start_margin, clearance=cfg.clearance,
                seed=np.random.default_rng(_seed_seq(cfg, 10 + m_idx, p_idx)),
                n_workspace=cfg.workspace_samples, cell_size=cfg.workspace_cell)
            events = simulate_contacts(trajs, tree, 0.0, _seed_seq(cfg, 20 + m_idx, p_idx))
            contact_samples += [e.to_measurement() for e in events if e is not None]
        testset = uniform_task_test_set(
            tree, cfg.sens_task_samples, cfg.testset_cell,
            np.random.default_rng(_seed_seq(cfg, 30 + m_idx)), cfg.testset_pool)
        task_samples = [Measurement(TASK, q) for q in testset.Q]

        sp = model.single_pair_default
        modes = {
            "single-pair": tuple(sp),
            "three-fingers": (0, 1, 2),
            "all-pairs": tuple(range(tree.n_end_effectors)),
        }
        model_doc: dict = {"name": name, "modes": {}}
        for mode, fingers in modes.items():
            reports = {}
            for kind, samples in ((CONTACT, contact_samples), (TASK, task_samples)):
                rep = sensitivity(tree, samples, kind, scope=fingers,
                                  threshold=cfg.sens_threshold, mode=mode)
                reports[kind] = rep
                for i, ev in enumerate(rep.eigenvalues):
                    csv_rows.append([name, mode, kind, i, float(ev)])
            ok, worst = kernel_included(reports[CONTACT], reports[TASK])
            model_doc["modes"][mode] = {
                "contact": reports[CONTACT].to_dict(),
                "task": reports[TASK].to_dict(),
                "kernel_inclusion": {"passes": bool(ok), "max_violation": float(worst)},
            }
        out["models"][name] = model_doc

    out_dir = Path(cfg.output_dir)
    _write_json(out_dir / "sensitivity.json", out)
    _write_csv(out_dir / "spectra.csv", ["model", "mode", "kind", "index", "eigenvalue"],
               csv_rows)
    return out


# -- simulation study ---------------------------------------------------------------


def _study_one_model(payload: dict) -> dict:
    """Worker: one ground-truth model through the full selection/calibration grid."""
    cfg: ExperimentConfig = payload["cfg"]
    i: int = payload["index"]
    model: HandModel = payload["model"]
    trajectories: list[SearchTrajectory] = payload["trajectories"]
    test_Q: np.ndarray = payload["test_Q"]
    test_fim: np.ndarray = payload["test_fim"]

    tree = model.tree
    noise = cfg.study_noise()
    sig_rot, sig_trans = cfg.prior_sigmas()
    prior = ParameterVector.nominal(tree, sig_rot, sig_trans)

    gt_values = perturb_parameters(
        tree, math.radians(cfg.perturb_rot_deg), cfg.perturb_trans_mm * 1e-3,
        _rng(cfg, 2, i, 0))
    tree_gt = tree.with_parameters(gt_values)
    uncal_mean, uncal_max = task_error(tree, tree_gt, test_Q)

    events = simulate_contacts(trajectories, tree_gt, noise.contact,
                               _seed_seq(cfg, 2, i, 1))
    ok_events = [e for e in events if e is not None]
    samples = [e.to_measurement() for e in ok_events]
    record: dict = {
        "model_index": i,
        "n_trajectories": len(trajectories),
        "n_contacts": len(samples),
        "uncalibrated_task_error_mean": uncal_mean,
        "uncalibrated_task_error_max": uncal_max,
        "methods": {},
    }
    max_budget = max(cfg.study_budgets)
    if len(samples) < max_budget:
        record["error"] = (f"only {len(samples)} contacts for budget {max_budget}")
        return record

    Jc = stacked_jacobian(tree, samples)
    pool = CandidatePool(tuple(samples), tuple(J[None, :] for J in Jc), test_fim)

    greedy_full = select_greedy(pool, max_budget, noise, prior)

    def calibrated_error(indices) -> dict:
        subset = [samples[j] for j in indices]
        res = calibrate(subset, tree, prior, noise, cfg.solver_options())
        tree_cal = tree.with_parameters(res.theta_star.values)
        mean_e, max_e = task_error(tree_cal, tree_gt, test_Q)
        return {
            "task_error_mean": mean_e,
            "task_error_max": max_e,
            "contact_residual_rms": float(np.sqrt(np.mean(res.residuals ** 2))),
            "converged": bool(res.converged),
        }

    for method in cfg.study_methods:
        per_budget = {}
        for b_idx, budget in enumerate(cfg.study_budgets):
            if method == "greedy":
                sel = SelectionResult(greedy_full.selected_indices[:budget],
                                      greedy_full.objective_trace[:budget], "greedy",
                                      greedy_full.log_objective_trace[:budget])
            elif method == "detmax":
                start = SelectionResult(greedy_full.selected_indices[:budget],
                                        greedy_full.objective_trace[:budget], "greedy",
                                        greedy_full.log_objective_trace[:budget])
                sel = select_detmax(pool, budget, noise, prior, start=start)
            else:
                sel = select_random(pool, budget, noise, prior,
                                    np.random.default_rng(_seed_seq(cfg, 2, i, 3, b_idx)))
            entry = calibrated_error(sel.selected_indices)
            entry["log_od"] = float(sel.log_objective_trace[-1])
            per_budget[str(budget)] = entry
        record["methods"][method] = per_budget
    return record


def run_simulation_study(cfg: ExperimentConfig) -> dict:
    """Perturbed ground truths -> simulated contacts -> selection -> calibration."""
    model = load_hand_config(cfg.model)
    tree = model.tree
    testset = uniform_task_test_set(tree, cfg.testset_n, cfg.testset_cell,
                                    np.random.default_rng(_seed_seq(cfg, 0)),
                                    cfg.testset_pool)
    trajectories = plan_all_trajectories(cfg, model)
    task_samples = [Measurement(TASK, q) for q in testset.Q]
    Jt = stacked_jacobian(tree, task_samples)
    test_fim = Jt.T @ Jt

    payloads = [{"cfg": cfg, "index": i, "model": model, "trajectories": trajectories,
                 "test_Q": testset.Q, "test_fim": test_fim}
                for i in range(cfg.study_models)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            records = list(pool.map(_study_one_model, payloads))
    else:
        records = [_study_one_model(p) for p in payloads]
    records.sort(key=lambda r: r["model_index"])

    ok = [r for r in records if "error" not in r]
    aggregate: dict = {
        "n_models": cfg.study_models,
        "n_models_ok": len(ok),
        "uncalibrated_task_error_mean":
            float(np.mean([r["uncalibrated_task_error_mean"] for r in ok])) if ok else None,
        "methods": {},
    }
    csv_rows: list[list] = []
    for method in cfg.study_methods:
        per_budget = {}
        for budget in cfg.study_budgets:
            vals = [r["methods"][method][str(budget)]["task_error_mean"] for r in ok]
            maxs = [r["methods"][method][str(budget)]["task_error_max"] for r in ok]
            per_budget[str(budget)] = {
                "task_error_mean": float(np.mean(vals)) if vals else None,
                "task_error_max": float(np.mean(maxs)) if maxs else None,
            }
            if vals:
                csv_rows.append([method, budget, float(np.mean(vals)), float(np.mean(maxs))])
        aggregate["methods"][method] = per_budget

    out = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "config_hash": cfg.config_hash(),
        "aggregate": aggregate,
        "per_model": records,
    }
    out_dir = Path(cfg.output_dir)
    _write_json(out_dir / "study.json", out)
    _write_csv(out_dir / "curves.csv",
               ["method", "budget", "task_error_mean_m", "task_error_max_m"], csv_rows)
    return out


# -- cross-validated calibration -----------------------------------------------------


def run_calibration(cfg: ExperimentConfig, dataset_path) -> dict:
    """K-fold CV calibration with parameter-mask variants on a stored dataset."""
    model = load_hand_config(cfg.model)
    tree = model.tree
    dataset = load_dataset(dataset_path)
    contacts = [m for m in dataset if m.kind == CONTACT]
    if not contacts:
        raise ConfigError(f"dataset {dataset_path} contains no contact measurements")
    noise = cfg.noise()
    sig_rot, sig_trans = cfg.prior_sigmas()

    n = len(contacts)
    perm = _rng(cfg, 4).permutation(n)
    folds = [perm[f::cfg.cv_folds] for f in range(cfg.cv_folds)]

    def residuals_of(tree_eval, subset) -> np.ndarray:
        from .measurement import contact_measurement
        return np.array([contact_measurement(tree_eval, m.q, m.pair) for m in subset])

    before = residuals_of(tree, contacts)
    report: dict = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "config_hash": cfg.config_hash(),
        "n_measurements": n,
        "folds": cfg.cv_folds,
        "uncalibrated": _residual_stats(before),
        "variants": {},
    }
    scatter_rows: list[list] = []
    hist_rows: list[list] = []
    bins = np.linspace(-0.02, 0.02, 41)
    hist_rows += _hist_rows("uncalibrated", before, bins)

    for variant in cfg.cv_variants:
        tree_v = restrict_calibration(tree, variant)
        prior_v = ParameterVector.nominal(tree_v, sig_rot, sig_trans)
        cv_resid = np.empty(n)
        for f in range(cfg.cv_folds):
            test_idx = folds[f]
            train_idx = np.concatenate([folds[g] for g in range(cfg.cv_folds) if g != f])
            res = calibrate([contacts[j] for j in train_idx], tree_v, prior_v,
                            noise, cfg.solver_options())
            tree_cal = tree_v.with_parameters(res.theta_star.values)
            cv_resid[test_idx] = residuals_of(tree_cal, [contacts[j] for j in test_idx])

        # full-data fit for the error-propagation step
        res_all = calibrate(contacts, tree_v, prior_v, noise, cfg.solver_options())
        sigma_post = float(np.std(res_all.residuals))
        noise_post = NoiseModel(contact=max(sigma_post, 1e-6),
                                cartesian=noise.cartesian)
        cov = parameter_covariance(contacts, tree_v, res_all.theta_star.values,
                                   noise_post, prior_v)
        testset = uniform_task_test_set(tree, cfg.testset_n, cfg.testset_cell,
                                        np.random.default_rng(_seed_seq(cfg, 5)),
                                        cfg.testset_pool)
        tree_cal_all = tree_v.with_parameters(res_all.theta_star.values)
        _, prop = propagate_to_task(cov, tree_cal_all, testset.Q)

        report["variants"][variant] = {
            "cv": _residual_stats(cv_resid),
            "full_fit_residual_std": sigma_post,
            "propagated_task_error_mean": prop["mean_norm"],
            "propagated_task_error_max": prop["max_norm"],
            "converged": bool(res_all.converged),
        }
        hist_rows += _hist_rows(variant, cv_resid, bins)
        for j, m in enumerate(contacts):
            scatter_rows.append([variant, f"{m.pair[0]}-{m.pair[1]}",
                                 float(before[j]), float(cv_resid[j])])

    out_dir = Path(cfg.output_dir)
    _write_json(out_dir / "calibration.json", report)
    _write_csv(out_dir / "residual_hist.csv",
               ["variant", "bin_lo", "bin_hi", "count"], hist_rows)
    _write_csv(out_dir / "pair_scatter.csv",
               ["variant", "pair", "before_m", "after_m"], scatter_rows)
    return report


def _residual_stats(resid: np.ndarray) -> dict:
    return {
        "mean_abs": float(np.mean(np.abs(resid))),
        "max_abs": float(np.max(np.abs(resid))),
        "std": float(np.std(resid)),
        "rms": float(np.sqrt(np.mean(resid ** 2))),
    }


def _hist_rows(tag: str, resid: np.ndarray, bins: np.ndarray) -> list[list]:
    counts, edges = np.histogram(resid, bins=bins)
    return [[tag, float(edges[i]), float(edges[i + 1]), int(c)]
            for i, c in enumerate(counts)]


# -- model check ---------------------------------------------------------------------


def run_model_check(cfg: ExperimentConfig) -> dict:
    """Structural sanity report for the configured hand model."""
    model = load_hand_config(cfg.model)
    tree = model.tree
    rng = _rng(cfg, 6)
    lim = tree.joint_limits()
    Q = rng.uniform(lim[:, 0], lim[:, 1], size=(64, tree.n_active_joints))
    from .kinematics import forward_kinematics
    worst_ortho = 0.0
    for q in Q[:8]:
        for fr in forward_kinematics(tree, q):
            worst_ortho = max(worst_ortho, fr.orthonormality_defect())
    pair_overlap = {}
    from .sampling import shared_workspace, SamplingError
    for pair in all_pairs(tree.n_end_effectors):
        try:
            gk, gl, cells = shared_workspace(tree, pair, max(cfg.workspace_samples, 1000),
                                             cfg.workspace_cell, _rng(cfg, 6, pair.k, pair.l))
            pair_overlap[f"{pair.k}-{pair.l}"] = len(cells)
        except SamplingError:
            pair_overlap[f"{pair.k}-{pair.l}"] = 0
    doc = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "config_hash": cfg.config_hash(),
        "model": tree.name,
        "n_links": tree.n_links,
        "n_active_joints": tree.n_active_joints,
        "n_parameters": tree.n_parameters,
        "n_end_effectors": tree.n_end_effectors,
        "worst_rotation_orthonormality_defect": worst_ortho,
        "shared_workspace_cells": pair_overlap,
        "ok": bool(worst_ortho < 1e-9 and all(v > 0 for v in pair_overlap.values())),
    }
    _write_json(Path(cfg.output_dir) / "model_check.json", doc)
    return doc
