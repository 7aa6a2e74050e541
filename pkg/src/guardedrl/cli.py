"""Command-line pipeline driver.

Subcommands: gen-data, fit-guardian, fit-model, train, eval, report.
Every command reads one JSON config (``--config``), resolves relative
artifact paths against the output directory (``--output``), embeds the
config hash and input hashes in what it writes, and is idempotent: the same
config and inputs produce byte-identical outputs.  On failure a
``<command>.failed`` marker with the error text is left in the output
directory.

Exit codes: 0 ok, 2 config error, 3 data error, 4 model error,
5 infeasible training.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import sys
from pathlib import Path

import numpy as np

from .artifacts import (
    load_env,
    load_guardian,
    load_model,
    load_policy,
    read_json,
    save_env,
    save_guardian,
    save_model,
    save_policy,
    write_json,
)
from .core import (
    CmdpSpec,
    ConfigError,
    DataError,
    GuardedRlError,
    InfeasibleTrainingError,
    ModelError,
)
from .dataio import (
    canonical_json,
    file_sha256,
    read_dataset_csv,
    write_dataset_csv,
    write_dataset_metadata,
)
from .guardian import ZScaler, fit_kde_guardian, fit_knn_guardian, fit_psos
from .metrics import EvalConfig, MetricsReport, aggregate_reports, build_report
from .models import fit_knn_model
from .policy import GaussianPolicy, fit_behavior_cloning
from .synthetic import GenerationConfig, SyntheticClinicalCmdp, generate_dataset
from .training import GuardedEcmdp, TrainConfig, train_guarded, train_penalty

_USAGE_EPILOG = """\
examples:
  guardedrl gen-data     --config run.json --output out
  guardedrl fit-guardian --config run.json --output out
  guardedrl fit-model    --config run.json --output out
  guardedrl train        --config run.json --output out
  guardedrl eval         --config run.json --output out
  guardedrl report       --config run.json --output out
"""


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

_NUM = (int, float)
_SCHEMA = {
    "output_dir": {"type": str},
    "env": {
        "kind": {"type": str, "default": "synthetic_clinical",
                 "choices": ("synthetic_clinical",)},
        "env_noise": {"type": _NUM, "default": 0.05, "min": 0.0},
        "behavior_noise": {"type": _NUM, "default": 0.1, "min": 0.0},
    },
    "data": {
        "path": {"type": str, "default": "dataset.csv"},
        "sha256": {"type": str, "optional": True},
        "n_trajectories": {"type": int, "default": 200, "min": 1},
        "horizon": {"type": int, "default": 20, "min": 1},
        "seed": {"type": int, "default": 0},
        "split_fractions": {"type": list, "default": [0.6, 0.2, 0.2]},
    },
    "guardian": {
        "type": {"type": str, "default": "kde", "choices": ("psos", "kde", "knn")},
        "alpha": {"type": _NUM, "default": 0.05, "min": 1e-9, "max": 0.5},
        "alpha_c": {"type": _NUM, "default": 0.05, "min": 1e-9, "max": 0.5},
        "degree": {"type": int, "default": 2, "min": 1, "max": 3},
        "k": {"type": int, "default": 5, "min": 1},
        "bandwidth": {"type": _NUM, "optional": True, "min": 1e-12},
        "kappa": {"type": _NUM, "default": 25.0, "min": 1e-6},
        "max_iterations": {"type": int, "default": 2000, "min": 1},
    },
    "model": {
        "k": {"type": int, "default": 5, "min": 1},
        "weighting": {"type": str, "default": "uniform",
                      "choices": ("uniform", "inverse_distance")},
        "split": {"type": str, "default": "train",
                  "choices": ("train", "val", "test", "all")},
    },
    "train": {
        "mode": {"type": str, "default": "hard-constraint",
                 "choices": ("hard-constraint", "reward-penalty")},
        "gamma": {"type": _NUM, "default": 0.99, "min": 1e-9, "max": 1.0 - 1e-9},
        "horizon": {"type": int, "default": 20, "min": 0},
        "cost_thresholds": {"type": list, "default": [0.6, 2.0]},
        "ood_threshold": {"type": _NUM, "default": 0.05, "min": 0.0},
        "tightening_fraction": {"type": _NUM, "default": 0.0, "min": 0.0, "max": 0.999},
        "penalty_coef": {"type": _NUM, "default": 10.0, "min": 0.0},
        "iterations": {"type": int, "default": 60, "min": 0},
        "rollouts_per_iter": {"type": int, "default": 24, "min": 1},
        "primal_step": {"type": _NUM, "default": 0.01, "min": 1e-12},
        "dual_step": {"type": _NUM, "default": 0.05, "min": 0.0},
        "max_halvings": {"type": int, "default": 8, "min": 0},
        "eval_rollouts": {"type": int, "default": 100, "min": 2},
        "seeds": {"type": list, "default": [0, 1, 2, 3, 4]},
        "policy_init": {"type": str, "default": "behavior_cloning",
                        "choices": ("behavior_cloning", "zeros")},
        "hidden": {"type": int, "optional": True, "min": 1},
        "guardian_path": {"type": str, "default": "guardian.json"},
        "model_path": {"type": str, "default": "model.json"},
    },
    "eval": {
        "split": {"type": str, "default": "test", "choices": ("train", "val", "test", "all")},
        "concordance_epsilon": {"type": _NUM, "optional": True, "min": 1e-12},
        "intensification_margin": {"type": _NUM, "default": 0.0, "min": 0.0},
        "vital_indices": {"type": list, "default": [0, 1]},
        "vital_thresholds": {"type": list, "default": [0.92, 0.5]},
        "n_rollouts": {"type": int, "default": 200, "min": 1},
        "seed": {"type": int, "default": 0},
        "policies": {"type": list, "optional": True},
        "guardian_path": {"type": str, "default": "guardian.json"},
        "model_path": {"type": str, "default": "model.json"},
    },
    "report": {
        "inputs": {"type": list, "optional": True},
    },
}


def _validate_section(name: str, got: dict, schema: dict) -> dict:
    if not isinstance(got, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = set(got) - set(schema)
    if unknown:
        raise ConfigError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    out = {}
    for key, rule in schema.items():
        if key in got:
            val = got[key]
            if val is None and rule.get("optional"):
                out[key] = None
                continue
            typ = rule["type"]
            if typ is int:
                ok = isinstance(val, int) and not isinstance(val, bool)
            elif typ is _NUM:
                ok = isinstance(val, _NUM) and not isinstance(val, bool)
            else:
                ok = isinstance(val, typ)
            if not ok:
                raise ConfigError(f"config {name}.{key}: expected {getattr(typ, '__name__', 'number')}")
            if isinstance(val, _NUM) and not isinstance(val, bool):
                if "min" in rule and val < rule["min"]:
                    raise ConfigError(f"config {name}.{key}: must be >= {rule['min']}")
                if "max" in rule and val > rule["max"]:
                    raise ConfigError(f"config {name}.{key}: must be <= {rule['max']}")
            if "choices" in rule and val not in rule["choices"]:
                raise ConfigError(f"config {name}.{key}: must be one of {rule['choices']}")
            out[key] = val
        elif "default" in rule:
            out[key] = rule["default"]
        elif rule.get("optional"):
            out[key] = None
        else:
            raise ConfigError(f"config {name}.{key} is required")
    return out


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    cfg: dict = {}
    for section, schema in _SCHEMA.items():
        if section == "output_dir":
            val = raw.get("output_dir", "out")
            if not isinstance(val, str):
                raise ConfigError("config output_dir must be a string")
            cfg["output_dir"] = val
            continue
        cfg[section] = _validate_section(section, raw.get(section, {}), schema)
    fr = cfg["data"]["split_fractions"]
    if (len(fr) != 3 or not all(isinstance(f, _NUM) for f in fr)
            or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9):
        raise ConfigError("config data.split_fractions must be 3 nonnegative numbers summing to 1")
    if not all(isinstance(s, int) and not isinstance(s, bool) for s in cfg["train"]["seeds"]):
        raise ConfigError("config train.seeds must be a list of integers")
    if not cfg["train"]["seeds"]:
        raise ConfigError("config train.seeds must be nonempty")
    for key in ("cost_thresholds",):
        if not all(isinstance(v, _NUM) for v in cfg["train"][key]):
            raise ConfigError(f"config train.{key} must be a list of numbers")
    cfg["config_sha256"] = _sha256_text(canonical_json(raw))
    return cfg


def _sha256_text(text: str) -> str:
    import hashlib

    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


class _Run:
    """Resolved paths plus tiny logging helpers for one command invocation."""

    def __init__(self, cfg: dict, output: str | None, quiet: bool):
        self.cfg = cfg
        self.quiet = quiet
        self.out = Path(output) if output else Path(cfg["output_dir"])
        self.out.mkdir(parents=True, exist_ok=True)

    def resolve(self, p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.out / p

    def say(self, msg: str) -> None:
        if not self.quiet:
            print(msg)

    def provenance(self, **inputs: str) -> dict:
        return {"config_sha256": self.cfg["config_sha256"], "inputs": dict(inputs)}


def _load_dataset(run: _Run):
    path = run.resolve(run.cfg["data"]["path"])
    expected = run.cfg["data"].get("sha256")
    if expected:
        if not path.exists():
            raise DataError(f"dataset file not found: {path}")
        actual = file_sha256(path)
        if actual != expected:
            raise DataError(f"dataset {path} hash mismatch: expected {expected[:12]}..., "
                            f"got {actual[:12]}...")
    return read_dataset_csv(path), path


def _env_from_cfg(run: _Run) -> SyntheticClinicalCmdp:
    env_path = run.resolve("env.json")
    if env_path.exists():
        return load_env(env_path)
    e = run.cfg["env"]
    return SyntheticClinicalCmdp(env_noise=e["env_noise"], behavior_noise=e["behavior_noise"])


def _dataset_sampler(states: np.ndarray):
    states = np.asarray(states, dtype=float)

    def sampler(rng: np.random.Generator) -> np.ndarray:
        return states[rng.integers(len(states))].copy()

    return sampler


def _train_spec(run: _Run, dataset, split: str) -> CmdpSpec:
    t = run.cfg["train"]
    states = dataset.initial_states(split if dataset.select(split) else None)
    return CmdpSpec(
        gamma=t["gamma"],
        horizon=t["horizon"],
        cost_thresholds=np.asarray(t["cost_thresholds"], dtype=float),
        ood_threshold=t["ood_threshold"],
        initial_state_sampler=_dataset_sampler(states),
        initial_state_source=f"dataset:{split}",
    )


def _split_arg(name: str) -> str | None:
    return None if name == "all" else name


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(run: _Run, seed_override: int | None) -> int:
    cfg = run.cfg
    env = SyntheticClinicalCmdp(env_noise=cfg["env"]["env_noise"],
                                behavior_noise=cfg["env"]["behavior_noise"])
    gen = GenerationConfig(
        n_trajectories=cfg["data"]["n_trajectories"],
        horizon=cfg["data"]["horizon"],
        seed=cfg["data"]["seed"] if seed_override is None else seed_override,
        split_fractions=tuple(cfg["data"]["split_fractions"]),
    )
    dataset = generate_dataset(env, env.behavior_policy(), gen)
    csv_path = run.resolve(cfg["data"]["path"])
    write_dataset_csv(dataset, csv_path)
    write_dataset_metadata(dataset, csv_path.with_suffix(".meta.json"), extra={
        "generation": {"n_trajectories": gen.n_trajectories, "horizon": gen.horizon,
                       "seed": gen.seed, "split_fractions": list(gen.split_fractions)},
        "provenance": run.provenance(),
        "sha256": file_sha256(csv_path),
    })
    save_env(env, run.resolve("env.json"), provenance=run.provenance())
    run.say(f"wrote {dataset.n_samples()} transitions over {len(dataset.trajectories)} "
            f"trajectories to {csv_path}")
    return 0


def cmd_fit_guardian(run: _Run) -> int:
    cfg = run.cfg["guardian"]
    dataset, data_path = _load_dataset(run)
    points = dataset.sa_matrix(split="train")
    if len(points) == 0:
        points = dataset.sa_matrix(split=None)
    scaler = ZScaler.from_standardization(dataset.standardization)
    if cfg["type"] == "psos":
        guardian = fit_psos(points, degree=cfg["degree"], alpha_c=cfg["alpha_c"],
                            scaler=scaler, kappa=cfg["kappa"],
                            max_iterations=cfg["max_iterations"])
        summary = guardian.fit_report.to_dict()
    elif cfg["type"] == "kde":
        guardian = fit_kde_guardian(points, alpha=cfg["alpha"],
                                    bandwidth=cfg["bandwidth"], scaler=scaler)
        summary = {"threshold": guardian.threshold,
                   "achieved_outlier_fraction": guardian.achieved_outlier_fraction,
                   "search_iterations": guardian.search_iterations}
    else:
        guardian = fit_knn_guardian(points, alpha=cfg["alpha"], k=cfg["k"], scaler=scaler)
        summary = {"radius": guardian.radius,
                   "achieved_outlier_fraction": guardian.achieved_outlier_fraction}
    prov = run.provenance(**{str(data_path.name): file_sha256(data_path)})
    save_guardian(guardian, run.resolve("guardian.json"), provenance=prov)
    write_json({"format": "guardedrl.guardian_report", "version": 1,
                "type": cfg["type"], "n_fit_points": len(points),
                "summary": summary, "provenance": prov},
               run.resolve("guardian_report.json"))
    run.say(f"fitted {cfg['type']} guardian on {len(points)} pairs -> guardian.json")
    return 0


def cmd_fit_model(run: _Run) -> int:
    cfg = run.cfg["model"]
    dataset, data_path = _load_dataset(run)
    split = _split_arg(cfg["split"])
    model = fit_knn_model(dataset, k=cfg["k"], weighting=cfg["weighting"], split=split)
    save_model(model, run.resolve("model.json"), data_path, split,
               provenance=run.provenance(**{str(data_path.name): file_sha256(data_path)}))
    run.say(f"indexed {len(model.keys)} transitions (k={cfg['k']}) -> model.json")
    return 0


def cmd_train(run: _Run, seed_override: int | None) -> int:
    tcfg = run.cfg["train"]
    dataset, data_path = _load_dataset(run)
    guardian = load_guardian(run.resolve(tcfg["guardian_path"]))
    model = load_model(run.resolve(tcfg["model_path"]), dataset_dir=data_path.parent)
    env_rules = _env_from_cfg(run)
    spec = _train_spec(run, dataset, "train")
    ecmdp = GuardedEcmdp(model=model, reward_rule=env_rules.reward_rule(),
                         cost_rules=env_rules.cost_rules(), guardian=guardian, spec=spec)
    seeds = [seed_override] if seed_override is not None else tcfg["seeds"]
    results = {}
    for seed in seeds:
        if tcfg["policy_init"] == "behavior_cloning":
            policy = fit_behavior_cloning(dataset)
        else:
            policy = GaussianPolicy(dataset.n, dataset.m, hidden=tcfg["hidden"],
                                    state_mean=dataset.standardization.state_mean,
                                    state_scale=dataset.standardization.state_scale)
        config = TrainConfig(
            iterations=tcfg["iterations"],
            rollouts_per_iter=tcfg["rollouts_per_iter"],
            primal_step=tcfg["primal_step"],
            dual_step=tcfg["dual_step"],
            max_halvings=tcfg["max_halvings"],
            tightening_fraction=tcfg["tightening_fraction"],
            penalty_coef=tcfg["penalty_coef"],
            seed=seed,
            eval_rollouts=tcfg["eval_rollouts"],
        )
        train_fn = train_guarded if tcfg["mode"] == "hard-constraint" else train_penalty
        result = train_fn(ecmdp, policy, config)
        prov = run.provenance(**{str(data_path.name): file_sha256(data_path)})
        prov["train_seed"] = seed
        prov["infeasible"] = result.infeasible
        save_policy(result.policy, run.resolve(f"policy_seed{seed}.json"), provenance=prov)
        log_path = run.resolve(f"train_log_seed{seed}.jsonl")
        with open(log_path, "w") as fh:
            for entry in result.log:
                fh.write(canonical_json(entry) + "\n")
        results[seed] = result
        run.say(f"seed {seed}: V_r={result.final_estimates.v_reward:.4f} "
                f"V_ood={result.final_estimates.v_ood:.4f} "
                f"{'INFEASIBLE' if result.infeasible else 'feasible'}")
    write_json({
        "format": "guardedrl.train_summary", "version": 1,
        "mode": tcfg["mode"],
        "seeds": {str(s): {
            "infeasible": r.infeasible,
            "best_iteration": r.best_iteration,
            "final": r.final_estimates.to_dict(),
            "multipliers": r.multipliers.tolist(),
        } for s, r in results.items()},
        "provenance": run.provenance(),
    }, run.resolve("train_summary.json"))
    if all(r.infeasible for r in results.values()):
        raise InfeasibleTrainingError(
            f"all {len(results)} training seed(s) ended infeasible")
    return 0


def cmd_eval(run: _Run, seed_override: int | None) -> int:
    ecfg = run.cfg["eval"]
    dataset, data_path = _load_dataset(run)
    guardian = load_guardian(run.resolve(ecfg["guardian_path"]))
    model = load_model(run.resolve(ecfg["model_path"]), dataset_dir=data_path.parent)
    env_rules = _env_from_cfg(run)
    eval_split = _split_arg(ecfg["split"])
    spec = _train_spec(run, dataset, eval_split or "test")
    ecmdp = GuardedEcmdp(model=model, reward_rule=env_rules.reward_rule(),
                         cost_rules=env_rules.cost_rules(), guardian=guardian, spec=spec)
    if ecfg["policies"]:
        policy_paths = [run.resolve(p) for p in ecfg["policies"]]
    else:
        policy_paths = sorted(run.out.glob("policy_seed*.json"))
    if not policy_paths:
        raise ModelError("no policy artifacts to evaluate")
    config = EvalConfig(
        split=eval_split,
        concordance_epsilon=ecfg["concordance_epsilon"],
        intensification_margin=ecfg["intensification_margin"],
        vital_indices=tuple(ecfg["vital_indices"]),
        vital_thresholds=tuple(ecfg["vital_thresholds"]),
        n_rollouts=ecfg["n_rollouts"],
        seed=ecfg["seed"] if seed_override is None else seed_override,
    )
    prov = run.provenance(**{str(data_path.name): file_sha256(data_path)})
    for path in policy_paths:
        policy = load_policy(path)
        label = path.stem.replace("policy_", "")
        report = build_report(policy, dataset, model, spec, config, ecmdp=ecmdp, label=label)
        write_json({"format": "guardedrl.metrics", "version": 1,
                    "report": json.loads(report.to_json()),
                    "provenance": {**prov, "policy": str(path.name)}},
                   run.resolve(f"metrics_{label}.json"))
        run.say(f"{label}: mcr={report.mcr:.3f} air={report.air} "
                f"me={report.mortality:.4f} acp={report.acp_scalar}")
    return 0


def cmd_report(run: _Run) -> int:
    rcfg = run.cfg["report"]
    if rcfg["inputs"]:
        paths = []
        for pattern in rcfg["inputs"]:
            resolved = run.resolve(pattern)
            hits = sorted(glob.glob(str(resolved)))
            paths.extend(hits if hits else [str(resolved)])
    else:
        paths = sorted(str(p) for p in run.out.glob("metrics_*.json"))
    if not paths:
        raise DataError("no metrics files found to aggregate")
    reports = []
    for p in paths:
        p = Path(p)
        if not p.exists():
            raise DataError(f"metrics file not found: {p}")
        try:
            doc = json.loads(p.read_text())
            payload = doc.get("report", doc)  # enveloped or bare report
            reports.append(MetricsReport.from_json(json.dumps(payload)))
        except DataError:
            raise
        except Exception as exc:
            raise DataError(f"cannot parse metrics file {p}: {exc}") from None
    agg = aggregate_reports(reports)
    write_json({"format": "guardedrl.report", "version": 1,
                "n_reports": len(reports),
                "columns": agg,
                "provenance": run.provenance()},
               run.resolve("report.json"))
    cols = list(agg.keys())
    with open(run.resolve("report.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["statistic"] + cols)
        for stat in ("mean", "sd", "n"):
            writer.writerow([stat] + [
                "" if agg[c][stat] is None else repr(agg[c][stat]) for c in cols])
    run.say(f"aggregated {len(reports)} reports -> report.json, report.csv")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guardedrl",
        description="Guarded offline safe-RL pipeline on a synthetic ground-truth env.",
        epilog=_USAGE_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen-data", "simulate the behavior policy and write the trajectory CSV"),
        ("fit-guardian", "fit the configured in-distribution guardian"),
        ("fit-model", "index the k-NN transition model"),
        ("train", "run guarded (or penalty) policy optimization per seed"),
        ("eval", "compute metrics for trained policies"),
        ("report", "aggregate per-seed metrics into mean +/- SD tables"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the command-relevant seed from the config")
        p.add_argument("--output", default=None, help="output directory (default: config output_dir)")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


_EXIT_CODES = (
    (ConfigError, 2),
    (DataError, 3),
    (ModelError, 4),
    (InfeasibleTrainingError, 5),
)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    run = None
    try:
        cfg = load_config(args.config)
        run = _Run(cfg, args.output, args.quiet)
        if args.command == "gen-data":
            return cmd_gen_data(run, args.seed)
        if args.command == "fit-guardian":
            return cmd_fit_guardian(run)
        if args.command == "fit-model":
            return cmd_fit_model(run)
        if args.command == "train":
            return cmd_train(run, args.seed)
        if args.command == "eval":
            return cmd_eval(run, args.seed)
        if args.command == "report":
            return cmd_report(run)
        raise ConfigError(f"unknown command {args.command!r}")
    except GuardedRlError as exc:
        for klass, code in _EXIT_CODES:
            if isinstance(exc, klass):
                break
        else:
            code = 1
        if run is not None:
            try:
                (run.out / f"{args.command}.failed").write_text(
                    f"{type(exc).__name__}: {exc}\n")
            except OSError:
                pass
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
