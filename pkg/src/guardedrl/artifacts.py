"""JSON envelopes for fitted artifacts.

Every artifact is a single deterministic JSON document (sorted keys, repr
floats) with a ``format`` tag, the payload, and a ``provenance`` block that
callers can fill with config/input hashes.  Guardians embed their reference
data inline; the k-NN transition model references its dataset file by path
and content hash and is rebuilt from it on load.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import ModelError, Standardization
from .dataio import canonical_json, file_sha256, read_dataset_csv
from .guardian import (
    ConstantGuardian,
    KdeGuardian,
    KnnGuardian,
    MonomialBasis,
    PsosClassifier,
    PsosFitReport,
    ZScaler,
)
from .models import KnnTransitionModel, fit_knn_model
from .policy import GaussianPolicy
from .synthetic import SyntheticClinicalCmdp

__all__ = [
    "save_guardian", "load_guardian",
    "save_model", "load_model",
    "save_policy", "load_policy",
    "save_env", "load_env",
    "write_json", "read_json",
]


def write_json(payload: dict, path: str | Path) -> None:
    Path(path).write_text(canonical_json(payload) + "\n")


def read_json(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ModelError(f"artifact not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"artifact {path} is not valid JSON: {exc}") from None


def _envelope(kind: str, payload: dict, provenance: dict | None) -> dict:
    doc = {"format": f"guardedrl.{kind}", "version": 1}
    doc.update(payload)
    doc["provenance"] = provenance or {}
    return doc


def _check_format(doc: dict, kind: str, path) -> None:
    if doc.get("format") != f"guardedrl.{kind}":
        raise ModelError(f"{path}: expected a guardedrl.{kind} artifact, got {doc.get('format')!r}")


# -- guardians ---------------------------------------------------------------


def save_guardian(guardian, path: str | Path, provenance: dict | None = None) -> None:
    if isinstance(guardian, PsosClassifier):
        payload = {
            "type": "psos",
            "scaler": guardian.scaler.to_dict(),
            "params": {
                "n_inputs": guardian.basis.n_inputs,
                "degree": guardian.basis.degree,
                "alpha_c": guardian.alpha_c,
                "cholesky_factor": guardian.L.tolist(),
                "fit_report": guardian.fit_report.to_dict() if guardian.fit_report else None,
            },
        }
    elif isinstance(guardian, KdeGuardian):
        payload = {
            "type": "kde",
            "scaler": guardian.scaler.to_dict(),
            "params": {
                "reference_points": guardian.reference_points.tolist(),
                "bandwidth": guardian.bandwidth.tolist(),
                "threshold": guardian.threshold,
                "alpha": guardian.alpha,
                "achieved_outlier_fraction": guardian.achieved_outlier_fraction,
                "search_iterations": guardian.search_iterations,
            },
        }
    elif isinstance(guardian, KnnGuardian):
        payload = {
            "type": "knn",
            "scaler": guardian.scaler.to_dict(),
            "params": {
                "reference_points": guardian.reference_points.tolist(),
                "k": guardian.k,
                "radius": guardian.radius,
                "alpha": guardian.alpha,
                "achieved_outlier_fraction": guardian.achieved_outlier_fraction,
            },
        }
    elif isinstance(guardian, ConstantGuardian):
        payload = {"type": "constant",
                   "scaler": ZScaler.identity(max(guardian.dim, 1)).to_dict(),
                   "params": {"ood_value": guardian.ood_value, "dim": guardian.dim}}
    else:
        raise ModelError(f"cannot serialize guardian of type {type(guardian).__name__}")
    write_json(_envelope("guardian", payload, provenance), path)


def load_guardian(path: str | Path):
    doc = read_json(path)
    _check_format(doc, "guardian", path)
    kind = doc.get("type")
    try:
        scaler = ZScaler.from_dict(doc["scaler"])
        p = doc["params"]
        if kind == "psos":
            basis = MonomialBasis(int(p["n_inputs"]), int(p["degree"]))
            report = PsosFitReport(**p["fit_report"]) if p.get("fit_report") else None
            return PsosClassifier(basis, np.asarray(p["cholesky_factor"], float),
                                  float(p["alpha_c"]), scaler, report)
        if kind == "kde":
            return KdeGuardian(
                reference_points=np.asarray(p["reference_points"], float),
                bandwidth=np.asarray(p["bandwidth"], float),
                threshold=float(p["threshold"]),
                alpha=float(p["alpha"]),
                achieved_outlier_fraction=float(p["achieved_outlier_fraction"]),
                scaler=scaler,
                search_iterations=int(p.get("search_iterations", 0)),
            )
        if kind == "knn":
            return KnnGuardian(
                reference_points=np.asarray(p["reference_points"], float),
                k=int(p["k"]),
                radius=float(p["radius"]),
                alpha=float(p["alpha"]),
                achieved_outlier_fraction=float(p["achieved_outlier_fraction"]),
                scaler=scaler,
            )
        if kind == "constant":
            return ConstantGuardian(bool(p["ood_value"]), int(p.get("dim", 0)))
    except ModelError:
        raise
    except Exception as exc:
        raise ModelError(f"{path}: malformed guardian payload: {exc}") from None
    raise ModelError(f"{path}: unknown guardian type {kind!r}")


# -- transition model ----------------------------------------------------------


def save_model(model: KnnTransitionModel, path: str | Path, dataset_path: str | Path,
               split: str | None, provenance: dict | None = None) -> None:
    dataset_path = Path(dataset_path)
    payload = {
        "type": "knn",
        "k": model.k,
        "weighting": model.weighting,
        "split": split,
        "standardization": model.standardization.to_dict(),
        "dataset": {
            "path": dataset_path.name,
            "sha256": file_sha256(dataset_path),
        },
    }
    write_json(_envelope("model", payload, provenance), path)


def load_model(path: str | Path, dataset_dir: str | Path | None = None) -> KnnTransitionModel:
    path = Path(path)
    doc = read_json(path)
    _check_format(doc, "model", path)
    if doc.get("type") != "knn":
        raise ModelError(f"{path}: unknown model type {doc.get('type')!r}")
    base = Path(dataset_dir) if dataset_dir is not None else path.parent
    data_path = base / doc["dataset"]["path"]
    if not data_path.exists():
        raise ModelError(f"{path}: referenced dataset {data_path} not found")
    actual = file_sha256(data_path)
    if actual != doc["dataset"]["sha256"]:
        raise ModelError(
            f"{path}: dataset hash mismatch (expected {doc['dataset']['sha256'][:12]}..., "
            f"got {actual[:12]}...)")
    dataset = read_dataset_csv(data_path)
    model = fit_knn_model(dataset, k=int(doc["k"]), weighting=doc["weighting"],
                          split=doc.get("split"))
    stored = Standardization.from_dict(doc["standardization"])
    for a, b in ((stored.state_mean, model.standardization.state_mean),
                 (stored.state_scale, model.standardization.state_scale),
                 (stored.action_mean, model.standardization.action_mean),
                 (stored.action_scale, model.standardization.action_scale)):
        if not np.allclose(a, b, rtol=1e-10, atol=1e-12):
            raise ModelError(f"{path}: stored standardization disagrees with the dataset")
    return model


# -- policies -------------------------------------------------------------------


def save_policy(policy: GaussianPolicy, path: str | Path,
                provenance: dict | None = None) -> None:
    write_json(_envelope("policy", {"policy": policy.to_dict()}, provenance), path)


def load_policy(path: str | Path) -> GaussianPolicy:
    doc = read_json(path)
    _check_format(doc, "policy", path)
    try:
        return GaussianPolicy.from_dict(doc["policy"])
    except Exception as exc:
        raise ModelError(f"{path}: malformed policy payload: {exc}") from None


# -- environments ----------------------------------------------------------------


def save_env(env: SyntheticClinicalCmdp, path: str | Path,
             provenance: dict | None = None) -> None:
    env.support_oracle()  # freeze before writing so the artifact is complete
    write_json(_envelope("env", {"env": env.to_dict()}, provenance), path)


def load_env(path: str | Path) -> SyntheticClinicalCmdp:
    doc = read_json(path)
    _check_format(doc, "env", path)
    try:
        return SyntheticClinicalCmdp.from_dict(doc["env"])
    except Exception as exc:
        raise ModelError(f"{path}: malformed env payload: {exc}") from None
