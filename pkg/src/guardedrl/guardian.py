"""In-distribution guardians learned from offline state-action data.

A *guardian* is a binary classifier over state-action pairs x = (s, a): it
answers "was this pair covered by the behavior data?" and is used to keep
model-based policy search inside the region where the estimated dynamics can
be trusted.  Three constructions are provided:

* :class:`PsosClassifier` — a polynomial sublevel set {x : q(x) <= 1} with
  q(x) = e(x)^T P e(x), P = L L^T positive semidefinite and e(x) the graded
  monomial embedding.  Fitted by minimizing -log det P (shrinking the set)
  subject to an empirical coverage constraint: at most a fraction ``alpha_c``
  of the fitting points may fall outside.  The constraint is smoothed with a
  logistic surrogate and enforced by a penalty method with doubling weights;
  the free parameter is the Cholesky factor L, optimized by plain gradient
  descent with backtracking line search (no SDP solver involved).
* :class:`KdeGuardian` — leave-one-out kernel density estimates on the
  fitting set, with the density threshold chosen by binary search so the
  flagged fraction matches a target ``alpha``.
* :class:`KnnGuardian` — k-th-neighbor distance with a radius calibrated on a
  held-out split.

Conventions: inputs to ``classify`` are standardized with the guardian's
stored scaler; a point exactly at the decision threshold is *in*-distribution.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit

from .core import (
    DegenerateBandwidthError,
    InfeasibleFitError,
    InvalidInputError,
    Standardization,
    UnderDeterminedError,
)

__all__ = [
    "GuardianVerdict",
    "ZScaler",
    "MonomialBasis",
    "PsosFitReport",
    "PsosClassifier",
    "fit_psos",
    "psos_eval",
    "KdeGuardian",
    "fit_kde_guardian",
    "KnnGuardian",
    "fit_knn_guardian",
    "ConstantGuardian",
    "required_sample_size",
    "empirical_coverage",
]


@dataclass(frozen=True)
class GuardianVerdict:
    """Classification outcome: ``ood`` is True off-support; ``score`` is the
    classifier-specific statistic behind the decision."""

    ood: bool
    score: float


# ---------------------------------------------------------------------------
# Input scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ZScaler:
    """Per-dimension z-scoring over the joint state-action space."""

    mean: np.ndarray
    scale: np.ndarray

    @staticmethod
    def fit(points: np.ndarray) -> "ZScaler":
        points = np.asarray(points, dtype=float)
        std = points.std(axis=0)
        return ZScaler(points.mean(axis=0), np.where(std > 0.0, std, 1.0))

    @staticmethod
    def identity(dim: int) -> "ZScaler":
        return ZScaler(np.zeros(dim), np.ones(dim))

    @staticmethod
    def from_standardization(std: Standardization) -> "ZScaler":
        return ZScaler(
            np.concatenate([std.state_mean, std.action_mean]),
            np.concatenate([std.state_scale, std.action_scale]),
        )

    @property
    def dim(self) -> int:
        return len(self.mean)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "ZScaler":
        return ZScaler(np.asarray(d["mean"], float), np.asarray(d["scale"], float))


# ---------------------------------------------------------------------------
# Monomial embedding
# ---------------------------------------------------------------------------


class MonomialBasis:
    """All monomials of total degree <= ``degree`` in ``n_inputs`` variables.

    Ordering is graded lexicographic: by total degree, then by exponent tuple
    in descending lexicographic order, so the constant term comes first and
    e.g. for two variables, degree 2: 1, x1, x2, x1^2, x1*x2, x2^2.
    """

    def __init__(self, n_inputs: int, degree: int):
        if n_inputs < 1 or int(n_inputs) != n_inputs:
            raise InvalidInputError("n_inputs must be a positive integer")
        if degree < 1 or int(degree) != degree:
            raise InvalidInputError("degree must be a positive integer")
        self.n_inputs = int(n_inputs)
        self.degree = int(degree)
        idx = [
            mi
            for mi in itertools.product(range(self.degree + 1), repeat=self.n_inputs)
            if sum(mi) <= self.degree
        ]
        idx.sort(key=lambda mi: (sum(mi), tuple(-e for e in mi)))
        self.exponents = np.array(idx, dtype=int)

    @property
    def term_count(self) -> int:
        return len(self.exponents)

    def embed(self, x: np.ndarray) -> np.ndarray:
        """Monomial feature vector of a single point."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_inputs,):
            raise InvalidInputError(f"expected a length-{self.n_inputs} vector, got shape {x.shape}")
        return np.prod(x[None, :] ** self.exponents, axis=1)

    def embed_matrix(self, X: np.ndarray) -> np.ndarray:
        """Monomial features row-wise for an (N, n_inputs) matrix."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise InvalidInputError(f"expected an (N, {self.n_inputs}) matrix, got shape {X.shape}")
        # Per-dimension power tables keep this O(T * n_inputs) column products.
        powers = [np.vander(X[:, d], self.degree + 1, increasing=True) for d in range(self.n_inputs)]
        E = np.ones((X.shape[0], self.term_count))
        for t, mi in enumerate(self.exponents):
            col = E[:, t]
            for d, e in enumerate(mi):
                if e:
                    col *= powers[d][:, e]
        return E


# ---------------------------------------------------------------------------
# Polynomial sublevel-set classifier
# ---------------------------------------------------------------------------


@dataclass
class PsosFitReport:
    objective: float          # -log det P at the returned iterate
    outlier_fraction: float   # empirical fraction with q > 1 on the fitting set
    iterations: int
    converged: bool
    penalty_weight: float
    stages: int

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "outlier_fraction": self.outlier_fraction,
            "iterations": self.iterations,
            "converged": self.converged,
            "penalty_weight": self.penalty_weight,
            "stages": self.stages,
        }


@dataclass
class PsosClassifier:
    """Sublevel set {x : e(x)^T (L L^T) e(x) <= 1} in standardized coordinates."""

    basis: MonomialBasis
    L: np.ndarray
    alpha_c: float
    scaler: ZScaler
    fit_report: PsosFitReport | None = None

    def __post_init__(self):
        T = self.basis.term_count
        self.L = np.asarray(self.L, dtype=float)
        if self.L.shape != (T, T):
            raise InvalidInputError(f"L must be ({T}, {T})")
        if not np.allclose(self.L, np.tril(self.L)):
            raise InvalidInputError("L must be lower triangular")
        if np.any(np.diag(self.L) < 0):
            raise InvalidInputError("diag(L) must be nonnegative")

    def q_value(self, x: np.ndarray) -> float:
        e = self.basis.embed(np.asarray(x, dtype=float))
        v = self.L.T @ e
        return float(v @ v)

    def q_values(self, X: np.ndarray) -> np.ndarray:
        Z = self.basis.embed_matrix(X) @ self.L
        return np.einsum("ij,ij->i", Z, Z)

    def classify(self, x: np.ndarray) -> GuardianVerdict:
        q = self.q_value(x)
        return GuardianVerdict(ood=q > 1.0, score=q)

    def ood_mask(self, X: np.ndarray) -> np.ndarray:
        return self.q_values(X) > 1.0

    def classify_raw(self, x_raw: np.ndarray) -> GuardianVerdict:
        return self.classify(self.scaler.transform(x_raw))

    def ood_mask_raw(self, X_raw: np.ndarray) -> np.ndarray:
        return self.ood_mask(self.scaler.transform(X_raw))


def psos_eval(L: np.ndarray, basis: MonomialBasis, x: np.ndarray) -> float:
    """q(x) = e(x)^T (L L^T) e(x) for a lower-triangular factor L."""
    L = np.asarray(L, dtype=float)
    e = basis.embed(np.asarray(x, dtype=float))
    if L.shape != (basis.term_count, basis.term_count):
        raise InvalidInputError("factor shape does not match the basis")
    v = L.T @ e
    return float(v @ v)


def fit_psos(
    points: np.ndarray,
    degree: int,
    alpha_c: float,
    *,
    scaler: ZScaler | None = None,
    kappa: float = 25.0,
    max_iterations: int = 2000,
    tol: float = 1e-6,
    initial_penalty: float = 64.0,
    max_penalty_doublings: int = 10,
) -> PsosClassifier:
    """Fit the minimum-volume polynomial sublevel set covering the data.

    Minimizes -log det P over P = L L^T subject to the empirical constraint
    that at most ``alpha_c`` of the (standardized) fitting points satisfy
    q(x) > 1.  The indicator is smoothed as sigmoid(kappa * (q - 1)); the
    smoothed constraint enters as a squared-hinge penalty whose weight doubles
    (up to ``max_penalty_doublings`` times) until the *hard* constraint holds.
    Descent steps use backtracking (Armijo) line search on the penalized
    objective; the returned iterate is the best hard-feasible one seen.

    Raises :class:`UnderDeterminedError` when N < term_count and
    :class:`InfeasibleFitError` when no hard-feasible iterate is found within
    the iteration budget.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("points must be a nonempty (N, n_inputs) matrix")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("points must be finite")
    if not (0.0 < alpha_c < 1.0):
        raise InvalidInputError("alpha_c must lie in (0, 1)")
    if degree > 3:
        raise InvalidInputError("degrees above 3 are not supported")
    N, n_inputs = X.shape
    basis = MonomialBasis(n_inputs, degree)
    T = basis.term_count
    if N < T:
        raise UnderDeterminedError(
            f"need at least {T} points to identify a degree-{degree} set in "
            f"{n_inputs} variables, got {N}")
    if scaler is None:
        scaler = ZScaler.fit(X)
    E = basis.embed_matrix(scaler.transform(X))

    def penalized(L: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """Objective value plus (q, surrogate) at L; +inf if diag invalid."""
        d = np.diag(L)
        if np.any(d <= 0.0):
            return np.inf, None, None
        Z = E @ L
        q = np.einsum("ij,ij->i", Z, Z)
        s = expit(kappa * (q - 1.0))
        viol = max(0.0, float(s.mean()) - alpha_c)
        f = -2.0 * float(np.log(d).sum()) + weight * viol * viol
        return f, q, s

    # Hard-feasible start shaped like the data: the inverse second moment of
    # the embeddings, rescaled so at most the allowed fraction starts outside.
    # (Identity-like starts are catastrophically mis-scaled for monomial
    # features, whose norms span many orders of magnitude.)
    C = (E.T @ E) / N
    C[np.diag_indices_from(C)] += 1e-9 * float(np.trace(C)) / T + 1e-12
    P0 = np.linalg.inv(C)
    P0 = 0.5 * (P0 + P0.T)
    P0[np.diag_indices_from(P0)] += 1e-12 * float(np.trace(P0)) / T + 1e-300
    q0 = np.einsum("ij,jk,ik->i", E, P0, E)
    allowed_out = int(math.floor(alpha_c * N))
    scale = float(np.sort(q0)[N - allowed_out - 1])  # points above it: <= allowed
    scale *= 1.0 + 1e-9  # cushion: the boundary point stays inside under roundoff
    L = np.linalg.cholesky(P0 / max(scale, 1e-300))

    def neg_logdet(L: np.ndarray) -> float:
        return -2.0 * float(np.log(np.maximum(np.diag(L), 1e-300)).sum())

    best_L = L.copy()
    best_obj = neg_logdet(L)
    # The surrogate wall must tower over any log-det gain available by walking
    # through it, otherwise descent tunnels into the all-outlier region where
    # the sigmoid saturates and its gradient vanishes.
    weight = max(float(initial_penalty), 100.0 * (T + abs(best_obj)))

    iterations = 0
    stages = 0
    converged = False
    step = 1.0

    for stage in range(max_penalty_doublings + 1):
        stages = stage + 1
        f_cur, q_cur, s_cur = penalized(L)
        stage_converged = False
        while iterations < max_iterations:
            iterations += 1
            # Gradient of the penalized objective w.r.t. the lower triangle.
            d = np.diag(L)
            viol = max(0.0, float(s_cur.mean()) - alpha_c)
            G = np.zeros_like(L)
            np.fill_diagonal(G, -2.0 / d)
            if viol > 0.0:
                coeff = weight * 2.0 * viol * (kappa / len(q_cur)) * s_cur * (1.0 - s_cur)
                G += 2.0 * (E.T @ (coeff[:, None] * (E @ L)))
            G = np.tril(G)
            gnorm2 = float((G * G).sum())
            if gnorm2 == 0.0:
                stage_converged = True
                break
            step = min(step * 2.0, 1e3)
            accepted = False
            for _ in range(40):
                L_new = L - step * G
                f_new, q_new, s_new = penalized(L_new)
                if f_new <= f_cur - 1e-4 * step * gnorm2:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                stage_converged = True
                break
            rel_drop = (f_cur - f_new) / max(1.0, abs(f_cur))
            L, f_cur, q_cur, s_cur = L_new, f_new, q_new, s_new
            hard = float(np.mean(q_cur > 1.0))
            if hard <= alpha_c:
                obj = -2.0 * float(np.log(np.diag(L)).sum())
                if obj < best_obj:
                    best_obj, best_L = obj, L.copy()
            if rel_drop < tol:
                stage_converged = True
                break
        hard = float(np.mean(q_cur > 1.0))
        if stage_converged and hard <= alpha_c:
            converged = True
            break
        if iterations >= max_iterations:
            break
        weight *= 2.0

    if best_L is None:
        report = PsosFitReport(
            objective=-2.0 * float(np.log(np.maximum(np.diag(L), 1e-300)).sum()),
            outlier_fraction=float(np.mean(q_cur > 1.0)),
            iterations=iterations, converged=False,
            penalty_weight=weight, stages=stages)
        raise InfeasibleFitError(
            f"coverage constraint unsatisfied after {iterations} iterations",
            best=PsosClassifier(basis, _canonical(L), alpha_c, scaler, report))

    L_out = _canonical(best_L)
    Zb = E @ L_out
    qb = np.einsum("ij,ij->i", Zb, Zb)
    report = PsosFitReport(
        objective=float(best_obj),
        outlier_fraction=float(np.mean(qb > 1.0)),
        iterations=iterations,
        converged=converged,
        penalty_weight=weight,
        stages=stages,
    )
    return PsosClassifier(basis, L_out, float(alpha_c), scaler, report)


def _canonical(L: np.ndarray) -> np.ndarray:
    """Flip column signs so the diagonal is nonnegative (P is unchanged)."""
    L = np.tril(np.asarray(L, dtype=float).copy())
    signs = np.where(np.diag(L) < 0.0, -1.0, 1.0)
    return L * signs[None, :]


# ---------------------------------------------------------------------------
# Kernel-density guardian
# ---------------------------------------------------------------------------


def _kde_densities(queries: np.ndarray, refs: np.ndarray, bandwidth: np.ndarray,
                   exclude_self: bool = False) -> np.ndarray:
    """Gaussian product-kernel density of ``queries`` under ``refs``.

    With ``exclude_self`` the two matrices must be identical and each point is
    left out of its own estimate (divisor N-1 instead of N).
    """
    d = refs.shape[1]
    norm = float(np.prod(bandwidth)) * (2.0 * math.pi) ** (d / 2.0)
    Q = queries / bandwidth
    R = refs / bandwidth
    n_eff = len(refs) - 1 if exclude_self else len(refs)
    if n_eff < 1:
        raise InvalidInputError("need at least two reference points for leave-one-out")
    out = np.empty(len(Q))
    r_sq = np.einsum("ij,ij->i", R, R)
    block = max(1, int(2**22 // max(len(refs), 1)))
    for start in range(0, len(Q), block):
        qb = Q[start:start + block]
        d2 = np.maximum(
            r_sq[None, :] + np.einsum("ij,ij->i", qb, qb)[:, None] - 2.0 * (qb @ R.T),
            0.0,
        )
        k = np.exp(-0.5 * d2)
        if exclude_self:
            for i in range(len(qb)):
                k[i, start + i] = 0.0
        out[start:start + block] = k.sum(axis=1)
    return out / (n_eff * norm)


def scott_bandwidth(points: np.ndarray) -> np.ndarray:
    """Scott's rule N^(-1/(d+4)) times the per-dimension standard deviation."""
    points = np.asarray(points, dtype=float)
    N, d = points.shape
    return N ** (-1.0 / (d + 4.0)) * points.std(axis=0)


@dataclass
class KdeGuardian:
    """Density-threshold guardian: OOD iff the KDE density falls below
    the calibrated threshold (ties count as in-distribution)."""

    reference_points: np.ndarray   # standardized coordinates
    bandwidth: np.ndarray
    threshold: float
    alpha: float
    achieved_outlier_fraction: float
    scaler: ZScaler
    search_iterations: int = 0

    def density(self, x: np.ndarray) -> float:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return float(_kde_densities(x, self.reference_points, self.bandwidth)[0])

    def densities(self, X: np.ndarray) -> np.ndarray:
        return _kde_densities(np.asarray(X, dtype=float), self.reference_points, self.bandwidth)

    def classify(self, x: np.ndarray) -> GuardianVerdict:
        dens = self.density(x)
        return GuardianVerdict(ood=dens < self.threshold, score=dens)

    def ood_mask(self, X: np.ndarray) -> np.ndarray:
        return self.densities(X) < self.threshold

    def classify_raw(self, x_raw: np.ndarray) -> GuardianVerdict:
        return self.classify(self.scaler.transform(x_raw))

    def ood_mask_raw(self, X_raw: np.ndarray) -> np.ndarray:
        return self.ood_mask(self.scaler.transform(X_raw))


def fit_kde_guardian(
    points: np.ndarray,
    alpha: float,
    *,
    bandwidth: float | np.ndarray | None = None,
    scaler: ZScaler | None = None,
    max_search_iterations: int = 50,
    bracket_tol: float = 1e-12,
) -> KdeGuardian:
    """Calibrate a KDE guardian so ~``alpha`` of the fitting points flag OOD.

    Leave-one-out densities are computed at every fitting point and the
    threshold is found by bisection on t -> fraction{density_i < t}; the
    search stops after ``max_search_iterations`` or when the bracket is below
    ``bracket_tol``, leaving the flagged fraction within 1/N of ``alpha``.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise InvalidInputError("points must be an (N>=2, d) matrix")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("points must be finite")
    if not (0.0 < alpha < 1.0):
        raise InvalidInputError("alpha must lie in (0, 1)")
    if scaler is None:
        scaler = ZScaler.fit(X)
    Xz = scaler.transform(X)
    if bandwidth is None:
        bw = scott_bandwidth(Xz)
    else:
        bw = np.broadcast_to(np.asarray(bandwidth, dtype=float), (X.shape[1],)).copy()
    if np.any(bw <= 0.0) or not np.all(np.isfinite(bw)):
        raise DegenerateBandwidthError(
            "kernel bandwidth is zero or non-finite (identical points in some dimension?)")

    dens = _kde_densities(Xz, Xz, bw, exclude_self=True)
    N = len(dens)
    lo, hi = 0.0, float(dens.max()) * (1.0 + 1e-9)
    it = 0
    while it < max_search_iterations and (hi - lo) > bracket_tol:
        it += 1
        mid = 0.5 * (lo + hi)
        if float(np.mean(dens < mid)) > alpha:
            hi = mid
        else:
            lo = mid
    threshold = lo
    achieved = float(np.mean(dens < threshold))
    return KdeGuardian(
        reference_points=Xz,
        bandwidth=bw,
        threshold=threshold,
        alpha=float(alpha),
        achieved_outlier_fraction=achieved,
        scaler=scaler,
        search_iterations=it,
    )


# ---------------------------------------------------------------------------
# k-nearest-neighbor guardian
# ---------------------------------------------------------------------------


@dataclass
class KnnGuardian:
    """Distance-threshold guardian: OOD iff the k-th-neighbor distance among
    the reference points exceeds the calibrated radius."""

    reference_points: np.ndarray   # standardized coordinates
    k: int
    radius: float
    alpha: float
    achieved_outlier_fraction: float
    scaler: ZScaler
    _tree: cKDTree | None = field(default=None, repr=False, compare=False)

    def _get_tree(self) -> cKDTree:
        if self._tree is None:
            object.__setattr__(self, "_tree", cKDTree(self.reference_points))
        return self._tree

    def kth_distance(self, x: np.ndarray) -> float:
        d, _ = self._get_tree().query(np.asarray(x, dtype=float), k=self.k)
        return float(np.atleast_1d(d)[-1])

    def classify(self, x: np.ndarray) -> GuardianVerdict:
        dist = self.kth_distance(x)
        return GuardianVerdict(ood=dist > self.radius, score=dist)

    def ood_mask(self, X: np.ndarray) -> np.ndarray:
        d, _ = self._get_tree().query(np.asarray(X, dtype=float), k=self.k)
        d = d[:, -1] if self.k > 1 else np.atleast_1d(d)
        return d > self.radius

    def classify_raw(self, x_raw: np.ndarray) -> GuardianVerdict:
        return self.classify(self.scaler.transform(x_raw))

    def ood_mask_raw(self, X_raw: np.ndarray) -> np.ndarray:
        return self.ood_mask(self.scaler.transform(X_raw))


def fit_knn_guardian(
    points: np.ndarray,
    alpha: float,
    k: int = 5,
    *,
    calibration_points: np.ndarray | None = None,
    scaler: ZScaler | None = None,
) -> KnnGuardian:
    """Calibrate the radius as the (1 - alpha) quantile of k-th-neighbor
    distances on a held-out calibration split (every fifth point when no
    explicit calibration set is given)."""
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise InvalidInputError("points must be an (N>=2, d) matrix")
    if not (0.0 < alpha < 1.0):
        raise InvalidInputError("alpha must lie in (0, 1)")
    if k < 1 or int(k) != k:
        raise InvalidInputError("k must be a positive integer")
    if scaler is None:
        scaler = ZScaler.fit(X)
    if calibration_points is None:
        idx = np.arange(len(X))
        cal_mask = (idx % 5) == 4
        if not cal_mask.any() or cal_mask.all():
            raise InvalidInputError("too few points to split off a calibration set")
        refs, cal = X[~cal_mask], X[cal_mask]
    else:
        refs, cal = X, np.asarray(calibration_points, dtype=float)
        if cal.ndim != 2 or cal.shape[1] != X.shape[1] or len(cal) == 0:
            raise InvalidInputError("calibration_points must be a nonempty matrix matching points")
    refs_z = scaler.transform(refs)
    cal_z = scaler.transform(cal)
    if k > len(refs_z):
        raise InvalidInputError(f"k={k} exceeds the {len(refs_z)} reference points")
    tree = cKDTree(refs_z)
    d, _ = tree.query(cal_z, k=k)
    kth = d[:, -1] if k > 1 else np.atleast_1d(d)
    radius = float(np.quantile(kth, 1.0 - alpha))
    achieved = float(np.mean(kth > radius))
    return KnnGuardian(
        reference_points=refs_z,
        k=int(k),
        radius=radius,
        alpha=float(alpha),
        achieved_outlier_fraction=achieved,
        scaler=scaler,
    )


# ---------------------------------------------------------------------------
# Trivial guardian (baselines and diagnostics)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantGuardian:
    """Accept-everything (ood_value=False) or reject-everything guardian."""

    ood_value: bool
    dim: int = 0

    def classify(self, x: np.ndarray) -> GuardianVerdict:
        return GuardianVerdict(ood=self.ood_value, score=1.0 if self.ood_value else 0.0)

    def ood_mask(self, X: np.ndarray) -> np.ndarray:
        return np.full(len(np.atleast_2d(X)), self.ood_value, dtype=bool)

    def classify_raw(self, x_raw: np.ndarray) -> GuardianVerdict:
        return self.classify(x_raw)

    def ood_mask_raw(self, X_raw: np.ndarray) -> np.ndarray:
        return self.ood_mask(X_raw)


# ---------------------------------------------------------------------------
# Sample-size calculator and coverage
# ---------------------------------------------------------------------------


def required_sample_size(delta: float, alpha_c: float, alpha: float) -> int:
    """Smallest integer N with N > sqrt(log(1/delta) / (2 (alpha_c - alpha))).

    With at least this many fitting points, a set whose smoothed outlier
    budget is calibrated at ``alpha_c`` exceeds true mass 1 - alpha with
    probability at least 1 - delta.
    """
    if not (0.0 < delta < 1.0):
        raise InvalidInputError("delta must lie in (0, 1)")
    if not (0.0 <= alpha < alpha_c < 1.0):
        raise InvalidInputError("need 0 <= alpha < alpha_c < 1")
    bound = math.sqrt(math.log(1.0 / delta) / (2.0 * (alpha_c - alpha)))
    return int(math.floor(bound)) + 1


def empirical_coverage(guardian, points: np.ndarray) -> float:
    """Fraction of ``points`` (in classify coordinates) judged in-distribution."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or len(points) == 0:
        raise InvalidInputError("points must be a nonempty 2-D matrix")
    return 1.0 - float(np.mean(guardian.ood_mask(points)))
