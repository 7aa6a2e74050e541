"""Diagonal-Gaussian policies with closed-form log-probability gradients.

The mean map is either affine in the (z-scored) state or a one-hidden-layer
tanh network; the per-dimension log standard deviations are state-independent
and clamped to [-5, 2].  Parameters flatten into a single vector in a fixed
order so REINFORCE-style updates and finite-difference checks agree:
affine -> [W.ravel, b, log_std]; mlp -> [W1.ravel, b1, W2.ravel, b2, log_std].
"""

from __future__ import annotations

import math

import numpy as np

from .core import InvalidInputError, OfflineDataset

__all__ = ["GaussianPolicy", "fit_behavior_cloning", "LOG_STD_BOUNDS"]

LOG_STD_BOUNDS = (-5.0, 2.0)


class GaussianPolicy:
    """pi(a | s) = N(mean(s), diag(exp(log_std))^2)."""

    def __init__(self, n: int, m: int, *, hidden: int | None = None,
                 state_mean: np.ndarray | None = None,
                 state_scale: np.ndarray | None = None):
        if n < 1 or m < 1:
            raise InvalidInputError("state/action dimensions must be positive")
        self.n = int(n)
        self.m = int(m)
        self.hidden = int(hidden) if hidden else None
        self.state_mean = np.zeros(n) if state_mean is None else np.asarray(state_mean, float)
        self.state_scale = np.ones(n) if state_scale is None else np.asarray(state_scale, float)
        if self.state_mean.shape != (n,) or self.state_scale.shape != (n,):
            raise InvalidInputError("state standardization shape mismatch")
        if self.hidden is None:
            self.W = np.zeros((m, n))
            self.b = np.zeros(m)
        else:
            self.W1 = np.zeros((self.hidden, n))
            self.b1 = np.zeros(self.hidden)
            self.W2 = np.zeros((m, self.hidden))
            self.b2 = np.zeros(m)
        self.log_std = np.full(m, -1.0)

    # -- parameter vector ----------------------------------------------------

    @property
    def arch(self) -> str:
        return "affine" if self.hidden is None else "mlp"

    def get_params(self) -> np.ndarray:
        if self.hidden is None:
            parts = [self.W.ravel(), self.b, self.log_std]
        else:
            parts = [self.W1.ravel(), self.b1, self.W2.ravel(), self.b2, self.log_std]
        return np.concatenate(parts)

    def set_params(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise InvalidInputError(f"expected {self.n_params} parameters, got {theta.shape}")
        i = 0

        def take(shape):
            nonlocal i
            size = int(np.prod(shape))
            out = theta[i:i + size].reshape(shape)
            i += size
            return out.copy()

        if self.hidden is None:
            self.W = take((self.m, self.n))
            self.b = take((self.m,))
        else:
            self.W1 = take((self.hidden, self.n))
            self.b1 = take((self.hidden,))
            self.W2 = take((self.m, self.hidden))
            self.b2 = take((self.m,))
        self.log_std = np.clip(take((self.m,)), *LOG_STD_BOUNDS)

    @property
    def n_params(self) -> int:
        if self.hidden is None:
            return self.m * self.n + self.m + self.m
        return self.hidden * self.n + self.hidden + self.m * self.hidden + self.m + self.m

    def copy(self) -> "GaussianPolicy":
        other = GaussianPolicy(self.n, self.m, hidden=self.hidden,
                               state_mean=self.state_mean.copy(),
                               state_scale=self.state_scale.copy())
        other.set_params(self.get_params())
        return other

    # -- distribution --------------------------------------------------------

    def _z(self, state: np.ndarray) -> np.ndarray:
        return (np.asarray(state, dtype=float) - self.state_mean) / self.state_scale

    def mean_action(self, state: np.ndarray) -> np.ndarray:
        z = self._z(state)
        if self.hidden is None:
            return self.W @ z + self.b
        return self.W2 @ np.tanh(self.W1 @ z + self.b1) + self.b2

    def sample_action(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.mean_action(state) + np.exp(self.log_std) * rng.standard_normal(self.m)

    def log_prob(self, state: np.ndarray, action: np.ndarray) -> float:
        a = np.asarray(action, dtype=float)
        mu = self.mean_action(state)
        std = np.exp(self.log_std)
        u = (a - mu) / std
        return float(-0.5 * (u @ u) - self.log_std.sum() - 0.5 * self.m * math.log(2.0 * math.pi))

    def log_prob_grad(self, state: np.ndarray, action: np.ndarray) -> tuple[float, np.ndarray]:
        """(log_prob, d log_prob / d theta) with theta the flattened params."""
        a = np.asarray(action, dtype=float)
        z = self._z(state)
        std = np.exp(self.log_std)
        if self.hidden is None:
            mu = self.W @ z + self.b
        else:
            u1 = self.W1 @ z + self.b1
            t1 = np.tanh(u1)
            mu = self.W2 @ t1 + self.b2
        diff = (a - mu) / (std * std)          # d log_prob / d mu
        dlog_std = ((a - mu) / std) ** 2 - 1.0
        if self.hidden is None:
            dW = np.outer(diff, z)
            grad = np.concatenate([dW.ravel(), diff, dlog_std])
        else:
            dW2 = np.outer(diff, t1)
            db2 = diff
            dt1 = self.W2.T @ diff
            du1 = (1.0 - t1 * t1) * dt1
            dW1 = np.outer(du1, z)
            grad = np.concatenate([dW1.ravel(), du1, dW2.ravel(), db2, dlog_std])
        u = (a - mu) / std
        logp = float(-0.5 * (u @ u) - self.log_std.sum() - 0.5 * self.m * math.log(2.0 * math.pi))
        return logp, grad

    # -- (de)serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "n": self.n,
            "m": self.m,
            "hidden": self.hidden,
            "state_mean": self.state_mean.tolist(),
            "state_scale": self.state_scale.tolist(),
            "params": self.get_params().tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "GaussianPolicy":
        pol = GaussianPolicy(
            int(d["n"]), int(d["m"]),
            hidden=d.get("hidden"),
            state_mean=np.asarray(d["state_mean"], float),
            state_scale=np.asarray(d["state_scale"], float),
        )
        pol.set_params(np.asarray(d["params"], float))
        return pol


def fit_behavior_cloning(dataset: OfflineDataset, *, split: str | None = "train",
                         ridge: float = 1e-6) -> GaussianPolicy:
    """Affine least-squares regression of observed actions on states.

    A standard warm start for offline policy search: the returned policy's
    mean map reproduces the behavior trend and its log_std matches the
    per-dimension residual spread.
    """
    trajs = dataset.select(split)
    if not trajs:
        trajs = dataset.select(None)
    S = np.concatenate([t.states() for t in trajs])
    A = np.concatenate([t.actions() for t in trajs])
    pol = GaussianPolicy(dataset.n, dataset.m,
                         state_mean=dataset.standardization.state_mean,
                         state_scale=dataset.standardization.state_scale)
    Z = (S - pol.state_mean) / pol.state_scale
    X = np.concatenate([Z, np.ones((len(Z), 1))], axis=1)
    G = X.T @ X + ridge * np.eye(X.shape[1])
    coef = np.linalg.solve(G, X.T @ A)      # (n+1, m)
    pol.W = coef[:-1].T
    pol.b = coef[-1]
    resid = A - X @ coef
    std = np.maximum(resid.std(axis=0), 1e-3)
    pol.log_std = np.clip(np.log(std), *LOG_STD_BOUNDS)
    return pol
