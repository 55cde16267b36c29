"""Soft-margin SVM trained by SMO with second-order working-set selection.

The solver follows Fan, Chen & Lin (2005): pick the maximal-violating ``i``,
then the ``j`` giving the largest guaranteed decrease of the dual, and stop
when the KKT gap ``m(alpha) - M(alpha)`` falls below ``tol``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, DataError

TAU = 1e-12


@dataclass(frozen=True)
class SvmConfig:
    kernel: str = "rbf"
    gamma: float | None = None  # None -> 1 / n_features
    C: float = 1.0
    tol: float = 1e-3
    max_iter: int = 100_000

    def __post_init__(self):
        if self.kernel not in ("linear", "rbf"):
            raise ConfigError(f"kernel must be 'linear' or 'rbf', got {self.kernel!r}")
        if self.C <= 0:
            raise ConfigError("C must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise ConfigError("gamma must be positive")


def kernel_matrix(A, B, kernel, gamma):
    if kernel == "linear":
        return A @ B.T
    return np.exp(-gamma * cdist(A, B, "sqeuclidean"))


def smo_solve(K, y, C, tol=1e-3, max_iter=100_000):
    """Solve the SVM dual for kernel ``K`` and labels ``y`` in {-1, +1}.

    Returns ``(alpha, rho, gap, iterations)``; the decision function is
    ``sum_i alpha_i y_i K(x_i, x) - rho``.
    """
    n = y.shape[0]
    Q = (y[:, None] * y[None, :]) * K
    diagQ = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0
    gap = np.inf
    it = 0
    for it in range(max_iter):
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < C))
        yg = -y * G
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(yg[up])])
        m_up = yg[i]
        gap = m_up - yg[low].min()
        if gap < tol:
            break
        cand = low & (yg < m_up)
        b = m_up - yg[cand]
        a = diagQ[i] + diagQ[cand] - 2.0 * y[i] * y[cand] * Q[i, cand]
        a = np.where(a > 0, a, TAU)
        cidx = np.flatnonzero(cand)
        j = int(cidx[np.argmin(-(b * b) / a)])

        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = diagQ[i] + diagQ[j] + 2.0 * Q[i, j]
            quad = quad if quad > 0 else TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            quad = diagQ[i] + diagQ[j] - 2.0 * Q[i, j]
            quad = quad if quad > 0 else TAU
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > C:
                if ni > C:
                    ni, nj = C, total - C
            elif nj < 0:
                nj, ni = 0.0, total
            if total > C:
                if nj > C:
                    nj, ni = C, total - C
            elif ni < 0:
                ni, nj = 0.0, total
        G += Q[:, i] * (ni - ai) + Q[:, j] * (nj - aj)
        alpha[i], alpha[j] = ni, nj

    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub, lb = np.inf, -np.inf
        upper_bound = alpha >= C
        lower_bound = alpha <= 0
        for t in range(n):
            if (upper_bound[t] and y[t] < 0) or (lower_bound[t] and y[t] > 0):
                ub = min(ub, yG[t])
            else:
                lb = max(lb, yG[t])
        rho = float((ub + lb) / 2.0)
    return alpha, rho, float(gap), it


@dataclass
class SvmModel:
    """Binary machine; ``classes[1]`` is the +1 side."""

    kernel: str
    gamma: float
    C: float
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float  # decision = K @ dual_coef + bias
    classes: tuple
    kkt_gap: float = 0.0
    iterations: int = 0
    train_accuracy: float | None = None

    def decision_function(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.support_vectors.shape[1]:
            raise ValueError(f"SVM expects {self.support_vectors.shape[1]} features, got {X.shape[1]}")
        K = kernel_matrix(X, self.support_vectors, self.kernel, self.gamma)
        return K @ self.dual_coef + self.bias

    def predict(self, X):
        f = self.decision_function(X)
        return np.where(f >= 0, self.classes[1], self.classes[0])

    def to_dict(self):
        return {"kernel": self.kernel, "gamma": self.gamma, "C": self.C,
                "support_vectors": self.support_vectors.tolist(),
                "dual_coef": self.dual_coef.tolist(), "bias": self.bias,
                "classes": list(self.classes), "kkt_gap": self.kkt_gap,
                "iterations": self.iterations, "train_accuracy": self.train_accuracy}

    @classmethod
    def from_dict(cls, d):
        sv = np.array(d["support_vectors"], dtype=float).reshape(len(d["dual_coef"]), -1)
        return cls(d["kernel"], d["gamma"], d["C"], sv, np.array(d["dual_coef"], dtype=float),
                   d["bias"], tuple(d["classes"]), d.get("kkt_gap", 0.0), d.get("iterations", 0),
                   d.get("train_accuracy"))


@dataclass
class OneVsRestSvm:
    """Multiclass wrapper: one binary machine per class, argmax of decisions."""

    machines: list
    classes: tuple

    def predict(self, X):
        F = np.column_stack([m.decision_function(X) for m in self.machines])
        return np.asarray(self.classes)[np.argmax(F, axis=1)]

    def to_dict(self):
        return {"ovr": [m.to_dict() for m in self.machines], "classes": list(self.classes)}


def _train_binary(X, y, classes, cfg: SvmConfig, gamma):
    ys = np.where(y == classes[1], 1.0, -1.0)
    K = kernel_matrix(X, X, cfg.kernel, gamma)
    alpha, rho, gap, it = smo_solve(K, ys, cfg.C, cfg.tol, cfg.max_iter)
    sv = alpha > 0
    model = SvmModel(cfg.kernel, float(gamma), cfg.C, X[sv].copy(), (alpha * ys)[sv], -rho,
                     tuple(int(c) for c in classes), gap, it)
    model.train_accuracy = float(np.mean(model.predict(X) == y))
    return model


def train_svm(X, y, cfg: SvmConfig = SvmConfig()):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    classes = np.unique(y)
    if classes.size < 2:
        raise DataError("SVM training needs at least two classes")
    gamma = cfg.gamma if cfg.gamma is not None else 1.0 / X.shape[1]
    if classes.size == 2:
        return _train_binary(X, y, classes, cfg, gamma)
    machines = []
    for c in classes:
        yy = np.where(y == c, 1, 0)
        m = _train_binary(X, yy, (0, 1), cfg, gamma)
        machines.append(m)
    return OneVsRestSvm(machines, tuple(int(c) for c in classes))
