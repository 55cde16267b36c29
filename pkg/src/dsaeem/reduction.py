"""Staged feature reduction.

Stage 1 is L1-regularized least squares solved by proximal gradient descent
(ISTA); features with nonzero coefficients survive. Stage 2 is a weighted
locality-preserving discriminant projection fitted per bagged subset.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist, pdist

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


def soft_threshold(z, t):
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def lasso_objective(X, y, theta, alpha):
    r = y - X @ theta
    return float(r @ r + alpha * np.sum(np.abs(theta)))


def lipschitz_constant(X, n_iter=1000, tol=1e-12, safety=1.01):
    """Power-iteration estimate of the largest eigenvalue of ``2 X^T X``, padded by ``safety``."""
    XtX = X.T @ X
    v = np.random.default_rng(12345).standard_normal(XtX.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(n_iter):
        w = XtX @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return safety * 1e-12
        v = w / nrm
        if abs(nrm - est) <= tol * nrm:
            est = nrm
            break
        est = nrm
    return safety * 2.0 * est


@dataclass
class L1SelectorState:
    theta: np.ndarray
    alpha: float
    A: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)

    @property
    def selected(self):
        return tuple(np.flatnonzero(self.theta != 0).tolist())

    def to_dict(self):
        return {"theta": self.theta.tolist(), "alpha": self.alpha, "A": self.A,
                "iterations": self.iterations, "converged": self.converged,
                "selected": list(self.selected)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["theta"], dtype=float), d["alpha"], d["A"], d["iterations"],
                   d["converged"])


def ista_fit(X, y, alpha, max_iter=100_000, tol=1e-13, theta0=None) -> L1SelectorState:
    """Minimize ``sum (y - X theta)^2 + alpha * |theta|_1`` by ISTA.

    The step is ``1/A`` with ``A`` the Lipschitz constant of the smooth
    term's gradient. Iteration stops once the objective decrease drops
    below ``tol`` (absolute).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("ISTA input contains non-finite values")
    A = lipschitz_constant(X)
    Xty = X.T @ y
    XtX = X.T @ X
    theta = np.zeros(X.shape[1]) if theta0 is None else np.array(theta0, dtype=float)
    obj = lasso_objective(X, y, theta, alpha)
    history = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = 2.0 * (XtX @ theta - Xty)
        theta_new = soft_threshold(theta - grad / A, alpha / A)
        obj_new = lasso_objective(X, y, theta_new, alpha)
        decrease = obj - obj_new
        theta, obj = theta_new, min(obj, obj_new)
        history.append(obj_new)
        if decrease < tol:
            converged = True
            break
    return L1SelectorState(theta, float(alpha), float(A), it, converged, history)


def l1_select(state: L1SelectorState, min_keep=0):
    """Indices of nonzero coefficients, padded to ``min_keep`` by largest ``|theta|``."""
    sel = state.selected
    if len(sel) >= min_keep:
        if not sel:
            raise DataError("L1 selection kept no features")
        return sel
    order = np.argsort(-np.abs(state.theta), kind="stable")
    return tuple(sorted(order[:min_keep].tolist()))


def encode_targets(y, n_classes=2):
    """Labels as regression targets: +-1 for two classes, raw indices otherwise."""
    y = np.asarray(y)
    if n_classes == 2:
        return np.where(y == 1, 1.0, -1.0)
    return y.astype(float)


@dataclass
class L1Selection:
    state: L1SelectorState  # coefficients on the original column scale
    indices: tuple
    min_keep: int

    def to_dict(self):
        return {"state": self.state.to_dict(), "indices": list(self.indices),
                "min_keep": self.min_keep}

    @classmethod
    def from_dict(cls, d):
        return cls(L1SelectorState.from_dict(d["state"]), tuple(d["indices"]), d["min_keep"])


def default_min_keep(n_features):
    return max(3, math.ceil(0.1 * n_features))


def fit_l1_selection(X, y, alpha, n_classes=2, min_keep=None, max_iter=20_000, tol=1e-10):
    """Standardize columns, run ISTA, map coefficients back and select."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    Z = np.where(std > 0, (X - mean) / scale, 0.0)
    st = ista_fit(Z, encode_targets(y, n_classes), alpha, max_iter=max_iter, tol=tol)
    st.theta = st.theta / scale
    if min_keep is None:
        min_keep = default_min_keep(X.shape[1])
    return L1Selection(st, l1_select(st, min(min_keep, X.shape[1])), min_keep)


def scatter_matrices(X, labels):
    """Between-class and within-class scatter of samples ``X`` (n x m)."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    m = X.shape[1]
    mu = X.mean(axis=0)
    S_B = np.zeros((m, m))
    S_W = np.zeros((m, m))
    for c in classes:
        Xc = X[labels == c]
        if Xc.shape[0] == 0:
            raise DataError(f"class {c} has no samples in this subset")
        mc = Xc.mean(axis=0)
        db = mc - mu
        S_B += np.outer(db, db)
        Dc = Xc - mc
        S_W += Dc.T @ Dc
    return S_B, S_W


SIGMA_FLOOR = 1e-6


def heat_kernel_width(X):
    """Median pairwise Euclidean distance, floored."""
    if X.shape[0] < 2:
        return SIGMA_FLOOR
    return max(float(np.median(pdist(X))), SIGMA_FLOOR)


@dataclass(frozen=True)
class Graph:
    W: np.ndarray
    D: np.ndarray
    L: np.ndarray
    sigma: float


def build_graph(X, k_nn=7, sigma=None) -> Graph:
    """Symmetrized k-NN heat-kernel affinity and its Laplacian ``L = D - W``."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if not 1 <= k_nn < n:
        raise ValueError(f"k_nn must satisfy 1 <= k_nn < n={n}, got {k_nn}")
    sigma = heat_kernel_width(X) if sigma is None else max(float(sigma), SIGMA_FLOOR)
    d2 = cdist(X, X, "sqeuclidean")
    np.fill_diagonal(d2, np.inf)
    nn = np.argsort(d2, axis=1, kind="stable")[:, :k_nn]
    mask = np.zeros((n, n), dtype=bool)
    mask[np.repeat(np.arange(n), k_nn), nn.ravel()] = True
    mask |= mask.T
    np.fill_diagonal(d2, 0.0)
    W = np.where(mask, np.exp(-d2 / (2.0 * sigma ** 2)), 0.0)
    np.fill_diagonal(W, 0.0)
    D = np.diag(W.sum(axis=1))
    return Graph(W, D, D - W, sigma)


@dataclass(frozen=True)
class WlpdpConfig:
    gamma: float = 0.1
    l: int | None = None  # None -> min(4 C, m - 1)
    k_nn: int = 7
    sigma: float | None = None  # None -> median pairwise distance
    eps_scale: float = 1e-6
    # "none": gamma multiplies X^T L X as is; "trace": gamma is relative to
    # tr(S_B) / tr(X^T L X), so it does not scale with the sample count
    gamma_scale: str = "none"

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.gamma_scale not in ("none", "trace"):
            raise ConfigError(f"gamma_scale must be 'none' or 'trace', got {self.gamma_scale!r}")
        if self.l is not None and self.l < 1:
            raise ConfigError("l must be >= 1")
        if self.k_nn < 1:
            raise ConfigError("k_nn must be >= 1")

    def output_dim(self, m, n_classes):
        l = self.l if self.l is not None else min(4 * n_classes, m - 1)
        return max(1, l)


@dataclass
class WlpdpModel:
    Q: np.ndarray  # m x l, unit-norm columns
    eta: np.ndarray  # generalized eigenvalues of S_W q = eta B q (inf where B q = 0)
    mu: np.ndarray  # 1 / eta, the Rayleigh quotient q^T B q / q^T S_W q
    features: tuple = ()
    eps_reg: float = 0.0
    residuals: np.ndarray = None
    gamma: float = 0.0  # effective locality weight used in the solve

    @property
    def l(self):
        return self.Q.shape[1]

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.Q.shape[0]:
            raise ValueError(f"projection expects {self.Q.shape[0]} features, got {X.shape[1]}")
        return X @ self.Q

    def to_dict(self):
        return {"Q": self.Q.tolist(), "mu": self.mu.tolist(), "features": list(self.features),
                "eps_reg": self.eps_reg, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d):
        mu = np.array(d["mu"], dtype=float)
        with np.errstate(divide="ignore"):
            eta = np.where(mu != 0, 1.0 / np.where(mu != 0, mu, 1.0), np.inf)
        return cls(np.array(d["Q"], dtype=float), eta, mu, tuple(d["features"]), d["eps_reg"],
                   None, d.get("gamma", 0.0))


def eigen_residual(S_W, B, q, eta):
    """Relative residual of ``S_W q = eta B q``; for ``eta = inf`` checks ``B q = 0``."""
    nW = np.linalg.norm(S_W, 2)
    nB = np.linalg.norm(B, 2)
    if np.isinf(eta):
        return float(np.linalg.norm(B @ q) / max(nB, np.finfo(float).tiny))
    r = np.linalg.norm(S_W @ q - eta * (B @ q))
    return float(r / (nW + abs(eta) * nB))


def solve_wlpdp(S_B, S_W, X, L, cfg: WlpdpConfig, n_classes=2, features=()) -> WlpdpModel:
    """Generalized eigenproblem ``S_W q = eta (S_B - gamma X^T L X) q``.

    ``X`` is n x m (samples in rows). ``S_W`` is ridge-regularized to be
    positive definite and the pencil is solved in the reciprocal form
    ``B q = mu S_W q``, which stays real and symmetric-definite even when
    ``B`` is indefinite. Directions are ranked by descending ``mu``,
    i.e. smallest positive ``eta`` first.
    """
    S_B = np.asarray(S_B, dtype=float)
    S_W = np.asarray(S_W, dtype=float)
    m = S_W.shape[0]
    if S_B.shape != (m, m) or np.asarray(X).shape[1] != m:
        raise ValueError("dimension mismatch between scatter matrices and data")
    l = cfg.output_dim(m, n_classes)
    if l > m:
        warnings.warn(f"requested l={l} exceeds m={m}; using l={m}", stacklevel=2)
        l = m
    tr = float(np.trace(S_W))
    eps = cfg.eps_scale * (tr / m if tr > 0 else 1.0)
    S_Wr = S_W + eps * np.eye(m)
    XLX = X.T @ np.asarray(L) @ X
    gamma = cfg.gamma
    if cfg.gamma_scale == "trace" and gamma > 0:
        t = float(np.trace(XLX))
        gamma = gamma * float(np.trace(S_B)) / t if t > 0 else 0.0
    B = S_B - gamma * XLX
    B = 0.5 * (B + B.T)
    mu, V = linalg.eigh(B, S_Wr)
    order = np.argsort(-mu, kind="stable")[:l]
    mu, V = mu[order], V[:, order]
    V = V / np.linalg.norm(V, axis=0)
    # sign convention: largest-magnitude entry positive
    idx = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[idx, np.arange(l)])
    with np.errstate(divide="ignore"):
        eta = np.where(mu != 0, 1.0 / np.where(mu != 0, mu, 1.0), np.inf)
    res = np.array([eigen_residual(S_Wr, B, V[:, i], eta[i]) for i in range(l)])
    return WlpdpModel(V, eta, mu, tuple(features), eps, res, float(gamma))


def fit_wlpdp(X, labels, cfg: WlpdpConfig, n_classes=2, features=()) -> WlpdpModel:
    """Scatter matrices, graph and eigen-solve on one sample set."""
    X = np.asarray(X, dtype=float)
    S_B, S_W = scatter_matrices(X, labels)
    k = min(cfg.k_nn, X.shape[0] - 1)
    g = build_graph(X, k, cfg.sigma)
    return solve_wlpdp(S_B, S_W, X, g.L, cfg, n_classes, features)


@dataclass(frozen=True)
class SubsetSpec:
    samples: tuple
    features: tuple
    seed: int

    def to_dict(self):
        return {"samples": list(self.samples), "features": list(self.features), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["samples"]), tuple(d["features"]), d["seed"])


def make_subsets(n, m, delta_s=0.7, delta_f=0.5, T=10, seed=0, labels=None, max_attempts=100):
    """Bagged sample indices (with replacement) and feature subsets (without)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    ns = math.ceil(delta_s * n)
    nf = max(1, math.ceil(delta_f * m))
    classes = None if labels is None else np.unique(labels)
    specs = []
    for t in range(T):
        rng = np.random.default_rng([seed, t])
        for _ in range(max_attempts):
            samples = rng.integers(0, n, size=ns)
            if classes is None or np.unique(np.asarray(labels)[samples]).size == classes.size:
                break
        else:
            raise DataError(f"subset {t}: could not cover every class in {max_attempts} draws")
        feats = np.sort(rng.choice(m, size=nf, replace=False))
        specs.append(SubsetSpec(tuple(samples.tolist()), tuple(feats.tolist()), seed))
    return specs
