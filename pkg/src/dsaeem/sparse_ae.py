"""Single sparse autoencoder unit.

Matrices are laid out features x samples: a data matrix ``X`` has one sample
per column. Encoder and decoder both use the logistic sigmoid, so inputs are
expected in [0, 1].
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericalError

log = logging.getLogger(__name__)

RHO_EPS = 1e-8
WEIGHTS_FORMAT = "dsaeem.aeweights/1"


@dataclass(frozen=True)
class AEConfig:
    input_dim: int
    hidden_dim: int
    lam: float = 1e-5
    beta: float = 3.0
    rho: float = 0.05
    # hidden-unit index groups; empty group2 means a single group
    group1: tuple = None
    group2: tuple = ()
    use_group_term: bool = True
    max_iterations: int = 400
    learn_rate: float = 1.0
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("input_dim and hidden_dim must be >= 1")
        if not 0.0 < self.rho < 1.0:
            raise ConfigError(f"rho must lie in (0, 1), got {self.rho}")
        if self.lam < 0 or self.beta < 0:
            raise ConfigError("lam and beta must be nonnegative")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if self.learn_rate <= 0:
            raise ConfigError("learn_rate must be positive")
        if self.group1 is None:
            object.__setattr__(self, "group1", tuple(range(self.hidden_dim)))
        g1, g2 = set(self.group1), set(self.group2)
        if g1 & g2 or (g1 | g2) != set(range(self.hidden_dim)):
            raise ConfigError("group1/group2 must partition the hidden units")


@dataclass
class AEWeights:
    W1: np.ndarray  # hidden x input
    b1: np.ndarray
    W2: np.ndarray  # input x hidden
    b2: np.ndarray
    history: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        h, d = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape != (d, h) or self.b2.shape != (d,):
            raise ValueError(
                f"inconsistent weight shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}"
            )

    @property
    def input_dim(self):
        return self.W1.shape[1]

    @property
    def hidden_dim(self):
        return self.W1.shape[0]

    def arrays(self):
        return self.W1, self.b1, self.W2, self.b2

    def copy(self):
        return AEWeights(*(a.copy() for a in self.arrays()), history=list(self.history))

    def to_dict(self):
        return {
            "format": WEIGHTS_FORMAT,
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "W1": self.W1.tolist(), "b1": self.b1.tolist(),
            "W2": self.W2.tolist(), "b2": self.b2.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != WEIGHTS_FORMAT:
            raise ValueError(f"unsupported weights format {d.get('format')!r}")
        w = cls(*(np.array(d[k], dtype=float) for k in ("W1", "b1", "W2", "b2")))
        if w.W1.shape != (d["hidden_dim"], d["input_dim"]):
            raise ValueError("weights file dimensions disagree with stored arrays")
        return w


def _check_input(w: AEWeights, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != w.input_dim:
        raise ValueError(f"expected input of shape ({w.input_dim}, N), got {X.shape}")
    return X


def encode(w: AEWeights, X):
    X = _check_input(w, X)
    return expit(w.W1 @ X + w.b1[:, None])


def decode(w: AEWeights, H):
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != w.hidden_dim:
        raise ValueError(f"expected hidden matrix of shape ({w.hidden_dim}, N), got {H.shape}")
    return expit(w.W2 @ H + w.b2[:, None])


def kl_sparsity(rho, rho_hat, return_flag=False):
    """Summed Bernoulli KL divergence between ``rho`` and each ``rho_hat``."""
    rho_hat = np.asarray(rho_hat, dtype=float)
    clipped = np.clip(rho_hat, RHO_EPS, 1.0 - RHO_EPS)
    flag = bool(np.any(clipped != rho_hat))
    value = float(np.sum(rho * np.log(rho / clipped)
                         + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - clipped))))
    value = max(value, 0.0)
    return (value, flag) if return_flag else value


def _check_partition(n_rows, partition):
    g1, g2 = (tuple(int(i) for i in g) for g in partition)
    s1, s2 = set(g1), set(g2)
    if len(s1) != len(g1) or len(s2) != len(g2) or s1 & s2:
        raise ValueError("group partition has overlapping or repeated indices")
    if (s1 | s2) != set(range(n_rows)):
        raise ValueError(f"group partition does not cover rows 0..{n_rows - 1}")
    return list(g1), list(g2)


def group_sparsity(H, partition) -> float:
    H = np.asarray(H, dtype=float)
    g1, g2 = _check_partition(H.shape[0], partition)
    return float(np.abs(H[g1]).sum() + np.abs(H[g2]).sum())


def ae_loss_terms(w: AEWeights, X, cfg: AEConfig) -> dict:
    """The four loss components, already multiplied by their coefficients."""
    X = _check_input(w, X)
    n = X.shape[1]
    H = encode(w, X)
    Xr = decode(w, H)
    terms = {
        "reconstruction": float(np.sum((X - Xr) ** 2) / n),
        "weight_decay": cfg.lam * float(np.sum(w.W1 ** 2) + np.sum(w.W2 ** 2)),
        "kl": cfg.beta * kl_sparsity(cfg.rho, H.mean(axis=1)),
        "group": 0.0,
    }
    if cfg.use_group_term:
        terms["group"] = cfg.beta * group_sparsity(H, (cfg.group1, cfg.group2)) / n
    return terms


def ae_loss(w: AEWeights, X, cfg: AEConfig) -> float:
    t = ae_loss_terms(w, X, cfg)
    return t["reconstruction"] + t["weight_decay"] + t["kl"] + t["group"]


def ae_loss_and_gradient(w: AEWeights, X, cfg: AEConfig):
    X = _check_input(w, X)
    n = X.shape[1]
    W1, b1, W2, b2 = w.arrays()
    H = expit(W1 @ X + b1[:, None])
    Xr = expit(W2 @ H + b2[:, None])
    diff = Xr - X

    rho_hat = H.mean(axis=1)
    rh = np.clip(rho_hat, RHO_EPS, 1.0 - RHO_EPS)
    rho = cfg.rho
    loss = (np.sum(diff ** 2) / n
            + cfg.lam * (np.sum(W1 ** 2) + np.sum(W2 ** 2))
            + cfg.beta * max(float(np.sum(rho * np.log(rho / rh)
                                          + (1 - rho) * np.log((1 - rho) / (1 - rh)))), 0.0))

    d2 = (2.0 / n) * diff * Xr * (1.0 - Xr)
    gW2 = d2 @ H.T + 2.0 * cfg.lam * W2
    gb2 = d2.sum(axis=1)

    dH = W2.T @ d2
    dH += (cfg.beta / n) * (-rho / rh + (1.0 - rho) / (1.0 - rh))[:, None]
    if cfg.use_group_term:
        loss += cfg.beta * np.abs(H).sum() / n
        dH += (cfg.beta / n) * np.sign(H)
    d1 = dH * H * (1.0 - H)
    gW1 = d1 @ X.T + 2.0 * cfg.lam * W1
    gb1 = d1.sum(axis=1)
    return float(loss), AEWeights(gW1, gb1, gW2, gb2)


def ae_gradient(w: AEWeights, X, cfg: AEConfig) -> AEWeights:
    return ae_loss_and_gradient(w, X, cfg)[1]


def init_weights(input_dim, hidden_dim, rng) -> AEWeights:
    r = np.sqrt(6.0 / (input_dim + hidden_dim))
    W1 = rng.uniform(-r, r, size=(hidden_dim, input_dim))
    W2 = rng.uniform(-r, r, size=(input_dim, hidden_dim))
    return AEWeights(W1, np.zeros(hidden_dim), W2, np.zeros(input_dim))


def train_autoencoder(X, cfg: AEConfig, init: AEWeights | None = None) -> AEWeights:
    """Full-batch gradient descent with momentum on :func:`ae_loss`.

    A step that raises the loss is rejected; the learning rate is halved and
    the momentum buffer cleared. Accepted steps grow the rate by 5%, so the
    recorded loss history is non-increasing.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[0] != cfg.input_dim:
        raise ValueError(f"config expects input_dim={cfg.input_dim}, data has {X.shape[0]} rows")
    rng = np.random.default_rng(cfg.seed)
    w = init.copy() if init is not None else init_weights(cfg.input_dim, cfg.hidden_dim, rng)
    w.history = []
    loss, g = ae_loss_and_gradient(w, X, cfg)
    if not np.isfinite(loss):
        raise NumericalError("initial autoencoder loss is not finite", last_state=w)
    w.history.append(loss)
    lr = cfg.learn_rate
    vel = [np.zeros_like(a) for a in w.arrays()]
    for _ in range(cfg.max_iterations):
        vel = [cfg.momentum * v - lr * ga for v, ga in zip(vel, g.arrays())]
        trial = AEWeights(*(a + v for a, v in zip(w.arrays(), vel)))
        t_loss, t_g = ae_loss_and_gradient(trial, X, cfg)
        if not np.isfinite(t_loss):
            raise NumericalError(f"autoencoder loss diverged (last finite {loss:.6g})", last_state=w)
        if t_loss <= loss:
            trial.history = w.history
            w, loss, g = trial, t_loss, t_g
            w.history.append(loss)
            lr *= 1.05
        else:
            lr *= 0.5
            vel = [np.zeros_like(v) for v in vel]
            if lr < 1e-12:
                break
    log.debug("autoencoder %d->%d: loss %.6g -> %.6g", cfg.input_dim, cfg.hidden_dim,
              w.history[0], w.history[-1])
    return w


def with_dims(cfg: AEConfig, input_dim, hidden_dim, **kw) -> AEConfig:
    kw.setdefault("group1", None)
    kw.setdefault("group2", ())
    return replace(cfg, input_dim=input_dim, hidden_dim=hidden_dim, **kw)
