"""Feature-embedded stacked sparse autoencoder.

Each layer after the first sees the original features stacked on top of the
previous hidden output; a row-selection transform keeps the ``d`` rows of
highest (centered) energy before the next unit is trained. After layerwise
pretraining the encoders are stacked under a softmax head and fine-tuned.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_softmax, softmax

from . import optim
from .data_io import inner_split
from .errors import ConfigError, NumericalError
from .sparse_ae import AEConfig, AEWeights, train_autoencoder

log = logging.getLogger(__name__)

MODEL_FORMAT = "dsaeem.fssae/1"
ORIGINAL, HIDDEN = "original", "hidden"


@dataclass(frozen=True)
class FssaeConfig:
    hidden: tuple = (120, 40, 16)
    lam: float = 1e-5
    beta: float = 3.0
    rho: float = 0.05
    pretrain_iterations: int = 400
    learn_rate: float = 1.0
    momentum: float = 0.9
    # rows kept by each embed unit; None -> previous hidden width
    embed_d: tuple | None = None
    # minimum original-origin rows per embed unit; None -> ceil(M/2)
    min_original: int | None = None
    softmax_iterations: int = 100
    fine_tune_iterations: int = 100
    # share of rows held out to stop fine-tuning early; 0 disables
    early_stop_ratio: float = 0.0
    early_stop_patience: int = 10
    optimizer: str = "scg"
    use_fine_tuned: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError("hidden chain must be a nonempty list of positive widths")
        if self.embed_d is not None:
            object.__setattr__(self, "embed_d", tuple(int(d) for d in self.embed_d))
            if len(self.embed_d) != len(self.hidden) - 1:
                raise ConfigError("embed_d needs one entry per layer after the first")
        if self.optimizer not in ("scg", "gd"):
            raise ConfigError(f"optimizer must be 'scg' or 'gd', got {self.optimizer!r}")
        if self.fine_tune_iterations < 0 or self.softmax_iterations < 0:
            raise ConfigError("iteration counts must be nonnegative")
        if not 0 <= self.early_stop_ratio < 1:
            raise ConfigError("early_stop_ratio must lie in [0, 1)")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")

    def unit_config(self, input_dim, hidden_dim, seed, **kw) -> AEConfig:
        return AEConfig(input_dim=input_dim, hidden_dim=hidden_dim, lam=self.lam, beta=self.beta,
                        rho=self.rho, max_iterations=self.pretrain_iterations,
                        learn_rate=self.learn_rate, momentum=self.momentum, seed=seed, **kw)


@dataclass(frozen=True)
class EmbedUnit:
    selected: tuple  # row indices of E kept, ascending
    n_rows: int  # M + previous hidden width
    n_original: int  # M

    @property
    def d(self):
        return len(self.selected)

    @property
    def origin_tags(self):
        return tuple(ORIGINAL if i < self.n_original else HIDDEN for i in self.selected)

    @property
    def n_selected_original(self):
        return sum(1 for i in self.selected if i < self.n_original)

    @property
    def G(self) -> np.ndarray:
        G = np.zeros((self.n_rows, self.d))
        G[list(self.selected), np.arange(self.d)] = 1.0
        return G

    def transform(self, E):
        E = np.asarray(E)
        if E.shape[0] != self.n_rows:
            raise ValueError(f"embed unit expects {self.n_rows} rows, got {E.shape[0]}")
        return E[list(self.selected)]

    def to_dict(self):
        return {"selected": list(self.selected), "n_rows": self.n_rows,
                "n_original": self.n_original}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["selected"]), d["n_rows"], d["n_original"])


def combine_features(X_o, H_prev=None):
    """Stack ``X_o`` (N x M, transposed) above ``H_prev`` (d x N).

    Returns ``(E, tags)`` with one origin tag per row of ``E``.
    """
    X_o = np.asarray(X_o, dtype=float)
    top = X_o.T
    tags = [ORIGINAL] * top.shape[0]
    if H_prev is None or np.size(H_prev) == 0:
        return top.copy(), tags
    H_prev = np.asarray(H_prev, dtype=float)
    if H_prev.shape[1] != X_o.shape[0]:
        raise ValueError(f"sample-count mismatch: X_o has {X_o.shape[0]}, H has {H_prev.shape[1]}")
    return np.vstack([top, H_prev]), tags + [HIDDEN] * H_prev.shape[0]


def row_energies(E):
    Ec = E - E.mean(axis=1, keepdims=True)
    return np.einsum("ij,ij->i", Ec, Ec)


def fit_transform_G(E, d, n_original=None) -> EmbedUnit:
    """Binary row selection maximizing ``tr(G^T E E^T G)`` on centered rows.

    Picks the ``d`` rows with largest centered energy; ties go to the lower
    row index.
    """
    E = np.asarray(E, dtype=float)
    n_rows = E.shape[0]
    if not 1 <= d <= n_rows:
        raise ValueError(f"d={d} must lie in [1, {n_rows}]")
    order = np.argsort(-row_energies(E), kind="stable")
    selected = tuple(sorted(order[:d].tolist()))
    return EmbedUnit(selected, n_rows, n_rows if n_original is None else n_original)


def embed_select(E, d, n_original, min_original) -> EmbedUnit:
    """:func:`fit_transform_G`, then top up original-origin rows to ``min_original``."""
    unit = fit_transform_G(E, min(d, E.shape[0]), n_original)
    need = min(min_original, n_original) - unit.n_selected_original
    if need <= 0:
        return unit
    energy = row_energies(E[:n_original])
    chosen = set(unit.selected)
    extra = [i for i in np.argsort(-energy, kind="stable").tolist() if i not in chosen][:need]
    return EmbedUnit(tuple(sorted(chosen | set(extra))), unit.n_rows, n_original)


def hidden_partition(hidden_dim, unit: EmbedUnit):
    """Split hidden units in the ratio of original to hidden-origin inputs."""
    r = unit.n_selected_original / unit.d
    n1 = int(math.floor(hidden_dim * r))
    return tuple(range(n1)), tuple(range(n1, hidden_dim))


@dataclass
class FssaeModel:
    units: list
    embeds: list
    n_features: int
    softmax_W: np.ndarray | None = None  # C x hidden[-1]
    softmax_b: np.ndarray | None = None
    config: dict = field(default_factory=dict)
    fine_tuned: bool = False
    history: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def deep_dim(self):
        return self.units[-1].hidden_dim

    def hidden_chain(self):
        return tuple(u.hidden_dim for u in self.units)

    def copy(self):
        return FssaeModel(
            [u.copy() for u in self.units], list(self.embeds), self.n_features,
            None if self.softmax_W is None else self.softmax_W.copy(),
            None if self.softmax_b is None else self.softmax_b.copy(),
            dict(self.config), self.fine_tuned, dict(self.history),
        )

    def to_dict(self):
        return {
            "format": MODEL_FORMAT,
            "n_features": self.n_features,
            "units": [u.to_dict() for u in self.units],
            "embeds": [e.to_dict() for e in self.embeds],
            "softmax_W": None if self.softmax_W is None else self.softmax_W.tolist(),
            "softmax_b": None if self.softmax_b is None else self.softmax_b.tolist(),
            "config": self.config,
            "fine_tuned": self.fine_tuned,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported FSSAE model format {d.get('format')!r}")
        sw = d.get("softmax_W")
        sb = d.get("softmax_b")
        return cls(
            [AEWeights.from_dict(u) for u in d["units"]],
            [EmbedUnit.from_dict(e) for e in d["embeds"]],
            d["n_features"],
            None if sw is None else np.array(sw, dtype=float),
            None if sb is None else np.array(sb, dtype=float),
            d.get("config", {}),
            d.get("fine_tuned", False),
        )


def _forward(units, embeds, X_o):
    """Return per-layer (input, activation) pairs for samples ``X_o`` (N x M)."""
    inputs, acts = [], []
    x_in = X_o.T
    for k, unit in enumerate(units):
        if k > 0:
            E, _ = combine_features(X_o, acts[-1])
            x_in = embeds[k - 1].transform(E)
        inputs.append(x_in)
        acts.append(expit(unit.W1 @ x_in + unit.b1[:, None]))
    return inputs, acts


def _check_features(model: FssaeModel, X_o):
    X_o = np.asarray(X_o, dtype=float)
    if X_o.ndim != 2 or X_o.shape[1] != model.n_features:
        raise ValueError(f"model trained on {model.n_features} features, got shape {X_o.shape}")
    return X_o


def pretrain_fssae(X_o, cfg: FssaeConfig) -> FssaeModel:
    """Greedy layerwise pretraining of the stack (no softmax head)."""
    X_o = np.asarray(X_o, dtype=float)
    n, m = X_o.shape
    min_original = math.ceil(m / 2) if cfg.min_original is None else cfg.min_original
    units, embeds = [], []
    H = None
    for k, h in enumerate(cfg.hidden):
        seed = cfg.seed + 1000 * k
        if k == 0:
            x_in = X_o.T
            ucfg = cfg.unit_config(m, h, seed, use_group_term=False)
        else:
            E, _ = combine_features(X_o, H)
            d = cfg.embed_d[k - 1] if cfg.embed_d is not None else cfg.hidden[k - 1]
            unit = embed_select(E, d, m, min_original)
            embeds.append(unit)
            x_in = unit.transform(E)
            g1, g2 = hidden_partition(h, unit)
            ucfg = cfg.unit_config(unit.d, h, seed, group1=g1, group2=g2)
        w = train_autoencoder(x_in, ucfg)
        units.append(w)
        H = expit(w.W1 @ x_in + w.b1[:, None])
        log.debug("layer %d: input %d -> hidden %d, loss %.5g", k + 1, x_in.shape[0], h,
                  w.history[-1])
    model = FssaeModel(units, embeds, m, config=_config_echo(cfg, min_original))
    model.history["pretrain"] = [list(u.history) for u in units]
    return model


def _config_echo(cfg: FssaeConfig, min_original):
    d = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    d["hidden"] = list(cfg.hidden)
    d["embed_d"] = None if cfg.embed_d is None else list(cfg.embed_d)
    d["min_original_effective"] = min_original
    return d


class _StackObjective:
    """Cross-entropy of the stacked encoders + softmax on a flat parameter vector."""

    def __init__(self, model: FssaeModel, X_o, y, n_classes, head_only=False):
        self.model = model
        self.X_o = X_o
        self.Y = np.eye(n_classes)[:, y]  # C x N one-hot
        self.n = X_o.shape[0]
        self.head_only = head_only
        self.shapes = []
        if not head_only:
            for u in model.units:
                self.shapes += [u.W1.shape, u.b1.shape]
        self.shapes += [model.softmax_W.shape, model.softmax_b.shape]
        if head_only:
            _, acts = _forward(model.units, model.embeds, X_o)
            self.fixed_top = acts[-1]

    def pack(self, units, W, b):
        parts = []
        if not self.head_only:
            for u in units:
                parts += [u.W1.ravel(), u.b1.ravel()]
        parts += [W.ravel(), b.ravel()]
        return np.concatenate(parts)

    def unpack(self, x):
        out, pos = [], 0
        for s in self.shapes:
            size = int(np.prod(s))
            out.append(x[pos:pos + size].reshape(s))
            pos += size
        return out

    def __call__(self, x):
        arrs = self.unpack(x)
        W, b = arrs[-2], arrs[-1]
        if self.head_only:
            top = self.fixed_top
        else:
            units = [AEWeights(arrs[2 * k], arrs[2 * k + 1], u.W2, u.b2)
                     for k, u in enumerate(self.model.units)]
            inputs, acts = _forward(units, self.model.embeds, self.X_o)
            top = acts[-1]
        Z = W @ top + b[:, None]
        logp = log_softmax(Z, axis=0)
        loss = -float(np.sum(self.Y * logp)) / self.n
        dZ = (np.exp(logp) - self.Y) / self.n
        grads = [dZ @ top.T, dZ.sum(axis=1)]
        if not self.head_only:
            m = self.model.n_features
            unit_grads = []
            da = W.T @ dZ
            for k in range(len(units) - 1, -1, -1):
                a = acts[k]
                dz = da * a * (1.0 - a)
                unit_grads = [dz @ inputs[k].T, dz.sum(axis=1)] + unit_grads
                if k > 0:
                    emb = self.model.embeds[k - 1]
                    dE = np.zeros((emb.n_rows, self.n))
                    dE[list(emb.selected)] = units[k].W1.T @ dz
                    da = dE[m:]
            grads = unit_grads + grads
        return loss, np.concatenate([g.ravel() for g in grads])


def _minimize(obj, x0, iterations, cfg: FssaeConfig, callback=None):
    if cfg.optimizer == "scg":
        return optim.scg(obj, x0, max_iter=iterations, callback=callback)
    return optim.gradient_descent(obj, x0, max_iter=iterations, learn_rate=cfg.learn_rate,
                                  callback=callback)


class _EarlyStop:
    """Track held-out cross-entropy after each accepted step and keep the best iterate."""

    def __init__(self, objective, x0, patience):
        self.objective = objective
        self.patience = patience
        self.best_x = np.array(x0, copy=True)
        self.best = objective(x0)[0]
        self.history = [self.best]
        self.stale = 0

    def __call__(self, x, f):
        v = self.objective(x)[0]
        self.history.append(v)
        if v < self.best:
            self.best, self.best_x, self.stale = v, x.copy(), 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def fine_tune(model: FssaeModel, X_o, y, n_classes, cfg: FssaeConfig) -> FssaeModel:
    """Attach a softmax head and fine-tune the whole stack on cross-entropy.

    With ``cfg.fine_tune_iterations == 0`` the input model is returned as-is.
    With ``cfg.early_stop_ratio > 0`` a stratified share of the rows is held
    out, the optimizer runs on the rest, and the iterate with the lowest
    held-out cross-entropy is kept (stopping after ``early_stop_patience``
    accepted steps without improvement).
    """
    if cfg.fine_tune_iterations == 0:
        return model
    X_o = _check_features(model, X_o)
    y = np.asarray(y, dtype=np.int64)
    X_val = y_val = None
    if cfg.early_stop_ratio > 0:
        tr, va = inner_split(y, cfg.early_stop_ratio, cfg.seed)
        X_o, X_val, y, y_val = X_o[tr], X_o[va], y[tr], y[va]
    rng = np.random.default_rng(cfg.seed + 7919)
    out = model.copy()
    h = out.deep_dim
    r = np.sqrt(6.0 / (h + n_classes))
    out.softmax_W = rng.uniform(-r, r, size=(n_classes, h))
    out.softmax_b = np.zeros(n_classes)

    head = _StackObjective(out, X_o, y, n_classes, head_only=True)
    res = _minimize(head, head.pack(None, out.softmax_W, out.softmax_b), cfg.softmax_iterations, cfg)
    out.softmax_W, out.softmax_b = head.unpack(res.x)

    full = _StackObjective(out, X_o, y, n_classes)
    x0 = full.pack(out.units, out.softmax_W, out.softmax_b)
    stop = None
    if X_val is not None:
        stop = _EarlyStop(_StackObjective(out, X_val, y_val, n_classes), x0,
                          cfg.early_stop_patience)
    res = _minimize(full, x0, cfg.fine_tune_iterations, cfg, callback=stop)
    if not np.isfinite(res.fun):
        raise NumericalError("fine-tuning produced a non-finite loss", last_state=out)
    arrs = full.unpack(res.x if stop is None else stop.best_x)
    out.units = [AEWeights(arrs[2 * k].copy(), arrs[2 * k + 1].copy(), u.W2, u.b2, u.history)
                 for k, u in enumerate(out.units)]
    out.softmax_W, out.softmax_b = arrs[-2].copy(), arrs[-1].copy()
    out.fine_tuned = True
    out.history["fine_tune"] = list(res.history)
    if stop is not None:
        out.history["fine_tune_validation"] = list(stop.history)
    return out


def train_fssae(X_o, y, n_classes, cfg: FssaeConfig) -> FssaeModel:
    model = pretrain_fssae(X_o, cfg)
    if cfg.use_fine_tuned:
        model = fine_tune(model, X_o, y, n_classes, cfg)
    return model


def cross_entropy(model: FssaeModel, X_o, y) -> float:
    X_o = _check_features(model, X_o)
    _, acts = _forward(model.units, model.embeds, X_o)
    logp = log_softmax(model.softmax_W @ acts[-1] + model.softmax_b[:, None], axis=0)
    y = np.asarray(y, dtype=np.int64)
    return -float(np.mean(logp[y, np.arange(y.size)]))


def predict_proba(model: FssaeModel, X_o):
    if model.softmax_W is None:
        raise ValueError("model has no softmax head; fine-tune it first")
    X_o = _check_features(model, X_o)
    _, acts = _forward(model.units, model.embeds, X_o)
    return softmax(model.softmax_W @ acts[-1] + model.softmax_b[:, None], axis=0).T


def predict(model: FssaeModel, X_o):
    return np.argmax(predict_proba(model, X_o), axis=1)


def deep_features(model: FssaeModel, X_o):
    """Last hidden layer activations, d_K x N."""
    X_o = _check_features(model, X_o)
    return _forward(model.units, model.embeds, X_o)[1][-1]


@dataclass(frozen=True)
class ExpandedData:
    matrix: np.ndarray  # N x (M + d_K)
    tags: tuple

    @property
    def n_original(self):
        return sum(1 for t in self.tags if t == ORIGINAL)


def expand_features(model: FssaeModel, X_o) -> ExpandedData:
    """Original features followed by the deep features of the last layer."""
    X_o = _check_features(model, X_o)
    H = deep_features(model, X_o)
    M = np.hstack([X_o, H.T])
    return ExpandedData(M, (ORIGINAL,) * X_o.shape[1] + (HIDDEN,) * H.shape[0])
