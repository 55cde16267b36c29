"""Bagged subspace ensemble: one projection + SVM per subset, weighted vote."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data_io import inner_split
from .errors import ConfigError, DataError
from .reduction import SubsetSpec, WlpdpConfig, WlpdpModel, fit_wlpdp, make_subsets
from .svm import SvmConfig, SvmModel, train_svm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnsembleConfig:
    T: int = 10
    delta_s: float = 0.7
    delta_f: float = 0.5
    wlpdp: WlpdpConfig = WlpdpConfig()
    svm: SvmConfig = SvmConfig()
    weight_candidates: int = 200
    val_ratio: float = 0.2
    standardize_projection: bool = True
    # refit members on the whole training set once weights are fixed
    refit_members: bool = False
    max_member_retries: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if not 0 < self.delta_s <= 1 or not 0 < self.delta_f <= 1:
            raise ConfigError("delta_s and delta_f must lie in (0, 1]")
        if not 0 < self.val_ratio < 1:
            raise ConfigError("val_ratio must lie in (0, 1)")

    def to_dict(self):
        return asdict(self)


@dataclass
class Member:
    subset: SubsetSpec
    projection: WlpdpModel
    svm: SvmModel
    center: np.ndarray
    scale: np.ndarray
    weight: float = 0.0

    def embed(self, X):
        P = self.projection.transform(np.asarray(X)[:, list(self.subset.features)])
        return (P - self.center) / self.scale

    def predict(self, X):
        return self.svm.predict(self.embed(X))

    def to_dict(self):
        return {"subset": self.subset.to_dict(), "projection": self.projection.to_dict(),
                "svm": self.svm.to_dict(), "center": self.center.tolist(),
                "scale": self.scale.tolist(), "weight": self.weight}

    @classmethod
    def from_dict(cls, d):
        return cls(SubsetSpec.from_dict(d["subset"]), WlpdpModel.from_dict(d["projection"]),
                   SvmModel.from_dict(d["svm"]), np.array(d["center"], dtype=float),
                   np.array(d["scale"], dtype=float), d["weight"])


@dataclass
class EnsembleModel:
    members: list
    n_features: int
    n_classes: int
    config: dict = field(default_factory=dict)
    log: list = field(default_factory=list, compare=False)

    @property
    def weights(self):
        return np.array([m.weight for m in self.members])

    def to_dict(self):
        return {"members": [m.to_dict() for m in self.members], "n_features": self.n_features,
                "n_classes": self.n_classes, "config": self.config}

    @classmethod
    def from_dict(cls, d):
        return cls([Member.from_dict(m) for m in d["members"]], d["n_features"], d["n_classes"],
                   d.get("config", {}))


def fit_member(X, y, subset: SubsetSpec, cfg: EnsembleConfig, n_classes=2) -> Member:
    rows, cols = list(subset.samples), list(subset.features)
    Xs = np.asarray(X)[rows][:, cols]
    ys = np.asarray(y)[rows]
    proj = fit_wlpdp(Xs, ys, cfg.wlpdp, n_classes, features=subset.features)
    P = proj.transform(Xs)
    if cfg.standardize_projection:
        center = P.mean(axis=0)
        sd = P.std(axis=0)
        scale = np.where(sd > 0, sd, 1.0)
    else:
        center, scale = np.zeros(P.shape[1]), np.ones(P.shape[1])
    svm = train_svm((P - center) / scale, ys, cfg.svm)
    return Member(subset, proj, svm, center, scale)


def fit_members(X, y, cfg: EnsembleConfig, n_classes=2, events=None):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    n, m = X.shape
    specs = make_subsets(n, m, cfg.delta_s, cfg.delta_f, cfg.T, cfg.seed, labels=y)
    members = []
    for t, spec in enumerate(specs):
        for attempt in range(cfg.max_member_retries + 1):
            try:
                members.append(fit_member(X, y, spec, cfg, n_classes))
                break
            except (DataError, np.linalg.LinAlgError, ValueError) as exc:
                msg = f"member {t} attempt {attempt} failed ({exc}); resampling"
                log.warning(msg)
                if events is not None:
                    events.append(msg)
                spec = make_subsets(n, m, cfg.delta_s, cfg.delta_f, 1,
                                    cfg.seed + 7919 * (t + 1) + attempt, labels=y)[0]
        else:
            raise DataError(f"member {t} failed after {cfg.max_member_retries} resamples")
    return members


def weighted_vote(preds, weights, n_classes):
    """``preds`` is T x n member predictions; ties go to the lowest class index."""
    preds = np.asarray(preds)
    weights = np.asarray(weights, dtype=float)
    votes = np.zeros((n_classes, preds.shape[1]))
    for c in range(n_classes):
        votes[c] = weights @ (preds == c)
    # rounding makes exact ties insensitive to summation order
    return np.argmax(np.round(votes, 12), axis=0)


def _vote_margin(preds, weights, y, n_classes):
    votes = np.stack([weights @ (preds == c) for c in range(n_classes)])
    true = votes[y, np.arange(y.size)]
    votes[y, np.arange(y.size)] = -np.inf
    return float(np.mean(true - votes.max(axis=0)))


def optimize_subspace_weights(preds, y_val, n_classes=2, n_candidates=200, seed=0):
    """Search member weights maximizing weighted-vote accuracy on validation data.

    Candidates are the uniform weights, accuracy-proportional weights and
    ``n_candidates`` Dirichlet(1) draws. If the uniform weights reach the best
    accuracy they win; otherwise ties go to the larger mean vote margin, then
    to the earlier candidate.
    """
    preds = np.asarray(preds)
    y_val = np.asarray(y_val)
    if y_val.size == 0:
        raise DataError("weight search needs a nonempty validation set")
    T = preds.shape[0]
    uniform = np.full(T, 1.0 / T)
    if T == 1:
        return uniform
    acc = (preds == y_val).mean(axis=1)
    prop = acc / acc.sum() if acc.sum() > 0 else uniform
    rng = np.random.default_rng(seed)
    cands = [uniform, prop] + list(rng.dirichlet(np.ones(T), size=n_candidates))

    def score(w):
        return float(np.mean(weighted_vote(preds, w, n_classes) == y_val))

    scores = [score(w) for w in cands]
    best = max(scores)
    if scores[0] == best:
        return uniform
    tied = [i for i, s in enumerate(scores) if s == best]
    margins = [_vote_margin(preds, cands[i], y_val, n_classes) for i in tied]
    w = cands[tied[int(np.argmax(margins))]]
    return w / w.sum()


def fit_ensemble(X, y, cfg: EnsembleConfig = EnsembleConfig(), n_classes=2) -> EnsembleModel:
    """Fit members on the inner-training part, weights on the inner-validation part.

    With ``refit_members`` the members are then redrawn and refitted on all
    rows under the same subset seeds, keeping the searched weights. With a
    single member there is nothing to weigh, so it sees all rows.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    events = []
    if cfg.T == 1:
        members = fit_members(X, y, cfg, n_classes, events)
        members[0].weight = 1.0
    else:
        tr, va = inner_split(y, cfg.val_ratio, cfg.seed)
        members = fit_members(X[tr], y[tr], cfg, n_classes, events)
        # subset indices refer to rows of X[tr]; store them against X instead
        for mem in members:
            mem.subset = SubsetSpec(tuple(tr[list(mem.subset.samples)].tolist()),
                                    mem.subset.features, mem.subset.seed)
        preds = np.stack([mem.predict(X[va]) for mem in members])
        w = optimize_subspace_weights(preds, y[va], n_classes, cfg.weight_candidates, cfg.seed)
        if cfg.refit_members:
            members = fit_members(X, y, cfg, n_classes, events)
        for mem, wi in zip(members, w):
            mem.weight = float(wi)
    return EnsembleModel(members, X.shape[1], n_classes, cfg.to_dict(), events)


def predict_ensemble(model: EnsembleModel, X):
    X = np.asarray(X, dtype=float)
    if X.shape[1] != model.n_features:
        raise ValueError(f"ensemble expects {model.n_features} features, got {X.shape[1]}")
    preds = np.stack([m.predict(X) for m in model.members])
    return weighted_vote(preds, model.weights, model.n_classes)
