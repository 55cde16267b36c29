"""Scaled conjugate gradient (Moller 1993) and a plain gradient-descent fallback.

Both work on a flat parameter vector through a ``fun(x) -> (f, grad)``
callable and only ever accept steps that do not increase ``f``. An optional
``callback(x, f)`` runs after every accepted step; returning True stops early.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    history: list = field(default_factory=list)
    iterations: int = 0
    accepted: int = 0


def scg(fun, x0, max_iter=100, sigma=1e-5, lambda_init=1e-7, gtol=1e-10, callback=None):
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericalError("SCG: non-finite objective at start", last_state=x)
    n = x.size
    r = -g
    p = r.copy()
    lam, lam_bar = lambda_init, 0.0
    success = True
    history = [f]
    accepted = 0
    delta = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        p2 = float(p @ p)
        if p2 == 0.0:
            break
        if success:
            if float(p @ r) <= 0.0:
                p = r.copy()
                p2 = float(p @ p)
            sigma_k = sigma / np.sqrt(p2)
            _, g_plus = fun(x + sigma_k * p)
            s = (g_plus - g) / sigma_k
            delta = float(p @ s)
        delta += (lam - lam_bar) * p2
        if delta <= 0.0:
            lam_bar = 2.0 * (lam - delta / p2)
            delta = -delta + lam * p2
            lam = lam_bar
        mu = float(p @ r)
        alpha = mu / delta
        x_new = x + alpha * p
        f_new, g_new = fun(x_new)
        if np.isfinite(f_new) and np.all(np.isfinite(g_new)):
            comparison = 2.0 * delta * (f - f_new) / mu ** 2
        else:
            comparison = -np.inf
        if comparison >= 0.0:
            x, f, g = x_new, f_new, g_new
            r_old = r
            r = -g
            lam_bar = 0.0
            success = True
            accepted += 1
            history.append(f)
            if accepted % n == 0:
                p = r.copy()
            else:
                beta = (float(r @ r) - float(r @ r_old)) / mu
                p = r + beta * p
            if comparison >= 0.75:
                lam = 0.25 * lam
            if callback is not None and callback(x, f):
                break
        else:
            lam_bar = lam
            success = False
        if comparison < 0.25:
            if np.isfinite(comparison):
                lam = lam + delta * (1.0 - comparison) / p2
            else:
                lam = 4.0 * lam + 1e-12
        if not np.isfinite(lam) or lam > 1e100:
            break
        if float(r @ r) < gtol ** 2:
            break
    return OptimResult(x, f, history, it, accepted)


def gradient_descent(fun, x0, max_iter=100, learn_rate=0.1, callback=None):
    """Step-halving gradient descent; used as a debugging fallback for SCG."""
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not np.isfinite(f):
        raise NumericalError("gradient descent: non-finite objective at start", last_state=x)
    history = [f]
    lr = learn_rate
    accepted = 0
    it = 0
    for it in range(1, max_iter + 1):
        x_new = x - lr * g
        f_new, g_new = fun(x_new)
        if np.isfinite(f_new) and f_new <= f:
            x, f, g = x_new, f_new, g_new
            history.append(f)
            accepted += 1
            lr *= 1.05
            if callback is not None and callback(x, f):
                break
        else:
            lr *= 0.5
            if lr < 1e-14:
                break
    return OptimResult(x, f, history, it, accepted)
