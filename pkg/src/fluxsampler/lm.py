"""Damped least squares (Levenberg-Marquardt) with box bounds by projection."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class NonConvergenceError(RuntimeError):
    pass


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    nit: int
    converged: bool
    cost_history: list = field(default_factory=list)
    residuals: np.ndarray | None = None


def _fd_jacobian(fun, x, r0, lo, hi):
    jac = np.empty((r0.size, x.size))
    for j in range(x.size):
        h = np.sqrt(np.finfo(float).eps) * max(abs(x[j]), 1.0)
        xp = x.copy()
        # step away from an active upper bound
        if x[j] + h > hi[j]:
            h = -h
        xp[j] = x[j] + h
        jac[:, j] = (fun(xp) - r0) / h
    return jac


def levenberg_marquardt(fun: Callable[[np.ndarray], np.ndarray], x0, jac=None, bounds=None,
                        max_iter: int = 200, ftol: float = 1e-12, xtol: float = 1e-12,
                        gtol: float = 1e-14, lam0: float = 1e-3) -> LMResult:
    """Minimize ``0.5 * ||fun(x)||^2``.

    Steps use Marquardt's diagonal scaling. A trial point is projected onto
    ``bounds`` and only accepted if it lowers the cost, so the cost history
    is non-increasing.
    """
    x = np.array(x0, dtype=float)
    if bounds is None:
        lo = np.full(x.size, -np.inf)
        hi = np.full(x.size, np.inf)
    else:
        lo = np.broadcast_to(np.asarray(bounds[0], dtype=float), x.shape).copy()
        hi = np.broadcast_to(np.asarray(bounds[1], dtype=float), x.shape).copy()
    x = np.clip(x, lo, hi)
    r = np.asarray(fun(x), dtype=float)
    cost = 0.5 * float(r @ r)
    history = [cost]
    lam = lam0
    converged = False
    nit = 0
    for nit in range(1, max_iter + 1):
        J = jac(x) if jac is not None else _fd_jacobian(fun, x, r, lo, hi)
        g = J.T @ r
        # variables pinned on a bound with the gradient pushing outward stay put
        free = ~(((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0)))
        if not np.any(free) or np.max(np.abs(g[free])) <= gtol * max(1.0, cost):
            converged = True
            break
        Jf = J[:, free]
        A = Jf.T @ Jf
        d = np.maximum(np.diag(A), 1e-300)
        accepted = False
        for _ in range(40):
            try:
                step = np.zeros_like(x)
                step[free] = np.linalg.solve(A + lam * np.diag(d), -g[free])
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            x_new = np.clip(x + step, lo, hi)
            r_new = np.asarray(fun(x_new), dtype=float)
            cost_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                accepted = True
                break
            lam *= 10
            if lam > 1e16:
                break
        if not accepted:
            # no descent direction left at machine precision
            converged = True
            break
        dx = x_new - x
        rel_drop = (cost - cost_new) / max(cost, 1e-300)
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        lam = max(lam / 10, 1e-12)
        if rel_drop < ftol or np.linalg.norm(dx) < xtol * (np.linalg.norm(x) + xtol):
            converged = True
            break
    return LMResult(x, cost, nit, converged, history, r)
