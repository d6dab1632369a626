"""Projected L-BFGS for box-constrained minimization.

Limited-memory BFGS directions restricted to the free variables, projected
backtracking line search with an Armijo decrease condition, and curvature
pairs accepted only when they keep the inverse Hessian approximation
positive.  Progress is measured by the norm of the projected gradient
z - P(z - g); iterations stop once it falls below a relative reduction of
its starting value.  Everything is deterministic for fixed inputs, and
accepted steps never increase the objective.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class IterRow:
    iteration: int
    value: float
    grad_norm: float
    solves: int
    active_bounds: int


@dataclass
class BoxResult:
    z: np.ndarray
    value: float
    converged: bool
    degraded: bool
    rows: list = field(default_factory=list)
    n_iters: int = 0
    aux: object = None


def _project(z, lower, upper):
    return np.minimum(np.maximum(z, lower), upper)


def _two_loop(grad, mem):
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if mem:
        s, y, _ = mem[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def minimize_box_lbfgs(value_fn, grad_fn, z0, lower, upper, *, rel_tol=5e-4,
                       abs_tol=1e-14, max_iter=100, memory=10, c1=1e-4,
                       max_backtracks=40, solve_count=None):
    """Minimize over a box using two callbacks sharing per-point state.

    ``value_fn(z) -> (f, aux)`` evaluates the objective (line-search trials
    use only this); ``grad_fn(z, aux) -> g`` finishes the gradient from the
    state ``aux`` that the matching value call produced.  ``solve_count`` is
    an optional zero-argument callable sampled for the iterate trace.
    """
    lower = np.broadcast_to(np.asarray(lower, float), np.shape(z0)).copy()
    upper = np.broadcast_to(np.asarray(upper, float), np.shape(z0)).copy()
    z = _project(np.asarray(z0, dtype=float).copy(), lower, upper)
    count = solve_count if solve_count is not None else (lambda: 0)

    f, aux = value_fn(z)
    g = grad_fn(z, aux)
    mem = deque(maxlen=memory)
    rows = []
    edge = 1e-10 * np.maximum(upper - lower, 1.0)

    def projected_gradient_norm(zk, gk):
        return float(np.linalg.norm(zk - _project(zk - gk, lower, upper)))

    def n_active(zk):
        return int(np.sum((zk <= lower + edge) | (zk >= upper - edge)))

    pg0 = projected_gradient_norm(z, g)
    rows.append(IterRow(0, f, pg0, count(), n_active(z)))
    if pg0 <= abs_tol:
        return BoxResult(z, f, True, False, rows, 0, aux)
    target = max(rel_tol * pg0, abs_tol)

    degraded = False
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        active = ((z <= lower + edge) & (g > 0)) | ((z >= upper - edge) & (g < 0))
        g_free = np.where(active, 0.0, g)
        d = -_two_loop(g_free, list(mem))
        d[active] = 0.0
        if d @ g_free >= 0.0 or not np.all(np.isfinite(d)):
            d = -g_free
        if np.linalg.norm(d) == 0.0:
            converged = True
            break

        alpha = 1.0
        accepted = False
        f_new = f
        z_new = z
        aux_new = aux
        for _ in range(max_backtracks):
            z_trial = _project(z + alpha * d, lower, upper)
            step = z_trial - z
            if np.linalg.norm(step) == 0.0:
                break
            f_trial, aux_trial = value_fn(z_trial)
            if f_trial <= f + c1 * (g @ step):
                z_new, f_new, aux_new = z_trial, f_trial, aux_trial
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            degraded = True
            break

        g_new = grad_fn(z_new, aux_new)
        s = z_new - z
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            mem.append((s, y, 1.0 / sy))
        z, f, g, aux = z_new, f_new, g_new, aux_new

        pg = projected_gradient_norm(z, g)
        rows.append(IterRow(it, f, pg, count(), n_active(z)))
        if pg <= target:
            converged = True
            break

    return BoxResult(z, f, converged, degraded, rows, it, aux)
