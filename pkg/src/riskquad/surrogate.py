"""Quadratic expansion of the parameter-to-objective map and its moments.

For a Gaussian parameter with covariance C and an expansion with gradient g
and Hessian action H about the mean, the expansion's mean and variance are
available in closed form:

    mean     = theta_bar + 1/2 tr(sqrt(C) H sqrt(C))
    variance = <g, C g>   + 1/2 tr((sqrt(C) H sqrt(C))^2)

The traces are estimated either with Gaussian probe vectors drawn from
N(0, C) (unbiased, averaged) or by summing over sqrt(C) images of dominant
eigenvectors of the covariance-preconditioned Hessian (accurate for rapidly
decaying spectra, exact with a complete basis).
"""

from __future__ import annotations

from contextlib import nullcontext
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericalError
from .utils import map_indexed


@dataclass
class QuadraticSurrogate:
    """Second-order expansion of the parameter-to-objective map.

    ``hess_action`` maps a field to the Hessian-vector product and must be
    self-adjoint in the M inner product of ``space``.  ``counter`` points at
    the owning problem's solve counter when there is one, so auxiliary work
    (eigenbasis construction) can be excluded from solve accounting.
    """

    space: object
    theta_bar: float
    grad: np.ndarray
    hess_action: Callable[[np.ndarray], np.ndarray]
    anchor: np.ndarray
    counter: object = None

    def eval_lin(self, m):
        """First-order value at a parameter field."""
        return self.theta_bar + self.space.inner(self.grad, m - self.anchor)

    def eval_quad(self, m):
        """Second-order value; costs exactly one Hessian action."""
        d = np.asarray(m) - self.anchor
        return (
            self.theta_bar
            + self.space.inner(self.grad, d)
            + 0.5 * self.space.inner(self.hess_action(d), d)
        )


@dataclass
class TraceEstimate:
    """Estimates of tr(sqrt(C) H sqrt(C)) and of the trace of its square.

    ``probes`` are the fields the Hessian was applied to and ``psi`` the
    corresponding Hessian actions; ``weight`` is the quadrature weight of
    each term (1/n_tr for random probes, 1 for eigenbasis sums).
    """

    mode: str
    n_tr: int
    tr_hc: float
    tr_hc_sq: float
    probes: list
    psi: list
    seed: int
    weight: float


def estimate_traces(surr, gf, mode="randomized", n_tr=40, seed=0, basis=None):
    """Estimate both covariance-preconditioned traces of the Hessian.

    randomized: probes are draws from N(0, C); the averaged quadratic forms
    are unbiased for both traces.  eigenbasis: probes are sqrt(C) images of
    the dominant eigenvectors of sqrt(C) H sqrt(C) (computed here unless a
    ``basis`` is passed; that construction is excluded from solve
    accounting).  Either way the Hessian is applied once per probe, i.e.
    2*n_tr PDE solves.
    """
    if n_tr < 1:
        raise ValueError("n_tr must be at least 1")
    if mode == "randomized":
        probes = gf.draw_trace_vectors(n_tr, seed)
        weight = 1.0 / n_tr
    elif mode == "eigenbasis":
        if basis is None:
            pause = surr.counter.paused() if surr.counter is not None else nullcontext()
            with pause:
                basis = gf.preconditioned_eigenpairs(surr.hess_action, n_tr, seed=seed)
        probes = [gf.apply_sqrt_C(v) for v in basis.vectors.T]
        weight = 1.0
    else:
        raise ValueError(f"unknown trace mode {mode!r}")

    psi = [surr.hess_action(zeta) for zeta in probes]
    tr_hc = weight * sum(
        surr.space.inner(zeta, ps) for zeta, ps in zip(probes, psi)
    )
    tr_hc_sq = weight * sum(
        surr.space.inner(ps, gf.apply_C(ps)) for ps in psi
    )
    return TraceEstimate(
        mode=mode, n_tr=n_tr, tr_hc=tr_hc, tr_hc_sq=tr_hc_sq,
        probes=probes, psi=psi, seed=seed, weight=weight,
    )


def analytic_mean(surr, gf, tr):
    """Closed-form mean of the quadratic expansion under N(mean, C)."""
    return surr.theta_bar + 0.5 * tr.tr_hc


def analytic_variance(surr, gf, tr):
    """Closed-form variance of the quadratic expansion under N(mean, C)."""
    grad_term = surr.space.inner(surr.grad, gf.apply_C(surr.grad))
    var = grad_term + 0.5 * tr.tr_hc_sq
    if var < -1e-12 * max(1.0, abs(surr.theta_bar)):
        raise NumericalError(
            f"negative variance {var:.3e}: Hessian self-adjointness broken"
        )
    return max(var, 0.0)


@dataclass
class RateStudy:
    """Mean absolute expansion errors against the covariance scaling."""

    eps: np.ndarray
    err_lin: np.ndarray
    err_quad: np.ndarray
    slope_lin: float
    slope_quad: float
    n_mc: int
    seed: int


def _loglog_slope(eps, err):
    err = np.maximum(np.asarray(err), 1e-300)
    if len(eps) < 2:
        return float("nan")
    return float(np.polyfit(np.log(eps), np.log(err), 1)[0])


def truncation_rate_study(problem, gf, z, eps_list, n_mc, seed=0, threads=1):
    """Mean absolute errors of the linear and quadratic expansions under
    N(mean, eps*C) for each eps, with one frozen Monte Carlo sample.

    The same colored noise is reused across eps values (common random
    numbers), so the decay of the error columns is smooth in eps.  Also
    returns least-squares log-log slopes over the eps range.
    """
    eps = np.asarray(list(eps_list), dtype=float)
    if np.any(eps <= 0.0):
        raise ValueError("eps values must be positive")
    surr = problem.surrogate(z)
    if not np.allclose(surr.anchor, gf.mean, atol=1e-12):
        raise ValueError("expansion anchor must match the field mean")
    base = gf.zero_mean_batch(n_mc, seed)
    err_lin = np.empty(len(eps))
    err_quad = np.empty(len(eps))
    for k, e in enumerate(eps):
        fields = gf.mean[:, None] + np.sqrt(e) * base
        theta = np.array(
            map_indexed(lambda i: problem.objective(z, fields[:, i]), n_mc, threads)
        )
        lin = np.array([surr.eval_lin(fields[:, i]) for i in range(n_mc)])
        quad = np.array([surr.eval_quad(fields[:, i]) for i in range(n_mc)])
        err_lin[k] = np.mean(np.abs(theta - lin))
        err_quad[k] = np.mean(np.abs(theta - quad))
    return RateStudy(
        eps=eps,
        err_lin=err_lin,
        err_quad=err_quad,
        slope_lin=_loglog_slope(eps, err_lin),
        slope_quad=_loglog_slope(eps, err_quad),
        n_mc=n_mc,
        seed=seed,
    )
