"""Central-difference validation of the whole derivative stack.

Each check compares an adjoint-based derivative against a second-order
finite difference at step h = 1e-4 and reports the relative error.  These
are the same checks the test suite runs; the CLI exposes them so a modified
build can be revalidated in seconds.
"""

from __future__ import annotations

import numpy as np

from .fem import build_mesh
from .ouu import OuuConfig, RiskAverseObjective, SaaObjective
from .poisson import PoissonFlowProblem, default_wells
from .random_field import field_on_mesh, field_on_neumann_boundary
from .semilinear import SemilinearProblem

FD_STEP = 1e-4
FD_TOL = 1e-5


def _rel(err, ref):
    return err / max(ref, 1e-300)


def check_flow_gradient(problem, gf, z, n_dirs=3, seed=0, h=FD_STEP):
    """Max relative FD error of the parameter gradient of the flow objective."""
    rng = np.random.default_rng(seed)
    surr = problem.surrogate(z)
    worst = 0.0
    for _ in range(n_dirs):
        d = gf.sample(rng=rng) - gf.mean
        exact = surr.space.inner(surr.grad, d)
        plus = problem.objective(z, problem.mean + h * d)
        minus = problem.objective(z, problem.mean - h * d)
        fd = (plus - minus) / (2.0 * h)
        worst = max(worst, _rel(abs(exact - fd), abs(fd)))
    return worst


def check_flow_hessian(problem, gf, z, n_dirs=2, seed=1, h=FD_STEP):
    """Max relative FD error of the Hessian action against gradient differences."""
    rng = np.random.default_rng(seed)
    surr = problem.surrogate(z)
    mesh = problem.mesh
    worst = 0.0
    for _ in range(n_dirs):
        zeta = gf.sample(rng=rng) - gf.mean
        psi = surr.hess_action(zeta)
        plus = PoissonFlowProblem(
            mesh, wells=problem.wells, mean=problem.mean + h * zeta
        )
        minus = PoissonFlowProblem(
            mesh, wells=problem.wells, mean=problem.mean - h * zeta
        )
        fd = (plus.surrogate(z).grad - minus.surrogate(z).grad) / (2.0 * h)
        err = surr.space.norm(psi - fd)
        worst = max(worst, _rel(err, surr.space.norm(psi)))
    return worst


def check_semilinear_gradient(problem, gf, z, n_dirs=3, seed=2, h=FD_STEP):
    rng = np.random.default_rng(seed)
    m_bar = gf.mean
    surr = problem.surrogate(z, m_bar)
    worst = 0.0
    for _ in range(n_dirs):
        d = gf.sample(rng=rng) - gf.mean
        exact = surr.space.inner(surr.grad, d)
        fd = (
            problem.objective(z, m_bar + h * d)
            - problem.objective(z, m_bar - h * d)
        ) / (2.0 * h)
        worst = max(worst, _rel(abs(exact - fd), abs(fd)))
    return worst


def check_semilinear_hessian(problem, gf, z, n_dirs=2, seed=3, h=FD_STEP):
    rng = np.random.default_rng(seed)
    m_bar = gf.mean
    surr = problem.surrogate(z, m_bar)
    worst = 0.0
    for _ in range(n_dirs):
        d = gf.sample(rng=rng) - gf.mean
        psi = surr.hess_action(d)
        fd = (
            problem.surrogate(z, m_bar + h * d).grad
            - problem.surrogate(z, m_bar - h * d).grad
        ) / (2.0 * h)
        err = surr.space.norm(psi - fd)
        worst = max(worst, _rel(err, surr.space.norm(psi)))
    return worst


def check_ouu_gradient(problem, gf, cfg, z, components=None, h=FD_STEP):
    """Max relative componentwise FD error of the risk-objective gradient."""
    obj = RiskAverseObjective(problem, gf, cfg, nominal_control=z)
    report, state = obj.evaluate(z)
    grad = obj.gradient(state)
    idx = range(len(z)) if components is None else components
    worst = 0.0
    for i in idx:
        zp = np.array(z, dtype=float)
        zp[i] += h
        zm = np.array(z, dtype=float)
        zm[i] -= h
        fd = (obj.evaluate(zp)[0].value - obj.evaluate(zm)[0].value) / (2.0 * h)
        worst = max(worst, _rel(abs(grad[i] - fd), abs(fd)))
    return worst


def check_saa_gradient(problem, gf, z, n_mc=6, components=(0, 7), seed=4,
                       h=FD_STEP, beta=1.0, gamma=1e-5):
    saa = SaaObjective(problem, gf, n_mc, beta, gamma, seed=seed)
    _, grad = saa.value_and_grad(z)
    worst = 0.0
    for i in components:
        zp = np.array(z, dtype=float)
        zp[i] += h
        zm = np.array(z, dtype=float)
        zm[i] -= h
        fd = (saa.evaluate(zp)[0] - saa.evaluate(zm)[0]) / (2.0 * h)
        worst = max(worst, _rel(abs(grad[i] - fd), abs(fd)))
    return worst


def run_derivative_checks(seed=0):
    """The full tower on a 16x8 mesh; returns (name, rel_err, tol) triples."""
    mesh = build_mesh(16, 8, 2.0, 1.0)
    wells = default_wells(sigma=0.1)
    problem = PoissonFlowProblem(mesh, wells=wells)
    gf = field_on_mesh(mesh, 2e-2, 4.0, rng_seed=seed, space=problem.space)
    z = np.full(problem.n_controls, 4.0)

    sl_mesh = build_mesh(12, 12, 1.0, 1.0)
    sl = SemilinearProblem(sl_mesh, c=1.0)
    sl_gf = field_on_neumann_boundary(
        sl_mesh, 5e-2, 2.0, rng_seed=seed, space=sl.trace_space
    )
    sl_z = np.ones(sl_mesh.n_nodes)

    cfg = OuuConfig(beta=1.0, gamma=1e-5, n_tr=4, beta_schedule=(1.0,), seed=seed)
    results = [
        ("flow parameter gradient", check_flow_gradient(problem, gf, z), FD_TOL),
        ("flow Hessian action", check_flow_hessian(problem, gf, z), FD_TOL),
        ("semilinear gradient", check_semilinear_gradient(sl, sl_gf, sl_z), FD_TOL),
        ("semilinear Hessian action", check_semilinear_hessian(sl, sl_gf, sl_z), FD_TOL),
        (
            "risk objective control gradient",
            check_ouu_gradient(problem, gf, cfg, z, components=(0, 9, 19)),
            FD_TOL,
        ),
        ("sample-average control gradient", check_saa_gradient(problem, gf, z), FD_TOL),
    ]
    return results
