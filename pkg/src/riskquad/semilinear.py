"""Tracking control of a semilinear PDE with uncertain Neumann flux.

State equation: -lap(u) + c u^3 = z with u = 0 on the left/right sides and
prescribed normal flux m on the top/bottom sides of a unit square.  The
cubic term is monotone, so Newton's method from a zero initial guess
converges without globalization at desk scale.  The gradient of the
tracking objective with respect to the boundary flux is the negative trace
of the adjoint on the Neumann boundary; a Hessian action costs two
linearized solves.  For c = 0 the map from flux to objective is exactly
quadratic, which makes this problem the sharpest end-to-end check of the
derivative stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .fem import (
    SolveCounter,
    SpdSolver,
    assemble_weighted_mass,
    assemble_weighted_stiffness,
    build_mesh,
    nodal_load,
)
from .random_field import neumann_trace_space, volume_space
from .surrogate import QuadraticSurrogate


def default_desired_state(mesh):
    """Artifact convention for the tracking target: 0.5 x (2 - x)."""
    return 0.5 * mesh.node_x * (2.0 - mesh.node_x)


@dataclass
class SemilinearWorkspace:
    """State, adjoint, and linearized solver at one (control, flux) pair."""

    z: np.ndarray
    m: np.ndarray
    u: np.ndarray
    p: np.ndarray
    solver: SpdSolver
    residuals: list


class SemilinearProblem:
    """Semilinear control problem on a unit square with top/bottom flux.

    Boundary flux fields live on the Neumann trace space (bottom nodes then
    top nodes, each side a 1D segment including its corner nodes).
    """

    def __init__(self, mesh=None, c=1.0, desired=None, newton_tol=1e-10,
                 newton_max_iter=25, rtol=1e-10):
        if c < 0.0:
            raise ValueError("the cubic coefficient must be nonnegative")
        self.mesh = build_mesh(16, 16, 1.0, 1.0) if mesh is None else mesh
        if len(self.mesh.dirichlet_nodes) == 0:
            raise ValueError("a Dirichlet part of the boundary is required")
        self.c = float(c)
        self.space = volume_space(self.mesh)
        self.trace_space = neumann_trace_space(self.mesh)
        self.desired = (
            default_desired_state(self.mesh) if desired is None
            else np.asarray(desired, float)
        )
        self.newton_tol = float(newton_tol)
        self.newton_max_iter = int(newton_max_iter)
        self.rtol = float(rtol)
        self.counter = SolveCounter()
        self.stiffness = assemble_weighted_stiffness(
            self.mesh, np.zeros(self.mesh.n_nodes)
        )
        # Laplacian solve used only for the dual norm of Newton residuals
        self._norm_solver = SpdSolver(
            self.stiffness, self.mesh.dirichlet_nodes, rtol=rtol
        )
        self._free = np.setdiff1d(
            np.arange(self.mesh.n_nodes), self.mesh.dirichlet_nodes
        )

    @property
    def boundary_dim(self):
        return self.trace_space.dim

    def boundary_load(self, m_bnd):
        """Volume load of the Neumann boundary term <m, v> on the trace."""
        out = np.zeros(self.mesh.n_nodes)
        out[self.trace_space.node_index] = self.trace_space.mass @ np.asarray(
            m_bnd, float
        )
        return out

    def boundary_trace(self, u):
        return np.asarray(u)[self.trace_space.node_index]

    def _dual_norm(self, residual):
        r = residual.copy()
        r[self.mesh.dirichlet_nodes] = 0.0
        return float(np.sqrt(max(r @ self._norm_solver.solve(r), 0.0)))

    def _linearized_solver(self, u):
        op = self.stiffness
        if self.c > 0.0:
            ug = self.mesh.interp_gauss(u)
            op = op + assemble_weighted_mass(self.mesh, 3.0 * self.c * ug**2)
        return SpdSolver(op, self.mesh.dirichlet_nodes, rtol=self.rtol,
                         counter=self.counter)

    def solve_state(self, z, m_bnd):
        """Newton solve of the state equation from a zero initial guess.

        Returns the state, the linearized solver at the solution (reused by
        adjoint and incremental equations), and the residual history in the
        discrete dual norm.
        """
        rhs = self.space.mass @ np.asarray(z, float) + self.boundary_load(m_bnd)
        u = np.zeros(self.mesh.n_nodes)
        history = []
        solver = None
        for _ in range(self.newton_max_iter):
            ug = self.mesh.interp_gauss(u)
            residual = self.stiffness @ u + self.c * nodal_load(self.mesh, ug**3) - rhs
            rnorm = self._dual_norm(residual)
            history.append(rnorm)
            solver = self._linearized_solver(u)
            if rnorm <= self.newton_tol:
                return u, solver, history
            u = u + solver.solve(-residual)
        raise NumericalError(
            f"Newton stalled at residual {history[-1]:.3e}", residual=history
        )

    # -- objective and derivatives ---------------------------------------------

    def objective_of_state(self, u):
        d = u - self.desired
        return 0.5 * self.space.inner(d, d)

    def objective(self, z, m_bnd):
        u, _, _ = self.solve_state(z, m_bnd)
        return self.objective_of_state(u)

    def workspace(self, z, m_bnd):
        """State and adjoint at (z, m); the linearized operator is cached."""
        u, solver, history = self.solve_state(z, m_bnd)
        p = solver.solve(-self.space.mass @ (u - self.desired))
        return SemilinearWorkspace(
            z=np.asarray(z, float), m=np.asarray(m_bnd, float),
            u=u, p=p, solver=solver, residuals=history,
        )

    def grad_boundary(self, ws):
        """Gradient of the objective with respect to the boundary flux."""
        return -self.boundary_trace(ws.p)

    def hess_action(self, ws, m_hat):
        """Hessian action on a boundary flux direction (2 linearized solves)."""
        inc_u = ws.solver.solve(self.boundary_load(m_hat))
        load = self.space.mass @ inc_u
        if self.c > 0.0:
            prod = (
                self.mesh.interp_gauss(ws.u)
                * self.mesh.interp_gauss(ws.p)
                * self.mesh.interp_gauss(inc_u)
            )
            load = load + 6.0 * self.c * nodal_load(self.mesh, prod)
        inc_p = ws.solver.solve(-load)
        return -self.boundary_trace(inc_p)

    def surrogate(self, z, m_bar=None):
        """Quadratic expansion of flux -> objective about ``m_bar``."""
        m_bar = np.zeros(self.boundary_dim) if m_bar is None else m_bar
        ws = self.workspace(z, m_bar)
        return QuadraticSurrogate(
            space=self.trace_space,
            theta_bar=self.objective_of_state(ws.u),
            grad=self.grad_boundary(ws),
            hess_action=lambda m_hat: self.hess_action(ws, m_hat),
            anchor=np.asarray(m_bar, float),
            counter=self.counter,
        )

    def hessian_norm_estimate(self, z, m_bar=None, iters=30, seed=0):
        """Operator norm of the boundary Hessian by power iteration."""
        surr = self.surrogate(z, m_bar)
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.boundary_dim)
        v /= self.trace_space.norm(v)
        lam = 0.0
        for _ in range(iters):
            w = surr.hess_action(v)
            lam = self.trace_space.inner(v, w)
            nw = self.trace_space.norm(w)
            if nw < 1e-300:
                return 0.0
            v = w / nw
        return abs(lam)
