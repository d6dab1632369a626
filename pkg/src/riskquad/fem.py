"""Structured bilinear finite elements on a rectangle.

Q1 quadrilateral elements on a uniform grid with 2x2 Gauss quadrature,
sparse symmetric assembly, symmetric Dirichlet elimination with lifted
right-hand sides, and cached SPD factorizations.  All elements are
congruent axis-aligned rectangles, so the reference-element tables are
shared and every assembly loop is vectorized over elements.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError

SIDES = ("left", "right", "bottom", "top")


class Mesh:
    """Uniform nx-by-ny grid of rectangular Q1 elements on (0,lx) x (0,ly).

    Nodes are ordered lexicographically with x fastest; element k lists its
    four nodes counterclockwise starting at the lower-left corner.  Boundary
    nodes on ``dirichlet_sides`` are tagged Dirichlet (corners included);
    edges on the remaining sides are collected as Neumann edges.
    """

    def __init__(self, nx, ny, lx, ly, dirichlet_sides=("left", "right")):
        if nx < 1 or ny < 1:
            raise ValueError("mesh needs at least one element per axis")
        if lx <= 0.0 or ly <= 0.0:
            raise ValueError("domain extents must be positive")
        unknown = set(dirichlet_sides) - set(SIDES)
        if unknown:
            raise ValueError(f"unknown sides: {sorted(unknown)}")

        self.nx, self.ny = int(nx), int(ny)
        self.lx, self.ly = float(lx), float(ly)
        self.hx = self.lx / self.nx
        self.hy = self.ly / self.ny
        self.dirichlet_sides = tuple(dirichlet_sides)

        xs = np.linspace(0.0, self.lx, self.nx + 1)
        ys = np.linspace(0.0, self.ly, self.ny + 1)
        X, Y = np.meshgrid(xs, ys)
        self.node_x = X.ravel()
        self.node_y = Y.ravel()

        ex, ey = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        n00 = (ey * (self.nx + 1) + ex).ravel()
        self.conn = np.column_stack(
            [n00, n00 + 1, n00 + self.nx + 2, n00 + self.nx + 1]
        )

        tagged = [self.side_nodes(s) for s in self.dirichlet_sides]
        if tagged:
            self.dirichlet_nodes = np.unique(np.concatenate(tagged))
        else:
            self.dirichlet_nodes = np.empty(0, dtype=int)
        edges = []
        for side in SIDES:
            if side in self.dirichlet_sides:
                continue
            s = self.side_nodes(side)
            edges.append(np.column_stack([s[:-1], s[1:]]))
        if edges:
            self.neumann_edges = np.vstack(edges)
        else:
            self.neumann_edges = np.empty((0, 2), dtype=int)

        self._build_reference_tables()

    @property
    def n_nodes(self):
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_elems(self):
        return self.nx * self.ny

    def side_nodes(self, side):
        """Node indices along one side, ordered along the side."""
        nxp = self.nx + 1
        if side == "left":
            return np.arange(self.ny + 1) * nxp
        if side == "right":
            return np.arange(self.ny + 1) * nxp + self.nx
        if side == "bottom":
            return np.arange(nxp)
        if side == "top":
            return self.ny * nxp + np.arange(nxp)
        raise ValueError(f"unknown side {side!r}")

    def _build_reference_tables(self):
        g = 1.0 / np.sqrt(3.0)
        pts = [(-g, -g), (g, -g), (g, g), (-g, g)]
        phi = np.empty((4, 4))
        dphx = np.empty((4, 4))
        dphy = np.empty((4, 4))
        for q, (xi, eta) in enumerate(pts):
            phi[q] = 0.25 * np.array(
                [
                    (1 - xi) * (1 - eta),
                    (1 + xi) * (1 - eta),
                    (1 + xi) * (1 + eta),
                    (1 - xi) * (1 + eta),
                ]
            )
            dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
            deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
            dphx[q] = dxi * 2.0 / self.hx
            dphy[q] = deta * 2.0 / self.hy
        # phi[q, a]: shape function a at Gauss point q; qw includes det J
        self.phi = phi
        self.dphx = dphx
        self.dphy = dphy
        self.qw = self.hx * self.hy / 4.0
        self.stiff_tab = np.einsum("qa,qb->qab", dphx, dphx) + np.einsum(
            "qa,qb->qab", dphy, dphy
        )
        self.mass_tab = np.einsum("qa,qb->qab", phi, phi)

    # -- pointwise evaluation at quadrature points -------------------------

    def interp_gauss(self, f):
        """Nodal field -> values at the 4 Gauss points of every element."""
        return np.asarray(f)[self.conn] @ self.phi.T

    def grad_gauss(self, u):
        """Nodal field -> gradient components at Gauss points, (gx, gy)."""
        uc = np.asarray(u)[self.conn]
        return uc @ self.dphx.T, uc @ self.dphy.T


def build_mesh(nx, ny, lx, ly, dirichlet_sides=("left", "right")):
    """Build a structured rectangle mesh with tagged boundary."""
    return Mesh(nx, ny, lx, ly, dirichlet_sides)


# -- assembly ---------------------------------------------------------------


def _scatter_matrix(mesh, loc):
    rows = np.broadcast_to(mesh.conn[:, :, None], loc.shape).ravel()
    cols = np.broadcast_to(mesh.conn[:, None, :], loc.shape).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_mass(mesh):
    """Q1 mass matrix; exact for bilinear integrands under 2x2 Gauss."""
    loc = mesh.qw * mesh.mass_tab.sum(axis=0)
    return _scatter_matrix(mesh, np.broadcast_to(loc, (mesh.n_elems, 4, 4)))


def assemble_weighted_stiffness(mesh, m):
    """Stiffness matrix of the form (exp(m) grad u, grad v).

    The log coefficient ``m`` is a nodal field; exp(m) is evaluated at the
    quadrature points of each element.  No boundary conditions are applied.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (mesh.n_nodes,):
        raise ValueError("coefficient field has wrong length")
    if not np.all(np.isfinite(m)):
        raise ValueError("coefficient field must be finite")
    coef = np.exp(mesh.interp_gauss(m))
    loc = np.einsum("eq,qab->eab", mesh.qw * coef, mesh.stiff_tab)
    return _scatter_matrix(mesh, loc)


def _scatter_vector(mesh, loc):
    return np.bincount(mesh.conn.ravel(), weights=loc.ravel(),
                       minlength=mesh.n_nodes)


def weighted_stiffness_apply(mesh, coef_gauss, u):
    """Load vector of v -> integral coef * grad(u).grad(v).

    ``coef_gauss`` holds the full scalar weight at Gauss points, shape
    (n_elems, 4).  Equivalent to assembling the coef-weighted stiffness and
    multiplying by ``u``, without forming the matrix.
    """
    gx, gy = mesh.grad_gauss(u)
    tx = mesh.qw * coef_gauss * gx
    ty = mesh.qw * coef_gauss * gy
    return _scatter_vector(mesh, tx @ mesh.dphx + ty @ mesh.dphy)


def grad_dot_load(mesh, coef_gauss, u, v):
    """Load vector w with w_i = integral coef * (grad u . grad v) phi_i."""
    gux, guy = mesh.grad_gauss(u)
    gvx, gvy = mesh.grad_gauss(v)
    s = mesh.qw * coef_gauss * (gux * gvx + guy * gvy)
    return _scatter_vector(mesh, s @ mesh.phi)


def nodal_load(mesh, values_gauss):
    """Load vector w with w_i = integral f phi_i, f given at Gauss points."""
    return _scatter_vector(mesh, (mesh.qw * values_gauss) @ mesh.phi)


def assemble_weighted_mass(mesh, q_gauss):
    """Matrix of (q u, v) with the weight q given at Gauss points."""
    loc = np.einsum("eq,qab->eab", mesh.qw * q_gauss, mesh.mass_tab)
    return _scatter_matrix(mesh, loc)


# -- 1D operators for boundary traces --------------------------------------


def mass_matrix_1d(n_elems, h):
    """Linear-element mass matrix on a segment of n_elems elements."""
    main = np.full(n_elems + 1, 4.0)
    main[0] = main[-1] = 2.0
    off = np.ones(n_elems)
    return sp.diags([off, main, off], [-1, 0, 1]).tocsr() * (h / 6.0)


def stiffness_matrix_1d(n_elems, h):
    """Linear-element stiffness matrix on a segment of n_elems elements."""
    main = np.full(n_elems + 1, 2.0)
    main[0] = main[-1] = 1.0
    off = -np.ones(n_elems)
    return sp.diags([off, main, off], [-1, 0, 1]).tocsr() / h


def cholesky_sparse(spd_dense):
    """Lower Cholesky factor of a small dense SPD matrix, as sparse CSR."""
    return sp.csr_matrix(np.linalg.cholesky(spd_dense))


def mass_cholesky(mesh):
    """Exact sparse lower factor L with L L^T = assembled Q1 mass matrix.

    Uses the tensor-product structure of the structured grid: the 2D mass
    matrix is the Kronecker product of the two 1D mass matrices, so its
    Cholesky factor is the Kronecker product of their (bidiagonal) factors.
    """
    lx = cholesky_sparse(mass_matrix_1d(mesh.nx, mesh.hx).toarray())
    ly = cholesky_sparse(mass_matrix_1d(mesh.ny, mesh.hy).toarray())
    return sp.kron(ly, lx).tocsr()


# -- solving ----------------------------------------------------------------


class SolveCounter:
    """Counts PDE solves; can be paused while auxiliary work runs."""

    def __init__(self):
        self.count = 0
        self._enabled = True

    def tick(self):
        if self._enabled:
            self.count += 1

    @contextmanager
    def paused(self):
        prev = self._enabled
        self._enabled = False
        try:
            yield
        finally:
            self._enabled = prev


class SpdSolver:
    """Cached factorization of an SPD operator with Dirichlet elimination.

    Dirichlet rows and columns are eliminated symmetrically (unit diagonal,
    lifted right-hand side), so the constrained operator stays SPD.  Small
    systems are factorized with a sparse direct solver; large ones fall back
    to Jacobi-preconditioned conjugate gradients.  Every solve verifies the
    residual against ``rtol`` and ticks the optional counter.  The solver is
    immutable after construction and may be shared across independent
    right-hand sides.
    """

    def __init__(self, op, dirichlet_nodes=None, rtol=1e-10, counter=None,
                 direct_limit=100_000):
        self.op = op.tocsr()
        self.n = self.op.shape[0]
        self.rtol = float(rtol)
        self.counter = counter
        if dirichlet_nodes is None or len(dirichlet_nodes) == 0:
            self.dirichlet = np.empty(0, dtype=int)
            constrained = self.op
        else:
            self.dirichlet = np.asarray(dirichlet_nodes, dtype=int)
            keep = np.ones(self.n)
            keep[self.dirichlet] = 0.0
            pin = 1.0 - keep
            D = sp.diags(keep)
            constrained = D @ self.op @ D + sp.diags(pin)
        self.constrained = constrained.tocsr()
        self._direct = self.n <= direct_limit
        if self._direct:
            self._lu = spla.splu(self.constrained.tocsc())
        else:
            inv_diag = 1.0 / self.constrained.diagonal()
            self._precond = spla.LinearOperator(
                (self.n, self.n), matvec=lambda x: inv_diag * x
            )

    def _raw_solve(self, b):
        if self._direct:
            return self._lu.solve(b)
        x, info = spla.cg(self.constrained, b, rtol=self.rtol, atol=0.0,
                          maxiter=10 * self.n, M=self._precond)
        if info != 0:
            res = np.linalg.norm(self.constrained @ x - b)
            raise NumericalError(
                f"conjugate gradients stopped after budget (info={info})",
                residual=res,
            )
        return x

    def solve(self, load, bc_values=0.0):
        """Solve the constrained system for one right-hand side.

        ``bc_values`` holds the Dirichlet data, either a scalar or one value
        per Dirichlet node; the returned vector contains them exactly.
        """
        b = np.array(load, dtype=float)
        d = self.dirichlet
        if d.size:
            vals = np.broadcast_to(np.asarray(bc_values, dtype=float), d.shape)
            if np.any(vals != 0.0):
                lift = np.zeros(self.n)
                lift[d] = vals
                b -= self.op @ lift
            b[d] = vals
        u = self._raw_solve(b)
        res = np.linalg.norm(self.constrained @ u - b)
        ref = max(np.linalg.norm(b), 1e-300)
        if res > self.rtol * ref:
            raise NumericalError(
                f"linear solve residual {res:.3e} exceeds tolerance", residual=res
            )
        if self.counter is not None:
            self.counter.tick()
        return u

    def solve_many(self, loads):
        """Direct solve for a (n, k) block of homogeneous-BC right-hand sides."""
        B = np.array(loads, dtype=float)
        if self.dirichlet.size:
            B[self.dirichlet, :] = 0.0
        if not self._direct:
            return np.column_stack([self._raw_solve(B[:, j]) for j in range(B.shape[1])])
        return self._lu.solve(B)


def solve_spd(op, rhs, dirichlet_nodes=None, bc_values=0.0, rtol=1e-10):
    """One-shot SPD solve; see ``SpdSolver`` for the contract."""
    return SpdSolver(op, dirichlet_nodes, rtol=rtol).solve(rhs, bc_values)
