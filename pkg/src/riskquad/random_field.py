"""Gaussian random fields with squared-inverse-elliptic covariance.

The law is N(mean, s*C) with C discretized as A^{-1} M A^{-1} where
A = kappa*K + alpha*M is a shifted stiffness with natural boundary
conditions and M is the mass matrix.  All inner products are M-weighted, so
the covariance action on a field f is A^{-1} M A^{-1} M f, which is
self-adjoint and positive in the M inner product, and A^{-1} M is its exact
M-self-adjoint square root.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError
from .fem import (
    SpdSolver,
    assemble_mass,
    assemble_weighted_stiffness,
    cholesky_sparse,
    mass_cholesky,
    mass_matrix_1d,
    stiffness_matrix_1d,
)


class FieldSpace:
    """Discrete L2 space: mass matrix, its exact Cholesky factor, and the
    natural-boundary stiffness used to build covariance operators.

    ``node_index`` maps local degrees of freedom to nodes of the parent mesh
    (identity for volume spaces, a boundary gather for trace spaces).
    """

    def __init__(self, mass, sqrt_mass, natural_stiffness, coords, node_index=None):
        self.mass = mass.tocsr()
        self.sqrt_mass = sqrt_mass.tocsr()
        self._sqrt_mass_t = self.sqrt_mass.T.tocsr()
        self.natural_stiffness = natural_stiffness.tocsr()
        self.coords = coords
        self.dim = self.mass.shape[0]
        self.node_index = (
            np.arange(self.dim) if node_index is None else np.asarray(node_index)
        )
        self._projector = SpdSolver(self.mass, rtol=1e-12)

    def inner(self, u, v):
        """Discrete L2 inner product <u, M v>."""
        return float(np.asarray(u) @ (self.mass @ np.asarray(v)))

    def norm(self, u):
        return float(np.sqrt(max(self.inner(u, u), 0.0)))

    def project(self, load):
        """Nodal representation of a linear functional: solve M g = load."""
        return self._projector.solve(load)

    def orthonormalize(self, B):
        """M-orthonormalize the columns of B via QR in the L^T image."""
        W = self._sqrt_mass_t @ B
        Qw, R = np.linalg.qr(W)
        if np.min(np.abs(np.diag(R))) < 1e-12 * max(np.max(np.abs(np.diag(R))), 1e-30):
            raise NumericalError("rank-deficient block in M-orthonormalization")
        return spla.spsolve_triangular(self._sqrt_mass_t, Qw, lower=False)


def volume_space(mesh):
    """Q1 space over all mesh nodes."""
    return FieldSpace(
        mass=assemble_mass(mesh),
        sqrt_mass=mass_cholesky(mesh),
        natural_stiffness=assemble_weighted_stiffness(mesh, np.zeros(mesh.n_nodes)),
        coords=np.column_stack([mesh.node_x, mesh.node_y]),
    )


def neumann_trace_space(mesh):
    """1D space over the nodes of the Neumann part of the boundary.

    Each Neumann side contributes an independent segment (its own 1D mass
    and stiffness block); degrees of freedom are ordered side by side in the
    order bottom, top, left, right as applicable.
    """
    sides = [s for s in ("bottom", "top", "left", "right")
             if s not in mesh.dirichlet_sides]
    if not sides:
        raise ValueError("mesh has no Neumann sides")
    masses, stiffs, chols, idx, coords = [], [], [], [], []
    for side in sides:
        nodes = mesh.side_nodes(side)
        n_seg = len(nodes) - 1
        h = mesh.hx if side in ("bottom", "top") else mesh.hy
        m1 = mass_matrix_1d(n_seg, h)
        masses.append(m1)
        stiffs.append(stiffness_matrix_1d(n_seg, h))
        chols.append(cholesky_sparse(m1.toarray()))
        idx.append(nodes)
        coords.append(
            np.column_stack([mesh.node_x[nodes], mesh.node_y[nodes]])
        )
    return FieldSpace(
        mass=sp.block_diag(masses),
        sqrt_mass=sp.block_diag(chols),
        natural_stiffness=sp.block_diag(stiffs),
        coords=np.vstack(coords),
        node_index=np.concatenate(idx),
    )


@dataclass
class EigenBasis:
    """M-orthonormal eigenvectors (columns) with eigenvalues sorted descending."""

    eigenvalues: np.ndarray
    vectors: np.ndarray


class GaussianField:
    """Gaussian measure N(mean, scale*C) on a FieldSpace, C = A^{-1} M A^{-1}.

    Immutable after construction; sampling takes explicit seeds (or
    generators) so concurrent batches can partition the seed space.
    """

    def __init__(self, space, kappa, alpha, mean=None, scale=1.0, rng_seed=0):
        if kappa <= 0.0 or alpha <= 0.0:
            raise ValueError("kappa and alpha must be positive")
        if scale < 0.0:
            raise ValueError("scale must be nonnegative")
        self.space = space
        self.kappa = float(kappa)
        self.alpha = float(alpha)
        self.scale = float(scale)
        self.rng_seed = int(rng_seed)
        self.mean = (
            np.zeros(space.dim) if mean is None else np.asarray(mean, dtype=float)
        )
        if self.mean.shape != (space.dim,):
            raise ValueError("mean has wrong length")
        A = kappa * space.natural_stiffness + alpha * space.mass
        self.solver_A = SpdSolver(A, rtol=1e-12)
        self._rng = np.random.default_rng(rng_seed)

    @property
    def dim(self):
        return self.space.dim

    def scaled(self, factor):
        """A view of the same field with covariance multiplied by ``factor``."""
        other = object.__new__(GaussianField)
        other.__dict__.update(self.__dict__)
        other.scale = self.scale * float(factor)
        other._rng = np.random.default_rng(self.rng_seed)
        return other

    # -- covariance actions -------------------------------------------------

    def apply_C(self, f):
        """Covariance action on a field: scale * A^{-1} M A^{-1} M f."""
        y = self.solver_A.solve(self.space.mass @ np.asarray(f))
        return self.scale * self.solver_A.solve(self.space.mass @ y)

    def apply_sqrt_C(self, f):
        """M-self-adjoint square root action: sqrt(scale) * A^{-1} M f."""
        return np.sqrt(self.scale) * self.solver_A.solve(
            self.space.mass @ np.asarray(f)
        )

    # -- sampling -------------------------------------------------------------

    def _colored(self, normals):
        """Map standard normals to zero-mean draws with covariance matrix
        scale * A^{-1} M A^{-1} (nodal values)."""
        noise = self.space.sqrt_mass @ normals
        if noise.ndim == 1:
            return np.sqrt(self.scale) * self.solver_A.solve(noise)
        return np.sqrt(self.scale) * self.solver_A.solve_many(noise)

    def sample(self, eps=1.0, rng=None):
        """One draw from N(mean, eps*scale*C)."""
        if eps < 0.0:
            raise ValueError("eps must be nonnegative")
        rng = self._rng if rng is None else rng
        draw = self._colored(rng.standard_normal(self.dim))
        return self.mean + np.sqrt(eps) * draw

    def sample_batch(self, n, eps=1.0, seed=0):
        """(dim, n) matrix of independent draws, deterministic per seed."""
        if eps < 0.0:
            raise ValueError("eps must be nonnegative")
        rng = np.random.default_rng(seed)
        draws = self._colored(rng.standard_normal((self.dim, n)))
        return self.mean[:, None] + np.sqrt(eps) * draws

    def zero_mean_batch(self, n, seed):
        """(dim, n) zero-mean draws with covariance scale*C."""
        rng = np.random.default_rng(seed)
        return self._colored(rng.standard_normal((self.dim, n)))

    def draw_trace_vectors(self, n_tr, seed):
        """n_tr zero-mean draws used as trace-estimation probes."""
        if n_tr < 1:
            raise ValueError("n_tr must be at least 1")
        return list(self.zero_mean_batch(n_tr, seed).T)

    # -- spectral machinery ---------------------------------------------------

    def preconditioned_eigenpairs(self, hess_action, k, tol=1e-8, max_iter=300,
                                  seed=7, oversample=8):
        """Dominant eigenpairs of sqrt(C) H sqrt(C) without forming matrices.

        ``hess_action`` must be self-adjoint in the M inner product.  Block
        subspace iteration with M-orthonormalization and Rayleigh-Ritz
        extraction; stops when the leading k Ritz values change by less than
        ``tol`` relatively.  Returned vectors are M-orthonormal.
        """
        n = self.dim
        if not 1 <= k <= n:
            raise ValueError("need 1 <= k <= dimension")
        b = min(n, k + oversample)
        rng = np.random.default_rng(seed)
        Q = self.space.orthonormalize(rng.standard_normal((n, b)))
        lam_prev = None
        for _ in range(max_iter):
            Y = np.column_stack(
                [self.apply_sqrt_C(hess_action(self.apply_sqrt_C(q))) for q in Q.T]
            )
            if np.max(np.abs(Y)) < 1e-300:
                return EigenBasis(np.zeros(k), Q[:, :k])
            S = Q.T @ (self.space.mass @ Y)
            S = 0.5 * (S + S.T)
            lam, V = np.linalg.eigh(S)
            order = np.argsort(-np.abs(lam))
            lam, V = lam[order], V[:, order]
            if lam_prev is not None:
                denom = np.maximum(np.abs(lam[:k]), 1e-300)
                if np.max(np.abs(lam[:k] - lam_prev) / denom) <= tol:
                    ritz = Q @ V[:, :k]
                    final = np.argsort(-lam[:k])
                    return EigenBasis(lam[:k][final], ritz[:, final])
            lam_prev = lam[:k]
            Q = self.space.orthonormalize(Y @ V)
        raise NumericalError("subspace iteration exhausted its budget")


def field_on_mesh(mesh, kappa, alpha, mean=None, scale=1.0, rng_seed=0, space=None):
    """Gaussian field over the volume nodes of a mesh."""
    space = volume_space(mesh) if space is None else space
    return GaussianField(space, kappa, alpha, mean=mean, scale=scale,
                         rng_seed=rng_seed)


def field_on_neumann_boundary(mesh, kappa, alpha, mean=None, scale=1.0,
                              rng_seed=0, space=None):
    """Gaussian field over the Neumann-boundary trace space of a mesh."""
    space = neumann_trace_space(mesh) if space is None else space
    return GaussianField(space, kappa, alpha, mean=mean, scale=scale,
                         rng_seed=rng_seed)
