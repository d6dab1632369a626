"""Risk-averse objective over injection rates, its control gradient, and
baselines.

The objective combines the tracking misfit at the mean field, the analytic
mean/variance corrections of the quadratic expansion with their traces
replaced by fixed-probe estimates, and a quadratic control cost:

    J(z) = theta(z) + w/2 sum_j <zeta_j, psi_j>
         + beta/2 ( <g, C g> + w/2 sum_j <psi_j, C psi_j> ) + gamma/2 |z|^2

with psi_j the Hessian action on probe j and w the probe weight.  The probe
vectors are drawn once per optimization, so J is a smooth deterministic
function of z.  Its exact gradient is assembled from a cascade of adjoint
solves (one per incremental pair, then two aggregate solves), which makes
the cost of one objective-plus-gradient evaluation exactly 4 + 4*n_tr PDE
solves regardless of the parameter dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import grad_dot_load, weighted_stiffness_apply
from .optim import minimize_box_lbfgs
from .utils import map_indexed


@dataclass
class OuuConfig:
    """Risk weights, trace-probe budget, and optimizer settings."""

    beta: float = 1.0
    gamma: float = 1e-5
    n_tr: int = 40
    trace_mode: str = "randomized"
    beta_schedule: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    grad_reduction_tol: float = 5e-4
    max_iter: int = 100
    seed: int = 0
    z_min: float = 0.0
    z_max: float = 16.0

    def __post_init__(self):
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if self.n_tr < 0:
            raise ValueError("n_tr must be nonnegative")
        if self.trace_mode not in ("randomized", "eigenbasis"):
            raise ValueError(f"unknown trace mode {self.trace_mode!r}")
        sched = tuple(float(b) for b in self.beta_schedule)
        if sched != tuple(sorted(sched)):
            raise ValueError("beta schedule must be ascending")
        if sched and abs(sched[-1] - self.beta) > 1e-15:
            raise ValueError("beta schedule must end at beta")
        self.beta_schedule = sched


@dataclass
class RiskReport:
    """Objective value split into its defining parts plus solve accounting."""

    value: float
    theta_bar: float
    tr_hc: float
    tr_hc_sq: float
    grad_term: float
    mean_term: float
    variance_term: float
    control_cost: float
    pde_solves: int
    grad_norm: float = float("nan")


@dataclass
class OuuState:
    """Everything the gradient cascade reuses from one objective evaluation."""

    z: np.ndarray
    u: np.ndarray
    p: np.ndarray
    misfit: np.ndarray
    inc_states: list
    inc_adjoints: list
    psi_loads: list
    grad_load: np.ndarray
    c_grad: np.ndarray
    c_psi: list
    report: RiskReport = None


class RiskAverseObjective:
    """The risk-averse objective bound to a flow problem and a Gaussian law.

    Probe vectors are frozen at construction: random draws from N(0, C) in
    randomized mode, sqrt(C) images of dominant preconditioned-Hessian
    eigenvectors at the nominal control in eigenbasis mode (that one-time
    construction is excluded from solve accounting).
    """

    def __init__(self, problem, gf, cfg, nominal_control=None):
        self.problem = problem
        self.gf = gf
        self.cfg = cfg
        self.beta = cfg.beta
        if cfg.n_tr == 0:
            self.probes = []
            self.weight = 0.0
        elif cfg.trace_mode == "randomized":
            self.probes = gf.draw_trace_vectors(cfg.n_tr, cfg.seed)
            self.weight = 1.0 / cfg.n_tr
        else:
            if nominal_control is None:
                raise ValueError("eigenbasis mode needs a nominal control")
            with problem.counter.paused():
                surr = problem.surrogate(np.asarray(nominal_control, float))
                basis = gf.preconditioned_eigenpairs(
                    surr.hess_action, cfg.n_tr, seed=cfg.seed
                )
            self.probes = [gf.apply_sqrt_C(v) for v in basis.vectors.T]
            self.weight = 1.0
        self._probes_gauss = [
            problem.mesh.interp_gauss(zeta) for zeta in self.probes
        ]

    def with_beta(self, beta):
        """Same frozen probes, different risk-aversion weight."""
        other = object.__new__(RiskAverseObjective)
        other.__dict__.update(self.__dict__)
        other.beta = float(beta)
        return other

    def _apply_C_to_load(self, load):
        """Covariance action on a dual vector: C (M^{-1} load) as a field."""
        inner = self.gf.solver_A.solve(load)
        return self.gf.scale * self.gf.solver_A.solve(
            self.problem.space.mass @ inner
        )

    # -- objective ------------------------------------------------------------

    def evaluate(self, z):
        """Risk objective at z; costs exactly 2 + 2*n_tr PDE solves."""
        pr = self.problem
        start = pr.counter.count
        z = np.asarray(z, dtype=float)
        ws = pr.workspace(z)
        theta_bar = 0.5 * float(ws.misfit @ ws.misfit)
        grad_load = grad_dot_load(pr.mesh, pr.em_gauss, ws.u, ws.p)
        c_grad = self._apply_C_to_load(grad_load)
        grad_term = float(grad_load @ c_grad)

        inc_states, inc_adjoints, psi_loads, c_psi = [], [], [], []
        tr_hc = 0.0
        tr_hc_sq = 0.0
        for zeta, zg in zip(self.probes, self._probes_gauss):
            cg = pr.em_gauss * zg
            inc_u = pr.anchor_solver.solve(
                -weighted_stiffness_apply(pr.mesh, cg, ws.u)
            )
            inc_p = pr.anchor_solver.solve(
                -pr.space.mass @ (pr.obs_fields @ pr.observe(inc_u))
                - weighted_stiffness_apply(pr.mesh, cg, ws.p)
            )
            w_psi = (
                grad_dot_load(pr.mesh, cg, ws.u, ws.p)
                + grad_dot_load(pr.mesh, pr.em_gauss, inc_u, ws.p)
                + grad_dot_load(pr.mesh, pr.em_gauss, ws.u, inc_p)
            )
            cp = self._apply_C_to_load(w_psi)
            inc_states.append(inc_u)
            inc_adjoints.append(inc_p)
            psi_loads.append(w_psi)
            c_psi.append(cp)
            tr_hc += self.weight * float(zeta @ w_psi)
            tr_hc_sq += self.weight * float(w_psi @ cp)

        control_cost = 0.5 * self.cfg.gamma * float(z @ z)
        mean_term = theta_bar + 0.5 * tr_hc
        variance_term = grad_term + 0.5 * tr_hc_sq
        value = mean_term + 0.5 * self.beta * variance_term + control_cost
        report = RiskReport(
            value=value, theta_bar=theta_bar, tr_hc=tr_hc, tr_hc_sq=tr_hc_sq,
            grad_term=grad_term, mean_term=mean_term,
            variance_term=variance_term, control_cost=control_cost,
            pde_solves=pr.counter.count - start,
        )
        state = OuuState(
            z=z, u=ws.u, p=ws.p, misfit=ws.misfit, inc_states=inc_states,
            inc_adjoints=inc_adjoints, psi_loads=psi_loads,
            grad_load=grad_load, c_grad=c_grad, c_psi=c_psi, report=report,
        )
        return report, state

    # -- gradient ---------------------------------------------------------------

    def gradient(self, state):
        """Control gradient from a previous evaluation's state.

        Solves the adjoint cascade (one pair per probe, then the two
        aggregate equations), costing exactly 2 + 2*n_tr additional PDE
        solves, and returns gamma*z - <f_i, u*>.
        """
        pr = self.problem
        mesh = pr.mesh
        start = pr.counter.count
        half_w = 0.5 * self.weight
        beta = self.beta

        agg_p = np.zeros(mesh.n_nodes)  # sum_j of zeta_j-weighted adj pieces
        agg_u = np.zeros(mesh.n_nodes)
        b3 = np.zeros(mesh.n_nodes)
        b4 = -pr.space.mass @ (pr.obs_fields @ state.misfit)

        cg_grad = pr.em_gauss * mesh.interp_gauss(beta * state.c_grad)
        b3 -= weighted_stiffness_apply(mesh, cg_grad, state.u)
        b4 -= weighted_stiffness_apply(mesh, cg_grad, state.p)

        for j, zeta_g in enumerate(self._probes_gauss):
            mix = half_w * (self.probes[j] + beta * state.c_psi[j])
            mix_g = pr.em_gauss * mesh.interp_gauss(mix)
            adj_inc_p = pr.anchor_solver.solve(
                -weighted_stiffness_apply(mesh, mix_g, state.u)
            )
            adj_inc_u = pr.anchor_solver.solve(
                -pr.space.mass @ (pr.obs_fields @ pr.observe(adj_inc_p))
                - weighted_stiffness_apply(mesh, mix_g, state.p)
            )
            zg = pr.em_gauss * zeta_g
            agg_p += weighted_stiffness_apply(mesh, zg, adj_inc_p)
            agg_u += weighted_stiffness_apply(mesh, zg, adj_inc_u)
            b3 -= weighted_stiffness_apply(mesh, mix_g * zeta_g, state.u)
            b3 -= weighted_stiffness_apply(mesh, mix_g, state.inc_states[j])
            b4 -= weighted_stiffness_apply(mesh, mix_g * zeta_g, state.p)
            b4 -= weighted_stiffness_apply(mesh, mix_g, state.inc_adjoints[j])

        adj_p = pr.anchor_solver.solve(b3 - agg_p)
        adj_u = pr.anchor_solver.solve(
            b4 - pr.space.mass @ (pr.obs_fields @ pr.observe(adj_p)) - agg_u
        )
        grad = self.cfg.gamma * state.z - pr.source_fields.T @ (
            pr.space.mass @ adj_u
        )
        state.report.grad_norm = float(np.linalg.norm(grad))
        state.report.pde_solves += pr.counter.count - start
        return grad

    def value_and_grad(self, z):
        report, state = self.evaluate(z)
        grad = self.gradient(state)
        return report, grad


# -- optimization -------------------------------------------------------------


@dataclass
class ContinuationLeg:
    beta: float
    rows: list
    converged: bool
    degraded: bool
    report: RiskReport
    z: np.ndarray


@dataclass
class ContinuationResult:
    z: np.ndarray
    legs: list
    degraded: bool

    @property
    def final_report(self):
        return self.legs[-1].report


def optimize(problem, gf, cfg, z0=None, nominal_control=None):
    """Risk-averse control by projected L-BFGS with beta continuation.

    Probe vectors are drawn once and shared by every continuation leg; each
    leg warm-starts from the previous optimum and stops when the projected
    gradient norm has dropped by ``cfg.grad_reduction_tol`` relative to its
    value at the leg's start.
    """
    z0 = (
        np.full(problem.n_controls, 4.0) if z0 is None
        else np.asarray(z0, dtype=float)
    )
    base = RiskAverseObjective(
        problem, gf, cfg,
        nominal_control=z0 if nominal_control is None else nominal_control,
    )
    schedule = cfg.beta_schedule if cfg.beta_schedule else (cfg.beta,)
    z = z0.copy()
    legs = []
    for beta in schedule:
        obj = base.with_beta(beta)

        def value_fn(zk, _obj=obj):
            report, state = _obj.evaluate(zk)
            return report.value, state

        def grad_fn(zk, state, _obj=obj):
            return _obj.gradient(state)

        res = minimize_box_lbfgs(
            value_fn, grad_fn, z, cfg.z_min, cfg.z_max,
            rel_tol=cfg.grad_reduction_tol, max_iter=cfg.max_iter,
            solve_count=lambda: problem.counter.count,
        )
        z = res.z
        legs.append(
            ContinuationLeg(
                beta=beta, rows=res.rows, converged=res.converged,
                degraded=res.degraded, report=res.aux.report, z=z.copy(),
            )
        )
    return ContinuationResult(z=z, legs=legs, degraded=any(l.degraded for l in legs))


# -- sample average approximation baseline -------------------------------------


class SaaObjective:
    """Sample-average risk objective with frozen draws and per-sample adjoints.

    J(z) = mean_i theta_i + beta/2 var_i + gamma/2 |z|^2 with the unbiased
    sample variance over a fixed set of parameter draws.  Factorizations are
    built once per sample and reused across all control evaluations; each
    objective-plus-gradient batch costs 2*n_mc PDE solves (state + adjoint
    per sample).
    """

    def __init__(self, problem, gf, n_mc, beta, gamma, seed=0, eps=1.0):
        if n_mc < 2:
            raise ValueError("the unbiased sample variance needs n_mc >= 2")
        self.problem = problem
        self.beta = float(beta)
        self.gamma = float(gamma)
        self.n_mc = int(n_mc)
        self.samples = gf.sample_batch(n_mc, eps=eps, seed=seed)
        with problem.counter.paused():
            self.solvers = [
                problem.solver_for(self.samples[:, i]) for i in range(n_mc)
            ]

    def with_beta(self, beta):
        other = object.__new__(SaaObjective)
        other.__dict__.update(self.__dict__)
        other.beta = float(beta)
        return other

    def evaluate(self, z):
        pr = self.problem
        z = np.asarray(z, dtype=float)
        states = [pr.solve_state(z, s) for s in self.solvers]
        thetas = np.array([pr.objective_of_state(u) for u in states])
        mean = float(np.mean(thetas))
        var = float(np.var(thetas, ddof=1))
        value = mean + 0.5 * self.beta * var + 0.5 * self.gamma * float(z @ z)
        return value, (states, thetas, mean, var)

    def gradient(self, z, aux):
        pr = self.problem
        states, thetas, mean, _ = aux
        z = np.asarray(z, dtype=float)
        weights = 1.0 / self.n_mc + self.beta * (thetas - mean) / (self.n_mc - 1)
        grad = self.gamma * z.copy()
        for w, u, solver in zip(weights, states, self.solvers):
            misfit = pr.observe(u) - pr.wells.targets
            adj = solver.solve(-pr.space.mass @ (pr.obs_fields @ misfit))
            grad -= w * (pr.source_fields.T @ (pr.space.mass @ adj))
        return grad

    def value_and_grad(self, z):
        value, aux = self.evaluate(z)
        return value, self.gradient(z, aux)


def saa_objective_gradient(problem, gf, z, n_mc, beta, gamma, seed=0, eps=1.0):
    """One-shot sample-average objective and gradient at a control vector."""
    saa = SaaObjective(problem, gf, n_mc, beta, gamma, seed=seed, eps=eps)
    return saa.value_and_grad(z)


def optimize_saa(problem, gf, cfg, n_mc, z0=None, seed=None):
    """Beta continuation over the sample-average objective."""
    z0 = (
        np.full(problem.n_controls, 4.0) if z0 is None
        else np.asarray(z0, dtype=float)
    )
    saa = SaaObjective(
        problem, gf, n_mc, cfg.beta, cfg.gamma,
        seed=cfg.seed if seed is None else seed,
    )
    schedule = cfg.beta_schedule if cfg.beta_schedule else (cfg.beta,)
    z = z0.copy()
    legs = []
    for beta in schedule:
        obj = saa.with_beta(beta)
        res = minimize_box_lbfgs(
            lambda zk, _o=obj: _o.evaluate(zk),
            lambda zk, aux, _o=obj: _o.gradient(zk, aux),
            z, cfg.z_min, cfg.z_max,
            rel_tol=cfg.grad_reduction_tol, max_iter=cfg.max_iter,
            solve_count=lambda: problem.counter.count,
        )
        z = res.z
        legs.append(
            ContinuationLeg(
                beta=beta, rows=res.rows, converged=res.converged,
                degraded=res.degraded, report=None, z=z.copy(),
            )
        )
    return ContinuationResult(z=z, legs=legs, degraded=any(l.degraded for l in legs))


# -- Monte Carlo evaluation of the true risk ------------------------------------


@dataclass
class TrueRisk:
    """Monte Carlo estimates of the distribution of the control objective."""

    mean: float
    variance: float
    samples: np.ndarray
    lin_samples: np.ndarray = None
    quad_samples: np.ndarray = None


def evaluate_true_risk(problem, gf, z, n_mc, seed=0, eps=1.0,
                       with_surrogates=True, threads=1):
    """Estimate mean and variance of the objective by sampling the field.

    Each draw costs one assembly+solve at its own parameter (no reuse is
    possible across draws).  When ``with_surrogates`` is set, the linear and
    quadratic expansion values on the same draws are returned too.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be positive")
    z = np.asarray(z, dtype=float)
    fields = gf.sample_batch(n_mc, eps=eps, seed=seed)
    theta = np.array(
        map_indexed(lambda i: problem.objective(z, fields[:, i]), n_mc, threads)
    )
    lin = quad = None
    if with_surrogates:
        surr = problem.surrogate(z)
        lin = np.array([surr.eval_lin(fields[:, i]) for i in range(n_mc)])
        quad = np.array([surr.eval_quad(fields[:, i]) for i in range(n_mc)])
    variance = float(np.var(theta, ddof=1)) if n_mc > 1 else 0.0
    return TrueRisk(
        mean=float(np.mean(theta)), variance=variance, samples=theta,
        lin_samples=lin, quad_samples=quad,
    )


def true_objective_for_controls(problem, gf, zs, beta, gamma, n_mc, seed=0):
    """Shared-sample estimate of mean + beta/2 var + control cost for many
    controls; factorizes each sampled operator once and reuses it.

    Returns (values, standard_errors) aligned with ``zs``.
    """
    zs = [np.asarray(z, dtype=float) for z in zs]
    fields = gf.sample_batch(n_mc, eps=1.0, seed=seed)
    theta = np.empty((n_mc, len(zs)))
    for i in range(n_mc):
        solver = problem.solver_for(fields[:, i])
        for k, z in enumerate(zs):
            theta[i, k] = problem.objective_of_state(
                problem.solve_state(z, solver)
            )
    values, errors = [], []
    for k, z in enumerate(zs):
        t = theta[:, k]
        mean = float(np.mean(t))
        var = float(np.var(t, ddof=1))
        value = mean + 0.5 * beta * var + 0.5 * gamma * float(z @ z)
        centered = t - mean
        var_of_mean = var / n_mc
        var_of_var = max(
            float(np.mean(centered**4)) - var**2, 0.0
        ) / n_mc
        cov_mv = float(np.mean(centered**3)) / n_mc
        se = np.sqrt(
            max(var_of_mean + 0.25 * beta**2 * var_of_var + beta * cov_mv, 0.0)
        )
        values.append(value)
        errors.append(float(se))
    return np.array(values), np.array(errors)
