"""Primal-dual drivers for the two-term and three-term transport problems.

The two-term driver is the classic Chambolle-Pock iteration on the kinetic
cost composed with midpoint interpolation plus the continuity-equation
indicator.  The three-term drivers (Condat-Vu, PDFP, Yan) add the smooth
slice-coupling term through its gradient; they share the first two steps and
differ only in the extrapolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discrete_ot import SinkhornParams, grad_H
from .errors import ConfigurationError, InputError, NumericalError
from .grid import (
    CenteredField,
    GridSpec,
    StaggeredField,
    divergence,
    estimate_operator_norm,
    interpolate,
    interpolate_adjoint,
)
from .metric import MetricField, kinetic_energy_parts
from .proxops import PoissonWorkspace, ProxParams, project_constraints, prox_J

ALGORITHMS = ("chambolle_pock", "condat_vu", "pdfp", "yan")


@dataclass
class SolverConfig:
    """Algorithm selection, step sizes, stopping controls.

    tau is the dual step and sigma the primal step; "auto" derives both from
    a power-iteration estimate of the interpolation norm so the product
    satisfies the convergence condition with a 2% margin.  beta_inv
    overrides the empirically estimated Lipschitz constant of the smooth
    term (three-term only).
    """

    algorithm: str = "chambolle_pock"
    tau: float | str = "auto"
    sigma: float | str = "auto"
    theta: float = 1.0
    max_iters: int = 20000
    stop_tol: float = 1e-6
    stop_window: int = 50
    log_every: int = 25
    sinkhorn: SinkhornParams | None = None
    sinkhorn_epsilon_rel: float = 1e-3
    beta_inv: float | str = "auto"
    fp_tol: float = 1e-11
    norm_iters: int = 60
    seed: int = 0
    snapshot_every: int = 0
    snapshot_hook: object = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.stop_tol <= 0:
            raise ConfigurationError("stop_tol must be positive")
        if self.log_every < 1:
            raise ConfigurationError("log_every must be >= 1")
        for name in ("tau", "sigma"):
            v = getattr(self, name)
            if v != "auto" and not (isinstance(v, (int, float)) and v > 0):
                raise ConfigurationError(f"{name} must be positive or 'auto'")


@dataclass
class ReportRow:
    iter: int
    cost_total: float
    cost_primary: float
    cost_secondary: float
    h_value: float | None
    div_residual_max: float
    rel_change: float


@dataclass
class ConvergenceReport:
    """Per-iteration history plus the run outcome."""

    rows: list[ReportRow] = field(default_factory=list)
    status: str = "running"
    iterations: int = 0
    max_mass_deviation: float = 0.0
    tau: float = 0.0
    sigma: float = 0.0
    beta_inv: float = 0.0

    def append(self, row: ReportRow):
        self.rows.append(row)

    @property
    def final(self) -> ReportRow:
        return self.rows[-1]


def stopping_check(report: ConvergenceReport, window: int, tol: float) -> bool:
    """True when the trailing cost change and primal update are both below tol."""
    rows = report.rows
    if len(rows) < window:
        return False
    c_old = rows[-window].cost_total
    c_new = rows[-1].cost_total
    if not (np.isfinite(c_old) and np.isfinite(c_new)):
        return False
    rel_cost = abs(c_new - c_old) / max(abs(c_old), 1e-30)
    return rel_cost <= tol and rows[-1].rel_change <= tol


def auto_step_sizes(g: GridSpec, algorithm: str, norm_est: float,
                    beta_inv_est: float = 0.0):
    """Step sizes meeting the convergence conditions with a 2% margin.

    Two-term (or a vanishing smooth part): tau = sigma = 0.99 / ||I||, so
    tau*sigma*||I||^2 = 0.9801 < 1.  Three-term: the primal step gamma is
    capped by the Lipschitz condition and the dual step delta then absorbs
    the operator norm; Condat-Vu additionally budgets the two conditions
    jointly.  Returns (tau, sigma) = (dual, primal).
    """
    if norm_est <= 0:
        raise ConfigurationError("norm_est must be positive")
    if algorithm == "chambolle_pock" or beta_inv_est == 0.0:
        step = 0.99 / norm_est
        return step, step
    nsq = norm_est ** 2
    if algorithm == "condat_vu":
        gamma = min(1.0, 0.98 / beta_inv_est)
        delta = (0.98 - gamma * beta_inv_est / 2.0) / (gamma * nsq)
    else:  # pdfp, yan share the wider region
        gamma = min(1.0, 2.0 * 0.98 / beta_inv_est)
        delta = 0.98 / (gamma * nsq)
    return delta, gamma


def _initial_field(problem, w: PoissonWorkspace):
    """Feasible start: densities linearly interpolated in time, then projected.

    Returns both the projected field and the pre-projection interpolation,
    whose kinetic cost is finite (zero momentum, nonnegative density) and
    serves as the iteration-0 report row.
    """
    g = problem.grid
    u = StaggeredField.zeros(g)
    ts = np.arange(g.Q + 1) / g.Q
    u.rho[...] = ((1.0 - ts)[None, None, :] * problem.mu[:, :, None]
                  + ts[None, None, :] * problem.nu[:, :, None])
    return project_constraints(u, problem.boundary_data(), w, g), u


def _mass_deviation(u: StaggeredField, g: GridSpec, mass: float) -> float:
    slice_masses = u.rho.sum(axis=(0, 1)) * g.cell_area
    return float(np.max(np.abs(slice_masses - mass)) / mass)


class _CostTracker:
    """Evaluates report rows from the feasible-side centered candidate."""

    def __init__(self, problem, metric: MetricField, g: GridSpec):
        self.alpha = problem.alpha
        self.metric = metric
        self.g = g

    def row(self, it, inner, u_new, rel_change, h_value=None):
        ei, et = kinetic_energy_parts(inner, self.metric, self.g)
        a1, a2 = self.alpha
        if h_value is None:           # monge: split through the metric
            total = a1 * ei + a2 * et
            secondary = et
        else:                         # kantorovich: the smooth term is the map cost
            total = a1 * ei + a2 * h_value
            secondary = h_value
        div_max = float(np.max(np.abs(divergence(u_new, self.g))))
        return ReportRow(it, total, ei, secondary, h_value, div_max, rel_change)


def _check_finite(u: StaggeredField, it: int):
    if not (np.isfinite(u.m).all() and np.isfinite(u.rho).all()
            and (u.n is None or np.isfinite(u.n).all())):
        raise NumericalError(f"non-finite iterate at iteration {it}")


def solve_monge(problem, cfg: SolverConfig):
    """Chambolle-Pock on the metric-weighted kinetic cost.

    Returns the final staggered field (feasible: divergence-free with the
    prescribed boundary) and the convergence report.
    """
    if cfg.algorithm != "chambolle_pock":
        raise ConfigurationError("solve_monge runs the Chambolle-Pock algorithm")
    if problem.form != "monge":
        raise InputError("solve_monge expects a monge-form problem")
    g = problem.grid
    metric = problem.metric()
    b0 = problem.boundary_data()
    w = PoissonWorkspace(g)
    report = ConvergenceReport()

    norm_est = None
    if cfg.tau == "auto" or cfg.sigma == "auto":
        norm_est = estimate_operator_norm(g, cfg.norm_iters, cfg.seed)
        tau, sigma = auto_step_sizes(g, "chambolle_pock", norm_est)
    if cfg.tau != "auto":
        tau = float(cfg.tau)
    if cfg.sigma != "auto":
        sigma = float(cfg.sigma)
    report.tau, report.sigma = tau, sigma

    x_hat, u_lin = _initial_field(problem, w)
    x_bar = x_hat.copy()
    s = CenteredField.zeros(g)
    mass = b0.mass() * g.cell_area
    tracker = _CostTracker(problem, metric, g)
    pp = ProxParams(1.0 / tau, cfg.fp_tol)

    report.append(tracker.row(0, interpolate(u_lin, g), x_hat, 1.0))
    status = "max_iters"
    it = 0
    for it in range(1, cfg.max_iters + 1):
        arg = s + tau * interpolate(x_bar, g)
        inner = prox_J((1.0 / tau) * arg, metric, pp)
        s = arg - tau * inner
        x_new = project_constraints(x_hat - sigma * interpolate_adjoint(s, g), b0, w, g)
        x_bar = x_new + cfg.theta * (x_new - x_hat)
        rel = (x_new - x_hat).norm() / max(x_hat.norm(), 1e-30)
        x_hat = x_new
        if not np.isfinite(rel):
            raise NumericalError(f"non-finite iterate at iteration {it}")
        if it % cfg.log_every == 0 or it == cfg.max_iters:
            _check_finite(x_hat, it)
            report.append(tracker.row(it, inner, x_hat, rel))
            report.max_mass_deviation = max(report.max_mass_deviation,
                                            _mass_deviation(x_hat, g, mass))
            if cfg.snapshot_hook is not None and cfg.snapshot_every > 0 \
                    and it % cfg.snapshot_every == 0:
                cfg.snapshot_hook(it, x_hat)
            if stopping_check(report, cfg.stop_window, cfg.stop_tol):
                status = "converged"
                break
    report.status = status
    report.iterations = it
    return x_hat, report


def _estimate_beta_inv(problem, x0: StaggeredField, grad_fn, cfg) -> float:
    """Empirical Lipschitz constant of the smooth gradient near the start.

    Probes 8 random mass-preserving density perturbations and takes the
    largest difference quotient; the constant is unknown in theory.
    """
    rng = np.random.default_rng(cfg.seed + 1)
    g = problem.grid
    scale = 1e-4 * float(np.mean(np.abs(x0.rho)) + 1e-30)
    probes = []
    for _ in range(8):
        d = rng.standard_normal(x0.rho.shape)
        d -= d.mean(axis=(0, 1), keepdims=True)   # keep slice masses
        probes.append(x0.rho + scale * d)
    best = 0.0
    grads = [grad_fn(p)[0] for p in probes]
    for i in range(len(probes) - 1):
        num = float(np.linalg.norm(grads[i + 1] - grads[i]))
        den = float(np.linalg.norm(probes[i + 1] - probes[i]))
        if den > 0:
            best = max(best, num / den)
    return best


def solve_three_term(problem, cfg: SolverConfig):
    """Condat-Vu / PDFP / Yan on kinetic + continuity + slice-coupling terms.

    The kinetic prox runs with the identity metric; the coupling cost enters
    through its potential gradient, scaled so the three-term objective is
    the same discretization the equivalent metric form minimizes.
    """
    if cfg.algorithm == "chambolle_pock":
        raise ConfigurationError("solve_three_term needs condat_vu, pdfp, or yan")
    if problem.form != "kantorovich":
        raise InputError("three-term solver expects a kantorovich-form problem")
    g = problem.grid
    a1, a2 = problem.alpha
    if a1 <= 0:
        raise ConfigurationError("alpha[0] must be positive")
    metric = problem.metric()   # identity metric
    b0 = problem.boundary_data()
    w = PoissonWorkspace(g)
    pi = problem.coupling
    report = ConvergenceReport()

    sink = cfg.sinkhorn
    if sink is None:
        cmax = float(pi.ground_cost().cost.max())
        sink = SinkhornParams(epsilon=max(cfg.sinkhorn_epsilon_rel * cmax, 1e-12),
                              tol=1e-7)
    h_active = a2 > 0.0
    h_coef = a2 / (a1 * g.cell_volume)
    warm: dict = {}
    rho_floor = 1e-10 * float(np.mean(problem.mu))

    def grad_h(rho_faces):
        """Gradient of the scaled coupling term; returns (slices grad, raw H)."""
        slices = rho_faces.reshape(g.M * g.N, g.Q + 1)
        # clamp transient negatives, restore the common slice mass
        clamped = np.maximum(slices, rho_floor)
        masses = clamped.sum(axis=0)
        target = float(slices.sum(axis=0).mean())
        clamped = clamped * (target / masses)[None, :]
        grad, _, h_sharp = grad_H(clamped, pi, sink, g, warm=warm)
        return h_coef * grad.reshape(rho_faces.shape), h_sharp

    norm_est = estimate_operator_norm(g, cfg.norm_iters, cfg.seed)
    x, u_lin = _initial_field(problem, w)
    if h_active:
        if cfg.beta_inv == "auto":
            beta_inv = _estimate_beta_inv(problem, x, grad_h, cfg)
        else:
            beta_inv = float(cfg.beta_inv)
    else:
        beta_inv = 0.0
    tau, sigma = auto_step_sizes(g, cfg.algorithm, norm_est, beta_inv)
    if cfg.tau != "auto":
        tau = float(cfg.tau)
    if cfg.sigma != "auto":
        sigma = float(cfg.sigma)
    report.tau, report.sigma, report.beta_inv = tau, sigma, beta_inv

    x_bar = x.copy()
    s = CenteredField.zeros(g)
    mass = b0.mass() * g.cell_area
    tracker = _CostTracker(problem, metric, g)
    pp = ProxParams(1.0 / tau, cfg.fp_tol)

    if h_active:
        grad_x, h0 = grad_h(x.rho)
    else:
        grad_x, h0 = None, 0.0
    report.append(tracker.row(0, interpolate(u_lin, g), x, 1.0, h_value=h0))

    status = "max_iters"
    it = 0
    h_val = h0
    for it in range(1, cfg.max_iters + 1):
        arg = s + tau * interpolate(x_bar, g)
        inner = prox_J((1.0 / tau) * arg, metric, pp)
        s = arg - tau * inner
        adj = interpolate_adjoint(s, g)
        drift = sigma * adj
        if h_active:
            drift.rho += sigma * grad_x
        x_new = project_constraints(x - drift, b0, w, g)
        if h_active:
            grad_new, h_val = grad_h(x_new.rho)
        else:
            grad_new, h_val = None, 0.0
        if cfg.algorithm == "condat_vu":
            x_bar = 2.0 * x_new - x
        elif cfg.algorithm == "yan":
            x_bar = 2.0 * x_new - x
            if h_active:
                x_bar.rho += sigma * (grad_x - grad_new)
        else:  # pdfp
            drift2 = sigma * adj
            if h_active:
                drift2.rho += sigma * grad_new
            x_bar = project_constraints(x_new - drift2, b0, w, g)
        rel = (x_new - x).norm() / max(x.norm(), 1e-30)
        x = x_new
        grad_x = grad_new
        if not np.isfinite(rel):
            raise NumericalError(f"non-finite iterate at iteration {it}")
        if it % cfg.log_every == 0 or it == cfg.max_iters:
            _check_finite(x, it)
            report.append(tracker.row(it, inner, x, rel, h_value=h_val))
            report.max_mass_deviation = max(report.max_mass_deviation,
                                            _mass_deviation(x, g, mass))
            if cfg.snapshot_hook is not None and cfg.snapshot_every > 0 \
                    and it % cfg.snapshot_every == 0:
                cfg.snapshot_hook(it, x)
            if stopping_check(report, cfg.stop_window, cfg.stop_tol):
                status = "converged"
                break
    report.status = status
    report.iterations = it
    return x, report


def solve(problem, cfg: SolverConfig):
    """Dispatch on problem form and algorithm."""
    if problem.form == "monge":
        return solve_monge(problem, cfg)
    return solve_three_term(problem, cfg)
