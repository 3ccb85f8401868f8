"""Static discrete optimal transport between consecutive density slices.

The squared-distance transport terms that couple consecutive time slices are
solved with a log-domain Sinkhorn iteration; the centered dual potentials
are the slice gradients of the transport cost.  A small exact LP solver is
kept alongside as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import ConfigurationError, ConvergenceError, InputError, NumericalError
from .grid import GridSpec

try:
    import numba
    _HAVE_NUMBA = True
except ImportError:   # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


@dataclass
class DiscreteMeasure:
    """Nonnegative weights with the total mass cached."""

    weights: np.ndarray
    total_mass: float = field(init=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if np.min(self.weights) < 0:
            raise InputError("measure weights must be nonnegative")
        self.total_mass = float(self.weights.sum())

    def __len__(self):
        return self.weights.size


@dataclass
class GroundCost:
    """Squared Euclidean cost between secondary-space points, built lazily."""

    points: np.ndarray
    _cost: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))

    @property
    def cost(self):
        if self._cost is None:
            p = self.points
            sq = np.sum(p ** 2, axis=1)
            c = sq[:, None] + sq[None, :] - 2.0 * (p @ p.T)
            np.maximum(c, 0.0, out=c)
            np.fill_diagonal(c, 0.0)
            self._cost = 0.5 * (c + c.T)
        return self._cost

    def __len__(self):
        return self.points.shape[0]


@dataclass
class PotentialPair:
    """Dual potentials; when centered, f sums to zero and g absorbs the shift."""

    f: np.ndarray
    g: np.ndarray
    centered: bool = False

    def center(self):
        shift = float(np.mean(self.f))
        return PotentialPair(self.f - shift, self.g + shift, centered=True)


@dataclass(frozen=True)
class SinkhornParams:
    """Entropic regularization and iteration controls.

    epsilon is in squared-distance units; with epsilon_scaling the
    regularization is annealed geometrically from max(C)/10 down to epsilon.
    omega over-relaxes the potential updates (1 disables); the iteration
    falls back to plain updates if the marginal violation blows up.
    """

    epsilon: float
    max_iters: int = 100000
    tol: float = 1e-9
    epsilon_scaling: bool = True
    omega: float = 1.8

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        if not 0 < self.omega < 2:
            raise ConfigurationError("omega must lie in (0, 2)")


def _log_weights(w):
    out = np.full(w.shape, -np.inf)
    np.log(w, out=out, where=w > 0)
    return out


def _softmin(mat, eps):
    """Row-wise -eps*log(sum(exp(mat))) with max stabilization (mat pre-divided)."""
    top = np.max(mat, axis=1)
    finite = np.isfinite(top)
    safe_top = np.where(finite, top, 0.0)
    s = np.sum(np.exp(mat - safe_top[:, None]), axis=1)
    return np.where(finite, -eps * (safe_top + np.log(np.maximum(s, 1e-300))), np.inf)


if _HAVE_NUMBA:

    @numba.njit(parallel=True, cache=True)
    def _softmin_base_nb(base, vec, eps):   # pragma: no cover - jitted
        n, m = base.shape
        out = np.empty(n)
        for i in numba.prange(n):
            top = -np.inf
            for j in range(m):
                v = base[i, j] + vec[j]
                if v > top:
                    top = v
            if not np.isfinite(top):
                out[i] = np.inf
                continue
            s = 0.0
            for j in range(m):
                s += np.exp(base[i, j] + vec[j] - top)
            if s < 1e-300:
                s = 1e-300
            out[i] = -eps * (top + np.log(s))
        return out

    @numba.njit(parallel=True, cache=True)
    def _row_marginals_nb(logPc, fv, gv):   # pragma: no cover - jitted
        n, m = logPc.shape
        out = np.empty(n)
        for i in numba.prange(n):
            s = 0.0
            for j in range(m):
                s += np.exp(logPc[i, j] + fv[i] + gv[j])
            out[i] = s
        return out


def _softmin_base(base, vec, eps):
    """Softmin of base[i, :] + vec[:] per row; base carries the -C/eps part."""
    if _HAVE_NUMBA:
        return _softmin_base_nb(base, vec, eps)
    return _softmin(base + vec[None, :], eps)


def _row_marginals(logPc, fv, gv):
    """Row sums of exp(logPc + fv[:, None] + gv[None, :])."""
    if _HAVE_NUMBA:
        return _row_marginals_nb(logPc, fv, gv)
    return np.exp(logPc + fv[:, None] + gv[None, :]).sum(axis=1)


def _check_masses(a: DiscreteMeasure, b: DiscreteMeasure):
    ma, mb = a.total_mass, b.total_mass
    if ma <= 0 or mb <= 0:
        raise InputError("measures must carry positive mass")
    if abs(ma - mb) > 1e-8 * max(ma, mb):
        raise InputError(f"measure masses differ: {ma!r} vs {mb!r}")


def _epsilon_ladder(cmax, target):
    schedule = []
    eps = cmax / 10.0
    while eps > target * 2.0:
        schedule.append(eps)
        eps *= 0.5
    schedule.append(target)
    return schedule


def _self_potential(logw, C, p: SinkhornParams, cap=1000, increment_tol=1e-9):
    """Self-transport potential of one measure by averaged half-updates.

    The symmetric fixed point f = T(f) of the (w, w) problem initializes the
    asymmetric pair solve close to its optimum; this removes the slow tail
    Sinkhorn exhibits on nearly identical measures.
    """
    f = np.zeros(C.shape[0])
    schedule = _epsilon_ladder(float(C.max()), p.epsilon) if p.epsilon_scaling \
        else [p.epsilon]
    for eps in schedule:
        base = logw[None, :] - C / eps
        inv_eps = 1.0 / eps
        for _ in range(cap):
            f_new = _softmin_base(base, f * inv_eps, eps)
            delta = float(np.max(np.abs(f_new - f)))
            f = 0.5 * (f + f_new)
            if delta <= increment_tol:
                break
    return f


def sinkhorn_log(a: DiscreteMeasure, b: DiscreteMeasure, c: GroundCost,
                 p: SinkhornParams, init=None):
    """Log-domain Sinkhorn; returns centered potentials and the transport cost.

    The cost is <P, C> for the implied plan P, rescaled to the measures'
    common mass; at small epsilon it tracks the unregularized optimum far
    more closely than the dual objective does.  Raises ConvergenceError with
    the final marginal violation when the iteration budget runs out.
    """
    pair, sharp, _ = _sinkhorn_core(a, b, c, p, init)
    return pair, sharp


def _sinkhorn_core(a: DiscreteMeasure, b: DiscreteMeasure, c: GroundCost,
                   p: SinkhornParams, init=None, self_hint=None):
    """Shared solve returning (pair, sharp cost <P,C>, dual objective value).

    The dual objective is the smooth function of the marginals whose exact
    gradients the centered potentials are; the sharp cost is the better
    estimate of the unregularized optimum.  self_hint optionally supplies
    precomputed self-transport potentials of (a, b).
    """
    _check_masses(a, b)
    mbar = 0.5 * (a.total_mass + b.total_mass)
    aw = a.weights / a.total_mass
    bw = b.weights / b.total_mass
    C = c.cost
    la, lb = _log_weights(aw), _log_weights(bw)

    eps = p.epsilon
    state = {"budget": p.max_iters, "violation": np.inf}

    def run(f, g, schedule, omega0, cap):
        """One solve attempt; returns (f, g, converged)."""
        used = 0
        # relaxed limit-cycle detection only matters mid-ladder; capped
        # single-stage attempts simply hand over to the next plan
        patience = 500 if len(schedule) > 1 else None
        for stage, stage_eps in enumerate(schedule):
            last = stage == len(schedule) - 1
            stage_tol = p.tol if last else max(p.tol, 1e-4)
            omega = omega0
            f_in, g_in = f.copy(), g.copy()
            best_v, no_gain = np.inf, 0
            inv_eps = 1.0 / stage_eps
            rows = la[None, :] - C.T * inv_eps     # softmin blocks with C/eps baked in
            cols = lb[None, :] - C * inv_eps
            logPc = la[:, None] + lb[None, :] - C * inv_eps
            while True:
                if state["budget"] <= 0:
                    raise ConvergenceError(
                        "sinkhorn budget exhausted, marginal violation "
                        f"{state['violation']:.3e}", violation=state["violation"])
                if cap is not None and used >= cap:
                    return f, g, False
                state["budget"] -= 1
                used += 1
                f_new = _softmin_base(cols, g * inv_eps, stage_eps)
                f = f_new if omega == 1.0 else (1.0 - omega) * f + omega * f_new
                g_new = _softmin_base(rows, f * inv_eps, stage_eps)
                g = g_new if omega == 1.0 else (1.0 - omega) * g + omega * g_new
                marg = _row_marginals(logPc, f * inv_eps, g * inv_eps)
                violation = float(np.abs(marg - aw).sum())
                state["violation"] = violation
                if violation <= stage_tol:
                    break
                if patience is None:
                    continue
                # a long window without improvement is a relaxed limit cycle
                # or divergence: rerun the stage unrelaxed
                if np.isfinite(violation) and violation < 0.999 * best_v:
                    best_v, no_gain = violation, 0
                else:
                    no_gain += 1
                if no_gain >= patience and omega != 1.0:
                    f, g = f_in.copy(), g_in.copy()
                    omega = 1.0
                    best_v, no_gain = np.inf, 0
        return f, g, True

    with np.errstate(divide="ignore", invalid="ignore"):
        n_max = max(len(a), len(b))
        cap = 4000 + 50 * n_max
        self_pots = []

        def self_init():
            # self-transport potentials start the pair solve near its optimum,
            # removing the slow tail on nearly identical measures
            if not self_pots:
                if self_hint is not None:
                    self_pots.append((np.asarray(self_hint[0], dtype=float),
                                      np.asarray(self_hint[1], dtype=float)))
                else:
                    self_pots.append((_self_potential(la, C, p),
                                      _self_potential(lb, C, p)))
            return self_pots[0]

        plans = []
        if init is not None:
            warm = (np.array(init[0], dtype=float), np.array(init[1], dtype=float))
            plans.append(lambda: ([eps], warm, p.omega, cap))
        plans.append(lambda: ([eps], self_init(), p.omega, cap))
        if p.epsilon_scaling:
            # cold annealing recovers the instances self-initialization
            # misleads (well-separated measures at a tiny epsilon)
            ladder = _epsilon_ladder(float(C.max()), eps)
            zeros = (np.zeros(len(a)), np.zeros(len(b)))
            plans.append(lambda: (ladder, zeros, p.omega, 40000 + 50 * n_max))
        plans.append(lambda: ([eps], self_init(), 1.0, None))  # stable fallback

        f = g = None
        for make_plan in plans:
            schedule, (fi, gi), omega0, plan_cap = make_plan()
            f, g, converged = run(fi.copy(), gi.copy(), schedule, omega0, plan_cap)
            if converged:
                break
        # two plain updates leave an exact transform pair behind
        f = _softmin(lb[None, :] + (g[None, :] - C) / eps, eps)
        g = _softmin(la[None, :] + (f[None, :] - C.T) / eps, eps)
        P = np.exp(la[:, None] + lb[None, :] + (f[:, None] + g[None, :] - C) / eps)
    sharp = float(np.sum(P * C))
    dual = float(f @ aw + g @ bw - eps * (P.sum() - 1.0))
    pair = PotentialPair(f, g).center()
    return pair, mbar * sharp, mbar * dual


def exact_ot_small(a: DiscreteMeasure, b: DiscreteMeasure, c: GroundCost):
    """Exact discrete OT by linear programming; test oracle for small n.

    Returns the optimal plan and cost; optimality is certified with the
    recovered duals through complementary slackness.
    """
    n, m = len(a), len(b)
    if n > 64 or m > 64:
        raise ConfigurationError("exact solver is restricted to n <= 64")
    _check_masses(a, b)
    scale = 0.5 * (a.total_mass + b.total_mass)
    aw, bw = a.weights / a.total_mass, b.weights / b.total_mass
    C = c.cost
    ne = n * m
    rows = []
    rhs = []
    for i in range(n):
        r = np.zeros(ne)
        r[i * m:(i + 1) * m] = 1.0
        rows.append(r)
        rhs.append(aw[i])
    # the last column balance is implied by the others; dropping it keeps the
    # system consistent under floating-point mass roundoff
    for j in range(m - 1):
        r = np.zeros(ne)
        r[j::m] = 1.0
        rows.append(r)
        rhs.append(bw[j])
    res = scipy.optimize.linprog(C.ravel(), A_eq=np.array(rows), b_eq=np.array(rhs),
                                 bounds=(0, None), method="highs")
    if not res.success:
        raise NumericalError(f"exact OT LP failed: {res.message}")
    plan = res.x.reshape(n, m)
    u = res.eqlin.marginals[:n]
    v = np.empty(m)
    v[:m - 1] = res.eqlin.marginals[n:]
    v[m - 1] = float(np.min(C[:, m - 1] - u))   # c-transform closes the dual
    slack = C - u[:, None] - v[None, :]
    if slack.min() < -1e-7 * max(C.max(), 1.0):
        raise NumericalError("dual feasibility violated in exact OT solve")
    comp = float(np.abs(plan * slack).sum())
    if comp > 1e-7 * max(C.max(), 1.0):
        raise NumericalError("complementary slackness violated in exact OT solve")
    cost = float(np.sum(plan * C)) * scale
    return plan * scale, cost


def w2sq_grad(a: DiscreteMeasure, b: DiscreteMeasure, c: GroundCost,
              p: SinkhornParams, init=None):
    """Transport cost and its marginal gradients (independently centered)."""
    pair, w2 = sinkhorn_log(a, b, c, p, init=init)
    grad_a = pair.f - pair.f.mean()
    grad_b = pair.g - pair.g.mean()
    return w2, grad_a, grad_b


def grad_H(rho_slices: np.ndarray, pi, p: SinkhornParams, g: GridSpec,
           warm: dict | None = None):
    """Gradient of the slice-coupling transport cost, and its two values.

    rho_slices holds the density time-slices as columns (n_cells, Q+1); each
    is pushed to the secondary space through the coupling pi as cell masses.
    Interior slices collect contributions from both adjacent transport pairs;
    the endpoint slices from one.  Returns (gradient, h_reg, h_sharp): h_reg
    sums the entropic objectives, the smooth surrogate the gradient exactly
    differentiates; h_sharp sums the plan costs <P, C>, the better estimate
    of the unregularized coupling cost and the value to report.  warm
    optionally carries per-pair potential arrays reused across calls.
    """
    n_cells, n_slices = rho_slices.shape
    if n_slices != g.Q + 1:
        raise ConfigurationError("slice count must equal Q + 1")
    area = g.cell_area
    masses = rho_slices.sum(axis=0) * area
    if np.min(masses) <= 0:
        raise InputError("every slice must carry positive mass")
    ref = float(masses.mean())
    worst = float(np.max(np.abs(np.diff(masses))))
    if worst > 1e-6 * ref:
        k = int(np.argmax(np.abs(np.diff(masses))))
        raise NumericalError(
            f"slice masses diverge between slices {k} and {k + 1}: "
            f"{masses[k]!r} vs {masses[k + 1]!r}")
    cost = pi.ground_cost()
    grad = np.zeros_like(rho_slices)
    h_reg = 0.0
    h_sharp = 0.0
    # rescale every slice to the common mean mass; the centered potentials
    # are invariant under this, the cost is 1-homogeneous
    scaled = rho_slices * (ref / masses)[None, :] * area
    measures = [DiscreteMeasure(pi.apply(scaled[:, k])) for k in range(g.Q + 1)]
    selfs = None
    if warm is None or "self" not in (warm or {}):
        # per-slice self potentials, shared by the two pairs touching a slice
        selfs = [_self_potential(_log_weights(m.weights / m.total_mass),
                                 cost.cost, p) for m in measures]
        if warm is not None:
            warm["self"] = True   # cold pass done; later calls are warm
    for k in range(g.Q):
        init = warm.get(k) if warm is not None else None
        hint = (selfs[k], selfs[k + 1]) if selfs is not None else None
        pair, sharp, dual = _sinkhorn_core(measures[k], measures[k + 1], cost, p,
                                           init=init, self_hint=hint)
        if warm is not None:
            warm[k] = (pair.f.copy(), pair.g.copy())
        h_reg += dual / g.dt
        h_sharp += sharp / g.dt
        coef = area / g.dt
        grad[:, k] += coef * pi.apply_transpose(pair.f - pair.f.mean())
        grad[:, k + 1] += coef * pi.apply_transpose(pair.g - pair.g.mean())
    return grad, h_reg, h_sharp
