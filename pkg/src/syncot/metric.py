"""Secondary-space maps, their Jacobians, and the induced kinetic metric.

A map T from the primary space into a secondary space induces the per-cell
metric A = a1*I + a2*(J^T J) where J is the Jacobian of T.  The generalized
kinetic cost ||m||_A^2 / rho then aggregates the transport effort in both
spaces at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._colormap_data import TABLES as _CMAP_TABLES
from .errors import ConfigurationError, DomainError
from .grid import CenteredField, GridSpec

ANALYTIC_VARIANTS = (
    "identity",
    "quadratic",
    "sigmoid",
    "surface_gaussian_bump",
    "surface_sine",
    "surface_cos_radial",
)
FD_VARIANTS = ("colormap", "tabulated")

SCALAR_FIELDS = {
    # radial peak and interference pattern used by the color-space problems
    "gauss_peak": lambda x, y: np.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2) / 0.15 ** 2),
    "sine_mix": lambda x, y: np.sin(6 * x) ** 10 + np.cos(10 + 36 * x * y) * np.cos(6 * x),
}

_FIELD_RANGE_CACHE: dict[str, tuple[float, float]] = {}


def _scalar_field_range(field_id):
    """Min/max of a scalar field over the unit square, on a fixed 257^2 sample."""
    if field_id not in _FIELD_RANGE_CACHE:
        xs = np.linspace(0.0, 1.0, 257)
        xg, yg = np.meshgrid(xs, xs, indexing="ij")
        vals = SCALAR_FIELDS[field_id](xg, yg)
        _FIELD_RANGE_CACHE[field_id] = (float(vals.min()), float(vals.max()))
    return _FIELD_RANGE_CACHE[field_id]


@dataclass(frozen=True)
class MapSpec:
    """Description of a secondary-space map T.

    Builtin analytic variants carry exact Jacobians; colormap and tabulated
    variants differentiate by central finite differences with step fd_step.
    """

    variant: str
    codomain_dim: int
    d_in: int = 2
    sigma: float | None = None
    colormap: str | None = None
    scalar_field: str | None = None
    values: np.ndarray | None = field(default=None, repr=False, compare=False)
    fd_step: float = 1.0 / 512

    def __post_init__(self):
        if self.variant not in ANALYTIC_VARIANTS + FD_VARIANTS:
            raise ConfigurationError(f"unknown map variant {self.variant!r}")
        if self.variant in FD_VARIANTS and not self.fd_step > 0:
            raise ConfigurationError("fd_step must be positive")
        if self.variant == "colormap":
            if self.colormap not in _CMAP_TABLES:
                raise ConfigurationError(f"unknown colormap {self.colormap!r}")
            if self.scalar_field not in SCALAR_FIELDS:
                raise ConfigurationError(f"unknown scalar field {self.scalar_field!r}")
        if self.variant == "tabulated":
            if self.values is None or self.values.ndim != self.d_in + 1:
                raise ConfigurationError("tabulated map needs a (nodes..., codomain) sample array")

    @classmethod
    def identity(cls, d=2):
        return cls("identity", d, d_in=d)

    @classmethod
    def quadratic(cls, d=2):
        return cls("quadratic", d, d_in=d)

    @classmethod
    def sigmoid(cls, d=2):
        return cls("sigmoid", d, d_in=d)

    @classmethod
    def gaussian_bump(cls, sigma=0.15):
        return cls("surface_gaussian_bump", 3, d_in=2, sigma=sigma)

    @classmethod
    def sine_surface(cls):
        return cls("surface_sine", 3, d_in=2)

    @classmethod
    def cos_radial_surface(cls):
        return cls("surface_cos_radial", 3, d_in=2)

    @classmethod
    def color_space(cls, colormap, scalar_field, fd_step=1.0 / 512):
        return cls("colormap", 3, d_in=2, colormap=colormap,
                   scalar_field=scalar_field, fd_step=fd_step)

    @classmethod
    def tabulated(cls, values, d_in, fd_step=1.0 / 512):
        values = np.asarray(values, dtype=float)
        return cls("tabulated", values.shape[-1], d_in=d_in, values=values,
                   fd_step=fd_step)


def _lut_eval(table, t):
    """Piecewise-linear lookup of a 256-entry RGB table at t in [0, 1]."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    pos = t * (len(table) - 1)
    lo = np.minimum(pos.astype(int), len(table) - 2)
    frac = (pos - lo)[..., None]
    return (1.0 - frac) * table[lo] + frac * table[lo + 1]


def _tabulated_eval(spec, pts):
    values = spec.values
    nodes = [np.linspace(0.0, 1.0, values.shape[k]) for k in range(spec.d_in)]
    if np.any(pts < -1e-12) or np.any(pts > 1.0 + 1e-12):
        raise DomainError("tabulated map queried outside its sample hull")
    pts = np.clip(pts, 0.0, 1.0)
    if spec.d_in == 1:
        xs = nodes[0]
        idx = np.minimum(np.searchsorted(xs, pts[:, 0], side="right") - 1, len(xs) - 2)
        idx = np.maximum(idx, 0)
        w = (pts[:, 0] - xs[idx]) / (xs[idx + 1] - xs[idx])
        return (1 - w)[:, None] * values[idx] + w[:, None] * values[idx + 1]
    xs, ys = nodes
    ix = np.clip(np.searchsorted(xs, pts[:, 0], side="right") - 1, 0, len(xs) - 2)
    iy = np.clip(np.searchsorted(ys, pts[:, 1], side="right") - 1, 0, len(ys) - 2)
    wx = (pts[:, 0] - xs[ix]) / (xs[ix + 1] - xs[ix])
    wy = (pts[:, 1] - ys[iy]) / (ys[iy + 1] - ys[iy])
    v00, v10 = values[ix, iy], values[ix + 1, iy]
    v01, v11 = values[ix, iy + 1], values[ix + 1, iy + 1]
    wx, wy = wx[:, None], wy[:, None]
    return (1 - wx) * (1 - wy) * v00 + wx * (1 - wy) * v10 + (1 - wx) * wy * v01 + wx * wy * v11


def eval_map(spec: MapSpec, x) -> np.ndarray:
    """Evaluate T at one point (d,) or batch (n, d) of points."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    single = np.asarray(x).ndim == 1
    v = spec.variant
    if v == "identity":
        out = pts.copy()
    elif v == "quadratic":
        out = pts ** 2
    elif v == "sigmoid":
        out = 1.0 / (1.0 + np.exp(-10.0 * (pts - 0.5)))
    elif v == "surface_gaussian_bump":
        z = np.exp(-((pts[:, 0] - 0.5) ** 2 + (pts[:, 1] - 0.5) ** 2) / (2 * spec.sigma ** 2))
        out = np.column_stack([pts, z])
    elif v == "surface_sine":
        z = np.sin(2 * np.pi * pts[:, 0]) * np.sin(2 * np.pi * pts[:, 1])
        out = np.column_stack([pts, z])
    elif v == "surface_cos_radial":
        r = np.sqrt(pts[:, 0] ** 5 + pts[:, 1] ** 5)
        out = np.column_stack([pts, -0.5 * np.cos(5 * r)])
    elif v == "colormap":
        f = SCALAR_FIELDS[spec.scalar_field](pts[:, 0], pts[:, 1])
        lo, hi = _scalar_field_range(spec.scalar_field)
        out = _lut_eval(_CMAP_TABLES[spec.colormap], (f - lo) / (hi - lo))
    else:
        out = _tabulated_eval(spec, pts)
    return out[0] if single else out


def eval_jacobian(spec: MapSpec, x) -> np.ndarray:
    """Jacobian of T; exact for analytic variants, finite differences otherwise."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    single = np.asarray(x).ndim == 1
    n, d = pts.shape
    v = spec.variant
    if v == "identity":
        jac = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    elif v == "quadratic":
        jac = np.zeros((n, d, d))
        for k in range(d):
            jac[:, k, k] = 2.0 * pts[:, k]
    elif v == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-10.0 * (pts - 0.5)))
        jac = np.zeros((n, d, d))
        for k in range(d):
            jac[:, k, k] = 10.0 * s[:, k] * (1.0 - s[:, k])
    elif v in ("surface_gaussian_bump", "surface_sine", "surface_cos_radial"):
        jac = np.zeros((n, 3, 2))
        jac[:, 0, 0] = 1.0
        jac[:, 1, 1] = 1.0
        xx, yy = pts[:, 0], pts[:, 1]
        if v == "surface_gaussian_bump":
            z = np.exp(-((xx - 0.5) ** 2 + (yy - 0.5) ** 2) / (2 * spec.sigma ** 2))
            jac[:, 2, 0] = -z * (xx - 0.5) / spec.sigma ** 2
            jac[:, 2, 1] = -z * (yy - 0.5) / spec.sigma ** 2
        elif v == "surface_sine":
            jac[:, 2, 0] = 2 * np.pi * np.cos(2 * np.pi * xx) * np.sin(2 * np.pi * yy)
            jac[:, 2, 1] = 2 * np.pi * np.sin(2 * np.pi * xx) * np.cos(2 * np.pi * yy)
        else:
            r = np.sqrt(xx ** 5 + yy ** 5)
            safe = np.where(r > 0, r, 1.0)
            coef = np.where(r > 0, 2.5 * np.sin(5 * r) / safe, 0.0)
            jac[:, 2, 0] = coef * 2.5 * xx ** 4
            jac[:, 2, 1] = coef * 2.5 * yy ** 4
    else:
        jac = _fd_jacobian(spec, pts)
    return jac[0] if single else jac


def _fd_jacobian(spec, pts):
    """Central differences, one-sided where a step would leave the domain."""
    h = spec.fd_step
    n, d = pts.shape
    jac = np.zeros((n, spec.codomain_dim, d))
    for k in range(d):
        hi = np.minimum(pts[:, k] + h, 1.0)
        lo = np.maximum(pts[:, k] - h, 0.0)
        p_hi, p_lo = pts.copy(), pts.copy()
        p_hi[:, k], p_lo[:, k] = hi, lo
        dv = eval_map(spec, p_hi) - eval_map(spec, p_lo)
        jac[:, :, k] = dv / (hi - lo)[:, None]
    return jac


class MetricField:
    """Per-cell SPD metric A = a1*I + a2*(J^T J), constant in time.

    Stores the metric and its eigendecomposition on the (M, N) spatial cells;
    the raw J^T J part is kept so the two-space cost split can be recovered
    without the alpha weights.
    """

    def __init__(self, a, jtj, alpha, g: GridSpec):
        self.a = a          # (M, N, d, d)
        self.jtj = jtj      # (M, N, d, d)
        self.alpha = (float(alpha[0]), float(alpha[1]))
        self.grid = g
        self.d = a.shape[-1]
        self._decompose()

    def _decompose(self):
        a = self.a
        if self.d == 1:
            self.eigvals = a[..., 0, 0][..., None]
            self.eigvecs = np.ones(a.shape[:2] + (1, 1))
        else:
            # closed-form symmetric 2x2 eigendecomposition
            p, q, r = a[..., 0, 0], a[..., 0, 1], a[..., 1, 1]
            half_tr = 0.5 * (p + r)
            disc = np.sqrt(np.maximum(0.25 * (p - r) ** 2 + q ** 2, 0.0))
            lam1, lam2 = half_tr - disc, half_tr + disc
            # eigenvector for lam2: (q, lam2 - p), fall back to axes when q ~ 0
            vx = np.where(np.abs(q) > 1e-300, q, np.where(p >= r, 1.0, 0.0))
            vy = np.where(np.abs(q) > 1e-300, lam2 - p, np.where(p >= r, 0.0, 1.0))
            nrm = np.sqrt(vx ** 2 + vy ** 2)
            vx, vy = vx / nrm, vy / nrm
            self.eigvals = np.stack([lam1, lam2], axis=-1)
            vecs = np.empty(a.shape)
            vecs[..., 0, 1], vecs[..., 1, 1] = vx, vy
            vecs[..., 0, 0], vecs[..., 1, 0] = -vy, vx
            self.eigvecs = vecs
        if np.min(self.eigvals) <= 0:
            raise ConfigurationError("metric must be positive definite")
        # scalar multiple of the identity everywhere: prox can skip rotations
        c = self.a[0, 0, 0, 0]
        self.iso = None
        if np.all(self.a == c * np.eye(self.d)):
            self.iso = float(c)

    @classmethod
    def isotropic(cls, value, g: GridSpec, alpha=(1.0, 0.0)):
        """Constant multiple of the identity; the pure single-space metric."""
        d = g.d_spatial
        eye = np.broadcast_to(np.eye(d), (g.M, g.N, d, d)).copy()
        return cls(value * eye, eye.copy(), alpha, g)


def build_metric_field(spec: MapSpec, alpha, g: GridSpec) -> MetricField:
    """Assemble the metric from the map Jacobian at the spatial cell centers."""
    a1, a2 = float(alpha[0]), float(alpha[1])
    if a1 <= 0:
        raise ConfigurationError("alpha[0] must be positive for a definite metric")
    if abs(a1 + a2 - 1.0) > 1e-12 or a2 < 0:
        raise ConfigurationError("alpha must be a simplex pair with alpha[0] > 0")
    if spec.d_in != g.d_spatial:
        raise ConfigurationError(
            f"map domain dimension {spec.d_in} does not match grid dimension {g.d_spatial}")
    pts = g.cell_centers()
    jac = eval_jacobian(spec, pts)
    jtj = np.einsum("nki,nkj->nij", jac, jac)
    jtj = 0.5 * (jtj + np.swapaxes(jtj, -1, -2))
    d = g.d_spatial
    jtj = jtj.reshape(g.M, g.N, d, d)
    a = a1 * np.eye(d) + a2 * jtj
    return MetricField(a, jtj, (a1, a2), g)


def _quadratic_forms(v: CenteredField, a: MetricField):
    """Per-cell m.m and m.(J^T J)m with the time-constant metric broadcast."""
    if a.d == 1:
        qi = v.m ** 2
        qt = a.jtj[..., 0, 0][..., None] * v.m ** 2
    else:
        qi = v.m ** 2 + v.n ** 2
        j = a.jtj
        qt = (j[..., 0, 0][..., None] * v.m ** 2
              + 2.0 * j[..., 0, 1][..., None] * v.m * v.n
              + j[..., 1, 1][..., None] * v.n ** 2)
    return qi, qt


def kinetic_energy_parts(v: CenteredField, a: MetricField, g: GridSpec):
    """Raw per-space kinetic energies (no alpha weights): (primary, secondary).

    Either value is +inf when some cell has rho <= 0 with nonzero momentum,
    or rho < 0 outright.
    """
    qi, qt = _quadratic_forms(v, a)
    rho = v.rho
    pos = rho > 0
    zero = (rho == 0.0) & (qi == 0.0)
    if not np.all(pos | zero):
        return np.inf, np.inf
    vol = g.cell_volume
    safe = np.where(pos, rho, 1.0)
    ei = vol * float(np.sum(np.where(pos, qi / safe, 0.0)))
    et = vol * float(np.sum(np.where(pos, qt / safe, 0.0)))
    return ei, et


def kinetic_cost(v: CenteredField, a: MetricField, g: GridSpec):
    """Total generalized kinetic cost and its two-space decomposition.

    Returns (total, cost_primary, cost_secondary) with cost_primary the
    a1-weighted Euclidean part and cost_secondary the a2-weighted map part,
    so total = cost_primary + cost_secondary.  Infeasible fields return
    +inf in all three slots.
    """
    ei, et = kinetic_energy_parts(v, a, g)
    if not np.isfinite(ei):
        return np.inf, np.inf, np.inf
    a1, a2 = a.alpha
    return a1 * ei + a2 * et, a1 * ei, a2 * et
