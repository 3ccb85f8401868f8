"""Space-time staggered/centered grid geometry and its linear operators.

The unknown lives on a staggered grid: the momentum component ``m`` on
x-faces, ``n`` on y-faces (2D only) and the density ``rho`` on t-faces.
Interpolation averages face pairs onto cell centers, and the space-time
divergence differences faces across each cell.  Both operators are exact
transposes of each other's adjoint counterparts, which the primal-dual
iterations rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError, MassMismatchError

MASS_RTOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid over the unit square/interval times [0, 1].

    M, N, Q are cell counts along x, y, t; N is fixed to 1 in one spatial
    dimension.  Spacings satisfy dx*M = dy*N = dt*Q = 1 exactly.
    """

    d_spatial: int
    M: int
    N: int
    Q: int
    dx: float
    dy: float
    dt: float

    def __post_init__(self):
        if self.d_spatial not in (1, 2):
            raise ConfigurationError(f"d_spatial must be 1 or 2, got {self.d_spatial}")
        if self.d_spatial == 1 and self.N != 1:
            raise ConfigurationError("N must be 1 when d_spatial is 1")
        if self.M < 2 or self.Q < 2 or (self.d_spatial == 2 and self.N < 2):
            raise ConfigurationError(
                f"active cell counts must be >= 2, got M={self.M} N={self.N} Q={self.Q}"
            )
        for count, step, name in ((self.M, self.dx, "dx"), (self.N, self.dy, "dy"), (self.Q, self.dt, "dt")):
            if step <= 0 or step * count != 1.0:
                raise ConfigurationError(f"{name} must equal 1/count exactly")

    @classmethod
    def regular(cls, M, Q, N=None, d_spatial=None):
        """Build a spec from cell counts; N=None or 1 selects one spatial dimension."""
        if N is None:
            N = 1
        if d_spatial is None:
            d_spatial = 1 if N == 1 else 2
        return cls(d_spatial, M, N, Q, 1.0 / M, 1.0 / N, 1.0 / Q)

    @property
    def cell_volume(self):
        return self.dx * self.dy * self.dt

    @property
    def cell_area(self):
        return self.dx * self.dy

    def cell_centers(self):
        """Spatial cell centers as an (M*N, d_spatial) array, x fastest in j."""
        xs = (np.arange(self.M) + 0.5) * self.dx
        if self.d_spatial == 1:
            return xs[:, None]
        ys = (np.arange(self.N) + 0.5) * self.dy
        xg, yg = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([xg.ravel(), yg.ravel()], axis=1)

    def staggered_shapes(self):
        shapes = {"m": (self.M + 1, self.N, self.Q), "rho": (self.M, self.N, self.Q + 1)}
        if self.d_spatial == 2:
            shapes["n"] = (self.M, self.N + 1, self.Q)
        return shapes

    def centered_shape(self):
        return (self.M, self.N, self.Q)


def _check(arr, shape, name):
    if arr.shape != shape:
        raise ConfigurationError(f"{name} has shape {arr.shape}, expected {shape}")


@dataclass
class StaggeredField:
    """Momentum/density unknown on face-centered grids (the primal variable)."""

    m: np.ndarray
    rho: np.ndarray
    n: np.ndarray | None = None

    @classmethod
    def zeros(cls, g: GridSpec):
        n = np.zeros((g.M, g.N + 1, g.Q)) if g.d_spatial == 2 else None
        return cls(np.zeros((g.M + 1, g.N, g.Q)), np.zeros((g.M, g.N, g.Q + 1)), n)

    def components(self):
        out = [("m", self.m), ("rho", self.rho)]
        if self.n is not None:
            out.insert(1, ("n", self.n))
        return out

    def validate(self, g: GridSpec):
        shapes = g.staggered_shapes()
        _check(self.m, shapes["m"], "m")
        _check(self.rho, shapes["rho"], "rho")
        if g.d_spatial == 2:
            if self.n is None:
                raise ConfigurationError("n component required for d_spatial=2")
            _check(self.n, shapes["n"], "n")
        elif self.n is not None:
            raise ConfigurationError("n component must be absent for d_spatial=1")

    def copy(self):
        return StaggeredField(self.m.copy(), self.rho.copy(),
                              None if self.n is None else self.n.copy())

    def __add__(self, other):
        return StaggeredField(self.m + other.m, self.rho + other.rho,
                              None if self.n is None else self.n + other.n)

    def __sub__(self, other):
        return StaggeredField(self.m - other.m, self.rho - other.rho,
                              None if self.n is None else self.n - other.n)

    def __rmul__(self, c):
        return StaggeredField(c * self.m, c * self.rho,
                              None if self.n is None else c * self.n)

    def dot(self, other):
        s = np.vdot(self.m, other.m) + np.vdot(self.rho, other.rho)
        if self.n is not None:
            s += np.vdot(self.n, other.n)
        return float(s)

    def norm(self):
        return float(np.sqrt(self.dot(self)))

    def max_abs(self):
        v = max(np.max(np.abs(self.m)), np.max(np.abs(self.rho)))
        if self.n is not None:
            v = max(v, np.max(np.abs(self.n)))
        return float(v)

    def ravel(self):
        parts = [self.m.ravel(), self.rho.ravel()]
        if self.n is not None:
            parts.insert(1, self.n.ravel())
        return np.concatenate(parts)

    @classmethod
    def from_ravel(cls, vec, g: GridSpec):
        shapes = g.staggered_shapes()
        sizes = {k: int(np.prod(s)) for k, s in shapes.items()}
        m, rest = vec[: sizes["m"]], vec[sizes["m"]:]
        n = None
        if g.d_spatial == 2:
            n, rest = rest[: sizes["n"]], rest[sizes["n"]:]
            n = n.reshape(shapes["n"])
        return cls(m.reshape(shapes["m"]), rest.reshape(shapes["rho"]), n)


@dataclass
class CenteredField:
    """Momentum/density collocated at cell centers (the dual variable)."""

    m: np.ndarray
    rho: np.ndarray
    n: np.ndarray | None = None

    @classmethod
    def zeros(cls, g: GridSpec):
        shape = g.centered_shape()
        n = np.zeros(shape) if g.d_spatial == 2 else None
        return cls(np.zeros(shape), np.zeros(shape), n)

    def validate(self, g: GridSpec):
        shape = g.centered_shape()
        _check(self.m, shape, "m")
        _check(self.rho, shape, "rho")
        if g.d_spatial == 2:
            if self.n is None:
                raise ConfigurationError("n component required for d_spatial=2")
            _check(self.n, shape, "n")
        elif self.n is not None:
            raise ConfigurationError("n component must be absent for d_spatial=1")

    def copy(self):
        return CenteredField(self.m.copy(), self.rho.copy(),
                             None if self.n is None else self.n.copy())

    def __add__(self, other):
        return CenteredField(self.m + other.m, self.rho + other.rho,
                             None if self.n is None else self.n + other.n)

    def __sub__(self, other):
        return CenteredField(self.m - other.m, self.rho - other.rho,
                             None if self.n is None else self.n - other.n)

    def __rmul__(self, c):
        return CenteredField(c * self.m, c * self.rho,
                             None if self.n is None else c * self.n)

    def dot(self, other):
        s = np.vdot(self.m, other.m) + np.vdot(self.rho, other.rho)
        if self.n is not None:
            s += np.vdot(self.n, other.n)
        return float(s)

    def norm(self):
        return float(np.sqrt(self.dot(self)))

    def ravel(self):
        parts = [self.m.ravel(), self.rho.ravel()]
        if self.n is not None:
            parts.insert(1, self.n.ravel())
        return np.concatenate(parts)

    @classmethod
    def from_ravel(cls, vec, g: GridSpec):
        shape = g.centered_shape()
        size = int(np.prod(shape))
        ncomp = 3 if g.d_spatial == 2 else 2
        if vec.size != ncomp * size:
            raise ConfigurationError("vector length does not match centered layout")
        m = vec[:size].reshape(shape)
        if ncomp == 3:
            n = vec[size:2 * size].reshape(shape)
            rho = vec[2 * size:].reshape(shape)
            return cls(m, rho, n)
        return cls(m, vec[size:].reshape(shape), None)


@dataclass
class BoundaryData:
    """Boundary slabs: normal fluxes on the spatial walls, densities at t=0, 1."""

    flux_x0: np.ndarray
    flux_x1: np.ndarray
    rho_initial: np.ndarray
    rho_terminal: np.ndarray
    flux_y0: np.ndarray | None = None
    flux_y1: np.ndarray | None = None

    @classmethod
    def zero_flux(cls, mu, nu, g: GridSpec):
        """Standard transport boundary: no flux through spatial walls."""
        mu = np.asarray(mu, dtype=float).reshape(g.M, g.N)
        nu = np.asarray(nu, dtype=float).reshape(g.M, g.N)
        fy0 = fy1 = None
        if g.d_spatial == 2:
            fy0 = np.zeros((g.M, g.Q))
            fy1 = np.zeros((g.M, g.Q))
        b = cls(np.zeros((g.N, g.Q)), np.zeros((g.N, g.Q)), mu, nu, fy0, fy1)
        b.check_mass()
        return b

    def check_mass(self):
        s0 = float(self.rho_initial.sum())
        s1 = float(self.rho_terminal.sum())
        if np.min(self.rho_initial) < 0 or np.min(self.rho_terminal) < 0:
            raise InputError("marginal densities must be nonnegative")
        if abs(s0 - s1) > MASS_RTOL * max(abs(s0), abs(s1), 1.0):
            raise MassMismatchError(f"marginal masses differ: {s0!r} vs {s1!r}")

    def mass(self):
        return float(self.rho_initial.sum())


def interpolate(u: StaggeredField, g: GridSpec) -> CenteredField:
    """Midpoint interpolation from faces to cell centers."""
    u.validate(g)
    m = 0.5 * (u.m[:-1] + u.m[1:])
    rho = 0.5 * (u.rho[:, :, :-1] + u.rho[:, :, 1:])
    n = None
    if g.d_spatial == 2:
        n = 0.5 * (u.n[:, :-1] + u.n[:, 1:])
    return CenteredField(m, rho, n)


def interpolate_adjoint(v: CenteredField, g: GridSpec) -> StaggeredField:
    """Exact transpose of :func:`interpolate`.

    Interior faces collect half of each adjacent centered value; boundary
    faces see a single half-weighted contribution.
    """
    v.validate(g)
    out = StaggeredField.zeros(g)
    out.m[:-1] += 0.5 * v.m
    out.m[1:] += 0.5 * v.m
    out.rho[:, :, :-1] += 0.5 * v.rho
    out.rho[:, :, 1:] += 0.5 * v.rho
    if g.d_spatial == 2:
        out.n[:, :-1] += 0.5 * v.n
        out.n[:, 1:] += 0.5 * v.n
    return out


def divergence(u: StaggeredField, g: GridSpec) -> np.ndarray:
    """Space-time divergence on cell centers."""
    u.validate(g)
    div = (u.m[1:] - u.m[:-1]) / g.dx
    div += (u.rho[:, :, 1:] - u.rho[:, :, :-1]) / g.dt
    if g.d_spatial == 2:
        div += (u.n[:, 1:] - u.n[:, :-1]) / g.dy
    return div


def extract_boundary(u: StaggeredField) -> BoundaryData:
    """Read off the six boundary slabs (four in one spatial dimension)."""
    fy0 = fy1 = None
    if u.n is not None:
        fy0 = u.n[:, 0].copy()
        fy1 = u.n[:, -1].copy()
    return BoundaryData(
        flux_x0=u.m[0].copy(),
        flux_x1=u.m[-1].copy(),
        rho_initial=u.rho[:, :, 0].copy(),
        rho_terminal=u.rho[:, :, -1].copy(),
        flux_y0=fy0,
        flux_y1=fy1,
    )


def impose_boundary(u: StaggeredField, b0: BoundaryData) -> StaggeredField:
    """Overwrite the boundary slabs with b0; the interior is untouched."""
    b0.check_mass()
    out = u.copy()
    out.m[0] = b0.flux_x0
    out.m[-1] = b0.flux_x1
    out.rho[:, :, 0] = b0.rho_initial
    out.rho[:, :, -1] = b0.rho_terminal
    if out.n is not None:
        out.n[:, 0] = b0.flux_y0
        out.n[:, -1] = b0.flux_y1
    return out


def estimate_operator_norm(g: GridSpec, iters: int = 60, seed: int = 0) -> float:
    """Power-iteration estimate of the interpolation operator norm.

    Applies I* o I repeatedly to a seeded random staggered field and returns
    the square root of the dominant eigenvalue estimate.  The estimate is
    nondecreasing in the iteration count and never exceeds 1 (midpoint
    averaging is non-expansive).
    """
    if iters < 10:
        raise ConfigurationError("iters must be >= 10")
    rng = np.random.default_rng(seed)
    u = StaggeredField.zeros(g)
    u.m[...] = rng.standard_normal(u.m.shape)
    u.rho[...] = rng.standard_normal(u.rho.shape)
    if u.n is not None:
        u.n[...] = rng.standard_normal(u.n.shape)
    lam = 0.0
    for _ in range(iters):
        w = interpolate_adjoint(interpolate(u, g), g)
        nrm = w.norm()
        if nrm == 0.0:
            return 0.0
        lam = u.dot(w) / u.dot(u)
        u = (1.0 / nrm) * w
    return float(np.sqrt(lam))
