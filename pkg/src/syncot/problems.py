"""Problem construction: marginals, couplings, and the named figure presets."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse

from .discrete_ot import GroundCost
from .errors import ConfigurationError, InputError
from .grid import BoundaryData, GridSpec
from .metric import MapSpec, MetricField, build_metric_field, eval_map
from .solver import SolverConfig

PRESET_IDS = (
    "fig2_1d_quadratic",
    "fig3a_bump",
    "fig3b_sine",
    "fig4a_bump_kantorovich",
    "fig4b_cos_radial",
    "fig5a_magma_bump",
    "fig5b_cividis_waves",
)


def truncated_gaussian(x0, y0, sigma, g: GridSpec) -> np.ndarray:
    """Gaussian density truncated to the unit domain, cell masses summing to 1."""
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    pts = g.cell_centers()
    r2 = (pts[:, 0] - x0) ** 2
    if g.d_spatial == 2:
        r2 = r2 + (pts[:, 1] - y0) ** 2
    p = np.exp(-r2 / (2.0 * sigma ** 2)).reshape(g.M, g.N)
    return p / (p.sum() * g.cell_area)


@dataclass(frozen=True)
class MarginalSpec:
    """A marginal recipe, resolved on a grid to a normalized density array."""

    kind: str                      # truncated_gaussian | from_file
    center: tuple[float, float] = (0.5, 0.5)
    sigma: float = 0.1
    path: str | None = None

    def resolve(self, g: GridSpec) -> np.ndarray:
        if self.kind == "truncated_gaussian":
            return truncated_gaussian(self.center[0], self.center[1], self.sigma, g)
        if self.kind == "from_file":
            from .artifact_io import read_field
            arr = read_field(self.path)
            if arr.shape != (g.M, g.N):
                raise ConfigurationError(
                    f"marginal file shape {arr.shape} does not match grid ({g.M}, {g.N})")
            if arr.min() < 0:
                raise InputError("marginal file contains negative densities")
            return arr / (arr.sum() * g.cell_area)
        raise ConfigurationError(f"unknown marginal kind {self.kind!r}")


class CouplingOperator:
    """Linear map from primary cell masses to secondary point masses."""

    def __init__(self, representation, secondary_points):
        self.secondary_points = np.atleast_2d(np.asarray(secondary_points, dtype=float))
        self._cost = None
        if isinstance(representation, str):
            if representation != "identity_on_mapped_grid":
                raise ConfigurationError(f"unknown coupling representation {representation!r}")
            self.kind = "identity"
            self.matrix = None
        elif scipy.sparse.issparse(representation):
            self.kind = "sparse"
            self.matrix = representation.tocsr()
        else:
            self.kind = "dense"
            self.matrix = np.asarray(representation, dtype=float)
        if self.matrix is not None:
            if self.matrix.shape[0] != self.n_secondary:
                raise ConfigurationError("coupling rows must match secondary point count")
            vals = self.matrix.data if self.kind == "sparse" else self.matrix
            if np.min(vals) < 0:
                raise ConfigurationError("coupling values must be nonnegative")
            col_sums = np.asarray(self.matrix.sum(axis=0)).ravel()
            if np.max(col_sums) > 1.0 + 1e-12:
                raise ConfigurationError("coupling column sums must not exceed 1")

    @classmethod
    def identity(cls, secondary_points):
        return cls("identity_on_mapped_grid", secondary_points)

    @property
    def n_secondary(self):
        return self.secondary_points.shape[0]

    def apply(self, masses):
        if self.kind == "identity":
            if masses.size != self.n_secondary:
                raise ConfigurationError("identity coupling needs one point per cell")
            return np.asarray(masses, dtype=float)
        return np.asarray(self.matrix @ masses).ravel()

    def apply_transpose(self, vec):
        if self.kind == "identity":
            return np.asarray(vec, dtype=float)
        if self.kind == "sparse":
            return np.asarray(self.matrix.T @ vec).ravel()
        return self.matrix.T @ vec

    def ground_cost(self) -> GroundCost:
        if self._cost is None:
            self._cost = GroundCost(self.secondary_points)
        return self._cost


def coupling_from_map(spec: MapSpec, g: GridSpec) -> CouplingOperator:
    """Map-induced coupling: each cell's mass lands on its image point."""
    points = eval_map(spec, g.cell_centers())
    return CouplingOperator.identity(points)


@dataclass
class Problem:
    """A fully resolved transport problem ready for the solvers."""

    grid: GridSpec
    mu: np.ndarray
    nu: np.ndarray
    alpha: tuple[float, float]
    form: str                              # monge | kantorovich
    map_spec: MapSpec | None = None
    coupling: CouplingOperator | None = None
    preset: str | None = None

    def __post_init__(self):
        a1, a2 = self.alpha
        if abs(a1 + a2 - 1.0) > 1e-12 or a1 < 0 or a2 < 0:
            raise ConfigurationError("alpha must lie on the probability simplex")
        if self.form not in ("monge", "kantorovich"):
            raise ConfigurationError(f"unknown problem form {self.form!r}")
        if self.form == "monge" and self.map_spec is None:
            raise ConfigurationError("monge form needs a map")
        if self.form == "kantorovich" and self.coupling is None and self.map_spec is None:
            raise ConfigurationError("kantorovich form needs a coupling or a map")
        if self.form == "kantorovich" and self.coupling is None:
            self.coupling = coupling_from_map(self.map_spec, self.grid)
        self.check_compatibility()

    def boundary_data(self) -> BoundaryData:
        return BoundaryData.zero_flux(self.mu, self.nu, self.grid)

    def metric(self) -> MetricField:
        if self.form == "monge":
            return build_metric_field(self.map_spec, self.alpha, self.grid)
        # kantorovich: the kinetic term is Euclidean, weighted by alpha[0]
        return MetricField.isotropic(1.0, self.grid, alpha=(1.0, 0.0))

    def check_compatibility(self):
        """Secondary marginals must carry equal total mass."""
        mass_mu = float(self.mu.sum()) * self.grid.cell_area
        mass_nu = float(self.nu.sum()) * self.grid.cell_area
        if self.coupling is not None:
            mass_mu = float(self.coupling.apply(self.mu.ravel() * self.grid.cell_area).sum())
            mass_nu = float(self.coupling.apply(self.nu.ravel() * self.grid.cell_area).sum())
        if abs(mass_mu - mass_nu) > 1e-12 * max(mass_mu, mass_nu, 1.0):
            raise InputError("secondary marginals carry different total mass")


def _preset_recipe(preset_id):
    """Static description of each preset; single source for expansion."""
    gauss = lambda c, s: {"kind": "truncated_gaussian", "center": c, "sigma": s}
    recipes = {
        "fig2_1d_quadratic": dict(
            grid=(64, 1, 32), alpha=(0.1, 0.9), form="monge",
            map=dict(variant="quadratic"),
            mu=gauss((0.2, 0.5), 0.05), nu=gauss((0.8, 0.5), 0.05),
            solver=dict(algorithm="chambolle_pock", max_iters=6000)),
        "fig3a_bump": dict(
            grid=(32, 32, 16), alpha=(0.05, 0.95), form="monge",
            map=dict(variant="surface_gaussian_bump", sigma=0.15),
            mu=gauss((0.3, 0.3), 0.1), nu=gauss((0.7, 0.7), 0.1),
            solver=dict(algorithm="chambolle_pock", max_iters=6000)),
        "fig3b_sine": dict(
            grid=(32, 32, 16), alpha=(0.05, 0.95), form="monge",
            map=dict(variant="surface_sine"),
            mu=gauss((0.3, 0.3), 0.1), nu=gauss((0.7, 0.7), 0.1),
            solver=dict(algorithm="chambolle_pock", max_iters=6000)),
        "fig4a_bump_kantorovich": dict(
            grid=(32, 32, 16), alpha=(0.05, 0.95), form="kantorovich",
            map=dict(variant="surface_gaussian_bump", sigma=0.15),
            mu=gauss((0.3, 0.3), 0.1), nu=gauss((0.7, 0.7), 0.1),
            solver=dict(algorithm="yan", max_iters=1200)),
        "fig4b_cos_radial": dict(
            grid=(32, 32, 16), alpha=(0.05, 0.95), form="kantorovich",
            map=dict(variant="surface_cos_radial"),
            mu=gauss((0.25, 0.8), 0.08), nu=gauss((0.8, 0.25), 0.08),
            solver=dict(algorithm="yan", max_iters=1200)),
        "fig5a_magma_bump": dict(
            grid=(32, 32, 16), alpha=(0.05, 0.95), form="kantorovich",
            map=dict(variant="colormap", colormap="magma", scalar_field="gauss_peak"),
            mu=gauss((0.25, 0.25), 0.08), nu=gauss((0.75, 0.75), 0.08),
            solver=dict(algorithm="yan", max_iters=1200)),
        "fig5b_cividis_waves": dict(
            grid=(32, 32, 16), alpha=(0.05, 0.95), form="kantorovich",
            map=dict(variant="colormap", colormap="cividis", scalar_field="sine_mix"),
            mu=gauss((0.15, 0.5), 0.07), nu=gauss((0.85, 0.5), 0.07),
            solver=dict(algorithm="yan", max_iters=1200)),
    }
    if preset_id not in recipes:
        raise ConfigurationError(f"unknown preset {preset_id!r}")
    return recipes[preset_id]


def _map_from_dict(d, d_spatial):
    variant = d["variant"]
    if variant in ("identity", "quadratic", "sigmoid"):
        return MapSpec(variant, d_spatial, d_in=d_spatial)
    if variant == "surface_gaussian_bump":
        return MapSpec.gaussian_bump(d.get("sigma", 0.15))
    if variant == "surface_sine":
        return MapSpec.sine_surface()
    if variant == "surface_cos_radial":
        return MapSpec.cos_radial_surface()
    if variant == "colormap":
        return MapSpec.color_space(d["colormap"], d["scalar_field"],
                                   d.get("fd_step", 1.0 / 512))
    if variant == "tabulated":
        from .artifact_io import read_field
        values = read_field(d["path"])
        return MapSpec.tabulated(values, d_in=d_spatial, fd_step=d.get("fd_step", 1.0 / 512))
    raise ConfigurationError(f"unknown map variant {variant!r}")


def load_preset(preset_id, grid=None, alpha=None):
    """Expand a preset to a (Problem, SolverConfig) pair, deterministically."""
    rec = _preset_recipe(preset_id)
    M, N, Q = grid if grid is not None else rec["grid"]
    gspec = GridSpec.regular(M, Q, N=N)
    a = tuple(alpha) if alpha is not None else rec["alpha"]
    mu = MarginalSpec(**rec["mu"])
    nu = MarginalSpec(**rec["nu"])
    map_spec = _map_from_dict(rec["map"], gspec.d_spatial)
    problem = Problem(
        grid=gspec,
        mu=mu.resolve(gspec),
        nu=nu.resolve(gspec),
        alpha=a,
        form=rec["form"],
        map_spec=map_spec,
        preset=preset_id,
    )
    cfg = SolverConfig(**rec["solver"])
    return problem, cfg
