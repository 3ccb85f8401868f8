"""Proximal operators of the discretized transport problem.

Two building blocks: the prox of the per-cell kinetic cost, reduced to a
scalar root in the density via the metric eigenbasis, and the projection
onto the continuity-equation constraint set, computed with one fast-cosine
Neumann Poisson solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import ConfigurationError, NumericalError
from .grid import CenteredField, GridSpec, StaggeredField, divergence, impose_boundary
from .metric import MetricField


@dataclass(frozen=True)
class ProxParams:
    """Step size and root-find controls for the kinetic prox."""

    tau: float
    fp_tol: float = 1e-11
    fp_max_iters: int = 200

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigurationError("tau must be positive")
        if self.fp_tol <= 0:
            raise ConfigurationError("fp_tol must be positive")
        if self.fp_max_iters < 10:
            raise ConfigurationError("fp_max_iters must be >= 10")


def _prox_root(w, rho, lam, tau, fp_tol, fp_max_iters):
    """Solve psi(r) = r - phi(r) = 0 per cell, vectorized.

    w are the eigen-coordinates of the momentum, lam the metric eigenvalues
    (both with a trailing component axis).  phi is strictly decreasing and
    convex, so Newton from the subsolution max(rho, 0) increases monotonically
    to the unique positive root and never leaves the bracket [0, phi(0)].
    Cells with phi(0) <= 0 map to the origin.  Converged cells drop out of
    the Newton loop.
    """
    shape = rho.shape
    d = w.shape[-1]
    w2 = np.ascontiguousarray(w * w).reshape(-1, d)
    lam_f = np.broadcast_to(lam, w.shape).reshape(-1, d)
    rho_f = np.asarray(rho, dtype=float).ravel()
    b = 2.0 * tau * lam_f
    c = lam_f * w2
    phi0 = rho_f + np.sum(w2 / (4.0 * tau * lam_f), axis=-1)
    r_full = np.zeros_like(rho_f)
    active = np.flatnonzero(phi0 > 0.0)
    r = np.where(rho_f[active] > 0.0, rho_f[active], 0.0)
    b_a, c_a, rho_a = b[active], c[active], rho_f[active]
    for _ in range(fp_max_iters):
        if active.size == 0:
            break
        den = b_a + r[:, None]
        phi = rho_a + tau * np.sum(c_a / den ** 2, axis=-1)
        psi = r - phi
        done = np.abs(psi) <= fp_tol
        if done.any():
            r_full[active[done]] = r[done]
            keep = ~done
            active = active[keep]
            r, psi = r[keep], psi[keep]
            b_a, c_a, rho_a, den = b_a[keep], c_a[keep], rho_a[keep], den[keep]
            if active.size == 0:
                break
        dpsi = 1.0 + 2.0 * tau * np.sum(c_a / den ** 3, axis=-1)
        r = np.maximum(r - psi / dpsi, 0.0)
    if active.size:
        den = b_a + r[:, None]
        psi = r - (rho_a + tau * np.sum(c_a / den ** 2, axis=-1))
        bad = np.abs(psi) > fp_tol
        if bad.any():
            raise NumericalError(
                f"prox root find stalled, residual {float(np.max(np.abs(psi[bad]))):.3e}")
        r_full[active] = r
    rho_star = r_full.reshape(shape)
    scale = np.zeros_like(w2)
    pos = r_full > 0.0
    scale[pos] = r_full[pos, None] / (2.0 * tau * lam_f[pos] + r_full[pos, None])
    return rho_star, scale.reshape(w.shape)


def prox_J_cell(m, rho, a, p: ProxParams):
    """Prox of the kinetic cost at one cell with metric a (SPD d x d)."""
    m = np.atleast_1d(np.asarray(m, dtype=float))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12):
        raise ConfigurationError("metric matrix must be symmetric")
    lam, vec = np.linalg.eigh(a)
    if lam.min() <= 0:
        raise ConfigurationError("metric matrix must be positive definite")
    w = vec.T @ m
    rho_star, scale = _prox_root(w[None, :], np.array([float(rho)]), lam[None, :],
                                 p.tau, p.fp_tol, p.fp_max_iters)
    m_star = vec @ (scale[0] * w)
    return m_star, float(rho_star[0])


def prox_J(v: CenteredField, a: MetricField, p: ProxParams) -> CenteredField:
    """Cell-wise kinetic prox over a centered field with the field's metric."""
    v.validate(a.grid)
    lam = a.eigvals[:, :, None, :]            # broadcast over time
    if a.d == 1:
        w = v.m[..., None]
        rho_star, scale = _prox_root(w, v.rho, lam, p.tau, p.fp_tol, p.fp_max_iters)
        return CenteredField((scale * w)[..., 0], rho_star, None)
    mv = np.stack([v.m, v.n], axis=-1)
    if a.iso is not None:
        # isotropic metric: any orthonormal basis is an eigenbasis
        rho_star, scale = _prox_root(mv, v.rho, np.full((1, 1, 1, 2), a.iso),
                                     p.tau, p.fp_tol, p.fp_max_iters)
        return CenteredField(scale[..., 0] * v.m, rho_star, scale[..., 1] * v.n)
    vec = a.eigvecs[:, :, None, :, :]
    w = np.sum(vec * mv[..., :, None], axis=-2)
    rho_star, scale = _prox_root(w, v.rho, lam, p.tau, p.fp_tol, p.fp_max_iters)
    mv_star = np.sum(vec * (scale * w)[..., None, :], axis=-1)
    return CenteredField(mv_star[..., 0], rho_star, mv_star[..., 1])


def prox_J_conj(v: CenteredField, a: MetricField, tau: float,
                fp_tol: float = 1e-11, fp_max_iters: int = 200) -> CenteredField:
    """Prox of the conjugate cost via the Moreau identity."""
    if tau <= 0:
        raise ConfigurationError("tau must be positive")
    inner = prox_J((1.0 / tau) * v, a, ProxParams(1.0 / tau, fp_tol, fp_max_iters))
    return v - tau * inner


class PoissonWorkspace:
    """Eigenvalues and transform plans for the Neumann Poisson solve.

    The 3-point Neumann stencil on cell-centered samples is diagonalized by
    the type-II cosine transform; lambda_{000} = 0 is the only zero mode and
    is pinned to produce the mean-zero solution.
    """

    def __init__(self, g: GridSpec):
        self.grid = g
        lx = (2.0 - 2.0 * np.cos(np.pi * np.arange(g.M) / g.M)) / g.dx ** 2
        ly = (2.0 - 2.0 * np.cos(np.pi * np.arange(g.N) / g.N)) / g.dy ** 2
        lt = (2.0 - 2.0 * np.cos(np.pi * np.arange(g.Q) / g.Q)) / g.dt ** 2
        self.eigenvalues = lx[:, None, None] + ly[None, :, None] + lt[None, None, :]
        inv = np.zeros_like(self.eigenvalues)
        nz = self.eigenvalues > 0
        inv[nz] = 1.0 / self.eigenvalues[nz]
        self._inv = inv


def neumann_poisson_solve(rhs: np.ndarray, w: PoissonWorkspace) -> np.ndarray:
    """Solve -(Dx^2+Dy^2+Dt^2) s = rhs - mean(rhs) with Neumann closure.

    The zero frequency is dropped, which both removes any mean in the data
    and selects the mean-zero solution.
    """
    g = w.grid
    if rhs.shape != g.centered_shape():
        raise ConfigurationError(f"rhs shape {rhs.shape} does not match grid")
    coef = scipy.fft.dctn(rhs, type=2, norm="ortho")
    coef *= w._inv
    return scipy.fft.idctn(coef, type=2, norm="ortho")


def project_constraints(u: StaggeredField, b0, w: PoissonWorkspace,
                        g: GridSpec) -> StaggeredField:
    """Orthogonal projection onto {div = 0, boundary = b0}.

    Imposes the boundary slabs first, then corrects the interior faces with
    the gradient of one Neumann Poisson solve; the correction lives in the
    orthogonal complement of the boundary coordinates, so the two steps
    compose to the exact projection.
    """
    out = impose_boundary(u, b0)
    s = neumann_poisson_solve(divergence(out, g), w)
    out.m[1:-1] += (s[1:] - s[:-1]) / g.dx
    out.rho[:, :, 1:-1] += (s[:, :, 1:] - s[:, :, :-1]) / g.dt
    if out.n is not None:
        out.n[:, 1:-1] += (s[:, 1:] - s[:, :-1]) / g.dy
    return out
