"""Independent dense/brute-force oracles used by the test suite.

Everything here is assembled from first principles (explicit matrices, grid
searches, quadrature) and never calls the operators it is used to check,
except to build matrix representations column by column.
"""

import numpy as np

from syncot.grid import CenteredField, GridSpec, StaggeredField, divergence, interpolate


def staggered_size(g: GridSpec) -> int:
    return sum(int(np.prod(s)) for s in g.staggered_shapes().values())


def centered_size(g: GridSpec) -> int:
    return (3 if g.d_spatial == 2 else 2) * int(np.prod(g.centered_shape()))


def random_staggered(g: GridSpec, rng) -> StaggeredField:
    return StaggeredField.from_ravel(rng.standard_normal(staggered_size(g)), g)


def random_centered(g: GridSpec, rng) -> CenteredField:
    return CenteredField.from_ravel(rng.standard_normal(centered_size(g)), g)


def dense_interpolation_matrix(g: GridSpec) -> np.ndarray:
    """Matrix of the interpolation operator, built by probing basis vectors."""
    ns, nc = staggered_size(g), centered_size(g)
    mat = np.zeros((nc, ns))
    for j in range(ns):
        e = np.zeros(ns)
        e[j] = 1.0
        mat[:, j] = interpolate(StaggeredField.from_ravel(e, g), g).ravel()
    return mat


def dense_divergence_matrix(g: GridSpec) -> np.ndarray:
    ns = staggered_size(g)
    ncells = int(np.prod(g.centered_shape()))
    mat = np.zeros((ncells, ns))
    for j in range(ns):
        e = np.zeros(ns)
        e[j] = 1.0
        mat[:, j] = divergence(StaggeredField.from_ravel(e, g), g).ravel()
    return mat


def dense_boundary_matrix(g: GridSpec) -> np.ndarray:
    """Rows select the boundary slabs of the raveled staggered vector."""
    ns = staggered_size(g)
    rows = []
    for j in range(ns):
        e = np.zeros(ns)
        e[j] = 1.0
        u = StaggeredField.from_ravel(e, g)
        picks = [u.m[0].ravel(), u.m[-1].ravel()]
        if u.n is not None:
            picks += [u.n[:, 0].ravel(), u.n[:, -1].ravel()]
        picks += [u.rho[:, :, 0].ravel(), u.rho[:, :, -1].ravel()]
        rows.append(np.concatenate(picks))
    return np.array(rows).T


def boundary_target_vector(b0, g: GridSpec) -> np.ndarray:
    picks = [b0.flux_x0.ravel(), b0.flux_x1.ravel()]
    if g.d_spatial == 2:
        picks += [b0.flux_y0.ravel(), b0.flux_y1.ravel()]
    picks += [b0.rho_initial.ravel(), b0.rho_terminal.ravel()]
    return np.concatenate(picks)


def dense_constraint_projection(u: StaggeredField, b0, g: GridSpec) -> StaggeredField:
    """KKT projection onto {div = 0, boundary = b0} via a dense least-squares solve.

    Solves U - A^T (A A^T)^+ (A U - y) with the full constraint matrix
    A = [div; boundary]; the pseudo-inverse absorbs the single rank
    deficiency caused by mass compatibility.
    """
    A = np.vstack([dense_divergence_matrix(g), dense_boundary_matrix(g)])
    y = np.concatenate([np.zeros(int(np.prod(g.centered_shape()))), boundary_target_vector(b0, g)])
    x = u.ravel()
    resid = A @ x - y
    lam = np.linalg.pinv(A @ A.T, rcond=1e-12) @ resid
    x_proj = x - A.T @ lam
    return StaggeredField.from_ravel(x_proj, g)


def dense_neumann_solve(rhs: np.ndarray, g: GridSpec) -> np.ndarray:
    """Direct solve of the Neumann Poisson system with the mean pinned.

    Builds the 3-point stencil Laplacian along each axis with homogeneous
    Neumann closure and solves -(Dx^2+Dy^2+Dt^2) s = rhs - mean(rhs) with a
    mean-zero constraint via least squares.
    """
    def lap1d(n, h):
        L = np.zeros((n, n))
        for i in range(n):
            if i > 0:
                L[i, i - 1] += 1.0
                L[i, i] -= 1.0
            if i < n - 1:
                L[i, i + 1] += 1.0
                L[i, i] -= 1.0
        return L / h ** 2

    M, N, Q = g.M, g.N, g.Q
    Lx, Ly, Lt = lap1d(M, g.dx), lap1d(N, g.dy), lap1d(Q, g.dt)
    Ix, Iy, It = np.eye(M), np.eye(N), np.eye(Q)
    L = (np.kron(np.kron(Lx, Iy), It)
         + np.kron(np.kron(Ix, Ly), It)
         + np.kron(np.kron(Ix, Iy), Lt))
    b = (rhs - rhs.mean()).ravel()
    n_tot = M * N * Q
    # append the mean-zero row to pin the nullspace
    A = np.vstack([-L, np.ones((1, n_tot))])
    bb = np.concatenate([b, [0.0]])
    s, *_ = np.linalg.lstsq(A, bb, rcond=None)
    return s.reshape(M, N, Q)


def brute_force_prox_cell(m, rho, a_mat, tau, span=4.0, n_coarse=121, refinements=40):
    """Grid search + coordinate refinement for the per-cell prox problem.

    Minimizes J(m~, rho~) + (1/2 tau) ||(m, rho) - (m~, rho~)||^2 where
    J = m~^T A m~ / rho~ for rho~ > 0, 0 at the origin, +inf otherwise.
    Returns (m_star, rho_star, objective).
    """
    m = np.atleast_1d(np.asarray(m, dtype=float))
    a_mat = np.atleast_2d(np.asarray(a_mat, dtype=float))
    d = m.size

    def objective(rho_t):
        # optimal m~ for fixed rho~ > 0 solves (2 tau A + rho~ I) m~ = rho~ m
        if rho_t <= 0.0:
            return 0.5 / tau * (m @ m + rho ** 2), np.zeros(d)
        mt = np.linalg.solve(2.0 * tau * a_mat + rho_t * np.eye(d), rho_t * m)
        J = mt @ a_mat @ mt / rho_t
        pen = (np.sum((m - mt) ** 2) + (rho - rho_t) ** 2) / (2.0 * tau)
        return J + pen, mt

    hi = max(abs(rho) * span, span * (1.0 + np.linalg.norm(m)))
    grid = np.linspace(0.0, hi, n_coarse)
    vals = [objective(r)[0] for r in grid]
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, n_coarse - 1)]
    for _ in range(refinements):
        grid = np.linspace(lo, hi, 13)
        vals = [objective(r)[0] for r in grid]
        k = int(np.argmin(vals))
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, 12)]
    rho_star = 0.5 * (lo + hi)
    best, m_star = objective(rho_star)
    zero_val = 0.5 / tau * (m @ m + rho ** 2)
    if zero_val < best:
        return np.zeros(d), 0.0, zero_val
    return m_star, rho_star, best


def w2sq_1d_quantile(weights_a, xs_a, weights_b, xs_b, n_quad=200001):
    """Exact-in-the-limit 1D W2^2 between discrete measures via quantiles."""
    wa = np.asarray(weights_a, dtype=float)
    wb = np.asarray(weights_b, dtype=float)
    wa = wa / wa.sum()
    wb = wb / wb.sum()
    qa = np.concatenate([[0.0], np.cumsum(wa)])
    qb = np.concatenate([[0.0], np.cumsum(wb)])
    qs = (np.arange(n_quad) + 0.5) / n_quad
    ia = np.searchsorted(qa, qs, side="right") - 1
    ib = np.searchsorted(qb, qs, side="right") - 1
    ia = np.clip(ia, 0, len(xs_a) - 1)
    ib = np.clip(ib, 0, len(xs_b) - 1)
    return float(np.mean((np.asarray(xs_a)[ia] - np.asarray(xs_b)[ib]) ** 2))
