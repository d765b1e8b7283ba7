"""Matrix Dyson equation solver and spectral density extraction.

The solution M(z) of

    -1/M(z) = z I - K0 + Gamma[M(z)],   Im z > 0,

is the unique n x n matrix with positive definite imaginary part. The
solver is a damped fixed-point iteration started from i*I, accelerated by
Newton steps on the n^2 x n^2 linearization once the iterate is close;
every Newton step is accepted only if it keeps Im M positive definite and
reduces the residual, otherwise the point falls back to fixed-point
updates. The self-consistent density of states is recovered on the real
axis by descending a geometric ladder in eta = Im z with warm starts and
Richardson extrapolation from the last two levels.
"""

from dataclasses import dataclass, field

import numpy as np

from .core_algebra import gamma_superop, hs_norm, normalized_trace, vec
from .ensemble import validate
from .errors import DomainError, InputError, NumericalError

__all__ = [
    "MdePoint",
    "BoundaryPoint",
    "DosCurve",
    "solve_mde_at",
    "solution_at",
    "continue_to_real_axis",
    "density_of_states",
    "bulk_point",
    "mde_derivative",
    "support_radius",
]


@dataclass(frozen=True)
class MdePoint:
    """MDE solution at one spectral parameter."""

    z: complex
    M: np.ndarray
    residual: float
    iterations: int


@dataclass(frozen=True)
class BoundaryPoint:
    """Real-axis limit at x, obtained by eta-continuation.

    M is the Richardson extrapolation from the two smallest eta levels,
    M_floor the raw solution at eta_floor. error_indicator is the HS
    distance between the last two ladder values; it is a heuristic, not a
    certified bound, and flagged marks points where it exceeds the
    divergence threshold (typical near spectral edges).
    """

    x: float
    M: np.ndarray
    M_floor: np.ndarray
    eta_floor: float
    error_indicator: float
    flagged: bool
    rho: float


@dataclass(frozen=True)
class DosCurve:
    """Self-consistent density sampled on a real grid.

    rho[i] = <Im M(x[i] + i*0)> / pi with the same extrapolation as
    continue_to_real_axis; residual[i] is the solver residual of the raw
    floor-level solve and eta_used[i] the floor eta. mass is the trapezoid
    integral of rho over the grid.
    """

    x: np.ndarray
    rho: np.ndarray
    residual: np.ndarray
    eta_used: np.ndarray
    flagged: np.ndarray
    mass: float
    meta: dict = field(default_factory=dict)

    def bulk_energies(self, threshold=1e-3):
        """Grid points where the density clears the bulk threshold."""
        return self.x[self.rho >= threshold]


def support_radius(ens):
    """Heuristic grid half-width 2 + ||K0|| + 2 sum ||L_a|| (spectral norms).

    Generous for the shipped ensembles; the mass check in
    density_of_states catches cases where it underestimates the support.
    """
    r = 2.0 + (np.linalg.norm(ens.K0, 2) if ens.n else 0.0)
    for La in ens.L:
        r += 2.0 * np.linalg.norm(La, 2)
    return float(r)


def _gamma_batch(ens, M):
    # M has shape (P, n, n); matmul broadcasts the (n, n) factors
    out = np.zeros_like(M)
    for La in ens.L:
        Ls = La.conj().T
        out += La @ M @ Ls + Ls @ M @ La
    return out


def _fp_map(ens, zs, M, eye):
    A = zs[:, None, None] * eye - ens.K0 + _gamma_batch(ens, M)
    return -np.linalg.inv(A)


def _res_batch(M, F):
    n = M.shape[-1]
    return np.linalg.norm((M - F).reshape(M.shape[0], -1), axis=1) / np.sqrt(n)


def _min_imag_eig(M):
    H = (M - np.swapaxes(M, -1, -2).conj()) / 2j
    return np.linalg.eigvalsh(H)[:, 0]


def _solve_batch(ens, zs, M0=None, tol=1e-11, max_iter=10000, newton=True,
                 gamma_mat=None):
    """Solve the MDE at a batch of upper half-plane points.

    Returns (M, residuals, iterations). Raises NumericalError if any point
    fails to reach tol within max_iter sweeps or loses positivity.
    """
    zs = np.asarray(zs, dtype=complex).reshape(-1)
    if np.any(zs.imag <= 0):
        raise DomainError("solver requires Im z > 0 for every point")
    n = ens.n
    P = zs.size
    eye = np.eye(n, dtype=complex)
    M = np.broadcast_to(1j * eye, (P, n, n)).copy() if M0 is None else np.array(M0, dtype=complex)
    if M.shape != (P, n, n):
        raise DomainError(f"warm start has shape {M.shape}, expected {(P, n, n)}")
    if gamma_mat is None and newton:
        gamma_mat = gamma_superop(ens).matrix

    lam = np.ones(P)
    F = _fp_map(ens, zs, M, eye)
    res = _res_batch(M, F)
    iters = 0
    n2 = n * n
    eye2 = np.eye(n2, dtype=complex)

    while iters < max_iter and np.any(res > tol):
        iters += 1
        active = np.flatnonzero(res > tol)
        handled = np.zeros(active.size, dtype=bool)
        if newton:
            # Newton step on the linearization, accepted per point only if
            # it strictly reduces the residual and keeps Im M positive
            T = F[active]
            S = eye2 - np.einsum("pac,pdb->pabcd", T, T).reshape(-1, n2, n2) @ gamma_mat
            try:
                delta = np.linalg.solve(S, (T - M[active]).reshape(-1, n2, 1))
                cand = M[active] + delta.reshape(-1, n, n)
                ok = np.isfinite(cand.reshape(active.size, -1)).all(axis=1)
            except np.linalg.LinAlgError:
                ok = np.zeros(active.size, dtype=bool)
            if ok.any():
                ia = active[ok]
                Fc = _fp_map(ens, zs[ia], cand[ok], eye)
                res_c = _res_batch(cand[ok], Fc)
                res_c[~np.isfinite(res_c)] = np.inf
                good = (res_c < res[ia]) & (_min_imag_eig(cand[ok]) > 0)
                if good.any():
                    idx = ia[good]
                    M[idx] = cand[ok][good]
                    F[idx] = Fc[good]
                    res[idx] = res_c[good]
                    handled[np.flatnonzero(ok)[good]] = True
        rest = active[~handled]
        if rest.size:
            lr = lam[rest, None, None]
            Mc = (1 - lr) * M[rest] + lr * F[rest]
            Fc = _fp_map(ens, zs[rest], Mc, eye)
            res_c = _res_batch(Mc, Fc)
            worse = res_c > res[rest]
            lam[rest[worse]] = np.maximum(lam[rest[worse]] / 2, 1.0 / 64)
            lam[rest[~worse]] = np.minimum(lam[rest[~worse]] * 1.25, 1.0)
            M[rest] = Mc
            F[rest] = Fc
            res[rest] = res_c

    if np.any(res > tol):
        worst = int(np.argmax(res))
        raise NumericalError(
            f"MDE iteration did not reach tol={tol:g} within {max_iter} sweeps "
            f"(worst residual {res[worst]:.3e} at z={zs[worst]:.6g})",
            residual=float(res[worst]), z=complex(zs[worst]))
    bad = _min_imag_eig(M) <= 0
    if np.any(bad):
        worst = int(np.flatnonzero(bad)[0])
        raise NumericalError(
            f"solution lost positivity at z={zs[worst]:.6g}",
            z=complex(zs[worst]))
    return M, res, iters


def solve_mde_at(ens, z, tol=1e-11, max_iter=10000, newton=True):
    """Solve the MDE at a single point with Im z > 0.

    Returns an MdePoint whose residual ||M + (zI - K0 + Gamma[M])^{-1}||_HS
    is at most tol. Raises DomainError for Im z <= 0 and NumericalError on
    non-convergence or loss of positivity.
    """
    validate(ens)
    z = complex(z)
    if z.imag <= 0:
        raise DomainError(f"solve_mde_at requires Im z > 0, got z={z}")
    M, res, iters = _solve_batch(ens, [z], tol=tol, max_iter=max_iter, newton=newton)
    return MdePoint(z=z, M=M[0], residual=float(res[0]), iterations=iters)


def solution_at(ens, z, **kw):
    """MDE solution extended to both half-planes by M(conj z) = M(z)*.

    Real z is rejected; use continue_to_real_axis for boundary values.
    """
    z = complex(z)
    if z.imag > 0:
        return solve_mde_at(ens, z, **kw).M
    if z.imag < 0:
        return solve_mde_at(ens, z.conjugate(), **kw).M.conj().T
    raise DomainError("z must have nonzero imaginary part; use continue_to_real_axis")


def _eta_ladder(eta_start, eta_floor, per_decade=2):
    decades = np.log10(eta_start / eta_floor)
    steps = max(int(round(per_decade * decades)), 1)
    return np.geomspace(eta_start, eta_floor, steps + 1)


def _continue_batch(ens, xs, eta_start, eta_floor, per_decade, tol, max_iter):
    """Ladder descent for a batch of real energies.

    Returns (M_extrapolated, M_floor, floor_residuals, indicator).
    """
    ladder = _eta_ladder(eta_start, eta_floor, per_decade)
    xs = np.asarray(xs, dtype=float).reshape(-1)
    gamma_mat = gamma_superop(ens).matrix
    M = None
    M_prev_level = None
    res = None
    for eta in ladder:
        M_prev_level = M.copy() if M is not None else None
        M, res, _ = _solve_batch(ens, xs + 1j * eta, M0=M, tol=tol,
                                 max_iter=max_iter, gamma_mat=gamma_mat)
    eta_l, eta_p = ladder[-1], ladder[-2]
    # Richardson in eta assuming a regular expansion at the boundary point
    MR = M + (M - M_prev_level) * (eta_l / (eta_p - eta_l))
    diff = M - M_prev_level
    n = ens.n
    indicator = np.linalg.norm(diff.reshape(len(xs), -1), axis=1) / np.sqrt(n)
    return MR, M, res, indicator


def continue_to_real_axis(ens, x, eta_start=1e-1, eta_floor=1e-6, per_decade=2,
                          tol=1e-11, max_iter=10000, flag_threshold=5e-4):
    """Boundary value M(x + i0) by geometric eta descent with warm starts.

    The returned point carries a Richardson extrapolation from the two
    smallest levels, the raw floor solution, the last-step HS increment as
    an (uncertified) error indicator, and a flag raised when that
    increment exceeds flag_threshold, which happens near spectral edges
    where the boundary value is not smooth in eta.
    """
    validate(ens)
    x = float(x)
    MR, Mf, res, ind = _continue_batch(ens, [x], eta_start, eta_floor, per_decade,
                                       tol, max_iter)
    rho = max(float(normalized_trace(MR[0]).imag) / np.pi, 0.0)
    return BoundaryPoint(x=x, M=MR[0], M_floor=Mf[0], eta_floor=float(eta_floor),
                         error_indicator=float(ind[0]), flagged=bool(ind[0] > flag_threshold),
                         rho=rho)


def _refinement_points(x, rho, threshold):
    """Geometric point stacks inside cells where rho crosses threshold."""
    extra = []
    crossing = (rho[:-1] >= threshold) != (rho[1:] >= threshold)
    for i in np.flatnonzero(crossing):
        a, b = x[i], x[i + 1]
        h = b - a
        for j in range(1, 15):
            off = h * 0.5 ** j
            extra.extend((a + off, b - off))
    return np.array(sorted(set(extra)))


def density_of_states(ens, grid=None, points=2000, eta_start=1e-1, eta_floor=1e-6,
                      per_decade=2, tol=1e-11, max_iter=10000, mass_tol=1e-2,
                      refine_edges=True, flag_threshold=5e-4):
    """Self-consistent density of states on a real grid.

    The default grid is uniform over [-R, R] with R = support_radius(ens).
    All grid points descend the eta ladder together (vectorized solves,
    warm starts between levels). With refine_edges, cells where the
    density crosses a small threshold receive geometrically spaced extra
    points so the trapezoid mass is accurate despite square-root edges.

    Raises NumericalError when the integrated mass deviates from 1 by more
    than mass_tol (coarse grid, or support outside the heuristic radius).
    """
    validate(ens)
    if grid is None:
        if int(points) < 2:
            raise InputError(f"points must be >= 2, got {points}")
        R = support_radius(ens)
        grid = np.linspace(-R, R, int(points))
    x = np.asarray(grid, dtype=float).reshape(-1)
    if x.size < 2 or np.any(np.diff(x) <= 0):
        raise DomainError("grid must be strictly increasing with at least 2 points")

    MR, Mf, res, ind = _continue_batch(ens, x, eta_start, eta_floor, per_decade,
                                       tol, max_iter)
    rho = np.maximum(np.trace(MR, axis1=1, axis2=2).imag / (ens.n * np.pi), 0.0)

    if refine_edges and ens.d > 0:
        thr = max(float(rho.max()) * 1e-2, 1e-8)
        extra = _refinement_points(x, rho, thr)
        if extra.size:
            MR2, Mf2, res2, ind2 = _continue_batch(ens, extra, eta_start, eta_floor,
                                                   per_decade, tol, max_iter)
            rho2 = np.maximum(np.trace(MR2, axis1=1, axis2=2).imag / (ens.n * np.pi), 0.0)
            x = np.concatenate([x, extra])
            order = np.argsort(x, kind="stable")
            x = x[order]
            rho = np.concatenate([rho, rho2])[order]
            res = np.concatenate([res, res2])[order]
            ind = np.concatenate([ind, ind2])[order]

    mass = float(np.trapezoid(rho, x))
    if abs(mass - 1.0) > mass_tol:
        raise NumericalError(
            f"density mass {mass:.6f} deviates from 1 beyond {mass_tol:g}; "
            "the grid is too coarse or misses part of the support", mass=mass)
    return DosCurve(x=x, rho=rho, residual=res, eta_used=np.full_like(x, eta_floor),
                    flagged=ind > flag_threshold, mass=mass,
                    meta={"eta_start": eta_start, "eta_floor": eta_floor,
                          "per_decade": per_decade, "tol": tol,
                          "refine_edges": bool(refine_edges),
                          "ensemble_hash": ens.hash_hex()})


def bulk_point(ens, E0, threshold=1e-3, **kw):
    """Boundary point at E0, rejected unless the density clears threshold.

    Deterministic two-point formulas and the CLT normalization are only
    meaningful at bulk energies, so callers that need them funnel through
    this guard.
    """
    bp = continue_to_real_axis(ens, E0, **kw)
    if bp.rho < threshold:
        raise DomainError(
            f"E0={E0} is not a bulk energy: rho={bp.rho:.3e} < threshold {threshold:g}")
    return bp


def mde_derivative(ens, z=None, M=None, cond_max=1e12, **solve_kw):
    """M'(z) from the linearized equation (Id - C_M Gamma)[M'] = M^2.

    Either pass the solution M at z, or z alone to solve first. Raises
    NumericalError when the stability operator is ill-conditioned
    (condition number beyond cond_max), which happens at spectral edges.
    """
    validate(ens)
    if M is None:
        if z is None:
            raise DomainError("mde_derivative needs z or a solved M")
        M = solution_at(ens, z, **solve_kw)
    M = np.asarray(M, dtype=complex)
    n = ens.n
    S = np.eye(n * n, dtype=complex) - np.kron(M, M.T) @ gamma_superop(ens).matrix
    cond = float(np.linalg.cond(S))
    if cond > cond_max:
        raise NumericalError(
            f"stability operator condition {cond:.3e} exceeds {cond_max:g}; "
            "the point is too close to a spectral edge", cond=cond)
    return np.linalg.solve(S, vec(M @ M)).reshape(n, n)
