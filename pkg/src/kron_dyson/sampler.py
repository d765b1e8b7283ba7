"""Monte Carlo sampling of Kronecker ensembles and resolvent statistics.

Every sample is drawn from its own RNG substream keyed by (master seed,
sample index), so batch results are bit-identical for any worker count or
scheduling order. beta=1 draws return real symmetric matrices so the
eigensolvers run in real arithmetic.
"""

from dataclasses import dataclass, field

import numpy as np

from ._util import parallel_map, resolve_threads
from .core_algebra import gamma_apply, hs_norm, partial_trace
from .ensemble import validate
from .errors import DomainError
from . import mde, stability

__all__ = [
    "substream_rng",
    "draw_matrix",
    "resolvent",
    "directional_derivative_check",
    "LocalLawReport",
    "local_law_report",
    "local_law_sweep",
    "multiresolvent_plain",
    "multiresolvent_tilde",
    "self_consistency_residual",
    "spectral_histogram_distance",
    "TwoPointStudy",
    "two_point_study",
]


def substream_rng(master_seed, sample_index):
    """Generator for one sample, independent of worker count and order."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=(int(master_seed), int(sample_index))))


def _draw_iid(rng, N, beta, law):
    # one X_a factor; variance 1/N overall, beta=2 splits it evenly over
    # independent real and imaginary parts
    if law == "gaussian":
        if beta == 1:
            return rng.standard_normal((N, N)) / np.sqrt(N)
        return (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / np.sqrt(2 * N)
    if law == "rademacher":
        def pm1():
            return rng.integers(0, 2, size=(N, N)).astype(np.float64) * 2 - 1
        if beta == 1:
            return pm1() / np.sqrt(N)
        return (pm1() + 1j * pm1()) / np.sqrt(2 * N)
    if law == "uniform":
        if beta == 1:
            a = np.sqrt(3.0 / N)
            return rng.uniform(-a, a, (N, N))
        b = np.sqrt(3.0 / (2 * N))
        return rng.uniform(-b, b, (N, N)) + 1j * rng.uniform(-b, b, (N, N))
    raise DomainError(f"unknown entry law {law!r}")


def draw_matrix(ens, N, rng):
    """One realization H = K0 (x) I + sum_a (L_a (x) X_a + L_a* (x) X_a*).

    rng is a numpy Generator (see substream_rng). The result is exactly
    Hermitian by construction, real symmetric for beta=1.
    """
    validate(ens)
    N = int(N)
    if N < 2:
        raise DomainError(f"N must be >= 2, got {N}")
    eye = np.eye(N)
    if ens.beta == 1:
        H = np.kron(ens.K0.real, eye)
        for La in ens.L:
            X = _draw_iid(rng, N, 1, ens.entry_law)
            Lr = La.real
            H += np.kron(Lr, X)
            H += np.kron(Lr.T, X.T)
        return H
    H = np.kron(ens.K0, eye).astype(complex)
    for La in ens.L:
        X = _draw_iid(rng, N, 2, ens.entry_law)
        H += np.kron(La, X)
        H += np.kron(La.conj().T, X.conj().T)
    # summation order differs across the diagonal; re-symmetrize the ulps
    return (H + H.conj().T) / 2


def resolvent(H, z):
    """(H - z)^{-1} for Im z != 0."""
    z = complex(z)
    if z.imag == 0:
        raise DomainError("resolvent needs Im z != 0")
    H = np.asarray(H)
    return np.linalg.inv(H - z * np.eye(H.shape[0]))


def directional_derivative_check(H, z, R, h=1e-6):
    """Deviation of the central difference of G from -G R G.

    Returns the operator-norm deviation; callers compare it against
    1e-4 * ||G||^3 ||R||, the natural second-order scale.
    """
    H = np.asarray(H)
    R = np.asarray(R)
    G = resolvent(H, z)
    Gp = resolvent(H + h * R, z)
    Gm = resolvent(H - h * R, z)
    dev = (Gp - Gm) / (2 * h) + G @ R @ G
    return float(np.linalg.norm(dev, 2))


def _block_errors(G, M, n, N):
    # max_ij ||G_ij - delta_ij M||_F and ||(1/N) sum_j G_jj - M||_HS
    G4 = G.reshape(n, N, n, N).copy()
    idx = np.arange(N)
    G4[:, idx, :, idx] -= M
    per_block = np.sqrt(np.einsum("aibj->ij", np.abs(G4) ** 2))
    entry_err = float(per_block.max())
    avg_err = hs_norm(partial_trace(G, n, N) / N - M)
    return entry_err, avg_err


@dataclass(frozen=True)
class LocalLawReport:
    """Entrywise and averaged local-law deviations for one (N, z) batch."""

    N: int
    z: complex
    eta: float
    samples: int
    entry_errs: tuple
    avg_errs: tuple
    entry_median: float
    entry_q90: float
    avg_median: float
    avg_q90: float
    entry_scale: float
    avg_scale: float

    def to_dict(self):
        return {
            "N": self.N, "z": {"re": self.z.real, "im": self.z.imag},
            "eta": self.eta, "samples": self.samples,
            "entry_errs": list(self.entry_errs), "avg_errs": list(self.avg_errs),
            "entry_median": self.entry_median, "entry_q90": self.entry_q90,
            "avg_median": self.avg_median, "avg_q90": self.avg_q90,
            "entry_scale": self.entry_scale, "avg_scale": self.avg_scale,
        }


def local_law_report(ens, N, z, samples, seed=0, threads=None):
    """Per-sample local-law errors against M(z) with batch quantiles.

    entry_scale and avg_scale carry the predicted (N eta)^{-1/2} and
    (N eta)^{-1} magnitudes for downstream regression.
    """
    validate(ens)
    z = complex(z)
    M = mde.solution_at(ens, z)
    n = ens.n
    threads = resolve_threads(threads)

    def one(idx):
        H = draw_matrix(ens, N, substream_rng(seed, idx))
        G = resolvent(H, z)
        return _block_errors(G, M, n, N)

    pairs = parallel_map(one, range(samples), threads)
    entry = tuple(p[0] for p in pairs)
    avg = tuple(p[1] for p in pairs)
    eta = abs(z.imag)
    return LocalLawReport(
        N=int(N), z=z, eta=eta, samples=int(samples),
        entry_errs=entry, avg_errs=avg,
        entry_median=float(np.median(entry)), entry_q90=float(np.quantile(entry, 0.9)),
        avg_median=float(np.median(avg)), avg_q90=float(np.quantile(avg, 0.9)),
        entry_scale=float((N * eta) ** -0.5), avg_scale=float(1.0 / (N * eta)))


def local_law_sweep(ens, N_list, E0, samples, seed=0, eta_rule=None, threads=None):
    """Reports over an N ladder plus log-log slopes vs the predicted laws.

    eta_rule maps N to eta (default N^{-1/2}). Slopes regress log median
    error on log(N * eta); the entrywise law predicts -1/2, the averaged
    law -1. A ladder with fewer than two sizes has no slope (None).
    """
    if eta_rule is None:
        eta_rule = lambda N: N ** -0.5
    reports = []
    for k, N in enumerate(N_list):
        z = E0 + 1j * eta_rule(N)
        reports.append(local_law_report(ens, N, z, samples, seed=seed + k, threads=threads))
    if len(reports) < 2:
        return reports, None, None
    lx = np.log([r.N * r.eta for r in reports])
    entry_slope = float(np.polyfit(lx, np.log([r.entry_median for r in reports]), 1)[0])
    avg_slope = float(np.polyfit(lx, np.log([r.avg_median for r in reports]), 1)[0])
    return reports, entry_slope, avg_slope


def multiresolvent_plain(ens, H, z, zeta, B):
    """G^B = (1/N) sum_kl G_lk(z) B G_kl(zeta), via partial_trace(G (B x I) G)."""
    validate(ens)
    H = np.asarray(H)
    n = ens.n
    N = H.shape[0] // n
    B = np.asarray(B, dtype=complex)
    if B.shape != (n, n):
        raise DomainError(f"B has shape {B.shape}, expected {(n, n)}")
    Gz = resolvent(H, z)
    Gzeta = resolvent(H, zeta)
    mid = np.kron(B, np.eye(N))
    return partial_trace(Gz @ mid @ Gzeta, n, N) / N


def multiresolvent_tilde(ens, H, z, zeta, B):
    """G^B-tilde = (1/N) sum_kl G_lk(z) B G_lk(zeta); beta=1 only.

    Uses the transpose symmetry G_lk(zeta) = G_kl(zeta)^t available for
    real symmetric samples.
    """
    validate(ens)
    if ens.beta != 1:
        raise DomainError("multiresolvent_tilde needs a beta=1 sample")
    H = np.asarray(H)
    n = ens.n
    N = H.shape[0] // n
    B = np.asarray(B, dtype=complex)
    if B.shape != (n, n):
        raise DomainError(f"B has shape {B.shape}, expected {(n, n)}")
    G4z = resolvent(H, z).reshape(n, N, n, N)
    G4zeta = resolvent(H, zeta).reshape(n, N, n, N)
    T1 = np.einsum("cd,dlbk->clbk", B, G4zeta)
    return np.einsum("alck,clbk->ab", G4z, T1) / N


def self_consistency_residual(ens, H, z, zeta, B):
    """HS residual of the two-point deterministic equation on a sample:

    || G^B - M(z) B M(zeta) - M(z) Gamma[G^B] M(zeta) ||_HS.
    """
    GB = multiresolvent_plain(ens, H, z, zeta, B)
    Mz = mde.solution_at(ens, z)
    Mzeta = mde.solution_at(ens, zeta)
    B = np.asarray(B, dtype=complex)
    return hs_norm(GB - Mz @ B @ Mzeta - Mz @ gamma_apply(ens, GB) @ Mzeta)


def spectral_histogram_distance(ens, N, samples, seed=0, curve=None, bins=200, threads=None):
    """L1 distance between the empirical eigenvalue histogram and the DOS.

    Pools eigenvalues over samples, bins them on the DOS support range and
    integrates |hist - rho| over the binned interval.
    """
    validate(ens)
    if curve is None:
        curve = mde.density_of_states(ens)
    threads = resolve_threads(threads)

    def one(idx):
        H = draw_matrix(ens, N, substream_rng(seed, idx))
        return np.linalg.eigvalsh(H)

    eigs = np.concatenate(parallel_map(one, range(samples), threads))
    lo, hi = curve.x[0], curve.x[-1]
    hist, edges = np.histogram(eigs, bins=bins, range=(lo, hi), density=True)
    mids = (edges[:-1] + edges[1:]) / 2
    rho_mid = np.interp(mids, curve.x, curve.rho)
    width = edges[1] - edges[0]
    return float(np.sum(np.abs(hist - rho_mid)) * width)


@dataclass(frozen=True)
class TwoPointStudy:
    """Monte Carlo two-resolvent averages vs their deterministic limits.

    For each eta in etas and each variant, emp[variant][eta] is a list of
    sampled n x n matrices at z = E0 + i eta, zeta = E0 - i eta, approx
    the deterministic leading-order prediction, and rel_err[variant][eta]
    the per-sample relative HS errors.
    """

    ensemble_hash: str
    N: int
    E0: float
    etas: tuple
    B: np.ndarray
    samples: int
    emp: dict = field(repr=False)
    approx: dict = field(repr=False)
    rel_err: dict

    def mean_rel_err(self, variant, eta):
        return float(np.mean(self.rel_err[variant][eta]))

    def sem_rel_err(self, variant, eta):
        errs = self.rel_err[variant][eta]
        return float(np.std(errs, ddof=1) / np.sqrt(len(errs)))


def _gram_tensors(V, n, N):
    # T4[a, b, p, q] = sum_j V[(a,j), p] V[(b,j), q], one real gemm
    nN = n * N
    W = V.reshape(n, N, nN).transpose(0, 2, 1).reshape(n * nN, N)
    T = W @ W.T
    T4 = T.reshape(n, nN, n, nN).transpose(0, 2, 1, 3).copy()
    return T4


def _study_matrices_fast(vals, T4, B, n, N, z, zeta):
    # quadratic forms in the eigenvalue weights; everything real except
    # the weight vectors
    dz = 1.0 / (vals - z)
    dzeta = 1.0 / (vals - zeta)
    W1 = np.einsum("cdpq,cd->pq", T4, B)
    U1 = np.einsum("cd,cbpq->dbpq", B, T4)
    plain = np.empty((n, n), dtype=complex)
    tilde = np.empty((n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            TW = T4[a, b] * W1
            plain[a, b] = dz @ (TW @ dzeta)
            Y = np.zeros_like(W1)
            for dd in range(n):
                Y += T4[a, dd] * U1[dd, b]
            tilde[a, b] = dz @ (Y @ dzeta)
    return plain / N, tilde / N


def two_point_study(ens, N, E0, etas, B, samples, seed=0, threads=None,
                    bulk_threshold=1e-3):
    """Sample G^B and G^B-tilde across the real axis at a bulk energy.

    beta=1 with real B uses an amortized eigendecomposition path (one real
    gemm of gram tensors per sample serves every eta); other cases fall
    back to direct resolvent products. z = E0 + i eta, zeta = conj(z).
    """
    validate(ens)
    B = np.asarray(B)
    n = ens.n
    bp = mde.bulk_point(ens, E0, threshold=bulk_threshold)
    etas = tuple(float(e) for e in etas)
    approx = {"plain": {}, "tilde": {}}
    for eta in etas:
        z, zeta = E0 + 1j * eta, E0 - 1j * eta
        approx["plain"][eta] = stability.deterministic_two_point_approx(
            ens, bp.M, z, zeta, B, variant="plain")
        if ens.beta == 1:
            approx["tilde"][eta] = stability.deterministic_two_point_approx(
                ens, bp.M, z, zeta, B, variant="tilde")
    fast = ens.beta == 1 and not np.iscomplexobj(B)
    threads = resolve_threads(threads)

    def one(idx):
        H = draw_matrix(ens, N, substream_rng(seed, idx))
        out = {"plain": {}, "tilde": {}}
        if fast:
            vals, V = np.linalg.eigh(H)
            T4 = _gram_tensors(V, n, N)
            for eta in etas:
                z = E0 + 1j * eta
                p, t = _study_matrices_fast(vals, T4, B.astype(float), n, N, z, np.conj(z))
                out["plain"][eta] = p
                out["tilde"][eta] = t
        else:
            for eta in etas:
                z = E0 + 1j * eta
                out["plain"][eta] = multiresolvent_plain(ens, H, z, np.conj(z), B)
                if ens.beta == 1:
                    out["tilde"][eta] = multiresolvent_tilde(ens, H, z, np.conj(z), B)
        return out

    results = parallel_map(one, range(samples), threads)
    emp = {"plain": {e: [r["plain"][e] for r in results] for e in etas}}
    rel = {"plain": {}}
    variants = ["plain"]
    if ens.beta == 1:
        emp["tilde"] = {e: [r["tilde"][e] for r in results] for e in etas}
        rel["tilde"] = {}
        variants.append("tilde")
    for variant in variants:
        for eta in etas:
            ref = approx[variant][eta]
            scale = hs_norm(ref)
            rel[variant][eta] = tuple(
                hs_norm(g - ref) / scale for g in emp[variant][eta])
    return TwoPointStudy(ensemble_hash=ens.hash_hex(), N=int(N), E0=float(E0),
                         etas=etas, B=B, samples=int(samples), emp=emp,
                         approx=approx, rel_err=rel)
