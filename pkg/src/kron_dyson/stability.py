"""One- and two-point stability operators of the matrix Dyson equation.

The one-point operator B_z = C_M^{-1} - Gamma controls perturbations of
the MDE at a single spectral parameter; the two-point operator

    B_{z,zeta}[R] = M(z)^{-1} R M(zeta)^{-1} - Gamma[R]

controls products of resolvents at two parameters. When z and zeta
approach the same bulk energy from opposite half-planes, B_{z,zeta}
develops a simple pole carried by the rank-one direction Im M(E0); the
pole decomposition, the linear eigenvalue model, the balanced polar
factors and the saturated self-energy used to prove the spectral gap are
all computed here.
"""

from dataclasses import dataclass

import numpy as np

from .core_algebra import (
    SuperOperator,
    flip_involution,
    gamma_apply,
    gamma_superop,
    hermitian_part,
    hs_inner,
    hs_norm,
    identity_superop,
    normalized_trace,
    unvec,
    vec,
)
from .ensemble import validate
from .errors import DomainError, NumericalError
from . import mde

__all__ = [
    "one_point_operator",
    "stability_operator",
    "two_point_operator",
    "invert_two_point",
    "PoleDecomposition",
    "pole_decompose",
    "model_alpha",
    "model_eigenvalue",
    "BalancedPolar",
    "balanced_polar",
    "saturated_self_energy",
    "real_two_point",
    "real_two_point_inverse",
    "deterministic_two_point_approx",
    "StabilityProbe",
    "stability_probe",
]


def _herm_sqrt(A, name="matrix"):
    vals, vecs = np.linalg.eigh(hermitian_part(A))
    if vals[0] <= 0:
        raise DomainError(f"{name} must be positive definite, min eig {vals[0]:.3e}")
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def one_point_operator(ens, M):
    """B_z = C_M^{-1} - Gamma as a dense superoperator; needs M invertible."""
    validate(ens)
    Mi = np.linalg.inv(np.asarray(M, dtype=complex))
    return SuperOperator(np.kron(Mi, Mi.T) - gamma_superop(ens).matrix)


def stability_operator(ens, M):
    """Id - C_M Gamma, the linearization solved by mde_derivative."""
    validate(ens)
    M = np.asarray(M, dtype=complex)
    n = ens.n
    return SuperOperator(np.eye(n * n, dtype=complex)
                         - np.kron(M, M.T) @ gamma_superop(ens).matrix)


def two_point_operator(ens, Mz, Mzeta):
    """B_{z,zeta} = C_{M(z),M(zeta)}^{-1} - Gamma as a dense superoperator."""
    validate(ens)
    Mzi = np.linalg.inv(np.asarray(Mz, dtype=complex))
    Mzetai = np.linalg.inv(np.asarray(Mzeta, dtype=complex))
    return SuperOperator(np.kron(Mzi, Mzetai.T) - gamma_superop(ens).matrix)


def invert_two_point(ens, Mz, Mzeta, cond_max=1e12):
    """Dense inverse of the two-point operator with a conditioning guard.

    Near coinciding bulk energies from opposite half-planes the operator
    has an eigenvalue of order |z - zeta| and the inverse blows up; the
    guard converts that into a NumericalError pointing at pole_decompose.
    """
    B = two_point_operator(ens, Mz, Mzeta)
    cond = B.cond()
    if cond > cond_max:
        raise NumericalError(
            f"two-point operator condition {cond:.3e} exceeds {cond_max:g}; "
            "use pole_decompose near the coincidence pole", cond=cond)
    return B.inv()


def _theta(z, zeta):
    z, zeta = complex(z), complex(zeta)
    if z.imag > 0 > zeta.imag:
        return 1
    if z.imag < 0 < zeta.imag:
        return -1
    raise DomainError(
        "z and zeta must lie in opposite half-planes, got "
        f"Im z = {z.imag:g}, Im zeta = {zeta.imag:g}")


def model_alpha(M0):
    """Slope alpha = i <Im M0> / (2 ||Im M0||_HS^2) of the small eigenvalue."""
    IM = hermitian_part(np.asarray(M0, dtype=complex) / 1j)
    avg = normalized_trace(IM).real
    return 1j * avg / (2 * hs_norm(IM) ** 2)


def model_eigenvalue(M0, w, xi):
    """Linear model for the small eigenvalue of B at z = E0+w, zeta = E0+xi.

    Opposite half-planes only: -alpha w - conj(alpha) xi for Im w > 0 > Im xi,
    complex conjugate arrangement for the mirrored order.
    """
    w, xi = complex(w), complex(xi)
    a = model_alpha(M0)
    if w.imag > 0 > xi.imag:
        return -a * w - np.conj(a) * xi
    if w.imag < 0 < xi.imag:
        return -np.conj(a) * w - a * xi
    raise DomainError("w and xi must lie in opposite half-planes")


@dataclass(frozen=True)
class PoleDecomposition:
    """Split B_{z,zeta}^{-1} = theta * pole / (z - zeta) + regular.

    pole is the rank-one map R -> (2i / <Im M0>) Im M0 <Im M0, R> (HS inner
    product normalized); regular is defined as the exact difference, so
    reassembly is an identity and the content is that regular stays bounded
    as z - zeta -> 0. lambda_small is the numerically extracted eigenvalue
    of B nearest zero with its eigenvector's alignment to Im M0.
    """

    z: complex
    zeta: complex
    theta: int
    alpha: complex
    pole: SuperOperator
    regular: SuperOperator
    lambda_small: complex
    kernel_alignment: float


def pole_decompose(ens, M0, z, zeta, **solve_kw):
    """Pole structure of the two-point inverse near a bulk energy E0.

    M0 is the boundary solution at E0 (Im M0 positive definite); z and
    zeta must lie in opposite half-planes. The MDE is solved at z and zeta
    internally.
    """
    validate(ens)
    th = _theta(z, zeta)
    M0 = np.asarray(M0, dtype=complex)
    IM = hermitian_part(M0 / 1j)
    avg = normalized_trace(IM).real
    if avg <= 0:
        raise DomainError("M0 must have positive imaginary part (bulk boundary value)")
    n = ens.n
    Mz = mde.solution_at(ens, z, **solve_kw)
    Mzeta = mde.solution_at(ens, zeta, **solve_kw)
    B = two_point_operator(ens, Mz, Mzeta)
    Binv = B.inv()
    pole_mat = (2j / avg) * np.outer(vec(IM), vec(IM).conj()) / n
    pole = SuperOperator(pole_mat)
    regular = SuperOperator(Binv.matrix - th * pole_mat / (complex(z) - complex(zeta)))
    evals, evecs = np.linalg.eig(B.matrix)
    k = int(np.argmin(np.abs(evals)))
    v = unvec(evecs[:, k])
    align = abs(hs_inner(IM, v)) / (hs_norm(IM) * hs_norm(v))
    return PoleDecomposition(z=complex(z), zeta=complex(zeta), theta=th,
                             alpha=model_alpha(M0), pole=pole, regular=regular,
                             lambda_small=complex(evals[k]), kernel_alignment=float(align))


@dataclass(frozen=True)
class BalancedPolar:
    """Balanced polar factors of a matrix with positive imaginary part.

    M = Q* U Q with U unitary, Im U = W^{-2}, Q = W (Im M)^{1/2} and
    T the balanced real part (Im M)^{-1/2} (Re M) (Im M)^{-1/2}.
    """

    Q: np.ndarray
    U: np.ndarray
    W: np.ndarray
    T: np.ndarray

    def reconstruct(self):
        return self.Q.conj().T @ self.U @ self.Q


def balanced_polar(M):
    """Balanced polar decomposition of M with Im M positive definite."""
    M = np.asarray(M, dtype=complex)
    IM = hermitian_part(M / 1j)
    RE = hermitian_part(M)
    S = _herm_sqrt(IM, "Im M")
    Si = np.linalg.inv(S)
    T = hermitian_part(Si @ RE @ Si)
    vals, vecs = np.linalg.eigh(T)
    W = (vecs * (1 + vals ** 2) ** 0.25) @ vecs.conj().T
    Wi = np.linalg.inv(W)
    U = Wi @ (T + 1j * np.eye(T.shape[0])) @ Wi
    Q = W @ S
    return BalancedPolar(Q=Q, U=U, W=W, T=T)


def saturated_self_energy(ens, M):
    """Saturated self-energy F = C* Gamma C with C = C_{sqrt(Im M)} o C_W.

    F is Hermitian on HS space and completely positive. At a bulk energy
    on the real axis its top eigenvalue is exactly 1, simple, with
    eigenvector proportional to Im U from the balanced polar factors; off
    the real axis the whole spectrum is strictly inside (-1, 1).
    """
    validate(ens)
    bp = balanced_polar(M)
    S = _herm_sqrt(hermitian_part(np.asarray(M, dtype=complex) / 1j), "Im M")
    A = S @ bp.W
    C = np.kron(A, A.conj())
    F = C.conj().T @ gamma_superop(ens).matrix @ C
    return SuperOperator(hermitian_part(F))


def real_two_point(ens, Mz, Mzeta):
    """Pair-space lift of the beta=1 two-point operator.

    Acts on C^{n^2} (x) C^{n^2} by A (x) B -> M(z)^{-1} A (x) B M(zeta)^{-1}
    - sum_a ( L_a A (x) B L_a^t + L_a^t A (x) B L_a ). Returns the dense
    n^4 x n^4 matrix; its conjugation by the flip involution is the
    ordinary two-point operator tensored with the identity.
    """
    validate(ens)
    if ens.beta != 1:
        raise DomainError("real_two_point is only defined for beta=1 ensembles")
    n = ens.n
    eye = np.eye(n, dtype=complex)
    Mzi = np.linalg.inv(np.asarray(Mz, dtype=complex))
    Mzetai = np.linalg.inv(np.asarray(Mzeta, dtype=complex))
    out = np.kron(np.kron(Mzi, eye), np.kron(eye, Mzetai.T))
    for La in ens.L:
        out -= np.kron(np.kron(La, eye), np.kron(eye, La))
        out -= np.kron(np.kron(La.T, eye), np.kron(eye, La.T))
    return out


def real_two_point_inverse(ens, Mz, Mzeta, cond_max=1e12):
    """Inverse of the pair-space operator via the flip identity.

    Bhat^{-1} = Phi (B^{-1} (x) Id) Phi, so only the n^2 x n^2 inverse is
    ever formed; the flip is applied as an index permutation.
    """
    Binv = invert_two_point(ens, Mz, Mzeta, cond_max=cond_max)
    n = ens.n
    flip = flip_involution(n)
    lifted = np.kron(Binv.matrix, np.eye(n * n, dtype=complex))
    return flip.conjugate_matrix(lifted)


def deterministic_two_point_approx(ens, M0, z, zeta, B, variant="plain"):
    """Leading deterministic value of averaged two-resolvent statistics.

    For z, zeta on opposite sides of a bulk energy E0 with boundary value
    M0:

    - plain: theta * (2i / (z - zeta)) * (<Im M0, B> / <Im M0>) * Im M0,
      the limit of (1/N) sum_{kl} G_lk(z) B G_kl(zeta);
    - tilde (beta=1 only): theta * (2i / (n (z - zeta) <Im M0>)) *
      Im M0 B^t Im M0, the limit of (1/N) sum_{kl} G_lk(z) B G_lk(zeta).

    The 1/n in the tilde constant comes from projecting the transposed
    statistic onto the rank-one pole: the projection contributes
    <Im M0, Im M0> / ||Im M0||^2 * B^t / n, which collapses to B^t only
    at n = 1 (where tilde and plain coincide).
    """
    validate(ens)
    th = _theta(z, zeta)
    B = np.asarray(B, dtype=complex)
    if B.shape != (ens.n, ens.n):
        raise DomainError(f"B has shape {B.shape}, expected {(ens.n, ens.n)}")
    IM = hermitian_part(np.asarray(M0, dtype=complex) / 1j)
    avg = normalized_trace(IM).real
    if avg <= 0:
        raise DomainError("M0 must have positive imaginary part (bulk boundary value)")
    dz = complex(z) - complex(zeta)
    if variant == "plain":
        return th * (2j / dz) * (hs_inner(IM, B) / avg) * IM
    if variant == "tilde":
        if ens.beta != 1:
            raise DomainError("tilde approximation is only defined for beta=1")
        return th * (2j / (dz * ens.n * avg)) * (IM @ B.T @ IM)
    raise DomainError(f"unknown variant {variant!r}; use 'plain' or 'tilde'")


@dataclass(frozen=True)
class StabilityProbe:
    """Diagnostics of the two-point pole structure at one bulk energy."""

    E0: float
    rho: float
    alpha: complex
    eps_list: tuple
    lambda_true: tuple
    lambda_model: tuple
    lambda_model_error: float
    halving_ratios: tuple
    kernel_dim: int
    kernel_dim_check: bool
    kernel_alignment: float
    kernel_smallest_sv: float
    kernel_second_sv: float
    gap: float
    top_eigenvalue: float
    top_alignment: float
    phi_plus_minus: complex

    def to_dict(self):
        return {
            "E0": self.E0,
            "rho": self.rho,
            "alpha": {"re": self.alpha.real, "im": self.alpha.imag},
            "eps_list": list(self.eps_list),
            "lambda_true": [{"re": v.real, "im": v.imag} for v in self.lambda_true],
            "lambda_model": [{"re": v.real, "im": v.imag} for v in self.lambda_model],
            "lambda_model_error": self.lambda_model_error,
            "halving_ratios": list(self.halving_ratios),
            "kernel_dim": self.kernel_dim,
            "kernel_dim_check": self.kernel_dim_check,
            "kernel_alignment": self.kernel_alignment,
            "kernel_smallest_sv": self.kernel_smallest_sv,
            "kernel_second_sv": (self.kernel_second_sv
                                 if np.isfinite(self.kernel_second_sv) else None),
            "gap": self.gap,
            "top_eigenvalue": self.top_eigenvalue,
            "top_alignment": self.top_alignment,
            "phi_plus_minus": {"re": self.phi_plus_minus.real,
                               "im": self.phi_plus_minus.imag},
        }


def derivative_trace_constant(ens, M0):
    """The normalized trace constant 2i <Gamma[Im M0 M0^{-1} M0'] Im M0> / <Im M0>.

    Equals -1 at every bulk energy; it is the scalar that fixes the
    variance normalization of mesoscopic linear statistics.
    """
    validate(ens)
    M0 = np.asarray(M0, dtype=complex)
    IM = hermitian_part(M0 / 1j)
    M0p = mde.mde_derivative(ens, M=M0)
    X = IM @ np.linalg.inv(M0) @ M0p
    q = np.trace(gamma_apply(ens, X) @ IM) / ens.n
    return 2j * q / normalized_trace(IM).real


def stability_probe(ens, E0, eps_list=(1e-2, 5e-3, 2.5e-3, 1.25e-3), bulk_threshold=1e-3,
                    kernel_cutoff=1e-6, **continue_kw):
    """Full two-point stability diagnostic at a bulk energy E0.

    Checks, in order: the kernel of B_{E0-i0, E0+i0} is one-dimensional
    and spanned by Im M0; the eigenvalue of B_{E0+ie, E0-ie} nearest zero
    follows the linear model -alpha w - conj(alpha) xi with quadratic
    error in eps (halving_ratios near 4); the saturated self-energy at M0
    has top eigenvalue 1 with a positive gap and top eigenvector aligned
    with Im U; and the derivative trace constant equals -1.
    """
    bp = mde.bulk_point(ens, E0, threshold=bulk_threshold, **continue_kw)
    M0 = bp.M
    IM = hermitian_part(M0 / 1j)
    n = ens.n

    # kernel of the coincidence operator, from below / above
    Bk = two_point_operator(ens, M0.conj().T, M0)
    svals = np.linalg.svd(Bk.matrix, compute_uv=False)
    # absolute floor keeps the scale meaningful when the kernel direction
    # is the only direction (n = 1)
    kernel_dim = int(np.sum(svals < kernel_cutoff * max(svals[0], 1.0)))
    evals, evecs = np.linalg.eig(Bk.matrix)
    kvec = unvec(evecs[:, int(np.argmin(np.abs(evals)))])
    kernel_alignment = abs(hs_inner(IM, kvec)) / (hs_norm(IM) * hs_norm(kvec))

    lam_true, lam_model = [], []
    for eps in eps_list:
        z, zeta = E0 + 1j * eps, E0 - 1j * eps
        Bop = two_point_operator(ens, mde.solution_at(ens, z), mde.solution_at(ens, zeta))
        ev = np.linalg.eigvals(Bop.matrix)
        lam_true.append(complex(ev[int(np.argmin(np.abs(ev)))]))
        lam_model.append(complex(model_eigenvalue(M0, 1j * eps, -1j * eps)))
    errs = [abs(t - m) for t, m in zip(lam_true, lam_model)]
    ratios = []
    for eps_big, err_big, eps_small, err_small in zip(eps_list, errs, eps_list[1:], errs[1:]):
        if err_small > 0:
            ratios.append(err_big / err_small)

    F = saturated_self_energy(ens, M0)
    fvals, fvecs = np.linalg.eigh(F.matrix)
    top = float(fvals[-1])
    gap = float(1.0 - max(abs(fvals[0]), abs(fvals[-2]))) if n * n > 1 else 1.0
    ImU = hermitian_part(balanced_polar(M0).U / 1j)
    tvec = unvec(fvecs[:, -1])
    top_alignment = abs(hs_inner(ImU, tvec)) / (hs_norm(ImU) * hs_norm(tvec))

    second_sv = float(svals[-2]) if n * n > 1 else float("inf")
    return StabilityProbe(
        E0=float(E0), rho=bp.rho, alpha=model_alpha(M0), eps_list=tuple(eps_list),
        lambda_true=tuple(lam_true), lambda_model=tuple(lam_model),
        lambda_model_error=float(errs[-1]), halving_ratios=tuple(ratios),
        kernel_dim=kernel_dim, kernel_dim_check=kernel_dim == 1,
        kernel_alignment=float(kernel_alignment),
        kernel_smallest_sv=float(svals[-1]), kernel_second_sv=second_sv,
        gap=gap, top_eigenvalue=top, top_alignment=float(top_alignment),
        phi_plus_minus=complex(derivative_trace_constant(ens, M0)))
