"""Matrix and superoperator primitives.

Square matrices are plain complex numpy arrays. Linear maps on n x n
matrices ("superoperators") are represented by dense n^2 x n^2 matrices
acting on row-major vectorized input, so the sandwich map R -> A R B has
matrix kron(A, B.T) and the Hilbert-Schmidt adjoint of a superoperator is
the conjugate transpose of its matrix.

All inner products are normalized: <S, T> = trace(S* T) / n, and the
normalized trace is <T> = trace(T) / n.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = [
    "hs_inner",
    "hs_norm",
    "normalized_trace",
    "vec",
    "unvec",
    "assert_hermitian",
    "hermitian_part",
    "SuperOperator",
    "identity_superop",
    "superop_of_sandwich",
    "gamma_apply",
    "gamma_tilde_apply",
    "gamma_superop",
    "FlipInvolution",
    "flip_involution",
    "BlockMatrix",
    "partial_trace",
]


def _square(A, name="matrix"):
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"{name} must be square, got shape {A.shape}")
    return A


def hs_inner(S, T):
    """Normalized Hilbert-Schmidt inner product trace(S* T) / n.

    Antilinear in the first argument, linear in the second.
    """
    S = _square(S, "S")
    T = _square(T, "T")
    if S.shape != T.shape:
        raise DomainError(f"shape mismatch {S.shape} vs {T.shape}")
    return complex(np.vdot(S, T) / S.shape[0])


def hs_norm(T):
    """Normalized Hilbert-Schmidt norm sqrt(<T, T>)."""
    T = _square(T, "T")
    return float(np.linalg.norm(T)) / np.sqrt(T.shape[0])


def normalized_trace(T):
    """Normalized trace trace(T) / n."""
    T = _square(T, "T")
    return complex(np.trace(T) / T.shape[0])


def vec(R):
    """Row-major flattening of a square matrix to a vector of length n^2."""
    return np.asarray(_square(R, "R")).reshape(-1)


def unvec(r):
    """Inverse of :func:`vec`; the length must be a perfect square."""
    r = np.asarray(r).reshape(-1)
    n = round(np.sqrt(r.size))
    if n * n != r.size:
        raise DomainError(f"vector of length {r.size} is not a flattened square matrix")
    return r.reshape(n, n)


def assert_hermitian(A, tol=1e-12, name="matrix"):
    """Raise DomainError unless A = A* within tol relative to max |entry|.

    Returns A unchanged on success. The zero matrix passes for any tol.
    """
    A = _square(A, name)
    scale = np.max(np.abs(A)) if A.size else 0.0
    dev = np.max(np.abs(A - A.conj().T)) if A.size else 0.0
    if dev > tol * max(scale, 1e-300) and dev > tol:
        raise DomainError(f"{name} is not Hermitian: max deviation {dev:.3e} (scale {scale:.3e})")
    return A


def hermitian_part(A):
    """(A + A*) / 2, used to resymmetrize before Hermitian eigensolvers."""
    A = _square(A)
    return (A + A.conj().T) / 2


@dataclass(frozen=True)
class SuperOperator:
    """A linear map on n x n matrices, stored as a dense n^2 x n^2 matrix.

    The matrix acts on row-major vectorized input: apply(R) reshapes
    matrix @ vec(R). Composition, linear combinations, adjoints and
    inverses are delegated to the underlying dense matrix.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = _square(self.matrix, "superoperator matrix")
        n = round(np.sqrt(m.shape[0]))
        if n * n != m.shape[0]:
            raise DomainError(f"superoperator matrix side {m.shape[0]} is not a perfect square")
        object.__setattr__(self, "matrix", np.asarray(m, dtype=complex))

    @property
    def dim(self):
        """Side length n of the matrices this operator acts on."""
        return round(np.sqrt(self.matrix.shape[0]))

    def apply(self, R):
        R = _square(R, "R")
        if R.shape[0] != self.dim:
            raise DomainError(f"operand side {R.shape[0]} does not match operator dim {self.dim}")
        return (self.matrix @ vec(R)).reshape(R.shape)

    __call__ = apply

    def adjoint(self):
        """Hilbert-Schmidt adjoint: conjugate transpose of the matrix."""
        return SuperOperator(self.matrix.conj().T)

    def inv(self):
        return SuperOperator(np.linalg.inv(self.matrix))

    def norm(self):
        """Operator norm induced by the HS norm (largest singular value)."""
        return float(np.linalg.norm(self.matrix, 2))

    def cond(self):
        return float(np.linalg.cond(self.matrix))

    def __matmul__(self, other):
        return SuperOperator(self.matrix @ other.matrix)

    def __add__(self, other):
        return SuperOperator(self.matrix + other.matrix)

    def __sub__(self, other):
        return SuperOperator(self.matrix - other.matrix)

    def __rmul__(self, scalar):
        return SuperOperator(scalar * self.matrix)

    def __neg__(self):
        return SuperOperator(-self.matrix)


def identity_superop(n):
    """The identity map on n x n matrices."""
    return SuperOperator(np.eye(n * n, dtype=complex))


def superop_of_sandwich(A, B):
    """The superoperator R -> A R B, with matrix kron(A, B.T).

    superop_of_sandwich(T, T) is the symmetric sandwich C_T.
    """
    A = _square(A, "A")
    B = _square(B, "B")
    if A.shape != B.shape:
        raise DomainError(f"shape mismatch {A.shape} vs {B.shape}")
    return SuperOperator(np.kron(A, B.T))


def gamma_apply(ens, R):
    """Self-energy map Gamma[R] = sum_a (L_a R L_a* + L_a* R L_a).

    Completely positive and HS-self-adjoint; preserves Hermiticity and
    positive semidefiniteness.
    """
    R = _square(R, "R")
    if R.shape[0] != ens.n:
        raise DomainError(f"operand side {R.shape[0]} does not match ensemble n={ens.n}")
    out = np.zeros_like(R, dtype=complex)
    for L in ens.L:
        Ls = L.conj().T
        out += L @ R @ Ls + Ls @ R @ L
    return out


def gamma_tilde_apply(ens, R):
    """Transpose-coupled self-energy sum_a (L_a R L_a + L_a^t R L_a^t).

    Only defined for real symmetry class ensembles (beta=1); it carries the
    extra transpose contribution of real entries. Coincides with
    gamma_apply when every L_a is symmetric.
    """
    if ens.beta != 1:
        raise DomainError("gamma_tilde is only defined for beta=1 ensembles")
    R = _square(R, "R")
    if R.shape[0] != ens.n:
        raise DomainError(f"operand side {R.shape[0]} does not match ensemble n={ens.n}")
    out = np.zeros_like(R, dtype=complex)
    for L in ens.L:
        Lt = L.T
        out += L @ R @ L + Lt @ R @ Lt
    return out


def gamma_superop(ens):
    """Dense superoperator form of gamma_apply.

    Matrix sum_a kron(L_a, conj(L_a)) + kron(L_a*, L_a^t); Hermitian because
    the map is HS-self-adjoint.
    """
    n = ens.n
    mat = np.zeros((n * n, n * n), dtype=complex)
    for L in ens.L:
        Ls = L.conj().T
        mat += np.kron(L, L.conj()) + np.kron(Ls, L.T)
    return SuperOperator(mat)


@dataclass(frozen=True)
class FlipInvolution:
    """The flip map on the tensor square, E_ij (x) E_kl -> E_il (x) E_kj.

    Stored as an index permutation of length n^4, never as a dense matrix.
    The permutation is its own inverse.
    """

    n: int
    perm: np.ndarray

    def apply_vec(self, x):
        """Apply to a vector in the n^4-dimensional pair space."""
        x = np.asarray(x)
        if x.shape != (self.n ** 4,):
            raise DomainError(f"expected vector of length n^4={self.n ** 4}, got {x.shape}")
        return x[self.perm]

    def conjugate_matrix(self, Mhat):
        """Return flip @ Mhat @ flip for a dense pair-space matrix."""
        Mhat = _square(Mhat, "pair-space matrix")
        if Mhat.shape[0] != self.n ** 4:
            raise DomainError(f"expected side n^4={self.n ** 4}, got {Mhat.shape[0]}")
        return Mhat[np.ix_(self.perm, self.perm)]


def flip_involution(n):
    """Build the flip involution for n x n factors.

    With pair-space index ((i*n+j)*n+k)*n+l for E_ij (x) E_kl, the image
    basis vector has index ((i*n+l)*n+k)*n+j, which is the transpose
    (0, 3, 2, 1) on the (n, n, n, n) view.
    """
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    perm = np.arange(n ** 4).reshape(n, n, n, n).transpose(0, 3, 2, 1).reshape(-1)
    return FlipInvolution(n=n, perm=perm)


@dataclass(frozen=True)
class BlockMatrix:
    """An (n*N) x (n*N) matrix viewed as an N x N grid of n x n blocks.

    Block (i, j) of R = sum R_ij (x) E_ij is data.reshape(n, N, n, N)[:, i, :, j].
    """

    data: np.ndarray
    n: int
    N: int

    def __post_init__(self):
        data = _square(self.data, "block matrix")
        if data.shape[0] != self.n * self.N:
            raise DomainError(
                f"side {data.shape[0]} does not factor as n*N = {self.n}*{self.N}"
            )
        object.__setattr__(self, "data", data)

    def as4(self):
        """(n, N, n, N) view; no copy."""
        return self.data.reshape(self.n, self.N, self.n, self.N)

    def block(self, i, j):
        return self.as4()[:, i, :, j]


def partial_trace(R, n=None, N=None):
    """Partial trace over the second (dimension-N) factor.

    Accepts a BlockMatrix, or a raw square array together with n and N.
    Returns the n x n matrix sum_j R_jj.
    """
    if isinstance(R, BlockMatrix):
        t4 = R.as4()
    else:
        R = _square(R, "R")
        if n is None or N is None:
            raise DomainError("partial_trace of a raw array needs explicit n and N")
        if R.shape[0] != n * N:
            raise DomainError(f"side {R.shape[0]} does not factor as n*N = {n}*{N}")
        t4 = R.reshape(n, N, n, N)
    return np.einsum("ajbj->ab", t4)
