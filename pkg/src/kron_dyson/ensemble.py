"""Ensemble definitions, validation, serialization and flatness analysis.

An ensemble is the deterministic structure data (n, d, beta, K0, L_1..L_d,
entry law) of the random block matrix

    H = K0 (x) I_N + sum_a ( L_a (x) X_a + L_a* (x) X_a* ),

where the X_a are independent N x N matrices with iid entries of variance
1/N (beta=2: complex entries with independent real and imaginary parts of
variance 1/(2N) each; beta=1: real entries).
"""

import json
import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DomainError, InputError

__all__ = [
    "StructureEnsemble",
    "ensemble_violations",
    "validate",
    "make_ensemble",
    "load_ensemble",
    "dump_ensemble",
    "preset",
    "preset_names",
    "support_pattern",
    "primitivity_exponent",
    "FlatnessReport",
    "estimate_flatness_constant",
]

ENTRY_LAWS = ("gaussian", "rademacher", "uniform")


@dataclass(frozen=True)
class StructureEnsemble:
    """Immutable structure data of a Kronecker ensemble.

    Arrays are stored as read-only complex matrices; beta=1 ensembles must
    have real K0 and L_a.
    """

    n: int
    d: int
    beta: int
    K0: np.ndarray
    L: tuple
    entry_law: str = "gaussian"

    def __post_init__(self):
        K0 = np.array(self.K0, dtype=complex)
        K0.setflags(write=False)
        Ls = []
        for La in self.L:
            La = np.array(La, dtype=complex)
            La.setflags(write=False)
            Ls.append(La)
        object.__setattr__(self, "K0", K0)
        object.__setattr__(self, "L", tuple(Ls))

    def to_dict(self):
        """Plain-JSON representation; beta=1 omits the zero imaginary parts."""
        with_im = self.beta != 1

        def enc(M):
            return [
                [
                    {"re": float(x.real), "im": float(x.imag)} if with_im else {"re": float(x.real)}
                    for x in row
                ]
                for row in np.asarray(M)
            ]

        return {
            "n": self.n,
            "d": self.d,
            "beta": self.beta,
            "K0": enc(self.K0),
            "L": [enc(La) for La in self.L],
            "entry_law": self.entry_law,
        }

    def hash_hex(self):
        """sha256 of the canonical JSON encoding, used in run manifests."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def ensemble_violations(ens):
    """Collect every validation failure as a human-readable string.

    An empty list means the ensemble is valid.
    """
    out = []
    if not isinstance(ens.n, int) or ens.n < 1:
        out.append(f"n must be a positive integer, got {ens.n!r}")
        return out
    if not isinstance(ens.d, int) or ens.d < 0:
        out.append(f"d must be a nonnegative integer, got {ens.d!r}")
    if ens.beta not in (1, 2):
        out.append(f"beta must be 1 or 2, got {ens.beta!r}")
    if ens.entry_law not in ENTRY_LAWS:
        out.append(f"entry_law must be one of {ENTRY_LAWS}, got {ens.entry_law!r}")
    if ens.K0.shape != (ens.n, ens.n):
        out.append(f"K0 has shape {ens.K0.shape}, expected ({ens.n}, {ens.n})")
    elif not np.all(np.isfinite(ens.K0)):
        out.append("K0 has non-finite entries")
    else:
        dev = float(np.max(np.abs(ens.K0 - ens.K0.conj().T))) if ens.n else 0.0
        scale = max(float(np.max(np.abs(ens.K0))), 1.0)
        if dev > 1e-12 * scale:
            out.append(f"K0 is not Hermitian: max deviation {dev:.3e}")
    if isinstance(ens.d, int) and ens.d >= 0 and len(ens.L) != ens.d:
        out.append(f"len(L) = {len(ens.L)} does not match d = {ens.d}")
    for a, La in enumerate(ens.L):
        if La.shape != (ens.n, ens.n):
            out.append(f"L[{a}] has shape {La.shape}, expected ({ens.n}, {ens.n})")
        elif not np.all(np.isfinite(La)):
            out.append(f"L[{a}] has non-finite entries")
    if ens.beta == 1:
        for name, M in [("K0", ens.K0)] + [(f"L[{a}]", La) for a, La in enumerate(ens.L)]:
            if M.size and float(np.max(np.abs(M.imag))) > 1e-14:
                out.append(f"beta=1 requires real structure matrices, {name} has imaginary part")
    return out


def validate(ens):
    """Return the ensemble unchanged, or raise DomainError listing every violation."""
    violations = ensemble_violations(ens)
    if violations:
        raise DomainError("invalid ensemble: " + "; ".join(violations))
    return ens


def make_ensemble(n, beta, K0, L, entry_law="gaussian"):
    """Build and validate a StructureEnsemble from array-likes."""
    L = tuple(np.asarray(La) for La in L)
    return validate(StructureEnsemble(n=int(n), d=len(L), beta=int(beta),
                                      K0=np.asarray(K0), L=L, entry_law=entry_law))


def _decode_matrix(obj, what, beta):
    if not isinstance(obj, list) or not obj or not all(isinstance(r, list) for r in obj):
        raise InputError(f"{what} must be a non-empty list of rows")
    rows = []
    for row in obj:
        vals = []
        for cell in row:
            if not isinstance(cell, dict) or "re" not in cell:
                raise InputError(f"{what} entries must be objects with 're' (and optional 'im')")
            extra = set(cell) - {"re", "im"}
            if extra:
                raise InputError(f"{what} entry has unknown keys {sorted(extra)}")
            re = cell["re"]
            im = cell.get("im", 0.0)
            if not isinstance(re, (int, float)) or not isinstance(im, (int, float)):
                raise InputError(f"{what} entry values must be numbers")
            if beta == 1 and im != 0.0:
                raise InputError(f"beta=1 file must not carry imaginary parts ({what})")
            vals.append(complex(re, im))
        rows.append(vals)
    if len({len(r) for r in rows}) != 1:
        raise InputError(f"{what} rows have inconsistent lengths")
    return np.array(rows, dtype=complex)


def load_ensemble(path):
    """Load an ensemble from a JSON file and validate it.

    Raises InputError for malformed files and DomainError for well-formed
    files that describe an invalid ensemble.
    """
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as e:
        raise InputError(f"cannot read ensemble file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"ensemble file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise InputError("ensemble file must contain a JSON object")
    required = {"n", "d", "beta", "K0", "L", "entry_law"}
    missing = required - set(data)
    if missing:
        raise InputError(f"ensemble file is missing keys {sorted(missing)}")
    extra = set(data) - required
    if extra:
        raise InputError(f"ensemble file has unknown keys {sorted(extra)}")
    n, d, beta = data["n"], data["d"], data["beta"]
    for name, val in [("n", n), ("d", d), ("beta", beta)]:
        if not isinstance(val, int):
            raise InputError(f"'{name}' must be an integer, got {val!r}")
    if not isinstance(data["L"], list):
        raise InputError("'L' must be a list of matrices")
    K0 = _decode_matrix(data["K0"], "K0", beta)
    L = tuple(_decode_matrix(La, f"L[{a}]", beta) for a, La in enumerate(data["L"]))
    ens = StructureEnsemble(n=n, d=d, beta=beta, K0=K0, L=L, entry_law=data["entry_law"])
    return validate(ens)


def dump_ensemble(ens, path):
    """Write the canonical JSON encoding of a validated ensemble."""
    validate(ens)
    with open(path, "w") as f:
        json.dump(ens.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def _presets():
    s = 1.0 / np.sqrt(2.0)

    def e4(i, j):
        M = np.zeros((4, 4))
        M[i, j] = 1.0
        return M

    def e2(i, j):
        M = np.zeros((2, 2))
        M[i, j] = 1.0
        return M

    pencil4_L = (
        s * (e4(0, 0) + e4(0, 1) + e4(1, 0) + e4(2, 2)),
        s * e4(1, 1),
        s * e4(2, 2),
        s * e4(3, 3),
        e4(0, 1),
        e4(1, 3) + e4(2, 3),
        e4(2, 3),
    )
    return {
        # scalar Wigner, complex entries: M(z) = m_sc(z), support [-2, 2]
        "semicircle": dict(n=1, beta=2, K0=[[0.0]], L=[[[s]]]),
        # scalar Wigner, real symmetric class
        "real_semicircle": dict(n=1, beta=1, K0=[[0.0]], L=[[[s]]]),
        # deterministic two-atom pencil, d = 0
        "free_diag": dict(n=2, beta=2, K0=[[1.0, 0.0], [0.0, -1.0]], L=[]),
        # 2x2 block structure whose lift is a full real Wigner matrix of
        # size 2N; M(z) = m(z) I with 2 m^2 + z m + 1 = 0
        "block_wigner2": dict(n=2, beta=1, K0=np.zeros((2, 2)),
                              L=[s * e2(0, 0), s * e2(1, 1), e2(0, 1)]),
        # 4x4 pencil with a sparse coupling pattern (primitivity exponent 3)
        "pencil4": dict(n=4, beta=2, K0=np.zeros((4, 4)), L=pencil4_L),
    }


def preset_names():
    return sorted(_presets())


def preset(name):
    """Return a built-in ensemble by name; see preset_names()."""
    table = _presets()
    if name not in table:
        raise InputError(f"unknown preset {name!r}; available: {', '.join(sorted(table))}")
    cfg = table[name]
    return make_ensemble(n=cfg["n"], beta=cfg["beta"], K0=cfg["K0"], L=cfg["L"])


def support_pattern(ens):
    """Canonical 0/1 coupling pattern Z with forced unit diagonal.

    z_kl = 1 when some L_a couples coordinates k and l in either direction,
    i.e. sum_a |(L_a)_kl|^2 + |(L_a)_lk|^2 > 0. Symmetric by construction.
    """
    Z = np.eye(ens.n, dtype=np.int64)
    for La in ens.L:
        A = np.abs(np.asarray(La)) ** 2
        Z |= (A + A.T > 0).astype(np.int64)
    return Z


def primitivity_exponent(Z, cap=None):
    """Smallest m with (Z^m) entrywise positive, or None when none <= cap.

    Uses boolean matrix powers; cap defaults to n^2, which dominates the
    Wielandt bound for primitive matrices, so None means Z is not
    primitive (e.g. a disconnected pattern).
    """
    Z = np.asarray(Z)
    if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
        raise DomainError(f"Z must be square, got shape {Z.shape}")
    if not np.all((Z == 0) | (Z == 1)):
        raise DomainError("Z must be a 0/1 matrix")
    n = Z.shape[0]
    if cap is None:
        cap = n * n
    B = Z.astype(bool)
    P = B.copy()
    for m in range(1, cap + 1):
        if P.all():
            return m
        P = (P.astype(np.int64) @ B.astype(np.int64)) > 0
    return None


@dataclass(frozen=True)
class FlatnessReport:
    """Result of the rank-one flatness probe.

    c_estimate is an empirical upper bound on the best flatness constant
    for the pattern Z (inf over rank-one directions); certified is always
    False, the estimate comes from local minimization with restarts.
    """

    Z: np.ndarray
    exponent: int
    c_estimate: float
    certified: bool
    samples_used: int
    minima_trace: tuple = field(repr=False, default=())


def _flatness_quadratics(ens, Z, v):
    # numerator u* A(v) u with A(v) = sum (L v)(L v)* + (L* v)(L* v)*
    n = ens.n
    Av = np.zeros((n, n), dtype=complex)
    for La in ens.L:
        w1 = La @ v
        w2 = La.conj().T @ v
        Av += np.outer(w1, w1.conj()) + np.outer(w2, w2.conj())
    dv = Z.T @ (np.abs(v) ** 2)
    return Av, dv


def _masked_smallest(A, dvec):
    # generalized eigenproblem A x = lam diag(dvec) x restricted to the
    # coordinates where the denominator weight is nonzero
    mask = dvec > 1e-14 * max(float(dvec.max()), 1e-300)
    if not mask.any():
        return None, None
    As = A[np.ix_(mask, mask)]
    Ds = np.diag(dvec[mask])
    vals, vecs = scipy.linalg.eigh(As, Ds)
    x = np.zeros(A.shape[0], dtype=complex)
    x[mask] = vecs[:, 0]
    x /= np.linalg.norm(x)
    return float(vals[0]), x


def estimate_flatness_constant(ens, Z=None, restarts=200, max_sweeps=80, tol=1e-12, seed=0):
    """Estimate the best constant c in the block lower bound

        Gamma[R] >= c * sum_l ( sum_k z_kl R_kk ) E_ll    for all PSD R.

    The infimum is attained on rank-one R = v v* tested against rank-one
    directions u, so it equals the infimum over unit u, v of

        sum_a (|u* L_a v|^2 + |u* L_a* v|^2) / sum_kl z_kl |v_k|^2 |u_l|^2.

    Alternating minimization: for fixed v the optimal u solves a
    generalized eigenproblem, and symmetrically for fixed u. Multistart
    from random complex directions; the result is an upper bound on the
    true constant and is never certified.

    Parameters
    ----------
    Z : array or None
        0/1 pattern with unit diagonal; defaults to support_pattern(ens).
        A user-supplied pattern is accepted as-is after validation.
    restarts : int
        Number of random starting directions.

    Returns
    -------
    FlatnessReport
    """
    validate(ens)
    if Z is None:
        Z = support_pattern(ens)
    Z = np.asarray(Z, dtype=np.int64)
    if Z.shape != (ens.n, ens.n) or not np.all((Z == 0) | (Z == 1)):
        raise DomainError("Z must be a 0/1 matrix of shape (n, n)")
    if not np.all(np.diag(Z) == 1):
        raise DomainError("Z must have unit diagonal")
    expo = primitivity_exponent(Z)

    rng = np.random.default_rng(seed)
    n = ens.n
    minima = []
    best = np.inf
    for _ in range(max(1, int(restarts))):
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v /= np.linalg.norm(v)
        current = np.inf
        for _ in range(max_sweeps):
            Av, dv = _flatness_quadratics(ens, Z, v)
            lam_u, u = _masked_smallest(Av, dv)
            if lam_u is None:
                break
            # v-step: numerator v* A'(u) v, denominator sum_k |v_k|^2 (Z |u|^2)_k
            Au = np.zeros((n, n), dtype=complex)
            for La in ens.L:
                w1 = La.conj().T @ u
                w2 = La @ u
                Au += np.outer(w1, w1.conj()) + np.outer(w2, w2.conj())
            du = Z @ (np.abs(u) ** 2)
            lam_v, vnew = _masked_smallest(Au, du)
            if lam_v is None:
                break
            v = vnew
            if current - lam_v < tol:
                current = min(current, lam_v)
                break
            current = lam_v
        if np.isfinite(current):
            minima.append(current)
            best = min(best, current)
    if not minima:
        raise DomainError("flatness probe found no admissible direction")
    return FlatnessReport(Z=Z, exponent=expo, c_estimate=float(max(best, 0.0)),
                          certified=False, samples_used=len(minima),
                          minima_trace=tuple(minima))
