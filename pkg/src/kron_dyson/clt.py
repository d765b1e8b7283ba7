"""Mesoscopic linear statistics: test functions, the variance functional,
and the Monte Carlo central-limit experiment.

The statistic of interest is ``Tr f_N(H)`` for a compactly supported C^2
function ``g`` rescaled to a mesoscopic window,

    f_N(x) = g(N^gamma * (x - E0)),    0 < gamma < 1,

around a bulk energy ``E0``.  After centering, this statistic is
asymptotically Gaussian with a variance that depends only on ``g`` and the
symmetry class ``beta``:

    V[g] = 1/(2 beta pi^2) * intint ((g(x) - g(y)) / (x - y))^2 dx dy.

This module provides the test-function containers, a two-resolution
Gauss-Legendre quadrature for ``V[g]``, the mesoscopic rescaling, the plain
eigenvalue statistic, an independent contour-strip evaluation of the same
statistic through the resolvent trace, and the sampling experiment that
compares the empirical variance against ``V[g]``.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import legendre
from scipy import stats as scipy_stats
from scipy.interpolate import CubicSpline

from .errors import DomainError, InputError, NumericalError
from . import mde
from ._util import parallel_map, resolve_threads
from .sampler import draw_matrix, substream_rng

__all__ = [
    "TestFunction",
    "bump3",
    "gaussian_truncated",
    "from_samples",
    "from_callables",
    "vg_quadrature",
    "ScaledFunction",
    "scaled_function",
    "linear_statistic",
    "hs_statistic",
    "CltReport",
    "run_clt_experiment",
]


def _gauss_legendre(a, b, m):
    """Nodes and weights of the m-point Gauss-Legendre rule on [a, b]."""
    x, w = legendre.leggauss(int(m))
    half = 0.5 * (b - a)
    return half * (x + 1.0) + a, half * w


@dataclass(frozen=True)
class TestFunction:
    """A compactly supported C^2 test function on [-sigma, sigma].

    Parameters
    ----------
    tag : str
        Identifier of the construction ("bump3", "gaussian_truncated",
        "custom-sampled").
    sigma : float
        Support radius; the function vanishes identically outside
        ``[-sigma, sigma]``.
    g, gp, gpp : callable
        Vectorized evaluators of the function and its first two
        derivatives.  All three must return exact zeros outside the
        support.
    """

    tag: str
    sigma: float
    g: Callable = field(repr=False)
    gp: Callable = field(repr=False)
    gpp: Callable = field(repr=False)

    def __call__(self, x):
        return self.g(x)

    def norms(self, nodes=801):
        """L1 norms (||g||_1, ||g'||_1, ||g''||_1) by Gauss-Legendre."""
        x, w = _gauss_legendre(-self.sigma, self.sigma, nodes)
        return (
            float(w @ np.abs(self.g(x))),
            float(w @ np.abs(self.gp(x))),
            float(w @ np.abs(self.gpp(x))),
        )


def _masked(sigma, fn):
    def ev(x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) < sigma
        out = np.zeros_like(x)
        if np.any(inside):
            out[inside] = fn(x[inside])
        return out

    return ev


def bump3(sigma=1.0):
    """The cubic bump g(x) = (1 - (x/sigma)^2)^3 on [-sigma, sigma].

    C^2 on the whole line: g, g', g'' all vanish at the support edge.
    """
    if sigma <= 0:
        raise InputError("sigma must be positive")
    s = float(sigma)

    def g(u):
        t = u / s
        return (1.0 - t * t) ** 3

    def gp(u):
        t = u / s
        return -6.0 * t * (1.0 - t * t) ** 2 / s

    def gpp(u):
        t = u / s
        return 6.0 * (1.0 - t * t) * (5.0 * t * t - 1.0) / (s * s)

    return TestFunction("bump3", s, _masked(s, g), _masked(s, gp), _masked(s, gpp))


def gaussian_truncated(sigma=3.0):
    """A Gaussian multiplied by the cubic bump, supported on [-sigma, sigma].

    g(x) = exp(-x^2/2) * (1 - (x/sigma)^2)^3.  The bump factor kills the
    Gaussian tails smoothly, so g is C^2 with compact support.
    """
    if sigma <= 0:
        raise InputError("sigma must be positive")
    s = float(sigma)

    def parts(u):
        t = u / s
        b = (1.0 - t * t) ** 3
        bp = -6.0 * t * (1.0 - t * t) ** 2 / s
        bpp = 6.0 * (1.0 - t * t) * (5.0 * t * t - 1.0) / (s * s)
        phi = np.exp(-0.5 * u * u)
        return phi, b, bp, bpp

    def g(u):
        phi, b, _, _ = parts(u)
        return phi * b

    def gp(u):
        phi, b, bp, _ = parts(u)
        return phi * (bp - u * b)

    def gpp(u):
        phi, b, bp, bpp = parts(u)
        return phi * (bpp - 2.0 * u * bp + (u * u - 1.0) * b)

    return TestFunction(
        "gaussian_truncated", s, _masked(s, g), _masked(s, gp), _masked(s, gpp)
    )


def from_samples(xs, ys):
    """Cubic-spline test function through sample points.

    The sample abscissae must be strictly increasing and the first and last
    ordinates must be zero; the support radius is max(|xs|).  A natural
    spline is used, so g'' vanishes at the support edge; continuity of g'
    across the edge is the caller's responsibility (supply data that decays
    smoothly to zero).
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 4:
        raise InputError("need matching 1-d arrays with at least 4 samples")
    if not np.all(np.diff(xs) > 0):
        raise InputError("sample abscissae must be strictly increasing")
    if ys[0] != 0.0 or ys[-1] != 0.0:
        raise InputError("endpoint samples must be zero for compact support")
    s = float(np.max(np.abs(xs)))
    spline = CubicSpline(xs, ys, bc_type="natural")
    d1 = spline.derivative(1)
    d2 = spline.derivative(2)

    def clip(fn):
        def ev(x):
            x = np.asarray(x, dtype=float)
            inside = (x > xs[0]) & (x < xs[-1])
            out = np.zeros_like(x)
            if np.any(inside):
                out[inside] = fn(x[inside])
            return out

        return ev

    return TestFunction("custom-sampled", s, clip(spline), clip(d1), clip(d2))


def from_callables(g, gp, gpp, sigma, tag="custom-sampled"):
    """Wrap user-supplied evaluators; values outside [-sigma, sigma] are
    forced to exact zero."""
    if sigma <= 0:
        raise InputError("sigma must be positive")
    s = float(sigma)
    return TestFunction(tag, s, _masked(s, g), _masked(s, gp), _masked(s, gpp))


def _vg_single(g: TestFunction, beta, m):
    s = g.sigma
    x, w = _gauss_legendre(-s, s, m)
    X = x[:, None]
    Y = x[None, :]
    D = X - Y
    near = np.abs(D) < 1e-4 * s
    # bounded difference quotient; replace the (removable) diagonal
    # singularity by the derivative at the midpoint
    Dsafe = np.where(near, 1.0, D)
    quot = (g.g(X) - g.g(Y)) / Dsafe
    quot = np.where(near, g.gp(0.5 * (X + Y)), quot)
    core = w @ (quot * quot) @ w
    # x inside the support, y outside: the integrand is g(x)^2/(x-y)^2 and
    # the y integral is exact: 1/(sigma - x) + 1/(sigma + x)
    gx = g.g(x)
    tail = w @ (gx * gx * (1.0 / (s - x) + 1.0 / (s + x)))
    return (core + 2.0 * tail) / (2.0 * beta * np.pi ** 2)


def vg_quadrature(g: TestFunction, beta, nodes=400, rtol=1e-6):
    """Variance functional V[g] by two-resolution Gauss-Legendre quadrature.

    Evaluates the double integral of the squared difference quotient over
    the support square with the diagonal treated as a removable
    singularity, adds the closed-form contribution of the two half-plane
    tails, and normalizes by 1/(2 beta pi^2).  The rule is run at ``nodes``
    and ``2*nodes`` points; disagreement beyond ``rtol`` relative raises
    ``NumericalError``.
    """
    if beta not in (1, 2):
        raise InputError("beta must be 1 or 2")
    coarse = _vg_single(g, beta, nodes)
    fine = _vg_single(g, beta, 2 * nodes)
    if abs(fine - coarse) > rtol * max(abs(fine), 1e-30):
        raise NumericalError(
            "V[g] quadrature did not stabilize",
            coarse=coarse,
            fine=fine,
            rtol=rtol,
        )
    return float(fine)


class ScaledFunction:
    """Mesoscopic rescaling f_N(x) = g(N^gamma (x - E0)).

    Exposes the evaluators ``f``, ``fp``, ``fpp``, the scaling parameter
    ``eta0 = N^-gamma`` and the half-width ``delta = sigma * eta0``.  On
    construction the L1 scaling identities

        ||f_N||_1 = eta0 ||g||_1,   ||f_N'||_1 = ||g'||_1,
        ||f_N''||_1 = N^gamma ||g''||_1

    are checked by independent quadratures.
    """

    def __init__(self, g: TestFunction, E0, gamma, N, check=True):
        if not 0.0 < gamma < 1.0:
            raise DomainError("gamma must lie in (0, 1)")
        if N < 2:
            raise InputError("N must be at least 2")
        self.g = g
        self.E0 = float(E0)
        self.gamma = float(gamma)
        self.N = int(N)
        self.scale = float(N) ** gamma
        self.eta0 = 1.0 / self.scale
        self.delta = g.sigma * self.eta0
        self.support = (self.E0 - self.delta, self.E0 + self.delta)
        if check:
            self._check_norm_identities()

    def f(self, x):
        return self.g.g(self.scale * (np.asarray(x, dtype=float) - self.E0))

    __call__ = f

    def fp(self, x):
        return self.scale * self.g.gp(self.scale * (np.asarray(x) - self.E0))

    def fpp(self, x):
        u = self.scale * (np.asarray(x) - self.E0)
        return self.scale ** 2 * self.g.gpp(u)

    def _check_norm_identities(self, rtol=1e-4):
        n1g, n1gp, n1gpp = self.g.norms(nodes=801)
        x, w = _gauss_legendre(self.support[0], self.support[1], 1024)
        got = (
            float(w @ np.abs(self.f(x))),
            float(w @ np.abs(self.fp(x))),
            float(w @ np.abs(self.fpp(x))),
        )
        want = (self.eta0 * n1g, n1gp, self.scale * n1gpp)
        for name, a, b in zip(("|f|", "|f'|", "|f''|"), got, want):
            if abs(a - b) > rtol * max(abs(b), 1e-30):
                raise NumericalError(
                    "scaled-function norm identity violated",
                    norm=name,
                    quadrature=a,
                    expected=b,
                )


def scaled_function(g: TestFunction, E0, gamma, N) -> ScaledFunction:
    """Build the mesoscopic test function f_N(x) = g(N^gamma (x - E0))."""
    return ScaledFunction(g, E0, gamma, N)


def linear_statistic(eigs, f) -> float:
    """Sum of f over the eigenvalues: Tr f(H) for H with spectrum `eigs`."""
    eigs = np.asarray(eigs, dtype=float)
    return float(np.sum(f(eigs)))


def _smoothstep(t):
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def _smoothstep_d(t):
    return 30.0 * t * t * (1.0 - t) ** 2


def _hs_single(eigs, sf: ScaledFunction, nx, ny):
    delta = sf.delta
    xs, wx = _gauss_legendre(sf.support[0], sf.support[1], nx)
    fx = sf.f(xs)
    fpx = sf.fp(xs)
    fppx = sf.fpp(xs)
    total = 0.0
    # strip quadrature in two y panels: chi = 1 on [0, delta], smoothstep
    # decay on [delta, 2 delta]
    for lo, hi, flat in ((0.0, delta, True), (delta, 2.0 * delta, False)):
        ys, wy = _gauss_legendre(lo, hi, ny)
        if flat:
            chi = np.ones_like(ys)
            chip = np.zeros_like(ys)
        else:
            t = (ys - delta) / delta
            chi = 1.0 - _smoothstep(t)
            chip = -_smoothstep_d(t) / delta
        for y, w, c, cp in zip(ys, wy, chi, chip):
            dbar = 0.5 * (1j * y * fppx * c + 1j * (fx + 1j * y * fpx) * cp)
            trg = np.sum(1.0 / (eigs[None, :] - (xs[:, None] + 1j * y)), axis=1)
            total += w * float(wx @ np.real(dbar * trg))
    return (2.0 / np.pi) * total


def hs_statistic(eigs, g: TestFunction, E0, gamma, N, nodes=(256, 48), rtol=2e-4):
    """Tr f_N(H) through the resolvent trace on a strip.

    Uses the almost-analytic extension f~(x+iy) = (f(x) + iy f'(x)) chi(y)
    with a quintic smoothstep cutoff chi that equals 1 on [-delta, delta]
    and vanishes outside [-2 delta, 2 delta], delta = sigma * N^-gamma.
    The statistic is recovered as

        (1/pi) intint dbar f~(z) Tr G(z) dA(z)
            = (2/pi) Re int_{y>0} dbar f~ Tr G,

    evaluated by tensor Gauss-Legendre quadrature with
    Tr G(z) = sum_i 1/(lambda_i - z).  The grid is run twice (base and
    doubled); disagreement beyond ``rtol`` relative raises
    ``NumericalError``.  Must agree with ``linear_statistic``.
    """
    eigs = np.asarray(eigs, dtype=float)
    sf = ScaledFunction(g, E0, gamma, N, check=False)
    nx, ny = nodes
    coarse = _hs_single(eigs, sf, nx, ny)
    fine = _hs_single(eigs, sf, 2 * nx, 2 * ny)
    if abs(fine - coarse) > rtol * max(abs(fine), 1.0):
        raise NumericalError(
            "strip quadrature did not stabilize",
            coarse=coarse,
            fine=fine,
            rtol=rtol,
        )
    return float(fine)


@dataclass(frozen=True)
class CltReport:
    """Outcome of a Monte Carlo run of the mesoscopic CLT experiment."""

    ensemble_hash: str
    beta: int
    N: int
    gamma: float
    E0: float
    samples: int
    values: tuple
    mean: float
    variance: float
    variance_se: float
    skewness: float
    excess_kurtosis: float
    vg: float
    variance_ratio: float
    ks_distance: float

    def to_dict(self):
        return {
            "ensemble_hash": self.ensemble_hash,
            "beta": self.beta,
            "N": self.N,
            "gamma": self.gamma,
            "E0": self.E0,
            "samples": self.samples,
            "mean": self.mean,
            "variance": self.variance,
            "variance_se": self.variance_se,
            "skewness": self.skewness,
            "excess_kurtosis": self.excess_kurtosis,
            "vg": self.vg,
            "variance_ratio": self.variance_ratio,
            "ks_distance": self.ks_distance,
        }


def run_clt_experiment(
    ens,
    g: TestFunction,
    E0,
    gamma,
    N,
    samples,
    seed=0,
    threads=None,
    bulk_threshold=1e-3,
) -> CltReport:
    """Monte Carlo test of the mesoscopic CLT at a bulk energy.

    Draws ``samples`` independent realizations, computes the linear
    statistic Tr f_N(H) for each, and summarizes the centered sample:
    empirical variance (with its Gaussian standard error), skewness,
    excess kurtosis, Kolmogorov-Smirnov distance against a centered
    normal with the empirical variance, and the ratio of the empirical
    variance to the deterministic prediction V[g].

    Requires ``samples >= 100`` and, for random ensembles, that ``E0``
    lies in the bulk of the self-consistent density (refuses to run
    otherwise).  Deterministic ensembles (d = 0) are allowed anywhere and
    give zero variance.
    """
    if samples < 100:
        raise InputError("need at least 100 samples for moment estimates")
    if ens.d > 0:
        # refuse non-bulk energies; raises DomainError when the density
        # at E0 is below threshold
        mde.bulk_point(ens, E0, threshold=bulk_threshold)
    vg = vg_quadrature(g, ens.beta)
    sf = scaled_function(g, E0, gamma, N)

    def one(i):
        rng = substream_rng(seed, i)
        H = draw_matrix(ens, N, rng)
        eigs = np.linalg.eigvalsh(H)
        return linear_statistic(eigs, sf)

    vals = np.array(
        parallel_map(one, range(samples), resolve_threads(threads)), dtype=float
    )
    mean = float(np.mean(vals))
    centered = vals - mean
    variance = float(np.var(vals, ddof=1))
    if variance > 0.0:
        skew = float(scipy_stats.skew(vals))
        kurt = float(scipy_stats.kurtosis(vals))
        ks = float(
            scipy_stats.kstest(centered, "norm", args=(0.0, np.sqrt(variance))).statistic
        )
    else:
        skew = 0.0
        kurt = 0.0
        ks = 0.0
    return CltReport(
        ensemble_hash=ens.hash_hex(),
        beta=ens.beta,
        N=int(N),
        gamma=float(gamma),
        E0=float(E0),
        samples=int(samples),
        values=tuple(float(v) for v in vals),
        mean=mean,
        variance=variance,
        variance_se=variance * np.sqrt(2.0 / max(samples - 1, 1)),
        skewness=skew,
        excess_kurtosis=kurt,
        vg=vg,
        variance_ratio=variance / vg if vg > 0 else 0.0,
        ks_distance=ks,
    )
