"""Perturbation engine: recurrence series, direct solves, and Riesz projectors.

The density of the perturbed stationary measure nu_eps relative to nu expands
as g_eps = sum_k eps^k f_k with f_0 = 1, <f_k>_nu = 0 for k >= 1, and

    L0* f_{k+1} = -A* f_k      (adjoints taken in L2[nu]).

Each solve is singular with one-dimensional kernel (the constants); a
bordered system appends the column nu (spanning the cokernel) and the row
nu^T (enforcing the zero mean), which is nonsingular and preserves sparsity.

The convergence radius is probed two ways: the guaranteed constant
eps_c = a / (C0 sqrt(gamma)), and the empirical radius 1/rho from a
log-linear fit of the coefficient norms.  The spectral projector onto the
0-eigenspace of L_eps is computed by trapezoid quadrature of the resolvent
around a circle separating 0 from the rest of the spectrum.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (ContourHitsSpectrum, DegenerateSeries, MeshTooCoarse,
                     NegativeDensityWarning, NonPositiveConstant,
                     QuadratureNotConverged, SolvabilityViolated)
from .model import random_trig_vector
from .operators import Measure, OperatorMatrix, OperatorTag, nu_adjoint, repair_weights
from .stationary import stationary_measure
from .tolerances import (DENSE_CAP, MEAN_ZERO_TOL, PROJECTOR_RANK_CUTOFF,
                         QUADRATURE_TOL, RECURRENCE_RTOL, SERIES_FLOOR,
                         SOLVABILITY_TOL, STATIONARY_RTOL)


def epsilon_c(a, C0, gamma):
    """Guaranteed series radius a / (C0 * sqrt(gamma)); inputs must be > 0."""
    if not (a > 0 and C0 > 0 and gamma > 0):
        raise NonPositiveConstant(f"epsilon_c needs positive inputs, got {(a, C0, gamma)}")
    return a / (C0 * math.sqrt(gamma))


@dataclass
class SeriesResult:
    """Coefficients f_0..f_K with norms, residuals, and radius bookkeeping."""

    coefficients: np.ndarray          # (K+1, N); row k is f_k
    norms: np.ndarray                 # ||f_k||_{2,nu}
    residuals: np.ndarray             # relative recurrence residual per solve
    means: np.ndarray                 # <f_k>_nu
    nu: Measure
    epsilon_c: Optional[float] = None
    epsilon_c_constants: Optional[dict] = None
    rho_hat: Optional[float] = None
    meta: dict = dc_field(default_factory=dict)

    @property
    def order(self):
        return self.coefficients.shape[0] - 1

    def validate(self, rtol=RECURRENCE_RTOL, mean_tol=MEAN_ZERO_TOL):
        assert np.all(self.coefficients[0] == 1.0), "f_0 must be the constant 1"
        assert np.all(np.abs(self.means[1:]) <= mean_tol), \
            f"max |<f_k>_nu| = {np.abs(self.means[1:]).max():.3e} > {mean_tol}"
        assert np.all(self.residuals <= rtol), \
            f"max recurrence residual {self.residuals.max():.3e} > {rtol}"

    def write_table(self, path):
        """CSV table (k, norm, residual) per the series export format."""
        with open(path, "w") as fh:
            fh.write("k,norm,residual\n")
            for k in range(self.order + 1):
                res = self.residuals[k - 1] if k >= 1 else 0.0
                fh.write(f"{k},{self.norms[k]:.17g},{res:.17g}\n")


def _bordered_factor(Lstar, nu_w):
    N = Lstar.shape[0]
    B = sp.bmat([[Lstar.tocsc(), sp.csc_matrix(nu_w[:, None])],
                 [sp.csc_matrix(nu_w[None, :]), None]], format="csc")
    return spla.splu(B)


def rs_coefficients(L0, A, nu, K, *, check_stationarity=True):
    """Solve the recurrence L0* f_{k+1} = -A* f_k for k < K.

    Solvability is guaranteed because A annihilates constants, hence
    (1, A* f)_nu = (A 1, f)_nu = 0; it is still checked numerically before
    each solve (a violation signals a broken adjoint).  The bordered solves
    enforce <f_k>_nu = 0 exactly up to round-off, with an explicit mean
    subtraction afterwards.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    w = nu.weights
    mat = L0.matrix if isinstance(L0, OperatorMatrix) else L0
    if check_stationarity:
        resid = float(np.abs(w @ mat).sum())
        scale = float(np.abs(mat.data).sum())
        if resid > STATIONARY_RTOL * scale:
            raise SolvabilityViolated(
                f"nu is not stationary for L0: ||nu^T L||_1 = {resid:.3e}")
    Lstar = nu_adjoint(L0, nu).matrix
    Astar = nu_adjoint(A, nu).matrix
    lu = _bordered_factor(Lstar, w)
    N = mat.shape[0]
    coeffs = [np.ones(N)]
    residuals = []
    for _ in range(K):
        r = Astar @ coeffs[-1]
        rnorm = float(np.sqrt(np.sum(w * r * r)))
        mean_r = float(np.sum(w * r))
        if abs(mean_r) > SOLVABILITY_TOL * max(rnorm, 1e-300):
            raise SolvabilityViolated(
                f"<A* f_k>_nu = {mean_r:.3e} not zero relative to ||A* f_k|| = {rnorm:.3e}")
        rhs = np.concatenate([-r, [0.0]])
        sol = lu.solve(rhs)
        f = sol[:N]
        f = f - float(np.sum(w * f))
        res = Lstar @ f + r
        residuals.append(float(np.sqrt(np.sum(w * res * res)) / max(rnorm, 1e-300)))
        coeffs.append(f)
    coeffs = np.array(coeffs)
    norms = np.sqrt((w * coeffs * coeffs).sum(axis=1))
    means = (w * coeffs).sum(axis=1)
    return SeriesResult(coefficients=coeffs, norms=norms,
                        residuals=np.array(residuals), means=means, nu=nu,
                        meta={"solver": "bordered-lu"})


def rs_coefficients_pinv(L0, A, nu, K):
    """Alternative deflation route: dense least-squares solve per order.

    Independent of the bordered path; used to confirm uniqueness of the
    normalized solution (the kernel is one-dimensional).
    """
    w = nu.weights
    Lstar = nu_adjoint(L0, nu).matrix.toarray()
    Astar = nu_adjoint(A, nu).matrix
    N = Lstar.shape[0]
    coeffs = [np.ones(N)]
    for _ in range(K):
        r = Astar @ coeffs[-1]
        f, *_ = np.linalg.lstsq(Lstar, -r, rcond=None)
        f = f - float(np.sum(w * f))
        coeffs.append(f)
    return np.array(coeffs)


def series_density(series, eps, K=None):
    """Truncated density g = sum_{k<=K} eps^k f_k and the renormalized measure.

    <g>_nu = 1 holds analytically; the renormalization defect is recorded on
    the returned measure metadata.  A density with negative values (expected
    once |eps| is too large) triggers NegativeDensityWarning and clamping.
    """
    if K is None:
        K = series.order
    K = min(K, series.order)
    g = np.zeros_like(series.coefficients[0])
    for k in range(K, -1, -1):
        g = g * eps + series.coefficients[k]
    w = series.nu.weights * g
    min_g = float(g.min())
    if min_g < 0:
        warnings.warn(
            f"series density min {min_g:.3e} < 0 at eps={eps} (K={K}); clamping",
            NegativeDensityWarning)
        w = np.where(w < 0, 0.0, w)
    defect = abs(float(w.sum()) - 1.0)
    measure = Measure(w / w.sum(), residual=defect,
                      solver=f"series(K={K}, eps={eps:.6g})")
    return g, measure


def perturbed_generator(L0, A, eps):
    """L_eps = L0 + eps*A with the mesh admissibility check."""
    spec = L0.spec
    if spec is not None:
        h = spec.grid.h
        c_max = 0.0
        meta = A.meta if isinstance(A, OperatorMatrix) else {}
        pert = meta.get("perturbation")
        if pert is not None:
            c_max = pert.c_max
        if h * (spec.field.b_max + abs(eps) * c_max) >= spec.field.a_min:
            raise MeshTooCoarse(
                f"h*(b_max + |eps| c_max) >= a_min at eps={eps}; refine the grid")
    mat = (L0.matrix + eps * A.matrix).tocsr()
    return OperatorMatrix(mat, OperatorTag.GENERATOR, spec=spec,
                          meta={**L0.meta, "eps": eps})


def direct_perturbed_measure(L0, A, eps, *, method="auto"):
    """Stationary measure of L0 + eps*A and its density against nu(L0).

    Returns (nu_eps, g_direct) with g_direct = nu_eps / nu pointwise.
    """
    Leps = perturbed_generator(L0, A, eps)
    nu_eps = stationary_measure(Leps, method=method)
    nu0 = stationary_measure(L0, method=method)
    g = nu_eps.weights / nu0.weights
    return nu_eps, g


@dataclass
class ProjectorResult:
    """Riesz projector with quadrature and idempotency diagnostics."""

    P: np.ndarray
    radius: float
    nodes: int
    idempotency_defect: float
    rank: int
    max_imag: float
    eps: float = 0.0


def _resolvent_sum(csc, zs):
    """sum_q z_q (L - z_q)^{-1} as a dense matrix, one sparse LU per node."""
    N = csc.shape[0]
    eye = sp.identity(N, format="csc", dtype=complex)
    total = np.zeros((N, N), dtype=complex)
    I = np.eye(N, dtype=complex)
    for z in zs:
        try:
            lu = spla.splu(csc - z * eye)
            R = lu.solve(I)
        except RuntimeError as exc:
            raise ContourHitsSpectrum(f"resolvent singular at z={z}: {exc}") from exc
        if not np.all(np.isfinite(R)):
            raise ContourHitsSpectrum(f"resolvent overflow at z={z}")
        total += z * R
    return total


def riesz_projector(L_eps, nu, *, radius=None, gap_report=None, q0=16,
                    q_max=1024, quad_tol=QUADRATURE_TOL, dense_cap=DENSE_CAP,
                    check_separation=True):
    """Spectral projector P = -(1/2 pi i) * contour integral of R(z, L_eps).

    Trapezoid rule on the circle |z| = radius (default: half the spectral
    gap), node count doubled until the projector stabilizes below quad_tol;
    node sets nest under doubling so previous resolvent solves are reused.
    At eps = 0 the result is the rank-one projector 1 nu^T.
    """
    mat = L_eps.matrix if isinstance(L_eps, OperatorMatrix) else sp.csr_matrix(L_eps)
    N = mat.shape[0]
    if N > dense_cap:
        raise QuadratureNotConverged(
            f"dense projector refused for N={N} > dense cap {dense_cap}")
    if radius is None:
        if gap_report is None:
            raise ValueError("need radius or gap_report")
        radius = gap_report.gap / 2.0
    if not radius > 0:
        raise ValueError("contour radius must be positive")
    if check_separation:
        evals = np.linalg.eigvals(mat.toarray())
        moduli = np.sort(np.abs(evals))
        nonzero = moduli[moduli > 1e-8 * max(moduli.max(), 1.0)]
        if len(nonzero) and nonzero[0] <= radius:
            raise ContourHitsSpectrum(
                f"radius {radius:.4g} >= nearest nonzero eigenvalue modulus "
                f"{nonzero[0]:.4g}; contour does not separate the spectrum")
    csc = mat.tocsc().astype(complex)
    q = q0
    zs = radius * np.exp(2j * np.pi * np.arange(q) / q)
    total = _resolvent_sum(csc, zs)
    P_old = -total / q
    while q < q_max:
        odd = radius * np.exp(2j * np.pi * (np.arange(q) + 0.5) / q)
        total = total + _resolvent_sum(csc, odd)
        q *= 2
        P_new = -total / q
        if np.abs(P_new - P_old).max() <= quad_tol:
            P_old = P_new
            break
        P_old = P_new
    else:
        raise QuadratureNotConverged(
            f"projector not stabilized below {quad_tol} with {q_max} nodes")
    max_imag = float(np.abs(P_old.imag).max())
    P = P_old.real
    defect = float(np.linalg.norm(P @ P - P, 2))
    svals = np.linalg.svd(P, compute_uv=False)
    rank = int((svals > PROJECTOR_RANK_CUTOFF).sum())
    meta_eps = L_eps.meta.get("eps", 0.0) if isinstance(L_eps, OperatorMatrix) else 0.0
    return ProjectorResult(P=P, radius=radius, nodes=q,
                           idempotency_defect=defect, rank=rank,
                           max_imag=max_imag, eps=meta_eps)


def projector_density(result, nu):
    """Perturbed density from the adjoint projector: P* 1, normalized to mean 1.

    P* is the nu-adjoint D^{-1} P^T D; for the projector onto the
    0-eigenspace of L_eps this reproduces nu_eps / nu.
    """
    w = nu.weights
    g = (result.P.T @ w) / w
    return g / float(np.sum(w * g))


@dataclass
class RadiusFit:
    """Least-squares growth fit of the coefficient norms."""

    rho_hat: float
    radius: float
    r_squared: float
    slope: float
    intercept: float
    window: tuple


def empirical_radius(series, *, k_min=2, k_max=None):
    """Fit log ||f_k|| ~ slope*k + intercept over k in [k_min, k_max].

    rho_hat = exp(slope) estimates the reciprocal convergence radius;
    radius = 1/rho_hat.  A series with all norms below the floor (e.g. the
    pure Laplacian with a constant-coefficient perturbation) has infinite
    radius and raises DegenerateSeries.
    """
    if k_max is None:
        k_max = series.order
    if np.all(series.norms[1:] < SERIES_FLOOR):
        raise DegenerateSeries(
            "all coefficient norms below floor: empirical radius is infinite")
    ks = np.arange(k_min, k_max + 1)
    y = np.log(series.norms[ks])
    X = np.vstack([ks, np.ones_like(ks, dtype=float)]).T
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / max(ss_tot, 1e-300)
    rho = float(np.exp(coef[0]))
    return RadiusFit(rho_hat=rho, radius=1.0 / rho, r_squared=r2,
                     slope=float(coef[0]), intercept=float(coef[1]),
                     window=(int(k_min), int(k_max)))


@dataclass
class RelativeBoundReport:
    """Worst slack of ||Af|| <= (C0/sqrt(a)) (||Lf||/lambda + lambda ||f||)."""

    checked: int
    worst_slack: float
    violations: list
    lambdas: tuple


def relative_bound_check(L0, A, nu, *, C0, a, trials=1000,
                         lambdas=(0.1, 1.0, 10.0), seed=0, degree=2,
                         test_vectors=None):
    """Evaluate the relative-boundedness inequality on random smooth vectors.

    Violations are reported with magnitudes, never raised: the inequality is
    continuum-exact and discretization can perturb it at O(h^2).
    """
    from .model import enumerate_states  # local import to avoid cycle at module load

    w = nu.weights
    rng = np.random.default_rng(seed)
    if test_vectors is None:
        spec = L0.spec
        space = enumerate_states(spec.lattice, spec.grid)
        test_vectors = (random_trig_vector(space, rng, degree=degree)
                        for _ in range(trials))
    pref = C0 / math.sqrt(a)
    worst = math.inf
    violations = []
    count = 0
    for f in test_vectors:
        count += 1
        nf = float(np.sqrt(np.sum(w * f * f)))
        Lf = L0.dot(f)
        nLf = float(np.sqrt(np.sum(w * Lf * Lf)))
        Af = A.dot(f)
        lhs = float(np.sqrt(np.sum(w * Af * Af)))
        for lam in lambdas:
            rhs = pref * (nLf / lam + lam * nf)
            slack = rhs - lhs
            if slack < worst:
                worst = slack
            if slack < 0:
                violations.append({"lambda": lam, "magnitude": -slack,
                                   "lhs": lhs, "rhs": rhs})
    return RelativeBoundReport(checked=count, worst_slack=worst,
                               violations=violations, lambdas=tuple(lambdas))
