"""Stationary measures, spectral gaps, and log-Sobolev constant estimates.

A stationary measure solves nu^T L = 0 with nu >= 0, sum nu = 1.  Below the
dense cap the left null space comes from a full SVD (which also certifies the
kernel dimension); otherwise a bordered sparse solve

    [ L^T   1/N ] [nu  ]   [0]
    [ 1^T    0  ] [mu  ] = [1]

pins the normalization and stays nonsingular while the kernel is simple.

The spectral gap is the smallest nonzero eigenvalue of -S in L2[nu], computed
after the similarity transform D^{1/2} S D^{-1/2} which is plainly symmetric.

LSI constants follow the convention  Ent_nu(f^2) <= gamma * sum_i <(d_i f)^2>_nu
(gamma multiplies the squared gradient form; larger gamma is weaker).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize

from .errors import NoConvergence, NoHamiltonian, NonUniqueKernel
from .model import hamiltonian_oscillation
from .operators import Measure, OperatorMatrix, nu_adjoint, repair_weights
from .tolerances import (DENSE_CAP, EIGEN_RESIDUAL_TOL, KERNEL_RTOL, STATIONARY_RTOL)


@dataclass
class SpectralReport:
    """Gap of -S in L2[nu] plus kernel and LSI bookkeeping."""

    gap: float
    kernel_dim: int
    eigen_residual: float
    method: str
    gap_eigenvector: Optional[np.ndarray] = None
    lsi_gamma_hat: Optional[float] = None
    lsi_method: Optional[str] = None
    lsi_details: Optional[dict] = None


def _l1_norm(mat):
    return float(np.abs(mat.data).sum()) if sp.issparse(mat) else float(np.abs(mat).sum())


def stationary_measure(L, method="auto", *, rtol=STATIONARY_RTOL,
                       dense_cap=DENSE_CAP, max_refine=8):
    """Solve nu^T L = 0, normalized; residual checked against rtol * ||L||_1.

    method: "dense" (SVD left null space, certifies kernel dimension),
    "bordered" (sparse LU on the bordered system with iterative refinement),
    or "auto" (dense below the dense cap).
    """
    mat = L.matrix if isinstance(L, OperatorMatrix) else sp.csr_matrix(L)
    N = mat.shape[0]
    if method == "auto":
        method = "dense" if N <= dense_cap else "bordered"
    scale = _l1_norm(mat)

    if method == "dense":
        dense = mat.T.toarray()
        _, svals, vt = np.linalg.svd(dense)
        kernel_dim = int((svals < KERNEL_RTOL * max(svals[0], 1e-300)).sum())
        if kernel_dim != 1:
            raise NonUniqueKernel(
                f"kernel dimension {kernel_dim} != 1 (singular values tail {svals[-3:]})")
        v = vt[-1]
        if v.sum() < 0:
            v = -v
        w = repair_weights(v / v.sum())
        residual = float(np.abs(w @ mat).sum())
        if residual > rtol * scale:
            raise NoConvergence(
                f"dense null-space residual {residual:.3e} > {rtol:.1e} * ||L||_1",
                trace=[residual])
        return Measure(w, residual=residual, solver="dense-svd")

    if method != "bordered":
        raise ValueError(f"unknown method {method!r}")

    ones = np.ones(N)
    B = sp.bmat([[mat.T.tocsc(), sp.csc_matrix(ones[:, None] / N)],
                 [sp.csc_matrix(ones[None, :]), None]], format="csc")
    lu = spla.splu(B)
    rhs = np.zeros(N + 1)
    rhs[N] = 1.0
    x = lu.solve(rhs)
    trace = []
    for _ in range(max_refine):
        w = x[:N]
        residual = float(np.abs(w @ mat).sum()) / max(abs(w.sum()), 1e-300)
        trace.append(residual)
        if residual <= rtol * scale:
            break
        r = rhs - B @ x
        x = x + lu.solve(r)
    else:
        raise NoConvergence(
            f"bordered solve stalled at residual {trace[-1]:.3e}", trace=trace)
    w = repair_weights(x[:N] / x[:N].sum())
    residual = float(np.abs(w @ mat).sum())
    return Measure(w, residual=residual, solver="bordered-lu")


def spectral_gap(S, nu, *, dense_cap=DENSE_CAP, n_eigs=6):
    """Smallest nonzero eigenvalue of -S in L2[nu].

    S must be the nu-symmetric part; the similarity by D^{1/2} makes the
    problem plainly symmetric (re-symmetrized to kill round-off) and a dense
    eigh or shift-inverted Lanczos does the rest.
    """
    mat = S.matrix if isinstance(S, OperatorMatrix) else S
    w = nu.weights if isinstance(nu, Measure) else np.asarray(nu, dtype=float)
    N = mat.shape[0]
    root = np.sqrt(w)
    if N <= dense_cap:
        H = (mat.multiply(root[:, None])).multiply(1.0 / root[None, :]).toarray()
        H = -0.5 * (H + H.T)
        evals, evecs = np.linalg.eigh(H)
        method = "dense-eigh"
    else:
        Hs = (mat.multiply(root[:, None])).multiply(1.0 / root[None, :]).tocsr()
        Hs = (-0.5) * (Hs + Hs.T)
        k = min(n_eigs, N - 2)
        sigma = -1e-6 * _l1_norm(mat) / N
        evals, evecs = spla.eigsh(Hs, k=k, sigma=sigma, which="LM")
        order = np.argsort(evals)
        evals, evecs = evals[order], evecs[:, order]
        method = "lanczos-shift-invert"
    scale = float(np.abs(evals).max()) if len(evals) else 1.0
    kernel_tol = max(scale * KERNEL_RTOL, 1e-300)
    kernel_dim = int((evals < kernel_tol).sum())
    if kernel_dim < 1:
        raise NonUniqueKernel("no kernel eigenvalue found for -S")
    if kernel_dim >= len(evals):
        raise NonUniqueKernel(f"kernel dimension {kernel_dim} exhausts computed spectrum")
    gap = float(evals[kernel_dim])
    u = evecs[:, kernel_dim]
    vec = u / root
    vec = vec - float(np.sum(w * vec))
    r = -(mat @ vec) - gap * vec
    nrm = np.sqrt(np.sum(w * vec * vec))
    eigen_residual = float(np.sqrt(np.sum(w * r * r)) / max(gap * nrm, 1e-300))
    if eigen_residual > EIGEN_RESIDUAL_TOL:
        raise NoConvergence(
            f"gap eigenpair residual {eigen_residual:.3e} > {EIGEN_RESIDUAL_TOL:.1e}",
            trace=[eigen_residual])
    return SpectralReport(gap=gap, kernel_dim=kernel_dim,
                          eigen_residual=eigen_residual, method=method,
                          gap_eigenvector=vec / nrm)


# ---------------------------------------------------------------------------
# log-Sobolev estimates
# ---------------------------------------------------------------------------

def _lsi_objective(M, h):
    u = 1.0 / M

    def neg_ratio_and_grad(f):
        f2 = f * f
        m2 = u * f2.sum()
        if m2 <= 0:
            return 0.0, np.zeros_like(f)
        logs = np.log(f2 / m2 + 1e-300)
        ent = u * float((f2 * logs).sum())
        d = (np.roll(f, -1) - f) / h
        energy = u * float((d * d).sum())
        if energy <= 1e-13 * m2:
            return 0.0, np.zeros_like(f)
        g_ent = 2 * u * f * logs
        g_energy = (2 * u / (h * h)) * (2 * f - np.roll(f, 1) - np.roll(f, -1))
        ratio = ent / energy
        grad = (g_ent * energy - ent * g_energy) / (energy * energy)
        return -ratio, -grad

    return neg_ratio_and_grad


@lru_cache(maxsize=None)
def uniform_grid_lsi_constant(M, n_starts=24, seed=0):
    """LSI constant of the uniform measure on the M-point circle grid.

    Maximizes Ent_u(f^2) / E(f) over grid functions, with the forward
    difference energy E(f) = sum_j (1/M) ((f_{j+1}-f_j)/h)^2.  (The central
    difference square is degenerate on even grids: functions constant on each
    parity class have zero central energy but positive entropy.)  Multi-start
    L-BFGS with the analytic gradient; the result is the best local maximum
    found, and tensorization extends it to any number of independent sites.
    """
    h = 2.0 * np.pi / M
    objective = _lsi_objective(M, h)
    rng = np.random.default_rng(seed)
    th = h * np.arange(M)
    starts = [np.cos(th) + c for c in (0.0, 0.5, 1.0, 1.5)]
    starts += [np.exp(np.cos(th)), np.exp(2 * np.cos(th))]
    for _ in range(n_starts):
        starts.append(rng.standard_normal(M) + rng.uniform(0.0, 2.0))
    best = 0.0
    for x0 in starts:
        res = minimize(objective, x0, jac=True, method="L-BFGS-B",
                       options={"maxiter": 2000, "ftol": 1e-14, "gtol": 1e-12})
        best = max(best, -float(res.fun))
    return best


def lsi_constant_estimate(spec, nu, report, method="auto"):
    """Attach an LSI-constant estimate gamma_hat to a SpectralReport.

    HolleyStroock (reversible built-ins with a Hamiltonian):
        gamma_hat = gamma_unif(M) * exp(osc(H)),
    an upper bound for the LSI constant of nu.  GapLowerProxy: 1/gap,
    recorded as a lower-bound proxy only.  Returns (gamma_hat, method tag).
    """
    if method == "auto":
        method = "holley_stroock" if spec.hamiltonian is not None else "gap_proxy"
    if method in ("holley_stroock", "HolleyStroock"):
        if spec.hamiltonian is None:
            raise NoHamiltonian("Holley-Stroock needs a spec with a Hamiltonian")
        gamma_unif = uniform_grid_lsi_constant(spec.grid.points_per_circle)
        osc, exact = hamiltonian_oscillation(spec)
        gamma_hat = gamma_unif * float(np.exp(osc))
        tag = "HolleyStroock"
        details = {"gamma_unif": gamma_unif, "osc": osc, "osc_exact": exact}
    elif method in ("gap_proxy", "GapLowerProxy"):
        gamma_hat = 1.0 / report.gap
        tag = "GapLowerProxy"
        # gamma >= a/gap in the gap inequality Var <= (gamma/a)(f, -Lf);
        # the ellipticity-adjusted value is recorded alongside the proxy.
        a_min = spec.field.a_min if spec is not None else None
        details = {"gap": report.gap,
                   "ellipticity_over_gap": (a_min / report.gap) if a_min else None}
    else:
        raise ValueError(f"unknown LSI method {method!r}")
    report.lsi_gamma_hat = gamma_hat
    report.lsi_method = tag
    report.lsi_details = details
    return gamma_hat, tag


def detailed_balance_residual(L, nu):
    """max |nu_i L_ij - nu_j L_ji| normalized by max |nu_i L_ij|.

    Zero for exactly reversible generators; O(h^2) for discretized reversible
    diffusions; O(1) for genuinely non-reversible drifts.
    """
    mat = L.matrix if isinstance(L, OperatorMatrix) else L
    w = nu.weights if isinstance(nu, Measure) else np.asarray(nu, dtype=float)
    K = sp.diags(w) @ mat
    defect = float(np.abs((K - K.T).data).max()) if (K - K.T).nnz else 0.0
    return defect / float(np.abs(K.data).max())
