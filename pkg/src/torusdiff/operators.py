"""Sparse assembly of generators, perturbations, adjoints, and Dirichlet forms.

Central differences on the circle grid: per site i with mesh h,

    d_i^2 f -> (f(eta+) - 2 f(eta) + f(eta-)) / h^2
    d_i  f -> (f(eta+) - f(eta-)) / (2h)

where eta+- shift the angle at site i by one grid step (mod M).  The
generator row for state s therefore carries, per site, off-diagonal entries
a/(2h^2) +- b/(2h) at the shifted states; the diagonal is assembled as the
negated sum of the off-diagonal entries in column-sorted order, which makes
the canonical row-sum check return exactly 0.0.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateMeasure, MeshTooCoarse, NonPositiveMeasure, NotElliptic
from .model import DiffusionSpec, enumerate_states, evaluate_field
from .tolerances import (MEASURE_FLOOR, MEASURE_SUM_TOL, NEGATIVE_CLAMP, STATE_CAP)


class OperatorTag(enum.Enum):
    GENERATOR = "generator"
    FIRST_ORDER = "first_order"
    ADJOINT = "adjoint"
    SYMMETRIC_PART = "symmetric_part"
    ANTISYMMETRIC_PART = "antisymmetric_part"


@dataclass
class OperatorMatrix:
    """Sparse operator over the enumerated state space, with provenance."""

    matrix: sp.csr_matrix
    tag: OperatorTag
    spec: Optional[DiffusionSpec] = None
    meta: dict = dc_field(default_factory=dict)

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def nnz(self):
        return self.matrix.nnz

    def dot(self, v):
        return self.matrix.dot(v)

    def toarray(self):
        return self.matrix.toarray()

    def row_sum_defects(self):
        """Row sums recomputed in the canonical assembly order.

        For GENERATOR rows (uniform 2m+1 entries, diagonal = minus the sum of
        the sorted off-diagonals) and FIRST_ORDER rows (exact +-v pairs) the
        result is exactly 0.0 per row; other tags fall back to plain row sums.
        """
        A = self.matrix
        if self.tag is OperatorTag.GENERATOR and "uniform_row_nnz" in self.meta:
            k = self.meta["uniform_row_nnz"]
            data = A.data.reshape(A.shape[0], k)
            cols = A.indices.reshape(A.shape[0], k)
            rows = np.arange(A.shape[0])[:, None]
            off = data[cols != rows].reshape(A.shape[0], k - 1)
            diag = data[cols == rows]
            return np.sum(off, axis=1) + diag
        if self.tag is OperatorTag.FIRST_ORDER:
            out = np.zeros(A.shape[0])
            indptr = A.indptr
            for r in range(A.shape[0]):
                vals = A.data[indptr[r]:indptr[r + 1]]
                if vals.size == 0:
                    continue
                s = np.sort(vals)
                out[r] = 0.5 * float(np.sum(s + s[::-1]))
            return out
        return np.asarray(A.sum(axis=1)).ravel()

    def write_triplet(self, path):
        """Plain-text triplet export: header `N nnz`, lines `row col value`."""
        coo = self.matrix.tocoo()
        with open(path, "w") as fh:
            fh.write(f"{self.n} {coo.nnz}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {v:.17g}\n")


def read_triplet(path):
    """Inverse of write_triplet, for cross-check round trips."""
    with open(path) as fh:
        n, nnz = (int(x) for x in fh.readline().split())
        rows, cols, vals = [], [], []
        for _ in range(nnz):
            r, c, v = fh.readline().split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------

class Measure:
    """Normalized nonnegative weights over states, with solve metadata."""

    __slots__ = ("weights", "residual", "solver")

    def __init__(self, weights, residual=np.nan, solver=""):
        w = np.asarray(weights, dtype=float)
        if (w < 0).any():
            raise NonPositiveMeasure(f"min weight {w.min()} < 0")
        s = w.sum()
        if abs(s - 1.0) > MEASURE_SUM_TOL:
            raise ValueError(f"weights sum to {s}, not 1 within {MEASURE_SUM_TOL}")
        w = w.copy()
        w.flags.writeable = False
        self.weights = w
        self.residual = float(residual)
        self.solver = solver

    @property
    def n(self):
        return self.weights.shape[0]

    def mean(self, f):
        return float(self.weights @ f)

    def inner(self, f, g):
        return float(np.sum(self.weights * np.conj(f) * g).real) if np.iscomplexobj(f) or np.iscomplexobj(g) \
            else float(np.sum(self.weights * f * g))

    def norm2(self, f):
        return float(np.sqrt(np.sum(self.weights * np.abs(f) ** 2)))

    def norm_p(self, f, p):
        return float(np.sum(self.weights * np.abs(f) ** p) ** (1.0 / p))

    def tv(self, other):
        w2 = other.weights if isinstance(other, Measure) else np.asarray(other)
        return 0.5 * float(np.abs(self.weights - w2).sum())

    def write_text(self, path):
        """Two-column export: state index, weight (17 significant digits)."""
        with open(path, "w") as fh:
            for i, w in enumerate(self.weights):
                fh.write(f"{i} {w:.17g}\n")


def repair_weights(w, clamp=NEGATIVE_CLAMP):
    """Clamp tiny negative round-off to 0 and renormalize; error below -clamp."""
    w = np.asarray(w, dtype=float)
    if (w < -clamp).any():
        raise NonPositiveMeasure(
            f"weight {w.min()} below -{clamp}: not attributable to round-off")
    w = np.where(w < 0, 0.0, w)
    return w / w.sum()


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def _insert_diagonal(cols, vals):
    """Sort off-diagonals by column, set diag = -sum, splice into CSR arrays.

    cols/vals have shape (N, 2m).  Returns (indices, data) of shape
    (N, 2m+1) with the diagonal placed in column-sorted position, so the
    row data is fully sorted and re-summing the off-diagonals reproduces
    -diag bit for bit.
    """
    N, k = cols.shape
    order = np.argsort(cols, axis=1)
    cols_s = np.take_along_axis(cols, order, axis=1)
    vals_s = np.take_along_axis(vals, order, axis=1)
    diag = -np.sum(vals_s, axis=1)
    rows = np.arange(N, dtype=np.int64)
    p = (cols_s < rows[:, None]).sum(axis=1)
    j = np.arange(k + 1, dtype=np.int64)[None, :]
    gather = np.clip(j - (j > p[:, None]), 0, k - 1)
    out_cols = np.take_along_axis(cols_s, gather, axis=1)
    out_vals = np.take_along_axis(vals_s, gather, axis=1)
    is_diag = j == p[:, None]
    out_cols = np.where(is_diag, rows[:, None], out_cols)
    out_vals = np.where(is_diag, diag[:, None], out_vals)
    return out_cols, out_vals


def assemble_generator(spec, *, cap=STATE_CAP, space=None):
    """Sparse matrix of L = sum_i (a_i/2) d_i^2 + b_i d_i on the state grid.

    Requires h * b_max < a_min (declared bounds), which keeps every
    off-diagonal entry positive; violated entries found during assembly also
    raise MeshTooCoarse.  Row sums vanish exactly in the canonical order.
    """
    if space is None:
        space = enumerate_states(spec.lattice, spec.grid, cap=cap)
    N, m = space.n_states, space.n_sites
    h = spec.grid.h
    fld = spec.field
    if h * fld.b_max >= fld.a_min:
        raise MeshTooCoarse(
            f"h*b_max = {h * fld.b_max:.3g} >= a_min = {fld.a_min:.3g}; refine the grid")
    view = space.batch_view()
    cols = np.empty((N, 2 * m), dtype=np.int64)
    vals = np.empty((N, 2 * m))
    for pos, site in enumerate(spec.lattice.sites()):
        a_vals = evaluate_field(fld.a, site, view, N)
        if a_vals.min() <= 0:
            raise NotElliptic(f"a at site {site} attains {a_vals.min()} <= 0")
        b_vals = evaluate_field(fld.b, site, view, N)
        cp = a_vals / (2 * h * h) + b_vals / (2 * h)
        cm = a_vals / (2 * h * h) - b_vals / (2 * h)
        if cp.min() <= 0 or cm.min() <= 0:
            raise MeshTooCoarse(f"stencil sign lost at site {site}; refine the grid")
        cols[:, 2 * pos] = space.neighbor_indices(pos, +1)
        cols[:, 2 * pos + 1] = space.neighbor_indices(pos, -1)
        vals[:, 2 * pos] = cp
        vals[:, 2 * pos + 1] = cm
    indices, data = _insert_diagonal(cols, vals)
    k = 2 * m + 1
    matrix = sp.csr_matrix((data.ravel(), indices.ravel(),
                            np.arange(N + 1, dtype=np.int64) * k), shape=(N, N))
    return OperatorMatrix(matrix, OperatorTag.GENERATOR, spec=spec,
                          meta={"uniform_row_nnz": k, "h": h})


def assemble_first_order(pert, lattice, grid, *, cap=STATE_CAP, space=None):
    """Sparse matrix of A = sum_i c_i d_i (central differences, no diagonal).

    Entries come in exact +-v pairs per site, so rows annihilate constants
    exactly; sites where c vanishes contribute no entries, keeping at most
    2*|Lambda_n| stored values per row.
    """
    if space is None:
        space = enumerate_states(lattice, grid, cap=cap)
    N = space.n_states
    h = grid.h
    view = space.batch_view()
    idx = np.arange(N, dtype=np.int64)
    rows, cols, vals = [], [], []
    for pos, site in enumerate(lattice.sites()):
        c_vals = evaluate_field(pert.c, site, view, N)
        v = c_vals / (2 * h)
        keep = v != 0.0
        if not keep.any():
            continue
        rows += [idx[keep], idx[keep]]
        cols += [space.neighbor_indices(pos, +1)[keep],
                 space.neighbor_indices(pos, -1)[keep]]
        vals += [v[keep], -v[keep]]
    if rows:
        matrix = sp.csr_matrix((np.concatenate(vals),
                                (np.concatenate(rows), np.concatenate(cols))),
                               shape=(N, N))
    else:
        matrix = sp.csr_matrix((N, N))
    return OperatorMatrix(matrix, OperatorTag.FIRST_ORDER, spec=None,
                          meta={"h": h, "lattice": lattice, "grid": grid,
                                "perturbation": pert})


def brute_force_generator(spec, *, cap=STATE_CAP):
    """Independent dense assembly: loop every state, apply stencils literally.

    Oracle for assemble_generator; deliberately scalar (per-state evaluator
    calls, diagonal accumulated termwise, no shared code path).
    """
    space = enumerate_states(spec.lattice, spec.grid, cap=cap)
    N = space.n_states
    h = spec.grid.h
    M = spec.grid.points_per_circle
    L = np.zeros((N, N))
    for s in range(N):
        digits = space.decode(s)
        view = space.state_view(s)
        for pos, site in enumerate(spec.lattice.sites()):
            a = float(spec.field.a(site, view))
            b = float(spec.field.b(site, view))
            up = s + (((digits[pos] + 1) % M) - digits[pos]) * M ** pos
            dn = s + (((digits[pos] - 1) % M) - digits[pos]) * M ** pos
            L[s, up] += a / (2 * h * h) + b / (2 * h)
            L[s, dn] += a / (2 * h * h) - b / (2 * h)
            L[s, s] -= a / (h * h)
    return L


# ---------------------------------------------------------------------------
# adjoints and decompositions
# ---------------------------------------------------------------------------

def nu_adjoint(op, nu):
    """nu-weighted adjoint D^{-1} M^T D with D = diag(nu weights).

    Satisfies the exact discrete identity (g, M f)_nu = (M* g, f)_nu.
    """
    w = nu.weights if isinstance(nu, Measure) else np.asarray(nu, dtype=float)
    if w.min() <= MEASURE_FLOOR:
        raise DegenerateMeasure(f"measure weight {w.min()} at/below {MEASURE_FLOOR}")
    mat = op.matrix if isinstance(op, OperatorMatrix) else op
    adj = sp.diags(1.0 / w) @ mat.T @ sp.diags(w)
    parent = op.tag.value if isinstance(op, OperatorMatrix) else "matrix"
    return OperatorMatrix(adj.tocsr(), OperatorTag.ADJOINT,
                          spec=getattr(op, "spec", None),
                          meta={"adjoint_of": parent})


def symmetrize(L, nu):
    """Split L into nu-self-adjoint S and nu-skew-adjoint parts, S + Asym = L."""
    Ls = nu_adjoint(L, nu).matrix
    S = ((L.matrix + Ls) * 0.5).tocsr()
    Asym = ((L.matrix - Ls) * 0.5).tocsr()
    return (OperatorMatrix(S, OperatorTag.SYMMETRIC_PART, spec=L.spec, meta=dict(L.meta)),
            OperatorMatrix(Asym, OperatorTag.ANTISYMMETRIC_PART, spec=L.spec, meta=dict(L.meta)))


def dirichlet_form(L, nu, f):
    """(lhs, rhs) of the discrete Dirichlet-form identity.

    lhs = (f, Lf)_nu by matrix action.  rhs = -sum_i <(a_i/2) (D_i f)^2>_nu
    with D_i the central difference; a_i/2 is the second-order stencil
    coefficient, so lhs - rhs -> 0 at O(h^2) for smooth f when nu is the
    exact discrete stationary measure.
    """
    if L.spec is None:
        raise ValueError("dirichlet_form needs an operator with spec provenance")
    spec = L.spec
    space = enumerate_states(spec.lattice, spec.grid)
    w = nu.weights if isinstance(nu, Measure) else np.asarray(nu, dtype=float)
    f = np.asarray(f, dtype=float)
    h = spec.grid.h
    lhs = float(np.sum(w * f * L.dot(f)))
    view = space.batch_view()
    rhs = 0.0
    for pos, site in enumerate(spec.lattice.sites()):
        a_vals = evaluate_field(spec.field.a, site, view, space.n_states)
        df = (f[space.neighbor_indices(pos, +1)] - f[space.neighbor_indices(pos, -1)]) / (2 * h)
        rhs -= float(np.sum(w * (a_vals / 2.0) * df * df))
    return lhs, rhs
