"""Lattice geometry, circle grids, coefficient fields, and state enumeration.

Configurations live on the box Lambda_n = [-n, n]^d of Z^d, with one angle in
[0, 2*pi) per site.  The circle is discretized by M equispaced points, so a
scalar state is a vector of circle indices and the full state space is the
product with M^{|Lambda_n|} states, enumerated in mixed radix.

Coefficients are supplied as per-site evaluators a_i(eta), b_i(eta), c_i(eta)
with a declared finite range R: the value at site i may only depend on angles
within Chebyshev distance R.  Sites outside the box are resolved by the
closure rule: Frozen pins them at angle 0, Periodic wraps coordinates back
into the box.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Callable, Optional

import numpy as np

from .errors import NotElliptic, StateSpaceTooLarge, UnsupportedObservable
from .tolerances import STATE_CAP

Site = tuple  # tuple of d ints

TWO_PI = 2.0 * math.pi


class Closure(enum.Enum):
    FROZEN = "frozen"      # out-of-box coordinates held at angle 0
    PERIODIC = "periodic"  # coordinates wrapped modulo the box


def as_site(site, dimension):
    """Normalize a site to a tuple of `dimension` ints (plain int allowed in d=1)."""
    if isinstance(site, (int, np.integer)):
        site = (int(site),)
    else:
        site = tuple(int(x) for x in site)
    if len(site) != dimension:
        raise ValueError(f"site {site} has wrong dimension, expected {dimension}")
    return site


@lru_cache(maxsize=None)
def _sites(dimension, half_width):
    rng = range(-half_width, half_width + 1)
    return tuple(product(rng, repeat=dimension))


@dataclass(frozen=True)
class LatticeSpec:
    """Box Lambda_n = [-n, n]^d with a closure rule for out-of-box sites."""

    dimension: int
    half_width: int
    closure: Closure = Closure.FROZEN

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.half_width < 0:
            raise ValueError("half_width must be >= 0")

    @property
    def site_count(self):
        return (2 * self.half_width + 1) ** self.dimension

    def sites(self):
        """All sites in lexicographic order on coordinates."""
        return _sites(self.dimension, self.half_width)

    def position(self, site):
        """Index of `site` in sites(), or None if outside the box."""
        n = self.half_width
        pos = 0
        width = 2 * n + 1
        for x in site:
            if x < -n or x > n:
                return None
            pos = pos * width + (x + n)
        return pos

    def wrap(self, site):
        """Map a site into the box by periodic wrapping of each coordinate."""
        n = self.half_width
        width = 2 * n + 1
        return tuple((x + n) % width - n for x in site)

    def distance(self, s1, s2):
        """Chebyshev (sup-norm) distance; matches the box geometry."""
        return max(abs(a - b) for a, b in zip(s1, s2))


@dataclass(frozen=True)
class GridSpec:
    """Discretization of the circle by M equispaced angles 2*pi*k/M."""

    points_per_circle: int

    def __post_init__(self):
        M = self.points_per_circle
        if M < 4 or M % 2 != 0:
            raise ValueError("points_per_circle must be an even integer >= 4")

    @property
    def h(self):
        return TWO_PI / self.points_per_circle

    def angles(self):
        return self.h * np.arange(self.points_per_circle)


class ConfigView:
    """Read access to one configuration (or a batch) with closure applied.

    `angles` has shape (m,) for a single configuration or (B, m) for a batch
    over B configurations, columns ordered like lattice.sites().  angle(site)
    returns a scalar or a length-B array; evaluators written with numpy ufuncs
    work unchanged on both.
    """

    __slots__ = ("angles", "lattice")

    def __init__(self, angles, lattice):
        self.angles = np.asarray(angles, dtype=float)
        self.lattice = lattice

    @property
    def batch_size(self):
        return None if self.angles.ndim == 1 else self.angles.shape[0]

    def angle(self, site):
        lat = self.lattice
        site = as_site(site, lat.dimension)
        pos = lat.position(site)
        if pos is None:
            if lat.closure is Closure.FROZEN:
                return 0.0
            pos = lat.position(lat.wrap(site))
        return self.angles[..., pos]

    def shifted(self, site, delta):
        """Copy with the angle at an in-box `site` shifted by `delta`."""
        lat = self.lattice
        pos = lat.position(as_site(site, lat.dimension))
        if pos is None:
            raise UnsupportedObservable(f"cannot shift out-of-box site {site}")
        angles = self.angles.copy()
        angles[..., pos] += delta
        return ConfigView(angles, lat)


def evaluate_field(fn, site, view, n):
    """Evaluate a per-site field on a batch view, broadcasting constants to (n,)."""
    val = fn(site, view)
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    return arr


@dataclass(frozen=True)
class CoefficientField:
    """Diffusion coefficients a_i(eta) >= a_min > 0 and drift b_i(eta).

    `reach` is the declared finite range R; evaluators must not read angles
    farther than R (in Chebyshev distance) from their site.  Bounds are
    declared contracts used for mesh and step-size checks.
    """

    reach: int
    a: Callable
    b: Callable
    a_min: float
    a_max: float
    b_max: float
    supports_batch: bool = True

    def __post_init__(self):
        if self.reach < 0:
            raise ValueError("reach must be >= 0")
        if not (self.a_min > 0):
            raise NotElliptic(f"declared a_min = {self.a_min} is not > 0")


@dataclass(frozen=True)
class PerturbationField:
    """First-order perturbation coefficients c_i(eta) of finite range."""

    reach: int
    c: Callable
    c_max: float
    supports_batch: bool = True


@dataclass(frozen=True)
class LocalPotential:
    """One local term Phi_i of a Hamiltonian H = sum_i Phi_i.

    phi(i, view) evaluates the term anchored at site i; grad(j, i, view), when
    given, is the analytic partial dPhi_j / d eta_i.
    """

    reach: int
    phi: Callable
    grad: Optional[Callable] = None
    name: str = ""


@dataclass(frozen=True)
class DiffusionSpec:
    """Full problem definition: geometry, grid, coefficients, optional extras."""

    lattice: LatticeSpec
    grid: GridSpec
    field: CoefficientField
    perturbation: Optional[PerturbationField] = None
    hamiltonian: Optional[Callable] = None   # H(view); present for reversible built-ins
    potential: Optional[LocalPotential] = None
    label: str = ""

    def describe(self):
        lat, g = self.lattice, self.grid
        return (f"d={lat.dimension} n={lat.half_width} closure={lat.closure.value} "
                f"M={g.points_per_circle} R={self.field.reach} label={self.label}")

    def spec_hash(self):
        return hashlib.sha256(self.describe().encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# state enumeration
# ---------------------------------------------------------------------------

class StateSpace:
    """Mixed-radix enumeration of all grid states.

    Site k in lattice.sites() order is digit k, with site 0 least significant:
    index = sum_k digit_k * M^k.  encode/decode are exact inverse bijections.
    """

    def __init__(self, lattice, grid, cap=STATE_CAP):
        m = lattice.site_count
        M = grid.points_per_circle
        count = M ** m  # python int, no overflow
        if count > cap:
            raise StateSpaceTooLarge(count, cap)
        self.lattice = lattice
        self.grid = grid
        self.n_states = int(count)
        self.n_sites = m
        self._weights = np.array([M ** k for k in range(m)], dtype=np.int64)
        self._digits = None

    def decode(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        M = self.grid.points_per_circle
        return (idx[..., None] // self._weights) % M

    def encode(self, digits):
        digits = np.asarray(digits, dtype=np.int64)
        return (digits * self._weights).sum(axis=-1)

    def all_digits(self):
        if self._digits is None:
            self._digits = self.decode(np.arange(self.n_states))
        return self._digits

    def all_angles(self):
        return self.all_digits() * self.grid.h

    def batch_view(self):
        return ConfigView(self.all_angles(), self.lattice)

    def state_view(self, idx):
        return ConfigView(self.decode(int(idx)) * self.grid.h, self.lattice)

    def neighbor_indices(self, pos, step):
        """Index of every state after shifting digit `pos` by `step` (mod M)."""
        M = self.grid.points_per_circle
        dig = self.all_digits()[:, pos]
        return np.arange(self.n_states, dtype=np.int64) + ((dig + step) % M - dig) * self._weights[pos]


def enumerate_states(lattice, grid, cap=STATE_CAP):
    """Build the mixed-radix state scheme, rejecting counts above `cap`."""
    return StateSpace(lattice, grid, cap=cap)


def embed_states(small, big):
    """Index in `big` of each `small` state, extra sites at digit 0.

    Requires every site of the small lattice to exist in the big one; used by
    truncation experiments where the frozen closure pins outer sites at 0.
    """
    positions = []
    for s in small.lattice.sites():
        p = big.lattice.position(s)
        if p is None:
            raise ValueError(f"site {s} of the small lattice is outside the big one")
        positions.append(p)
    dig_small = small.all_digits()
    dig_big = np.zeros((small.n_states, big.n_sites), dtype=np.int64)
    dig_big[:, positions] = dig_small
    return big.encode(dig_big)


# ---------------------------------------------------------------------------
# exhaustive local evaluation (finite-range exactness)
# ---------------------------------------------------------------------------

def _window_sites(lattice, center, reach):
    """In-box sites a field at `center` may read, after closure resolution."""
    n = lattice.half_width
    out = set()
    for offset in product(range(-reach, reach + 1), repeat=lattice.dimension):
        site = tuple(c + o for c, o in zip(center, offset))
        if lattice.position(site) is not None:
            out.add(site)
        elif lattice.closure is Closure.PERIODIC:
            out.add(lattice.wrap(site))
        # frozen out-of-box coordinates are constant: nothing to enumerate
    return tuple(sorted(out))


def _window_view(lattice, grid, window, cap=STATE_CAP):
    """Batch view enumerating all angle assignments on `window` (others at 0)."""
    M = grid.points_per_circle
    w = len(window)
    count = M ** w
    if count > cap:
        raise StateSpaceTooLarge(count, cap)
    angles = np.zeros((count, lattice.site_count))
    idx = np.arange(count)
    for k, site in enumerate(window):
        angles[:, lattice.position(site)] = ((idx // M ** k) % M) * grid.h
    return ConfigView(angles, lattice)


def local_extrema(fn, site, lattice, grid, reach, cap=STATE_CAP):
    """Exact (min, max) of a finite-range per-site evaluator over grid states."""
    window = _window_sites(lattice, site, reach)
    view = _window_view(lattice, grid, window, cap=cap)
    vals = evaluate_field(fn, site, view, view.angles.shape[0])
    return float(vals.min()), float(vals.max())


def compute_C0(pert, lattice, grid, cap=STATE_CAP):
    """Exact C0 = max over grid states of sqrt(sum_i c_i(eta)^2).

    With pairwise disjoint dependency windows the maximum splits per site;
    otherwise the union of windows is enumerated jointly (never larger than
    the full state space, which is itself capped).
    """
    sites = lattice.sites()
    windows = {s: _window_sites(lattice, s, pert.reach) for s in sites}
    flat = [w for s in sites for w in windows[s]]
    if len(flat) == len(set(flat)):
        total = 0.0
        for s in sites:
            view = _window_view(lattice, grid, windows[s], cap=cap)
            vals = evaluate_field(pert.c, s, view, view.angles.shape[0])
            total += float((vals ** 2).max())
        return math.sqrt(total)
    union = tuple(sorted(set(flat)))
    view = _window_view(lattice, grid, union, cap=cap)
    n = view.angles.shape[0]
    acc = np.zeros(n)
    for s in sites:
        acc += evaluate_field(pert.c, s, view, n) ** 2
    return math.sqrt(float(acc.max()))


def compute_ellipticity_bound(fld, lattice, grid, cap=STATE_CAP):
    """Exact a = min over sites and grid states of a_i(eta); errors if <= 0."""
    best = math.inf
    for s in lattice.sites():
        lo, _ = local_extrema(fld.a, s, lattice, grid, fld.reach, cap=cap)
        best = min(best, lo)
    if best <= 0:
        raise NotElliptic(f"min a_i over grid states is {best}, not > 0")
    return best


def compute_drift_bound(fld, lattice, grid, cap=STATE_CAP):
    """Exact max over sites and grid states of |b_i(eta)|."""
    best = 0.0
    for s in lattice.sites():
        lo, hi = local_extrema(fld.b, s, lattice, grid, fld.reach, cap=cap)
        best = max(best, abs(lo), abs(hi))
    return best


def grid_hamiltonian(spec, space):
    """H evaluated on every state, as a length-N vector."""
    if spec.hamiltonian is None:
        raise ValueError("spec carries no Hamiltonian")
    vals = spec.hamiltonian(space.batch_view())
    arr = np.asarray(vals, dtype=float)
    if arr.ndim == 0:
        return np.full(space.n_states, float(arr))
    return arr


def hamiltonian_oscillation(spec, cap=STATE_CAP):
    """osc(H) = max H - min H over grid states.

    Exact by full enumeration below the cap.  Above it, falls back to the
    subadditive per-term bound sum_i osc(Phi_i), which keeps Holley-Stroock
    estimates valid upper bounds; the returned flag says which one was used.
    """
    try:
        space = enumerate_states(spec.lattice, spec.grid, cap=cap)
    except StateSpaceTooLarge:
        if spec.potential is None:
            raise
        total = 0.0
        for s in spec.lattice.sites():
            lo, hi = local_extrema(spec.potential.phi, s, spec.lattice, spec.grid,
                                   spec.potential.reach, cap=cap)
            total += hi - lo
        return total, False
    H = grid_hamiltonian(spec, space)
    return float(H.max() - H.min()), True


# ---------------------------------------------------------------------------
# built-in models
# ---------------------------------------------------------------------------

def zero_potential():
    """Phi = 0: pure Laplacian dynamics, uniform stationary measure."""
    return LocalPotential(reach=0, phi=lambda i, v: 0.0,
                          grad=lambda j, i, v: 0.0, name="zero")


def cosine_site(beta):
    """Independent sites: Phi_i = beta * cos(eta_i)."""
    def phi(i, view):
        return beta * np.cos(view.angle(i))

    def grad(j, i, view):
        if j == i:
            return -beta * np.sin(view.angle(i))
        return 0.0

    return LocalPotential(reach=0, phi=phi, grad=grad, name=f"cosine_site(beta={beta})")


def cosine_bond(beta):
    """Nearest-neighbor bonds along the first axis: Phi_i = beta*cos(eta_i - eta_{i+e1})."""
    def succ(i):
        return (i[0] + 1,) + tuple(i[1:])

    def phi(i, view):
        return beta * np.cos(view.angle(i) - view.angle(succ(i)))

    def grad(j, i, view):
        s = beta * np.sin(view.angle(j) - view.angle(succ(j)))
        if i == j:
            return -s
        if i == succ(j):
            return s
        return 0.0

    return LocalPotential(reach=1, phi=phi, grad=grad, name=f"cosine_bond(beta={beta})")


def build_ibm_model(potential, lattice, grid, *, perturbation=None,
                    numeric_grad=False, fd_step=None, label="", cap=STATE_CAP):
    """Interacting-Brownian-motions spec: a_i = 2, b_i = d_i H, H = sum_i Phi_i.

    The drift uses the potential's analytic gradient when available (and not
    overridden), otherwise a central difference of H with step `fd_step`
    (default: the grid mesh h).  The induced generator is reversible for the
    Gibbs weight of H up to discretization error; the Hamiltonian is kept on
    the spec so stationary-measure oracles can check that.
    """
    sites = lattice.sites()
    R = potential.reach

    near = {i: tuple(j for j in sites if lattice.distance(i, j) <= R) for i in sites}

    def hamiltonian(view):
        total = 0.0
        for i in sites:
            total = total + potential.phi(i, view)
        return total

    if potential.grad is not None and not numeric_grad:
        def b_eval(i, view, _near=near):
            total = 0.0
            for j in _near[i]:
                total = total + potential.grad(j, i, view)
            return total
    else:
        step = grid.h if fd_step is None else float(fd_step)

        def b_eval(i, view, _near=near, _step=step):
            up = view.shifted(i, +_step)
            dn = view.shifted(i, -_step)
            total = 0.0
            for j in _near[i]:
                total = total + (potential.phi(j, up) - potential.phi(j, dn))
            return total / (2.0 * _step)

    def a_eval(i, view):
        return 2.0

    # b_i reads sites within 2R of i (Phi_j for |j-i| <= R, each reading R further)
    tmp = CoefficientField(reach=2 * R, a=a_eval, b=b_eval,
                           a_min=2.0, a_max=2.0, b_max=1.0)
    b_max = compute_drift_bound(tmp, lattice, grid, cap=cap)
    fld = CoefficientField(reach=2 * R, a=a_eval, b=b_eval,
                           a_min=2.0, a_max=2.0, b_max=b_max)
    return DiffusionSpec(lattice=lattice, grid=grid, field=fld,
                         perturbation=perturbation, hamiltonian=hamiltonian,
                         potential=potential, label=label or f"ibm[{potential.name}]")


def pure_laplacian(lattice, grid, *, perturbation=None, label="laplacian"):
    """Constant-coefficient spec: a_i = 2, b_i = 0."""
    return build_ibm_model(zero_potential(), lattice, grid,
                           perturbation=perturbation, label=label)


# ---------------------------------------------------------------------------
# built-in perturbations
# ---------------------------------------------------------------------------

def origin_gradient():
    """A = d/d eta_0: c_i = 1 at the origin, 0 elsewhere (C0 = 1)."""
    def c(i, view):
        return 1.0 if all(x == 0 for x in i) else 0.0

    return PerturbationField(reach=0, c=c, c_max=1.0)


def constant_gradient(value=1.0):
    """c_i = value at every site."""
    def c(i, view):
        return float(value)

    return PerturbationField(reach=0, c=c, c_max=abs(float(value)))


def origin_sine():
    """c_0 = sin(eta_0) at the origin, 0 elsewhere."""
    def c(i, view):
        if all(x == 0 for x in i):
            return np.sin(view.angle(i))
        return 0.0

    return PerturbationField(reach=0, c=c, c_max=1.0)


# ---------------------------------------------------------------------------
# observables and test functions
# ---------------------------------------------------------------------------

def grid_observable(space, fn):
    """Evaluate a callable observable fn(view) on every state."""
    vals = fn(space.batch_view())
    arr = np.asarray(vals, dtype=float)
    if arr.ndim == 0:
        return np.full(space.n_states, float(arr))
    return arr


def check_support(fn, space, box_lattice, samples=200, seed=0):
    """Raise UnsupportedObservable if fn reads sites outside `box_lattice`.

    Compares fn on random states of `space` against the same states with all
    coordinates outside the box zeroed; any difference means the observable
    is not supported on the box.
    """
    rng = np.random.default_rng(seed)
    n = min(samples, space.n_states)
    idx = rng.integers(0, space.n_states, size=n)
    angles = space.decode(idx) * space.grid.h
    masked = angles.copy()
    for k, s in enumerate(space.lattice.sites()):
        if box_lattice.position(s) is None:
            masked[:, k] = 0.0
    v1 = np.asarray(fn(ConfigView(angles, space.lattice)), dtype=float)
    v2 = np.asarray(fn(ConfigView(masked, space.lattice)), dtype=float)
    if not np.array_equal(np.broadcast_to(v1, (n,)), np.broadcast_to(v2, (n,))):
        raise UnsupportedObservable("observable reads sites outside the support box")


def random_trig_vector(space, rng, degree=2):
    """Random low-degree trigonometric polynomial, gridded to a state vector.

    Sum over sites of sum_{k<=degree} alpha cos(k eta_i) + beta sin(k eta_i);
    smooth on the circle, so discrete-derivative errors are O(h^2).
    """
    angles = space.all_angles()
    f = np.zeros(space.n_states)
    for pos in range(space.n_sites):
        th = angles[:, pos]
        for k in range(1, degree + 1):
            a, b = rng.standard_normal(2)
            f += a * np.cos(k * th) + b * np.sin(k * th)
    return f
