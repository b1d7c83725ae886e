"""Caps and numerical tolerances used across modules.

Every tolerance that influences a verdict is defined here once and echoed
into run manifests by the CLI.
"""

# State-space caps
STATE_CAP = 10_000_000          # hard cap on enumerated states
DENSE_CAP = 5_000               # above this, dense linear algebra is refused

# Measures
MEASURE_SUM_TOL = 1e-12         # |sum(weights) - 1| allowed after normalization
NEGATIVE_CLAMP = 1e-14          # weights in [-clamp, 0) are set to 0; below is an error
MEASURE_FLOOR = 1e-30           # weights at/below this break nu-adjoints

# Linear algebra
STATIONARY_RTOL = 1e-10         # ||nu^T L||_1 / ||L||_1
KERNEL_RTOL = 1e-10             # singular values below this (relative) count as kernel
EIGEN_RESIDUAL_TOL = 1e-8       # spectral-gap eigenpair residual
ADJOINT_RTOL = 1e-12            # inner-product adjoint identity defect

# Rayleigh-Schrodinger engine
RECURRENCE_RTOL = 1e-9          # ||L0* f_{k+1} + A* f_k|| / ||A* f_k||
MEAN_ZERO_TOL = 1e-12           # |<f_k>_nu| for k >= 1
SOLVABILITY_TOL = 1e-10         # |<A* f_k>_nu| (relative) before each solve
SERIES_FLOOR = 1e-14            # all ||f_k|| below this: degenerate series

# Riesz projector
QUADRATURE_TOL = 1e-8           # ||P_{2Q} - P_Q||_max stabilization threshold
IDEMPOTENCY_TOL = 1e-8
PROJECTOR_RANK_CUTOFF = 0.5     # singular values above this count toward the rank

# Dynamics
SEMIGROUP_RESIDUAL_TOL = 1e-6   # d/dt vs L action, central-difference check
CONSERVATION_TOL = 1e-10        # S_t 1 = 1
STEP_FRACTION = 0.1             # dt * b_max <= STEP_FRACTION * 2*pi

# Euler-Maruyama defaults
DEFAULT_DT = 1e-3
DEFAULT_PATHS = 10_000
