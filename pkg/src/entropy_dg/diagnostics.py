"""Entropy functionals, mass/entropy/DG-norm certificates, decay fitting.

The per-step entropy certificate works at the level of the discrete
identity: testing the scheme with the new state lambda_k and using the
convexity gap of s(u) = u(log u - 1) + 1 gives

    S_prev - S_k  >=  dt*D*B(l_k; l_k, l_k) + eps*||l_k||^2_{L2}
                      + dt*int e^{l_k}(e^{l_k} - 1) l_k  -  <residual, l_k>,

so the reported slack is nonnegative up to the Newton residual and
round-off, with no unknown constants involved.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .dgspace import DgFunction, Quadrature, _basis_matrix, all_face_traces
from .errors import DensityOverflowError
from .forms import AssemblyTable, SchemeParams, assemble_B
from .mesh import Mesh1D, build_uniform_mesh

LAM_CAP = 200.0
MASS_TOL = 1e-10
SLACK_TOL = 1e-9


@dataclass
class StepReport:
    """Diagnostics of one accepted time step."""

    S: float
    mass: float
    mean_mass: float
    l1_dist: float
    dg_half_norm: float
    B_value: float
    reaction_entropy: float
    entropy_step_slack: float
    mass_lower_ok: bool
    mass_upper_ok: bool
    dgnorm_bound_ok: bool


def entropy_density(u):
    """s(u) = u(log u - 1) + 1; nonnegative, zero only at u = 1, s(0) = 1."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 0.0):
        raise ValueError("entropy density needs a nonnegative argument")
    out = np.ones_like(u_arr)
    pos = u_arr > 0.0
    up = u_arr[pos]
    out[pos] = up * (np.log(up) - 1.0) + 1.0
    return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out


def _quad_values(lam: DgFunction, quad: Quadrature) -> np.ndarray:
    vals = lam.eval_elements(quad.nodes)
    if np.max(np.abs(vals)) > LAM_CAP:
        raise DensityOverflowError(int(np.argmax(np.max(np.abs(vals), axis=1))))
    return vals


def discrete_entropy(lam: DgFunction, quad: Quadrature) -> float:
    """S = int s(e^lambda) dx by quadrature."""
    vals = _quad_values(lam, quad)
    u = np.exp(vals)
    s = u * (vals - 1.0) + 1.0  # s(e^l) = e^l (l - 1) + 1
    return float(np.sum(lam.mesh.h[:, None] * quad.weights * s))


def total_mass(lam: DgFunction, quad: Quadrature) -> float:
    u = np.exp(_quad_values(lam, quad))
    return float(np.sum(lam.mesh.h[:, None] * quad.weights * u))


def l1_distance_to_one(lam: DgFunction, quad: Quadrature) -> float:
    u = np.exp(_quad_values(lam, quad))
    return float(np.sum(lam.mesh.h[:, None] * quad.weights * np.abs(u - 1.0)))


def reaction_entropy(lam: DgFunction, quad: Quadrature) -> float:
    """int e^l (e^l - 1) l dx; pointwise nonnegative for every real l."""
    vals = _quad_values(lam, quad)
    u = np.exp(vals)
    return float(np.sum(lam.mesh.h[:, None] * quad.weights * u * (u - 1.0) * vals))


def l2_norm(lam: DgFunction) -> float:
    """Parseval: ||v||^2 = sum_K h_K |c_K|^2 in the orthonormal reference basis."""
    return float(np.sqrt(np.sum(lam.mesh.h[:, None] * lam.coeffs**2)))


def dg_half_norm(lam: DgFunction, quad: Quadrature) -> float:
    """DG norm of e^{lambda/2} (L2 + broken H1 + penalty-weighted jumps)."""
    mesh = lam.mesh
    vals = _quad_values(lam, quad)
    half = np.exp(0.5 * vals)
    ders = lam.deriv_elements(quad.nodes)
    l2 = float(np.sum(mesh.h[:, None] * quad.weights * half**2))
    h1 = float(np.sum(mesh.h[:, None] * quad.weights * (0.5 * half * ders) ** 2))
    vm, vp = all_face_traces(lam)
    jumps = float(np.sum(lam.p**2 / mesh.face_h
                         * (np.exp(0.5 * vm) - np.exp(0.5 * vp)) ** 2))
    return float(np.sqrt(l2 + h1 + jumps))


def _bisect(f, lo: float, hi: float, width: float = 1e-12) -> float:
    flo = f(lo)
    for _ in range(200):
        if hi - lo <= width:
            break
        mid = 0.5 * (lo + hi)
        if flo * f(mid) <= 0.0:
            hi = mid
        else:
            lo = mid
            flo = f(lo)
    return 0.5 * (lo + hi)


def sigma_minus(v: float) -> float:
    """Inverse of s on [0, 1] for v in [0, 1]; zero for v >= 1 (vacuous bound)."""
    if v < 0.0:
        raise ValueError("sigma_- needs a nonnegative argument")
    if v >= 1.0:
        return 0.0
    if v == 0.0:
        return 1.0
    return _bisect(lambda x: entropy_density(x) - v, 0.0, 1.0)


def sigma_plus(v: float) -> float:
    """Inverse of s on [1, inf); s is increasing there and s(v+2) >= v."""
    if v < 0.0:
        raise ValueError("sigma_+ needs a nonnegative argument")
    if v == 0.0:
        return 1.0
    return _bisect(lambda x: entropy_density(x) - v, 1.0, v + 2.0)


def entropy_step_tolerance(lam_k: DgFunction, params: SchemeParams) -> float:
    """Certified lower bound on the step slack: Newton residual paired with
    the test-basis coefficients of lambda_k, plus a round-off cushion."""
    test_coeffs = np.sqrt(lam_k.mesh.h)[:, None] * lam_k.coeffs
    return params.newton.tol * float(np.sum(np.abs(test_coeffs))) + SLACK_TOL


def check_entropy_step(lam_k: DgFunction, lam_prev: DgFunction,
                       params: SchemeParams) -> float:
    """Slack of the one-step entropy inequality (identity + convexity form).

    slack = S_prev - S_k - dt*D*B(l_k;l_k,l_k) - eps*||l_k||^2
            - dt * int e^{l_k}(e^{l_k}-1) l_k     [reaction term if enabled]
    """
    quad = params.quad
    s_prev = discrete_entropy(lam_prev, quad)
    s_k = discrete_entropy(lam_k, quad)
    b = assemble_B(lam_k, lam_k, lam_k, lam_k.mesh, params)
    slack = s_prev - s_k - params.dt * params.d * b - params.eps * l2_norm(lam_k) ** 2
    if params.reaction:
        slack -= params.dt * reaction_entropy(lam_k, quad)
    return float(slack)


def dgnorm_bound_rhs(S0: float, params: SchemeParams, omega: float) -> float:
    """Upper bound of the uniform DG-norm estimate for dt*||e^{l/2}||_DG^2.

    The entropy dissipated in one step controls the gradient/jump energy
    through the coercivity of D*B, so the sharp constant carries 1/D.
    """
    c = 1.0 / (2.0 * params.d * min(1.0, params.c_inv**2))
    return 2.0 * params.dt * omega + max(c, params.dt) * S0


def check_dgnorm_bound(lam_k: DgFunction, S0: float,
                       params: SchemeParams) -> tuple[bool, float]:
    """(holds, slack) of dt*||e^{l_k/2}||^2_DG <= 2 dt |Omega| + C(S0)."""
    lhs = params.dt * dg_half_norm(lam_k, params.quad) ** 2
    slack = dgnorm_bound_rhs(S0, params, lam_k.mesh.domain_measure) + SLACK_TOL - lhs
    return bool(slack >= 0.0), float(slack)


def check_mass_bounds(series) -> tuple[bool, float, float]:
    """Mean-mass bracketing by sigma_-(S0/|O|) and sigma_+(S0/|O|).

    Returns (ok, worst lower margin, worst upper margin); margins are
    signed distances to the bounds, positive when satisfied.
    """
    omega = series.mesh.domain_measure
    s0 = series.initial_entropy / omega
    lo, hi = sigma_minus(s0), sigma_plus(s0)
    mean = np.array([r.mean_mass for r in series.reports])
    lower = float(np.min(mean - lo))
    upper = float(np.min(hi - mean))
    return bool(lower >= -MASS_TOL and upper >= -MASS_TOL), lower, upper


def fit_decay_rate(times, entropies, window=None) -> float:
    """Least-squares slope of log S versus t over the index window."""
    t = np.asarray(times, dtype=float)
    s = np.asarray(entropies, dtype=float)
    if window is not None:
        sl = slice(*window) if isinstance(window, tuple) else window
        t, s = t[sl], s[sl]
    if t.size < 3:
        raise ValueError("decay fit needs at least three samples")
    if np.any(s <= 0.0):
        raise ValueError("decay fit window contains nonpositive entropy")
    return float(np.polyfit(t, np.log(s), 1)[0])


def remark_counterexample(k: int, dt: float, mesh: Mesh1D | None = None,
                          p: int = 1) -> tuple[DgFunction, float]:
    """Constant state lambda = k log(1 - dt) of the over-entropy family.

    Along the family the entropy-step certificate holds with the previous
    state one index deeper (lambda_{k+1}), while S_k = s((1-dt)^k)|Omega|
    increases to |Omega|; no uniform decay rate can exist when S0 >= |Omega|.
    """
    if not 0.0 < dt < 1.0:
        raise ValueError("dt must lie in (0, 1)")
    if k < 0:
        raise ValueError("k must be nonnegative")
    mesh = mesh or build_uniform_mesh(4, 0.0, 1.0)
    lam = DgFunction.constant(mesh, p, k * math.log1p(-dt))
    S = entropy_density((1.0 - dt) ** k) * mesh.domain_measure
    return lam, float(S)


@lru_cache(maxsize=None)
def compute_c_inv(p: int, h: float = 1.0) -> float:
    """Smallest constant with xi(0)^2 + xi(h)^2 <= C^2 (p^2/h) ||xi||^2_{L2(0,h)}.

    Realized as the largest eigenvalue of the generalized problem pairing the
    endpoint-evaluation Gram matrix against the element mass matrix; the
    element length cancels by scaling.
    """
    if not 1 <= p <= 8:
        raise ValueError("degree must lie in [1, 8]")
    ends = _basis_matrix(p, np.array([0.0, 1.0]))  # (p+1, 2)
    gram = ends @ ends.T
    mass = h * np.eye(p + 1)
    mu = float(np.max(scipy.linalg.eigh(gram, mass, eigvals_only=True)))
    return math.sqrt(mu * h) / p


def step_report(lam_k: DgFunction, lam_prev: DgFunction | None,
                S_prev: float | None, S0: float | None,
                params: SchemeParams) -> StepReport:
    """Full diagnostics for one state; lam_prev None marks the initial state."""
    quad = params.quad
    S = discrete_entropy(lam_k, quad)
    mass = total_mass(lam_k, quad)
    omega = lam_k.mesh.domain_measure
    mean = mass / omega
    if S0 is None:
        S0 = S
    if lam_prev is None:
        # initial state: the step inequality and the DG-norm bound are claims
        # about states produced by the scheme, vacuous for the projected datum
        slack = 0.0
        dg_ok = True
    else:
        slack = check_entropy_step(lam_k, lam_prev, params)
        dg_ok, _ = check_dgnorm_bound(lam_k, S0, params)
    lo = sigma_minus(S0 / omega)
    hi = sigma_plus(S0 / omega)
    return StepReport(
        S=S,
        mass=mass,
        mean_mass=mean,
        l1_dist=l1_distance_to_one(lam_k, quad),
        dg_half_norm=dg_half_norm(lam_k, quad),
        B_value=assemble_B(lam_k, lam_k, lam_k, lam_k.mesh, params),
        reaction_entropy=reaction_entropy(lam_k, quad),
        entropy_step_slack=slack,
        mass_lower_ok=bool(mean >= lo - MASS_TOL),
        mass_upper_ok=bool(mean <= hi + MASS_TOL),
        dgnorm_bound_ok=dg_ok,
    )
