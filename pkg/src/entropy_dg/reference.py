"""Reference solvers: continuous P1 finite elements and the wave ODE.

The P1 scheme in the density variable u has no positivity safeguard on
purpose; it reproduces the classical failure (negative densities ahead of a
steep front) that motivates solving in the log variable.  The P1 scheme in
lambda keeps densities positive by construction and serves as a like-for-like
comparison for the DG runs.  Both use the same Gauss rule as the DG side.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .dgspace import Quadrature, gauss_legendre_rule
from .errors import (DensityOverflowError, NewtonDivergenceError,
                     StiffnessError)
from .forms import NewtonControls
from .mesh import Mesh1D
from .solver import damped_newton


@dataclass
class FemFunction:
    """Continuous P1 function: nodal values on a Mesh1D."""

    mesh: Mesh1D
    values: np.ndarray
    variable: str = "u"  # "u" or "lambda"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_elements + 1,):
            raise ValueError("nodal value count must match the mesh")

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.mesh.nodes, self.values)

    def density(self):
        return np.exp(self.values) if self.variable == "lambda" else self.values


class FemBlowupError(NewtonDivergenceError):
    """P1-in-u Newton failed; carries the states computed so far."""

    def __init__(self, message, states, step):
        super().__init__(message, step=step)
        self.states = states


def _p1_tables(mesh: Mesh1D, quad: Quadrature):
    """Hat-function values/derivatives at quadrature points, per element."""
    xi = quad.nodes
    shp = np.vstack([1.0 - xi, xi])          # (2, nq)
    dshp = np.array([[-1.0], [1.0]])         # d/dxi
    return shp, dshp


def _fem_march(residual, jacobian, v0, n_steps, dt, newton, project=None):
    """Implicit Euler marching; falls back to recursive half steps when a
    warm-started Newton solve stalls (steep fronts crossing many cells)."""

    def step(v_prev, step_dt, depth=0):
        try:
            v, _ = damped_newton(lambda w: residual(w, v_prev, step_dt),
                                 lambda w: jacobian(w, v_prev, step_dt),
                                 v_prev, newton, project=project)
            return v
        except NewtonDivergenceError:
            if depth >= 8:
                raise
        g = step(v_prev, step_dt / 2.0, depth + 1)
        g = step(g, step_dt / 2.0, depth + 1)
        v, _ = damped_newton(lambda w: residual(w, v_prev, step_dt),
                             lambda w: jacobian(w, v_prev, step_dt),
                             g, newton, project=project)
        return v

    states = [v0.copy()]
    for k in range(1, n_steps + 1):
        try:
            v = step(states[-1], dt)
        except NewtonDivergenceError as exc:
            raise FemBlowupError(
                f"P1 Newton failed at step {k}: {exc}", states, k) from exc
        states.append(v.copy())
    return states


def fem_p1_u(u0, mesh: Mesh1D, D: float, dt: float, n_steps: int,
             quad: Quadrature | None = None,
             newton: NewtonControls | None = None) -> list[FemFunction]:
    """Implicit Euler / continuous P1 Galerkin for u_t = D u_xx + u(1-u).

    The reaction term is treated implicitly; there is no positivity
    safeguard, so steep fronts can push nodal values negative (that failure
    mode is the point of this reference).
    """
    if dt <= 0.0:
        raise ValueError("time step must be positive")
    quad = quad or gauss_legendre_rule(8)
    newton = newton or NewtonControls()
    shp, dshp = _p1_tables(mesh, quad)
    n = mesh.n_elements + 1
    h = mesh.h
    w = quad.weights
    mloc = (w * shp[:, None, :] * shp[None, :, :]).sum(axis=2)  # (2, 2)
    kloc = dshp @ dshp.T  # (2, 2), scaled by 1/h per element

    conn = np.stack([np.arange(mesh.n_elements), np.arange(1, n)], axis=1)

    def residual(u, u_prev, dt):
        uq = u[conn] @ shp      # (n_el, nq)
        upq = u_prev[conn] @ shp
        r_loc = h[:, None] * ((w * (uq - upq - dt * uq * (1.0 - uq))) @ shp.T)
        r_loc += dt * D / h[:, None] * (u[conn] @ kloc.T)
        r = np.zeros(n)
        np.add.at(r, conn, r_loc)
        return r

    def jacobian(u, u_prev, dt):
        uq = u[conn] @ shp
        c = 1.0 - dt * (1.0 - 2.0 * uq)
        blocks = np.einsum("eq,iq,jq->eij", w * c, shp, shp) * h[:, None, None]
        blocks += (dt * D / h)[:, None, None] * kloc
        J = np.zeros((n, n))
        np.add.at(J, (conn[:, :, None], conn[:, None, :]), blocks)
        return J

    u_init = np.asarray(u0(mesh.nodes), dtype=float)
    states = _fem_march(residual, jacobian, u_init, n_steps, dt, newton)
    return [FemFunction(mesh, v, "u") for v in states]


def fem_p1_lambda(u0, mesh: Mesh1D, D: float, dt: float, n_steps: int,
                  floor: float = 1e-16, quad: Quadrature | None = None,
                  newton: NewtonControls | None = None) -> list[FemFunction]:
    """Implicit Euler / continuous P1 Galerkin in the log density.

    Galerkin form of the transformed equation: for all hat functions v,
    int (e^l - e^l_prev) v + dt D int e^l l' v' = dt int e^l (1 - e^l) v;
    densities e^l stay positive by construction.
    """
    if dt <= 0.0:
        raise ValueError("time step must be positive")
    quad = quad or gauss_legendre_rule(8)
    newton = newton or NewtonControls()
    shp, dshp = _p1_tables(mesh, quad)
    n = mesh.n_elements + 1
    h = mesh.h
    w = quad.weights

    conn = np.stack([np.arange(mesh.n_elements), np.arange(1, n)], axis=1)

    def residual(lam, lam_prev, dt):
        lq = lam[conn] @ shp
        if np.max(np.abs(lq)) > 200.0:
            raise DensityOverflowError(int(np.argmax(np.max(np.abs(lq), axis=1))))
        E = np.exp(lq)
        Ep = np.exp(lam_prev[conn] @ shp)
        grad = (lam[conn] @ dshp[:, 0]) / h
        r_loc = h[:, None] * ((w * (E - Ep - dt * E * (1.0 - E))) @ shp.T)
        r_loc += dt * D * ((w * E).sum(axis=1) * grad)[:, None] * dshp[:, 0]
        r = np.zeros(n)
        np.add.at(r, conn, r_loc)
        return r

    def jacobian(lam, lam_prev, dt):
        lq = lam[conn] @ shp
        E = np.exp(lq)
        grad = (lam[conn] @ dshp[:, 0]) / h
        c = E * (1.0 - dt * (1.0 - 2.0 * E))
        blocks = np.einsum("eq,iq,jq->eij", w * c, shp, shp) * h[:, None, None]
        inner = (w * E * grad[:, None]) @ shp.T + (w * E).sum(axis=1)[:, None] \
            * dshp[None, :, 0] / h[:, None]
        blocks += dt * D * dshp[None, :, 0, None] * inner[:, None, :]
        J = np.zeros((n, n))
        np.add.at(J, (conn[:, :, None], conn[:, None, :]), blocks)
        return J

    lam_init = np.log(np.maximum(np.asarray(
        u0(mesh.nodes), dtype=float), floor))
    lo = float(lam_init.min()) - 4.0
    states = _fem_march(residual, jacobian, lam_init, n_steps, dt, newton,
                        project=lambda v: np.maximum(v, lo))
    return [FemFunction(mesh, v, "lambda") for v in states]


@dataclass
class WaveProfile:
    """Samples of the first-order travelling-wave system.

    The system integrated verbatim is phi' = -c phi + psi (psi - 1),
    psi' = phi, so the second component psi satisfies the classical profile
    equation psi'' + c psi' + psi(1 - psi) = 0; both components are exposed
    and `profile_component` records which one is the wave profile.
    """

    s: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    c: float
    profile_component: str = "psi"


def traveling_wave_reference(c: float = 2.0, s_end: float = 40.0,
                             phi0: float = 1.0, psi0: float = -1e-10,
                             tol: float = 1e-8,
                             n_samples: int = 2001) -> WaveProfile:
    """Integrate the travelling-wave system with an adaptive RK 4/5 pair."""
    if s_end <= 0.0:
        raise ValueError("s_end must be positive")
    if tol <= 0.0:
        raise ValueError("tolerance must be positive")

    def rhs(_, y):
        phi, psi = y
        return [-c * phi + psi * (psi - 1.0), phi]

    sol = solve_ivp(rhs, (0.0, s_end), [phi0, psi0], method="RK45",
                    rtol=tol, atol=tol * 1e-3, dense_output=True)
    if not sol.success:
        raise StiffnessError(f"wave integration failed: {sol.message}")
    s = np.linspace(0.0, s_end, n_samples)
    y = sol.sol(s)
    return WaveProfile(s=s, phi=y[0], psi=y[1], c=c)


def front_position(x: np.ndarray, density: np.ndarray,
                   level: float = 0.5) -> float | None:
    """Smallest x where the density drops through `level` (linear interp)."""
    below = density <= level
    if not below.any() or below.all():
        return None
    i = int(np.argmax(below))
    if i == 0:
        return float(x[0])
    x0, x1 = x[i - 1], x[i]
    d0, d1 = density[i - 1], density[i]
    if d0 == d1:
        return float(x1)
    return float(x0 + (d0 - level) / (d0 - d1) * (x1 - x0))
