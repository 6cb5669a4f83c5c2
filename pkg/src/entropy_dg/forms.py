"""Nonlinear interior-penalty forms for the log-density scheme.

B(u; v, w) discretizes div(e^u grad v) with symmetric consistency terms and
a jump penalty weighted by p^2/h_f and the stabilization factor

    alpha(u) = (3/2) C_inv^2 (max{e^{u_-}, e^{u_+}})^2
               * max{exp(||u||_inf(K_-)), exp(||u||_inf(K_+))},

which keeps B(v; v, v) bounded below by the gradient and jump energies of
e^{v/2}.  The elementwise sup norm inside alpha is taken over a fixed
sampling grid (quadrature nodes, both endpoints, a Chebyshev grid of 4p+1
points); that grid is part of the scheme definition and is shared by every
assembly path.

The implicit Euler residual for one time step, tested against the physically
orthonormal basis t_i = phi_i / sqrt(h_K), reads

    r_i = int (e^l - e^l_prev) t_i + dt D B(l; l, t_i)
          + eps int l t_i - dt int e^l (1 - e^l) t_i.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dgspace import (DgFunction, Quadrature, _basis_deriv_matrix,
                      _basis_matrix, gauss_legendre_rule)
from .errors import DensityOverflowError
from .mesh import Mesh1D

LAM_CAP = 200.0


@dataclass(frozen=True)
class NewtonControls:
    """Damped Newton settings; residual norms are sup norms.

    The iteration cap is sized for the first step of runs whose datum sits
    on the positivity floor: closing the initial log-density jump peels
    through the floor region element by element, one cluster of iterations
    per element.  Warm-started steps finish in a handful of iterations.

    stall_tol is the fallback acceptance when the iteration provably cannot
    advance (no direction decreases the residual): clusters of equations at
    the dying edge of a front are exponentially degenerate and block sup-norm
    progress slightly above tol while every structural certificate still
    holds with margin.
    """

    tol: float = 1e-10
    stall_tol: float = 1e-8
    max_iter: int = 250
    max_halvings: int = 30
    damping: float = 0.5

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("Newton tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("Newton needs at least one iteration")


@dataclass(frozen=True)
class SchemeParams:
    """Everything one implicit Euler step is parameterized by."""

    d: float
    dt: float
    p: int
    c_inv: float
    quad: Quadrature = field(default_factory=lambda: gauss_legendre_rule(8))
    eps: float = 0.0
    newton: NewtonControls = field(default_factory=NewtonControls)
    reaction: bool = True

    def __post_init__(self):
        if not 0.0 < self.dt < 1.0:
            raise ValueError(f"time step must lie in (0, 1), got {self.dt}")
        if self.d <= 0.0:
            raise ValueError("diffusion coefficient must be positive")
        if self.eps < 0.0:
            raise ValueError("regularization eps must be nonnegative")
        if self.p < 1:
            raise ValueError("polynomial degree must be >= 1")
        if self.c_inv <= 0.0:
            raise ValueError("inverse-trace constant must be positive")


class AssemblyTable:
    """Precomputed basis/quadrature tables consumed by the kernels."""

    def __init__(self, mesh: Mesh1D, p: int, quad: Quadrature, c_inv: float):
        self.mesh = mesh
        self.p = p
        self.quad = quad
        self.h = np.ascontiguousarray(mesh.h)
        self.w = np.ascontiguousarray(quad.weights)
        self.phi = np.ascontiguousarray(_basis_matrix(p, quad.nodes))
        self.dphi = np.ascontiguousarray(_basis_deriv_matrix(p, quad.nodes))
        self.phi0 = np.ascontiguousarray(_basis_matrix(p, 0.0)[:, 0])
        self.phi1 = np.ascontiguousarray(_basis_matrix(p, 1.0)[:, 0])
        self.dphi0 = np.ascontiguousarray(_basis_deriv_matrix(p, 0.0)[:, 0])
        self.dphi1 = np.ascontiguousarray(_basis_deriv_matrix(p, 1.0)[:, 0])
        cheb = 0.5 * (1.0 + np.cos(np.pi * np.arange(4 * p + 1) / (4 * p)))
        samp_xi = np.concatenate([quad.nodes, [0.0, 1.0], cheb])
        self.samp = np.ascontiguousarray(_basis_matrix(p, samp_xi))
        self.samp_xi = samp_xi
        self.pen_w = np.ascontiguousarray(p**2 / mesh.face_h)
        self.c_inv2 = float(c_inv) ** 2

    def quad_x(self) -> np.ndarray:
        return self.mesh.nodes[:-1, None] + self.mesh.h[:, None] * self.quad.nodes


def _table_for(mesh: Mesh1D, params: SchemeParams) -> AssemblyTable:
    return AssemblyTable(mesh, params.p, params.quad, params.c_inv)


def alpha_linf(coeffs: np.ndarray, tab: AssemblyTable) -> np.ndarray:
    """Per-element sup norm over the fixed sampling grid (the alpha ingredient)."""
    return np.max(np.abs(coeffs @ tab.samp), axis=1)


def stabilization_alpha(exp_minus: float, exp_plus: float,
                        linf_minus: float, linf_plus: float,
                        c_inv: float) -> float:
    """Face penalty weight; symmetric under swapping the two sides."""
    for name, v in (("exp_minus", exp_minus), ("exp_plus", exp_plus)):
        if not v > 0.0:
            raise ValueError(f"{name} must be a positive density trace, got {v}")
    if not np.all(np.isfinite([exp_minus, exp_plus, linf_minus, linf_plus])):
        raise ValueError("stabilization inputs must be finite")
    return (1.5 * c_inv**2 * max(exp_minus, exp_plus) ** 2
            * max(np.exp(linf_minus), np.exp(linf_plus)))


@dataclass
class FaceData:
    """Per-face traces and penalty data of the current iterate."""

    lam_minus: np.ndarray
    lam_plus: np.ndarray
    exp_minus: np.ndarray
    exp_plus: np.ndarray
    grad_minus: np.ndarray
    grad_plus: np.ndarray
    linf_minus: np.ndarray
    linf_plus: np.ndarray
    alpha: np.ndarray

    @classmethod
    def compute(cls, u: DgFunction, tab: AssemblyTable) -> "FaceData":
        c = u.coeffs
        lam_m = c[:-1] @ tab.phi1
        lam_p = c[1:] @ tab.phi0
        linf = alpha_linf(c, tab)
        exp_m, exp_p = np.exp(lam_m), np.exp(lam_p)
        alpha = (1.5 * tab.c_inv2 * np.maximum(exp_m, exp_p) ** 2
                 * np.exp(np.maximum(linf[:-1], linf[1:])))
        return cls(
            lam_minus=lam_m, lam_plus=lam_p,
            exp_minus=exp_m, exp_plus=exp_p,
            grad_minus=(c[:-1] @ tab.dphi1) / tab.h[:-1],
            grad_plus=(c[1:] @ tab.dphi0) / tab.h[1:],
            linf_minus=linf[:-1], linf_plus=linf[1:],
            alpha=alpha,
        )


def _check_compatible(mesh: Mesh1D, *fns: DgFunction):
    for f in fns:
        if f.mesh is not mesh and not np.array_equal(f.mesh.nodes, mesh.nodes):
            raise ValueError("functions live on different meshes")
        if f.p != fns[0].p:
            raise ValueError("functions have different polynomial degrees")


def assemble_B(u: DgFunction, v: DgFunction, w: DgFunction,
               mesh: Mesh1D, params: SchemeParams,
               tab: AssemblyTable | None = None) -> float:
    """Trilinear form value B(u; v, w); linear and symmetric in (v, w)."""
    _check_compatible(mesh, u, v, w)
    tab = tab or _table_for(mesh, params)
    eu = np.exp(u.coeffs @ tab.phi)
    dv = (v.coeffs @ tab.dphi) / tab.h[:, None]
    dw = (w.coeffs @ tab.dphi) / tab.h[:, None]
    total = float(np.sum(tab.h[:, None] * tab.w * eu * dv * dw))
    if mesh.n_faces:
        fd = FaceData.compute(u, tab)
        jv = v.coeffs[:-1] @ tab.phi1 - v.coeffs[1:] @ tab.phi0
        jw = w.coeffs[:-1] @ tab.phi1 - w.coeffs[1:] @ tab.phi0
        av = 0.5 * (fd.exp_minus * (v.coeffs[:-1] @ tab.dphi1) / tab.h[:-1]
                    + fd.exp_plus * (v.coeffs[1:] @ tab.dphi0) / tab.h[1:])
        aw = 0.5 * (fd.exp_minus * (w.coeffs[:-1] @ tab.dphi1) / tab.h[:-1]
                    + fd.exp_plus * (w.coeffs[1:] @ tab.dphi0) / tab.h[1:])
        total += float(np.sum(-av * jw - aw * jv + tab.pen_w * fd.alpha * jv * jw))
    return total


def _exp_prev_at_quad(lam_prev: DgFunction, tab: AssemblyTable) -> np.ndarray:
    vals = lam_prev.coeffs @ tab.phi
    if np.max(np.abs(vals)) > LAM_CAP:
        raise DensityOverflowError(int(np.argmax(np.max(np.abs(vals), axis=1))))
    return np.ascontiguousarray(np.exp(vals))


def residual(lam: DgFunction, lam_prev: DgFunction, mesh: Mesh1D,
             params: SchemeParams) -> np.ndarray:
    """Scheme residual vector; raises DensityOverflowError (naming the
    element) if exp(lambda) leaves the representable range."""
    _check_compatible(mesh, lam, lam_prev)
    tab = _table_for(mesh, params)
    return kernels.residual(lam.coeffs, _exp_prev_at_quad(lam_prev, tab), tab,
                            params.dt, params.d, params.eps, params.reaction)


def jacobian(lam: DgFunction, lam_prev: DgFunction, mesh: Mesh1D,
             params: SchemeParams) -> np.ndarray:
    """Jacobian of the residual with the stabilization max-branches frozen
    at `lam` (exact derivative of the frozen map; finite-difference columns
    of the same map serve as a test oracle)."""
    _check_compatible(mesh, lam, lam_prev)
    tab = _table_for(mesh, params)
    return kernels.jacobian(lam.coeffs, _exp_prev_at_quad(lam_prev, tab), tab,
                            params.dt, params.d, params.eps, params.reaction)


class SchemeOperator:
    """Bound (mesh, params) assembly with a reusable table; used by the solver."""

    def __init__(self, mesh: Mesh1D, params: SchemeParams):
        self.mesh = mesh
        self.params = params
        self.tab = _table_for(mesh, params)
        self._exp_prev = None

    def set_previous(self, lam_prev: DgFunction):
        self._exp_prev = _exp_prev_at_quad(lam_prev, self.tab)

    def residual_flat(self, coeffs2d: np.ndarray) -> np.ndarray:
        p = self.params
        return kernels.residual(coeffs2d, self._exp_prev, self.tab,
                                p.dt, p.d, p.eps, p.reaction)

    def jacobian_flat(self, coeffs2d: np.ndarray) -> np.ndarray:
        p = self.params
        return kernels.jacobian(coeffs2d, self._exp_prev, self.tab,
                                p.dt, p.d, p.eps, p.reaction)

