"""Broken polynomial space on a Mesh1D.

Expansion basis: shifted Legendre polynomials phi_j(xi) = sqrt(2j+1) P_j(2 xi - 1),
orthonormal in L2(0, 1).  A function v with per-element coefficients c satisfies
Parseval elementwise, ||v||^2_{L2(K)} = h_K * |c_K|^2.

Sign conventions at an interior face (left element "-", right element "+",
outward normals n_- = +1, n_+ = -1):

    jump(v)    = v_- - v_+
    average(v) = (v_- + v_+) / 2
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as npleg


def _basis_matrix(p: int, xi) -> np.ndarray:
    """Values phi_j(xi), shape (p+1, len(xi))."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    scale = np.sqrt(2.0 * np.arange(p + 1) + 1.0)
    vand = npleg.legvander(2.0 * xi - 1.0, p)  # (n, p+1)
    return (vand * scale).T.copy()


def _basis_deriv_matrix(p: int, xi) -> np.ndarray:
    """Derivatives d phi_j / d xi at xi, shape (p+1, len(xi))."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    y = 2.0 * xi - 1.0
    out = np.empty((p + 1, xi.size))
    for j in range(p + 1):
        cj = np.zeros(j + 1)
        cj[j] = np.sqrt(2.0 * j + 1.0)
        out[j] = 2.0 * npleg.legval(y, npleg.legder(cj)) if j > 0 else 0.0
    return out


@dataclass(frozen=True)
class Quadrature:
    """Gauss-Legendre rule mapped to [0, 1]; weights sum to one."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n_points(self) -> int:
        return self.nodes.size


def gauss_legendre_rule(n_points: int) -> Quadrature:
    """n-point Gauss-Legendre rule on [0, 1], exact up to degree 2n - 1."""
    if not 1 <= n_points <= 64:
        raise ValueError(f"quadrature point count must be in [1, 64], got {n_points}")
    x, w = npleg.leggauss(n_points)
    return Quadrature(nodes=(x + 1.0) / 2.0, weights=w / 2.0)


class DgFunction:
    """Piecewise polynomial of degree p with per-element Legendre coefficients.

    Value semantics: arithmetic returns new instances, coefficients are owned.
    """

    __slots__ = ("mesh", "p", "coeffs")

    def __init__(self, mesh, p: int, coeffs: np.ndarray):
        coeffs = np.ascontiguousarray(np.asarray(coeffs, dtype=float))
        if coeffs.shape != (mesh.n_elements, p + 1):
            raise ValueError(
                f"coefficient array must have shape {(mesh.n_elements, p + 1)}, "
                f"got {coeffs.shape}"
            )
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        self.mesh = mesh
        self.p = p
        self.coeffs = coeffs

    @classmethod
    def zeros(cls, mesh, p: int) -> "DgFunction":
        return cls(mesh, p, np.zeros((mesh.n_elements, p + 1)))

    @classmethod
    def constant(cls, mesh, p: int, value: float) -> "DgFunction":
        c = np.zeros((mesh.n_elements, p + 1))
        c[:, 0] = value
        return cls(mesh, p, c)

    def copy(self) -> "DgFunction":
        return DgFunction(self.mesh, self.p, self.coeffs.copy())

    def with_coeffs(self, coeffs: np.ndarray) -> "DgFunction":
        return DgFunction(self.mesh, self.p, coeffs)

    @property
    def flat(self) -> np.ndarray:
        return self.coeffs.reshape(-1)

    def __add__(self, other):
        if isinstance(other, DgFunction):
            return self.with_coeffs(self.coeffs + other.coeffs)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, DgFunction):
            return self.with_coeffs(self.coeffs - other.coeffs)
        return NotImplemented

    def __mul__(self, a: float):
        return self.with_coeffs(self.coeffs * float(a))

    __rmul__ = __mul__

    def eval_elements(self, xi) -> np.ndarray:
        """Values at local coordinates xi in [0, 1], shape (n_el, len(xi))."""
        return self.coeffs @ _basis_matrix(self.p, xi)

    def deriv_elements(self, xi) -> np.ndarray:
        """Spatial derivative at local coordinates xi, shape (n_el, len(xi))."""
        return (self.coeffs @ _basis_deriv_matrix(self.p, xi)) / self.mesh.h[:, None]

    def __call__(self, x, side: str = "left") -> np.ndarray:
        """Pointwise values; at element boundaries `side` picks the one-sided limit."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        nodes = self.mesh.nodes
        if side == "left":
            e = np.searchsorted(nodes, x, side="left") - 1
        else:
            e = np.searchsorted(nodes, x, side="right") - 1
        e = np.clip(e, 0, self.mesh.n_elements - 1)
        xi = (x - nodes[e]) / self.mesh.h[e]
        vals = np.empty_like(x)
        for k in range(x.size):
            vals[k] = self.coeffs[e[k]] @ _basis_matrix(self.p, xi[k])[:, 0]
        return vals

    def sample(self, points_per_element: int = 10):
        """Sampling grid with one-sided values, for plotting and CSV export.

        Interior face x-values appear twice (left limit from the left element,
        right limit from the right element); jumps stay visible.
        """
        xi = np.linspace(0.0, 1.0, points_per_element)
        vals = self.eval_elements(xi)
        xs = self.mesh.nodes[:-1, None] + self.mesh.h[:, None] * xi[None, :]
        return xs.reshape(-1), vals.reshape(-1)

    def coeff_rows(self):
        """Flat (element id, coefficient list) rows."""
        return [(e, self.coeffs[e].tolist()) for e in range(self.mesh.n_elements)]


def project_l2(f, mesh, p: int, quad: Quadrature) -> DgFunction:
    """Elementwise L2 projection of a scalar function onto the space.

    In the orthonormal reference basis the coefficients are plain quadrature
    moments, c_{K,j} = sum_q w_q f(x_q) phi_j(xi_q), so the residual f - Pf is
    quadrature-orthogonal to every basis function on each element.
    """
    phi = _basis_matrix(p, quad.nodes)
    x = mesh.nodes[:-1, None] + mesh.h[:, None] * quad.nodes[None, :]
    try:
        fx = np.asarray(f(x), dtype=float)
        if fx.shape != x.shape:
            raise TypeError
    except (TypeError, ValueError):
        fx = np.vectorize(f, otypes=[float])(x)
    if not np.all(np.isfinite(fx)):
        bad = np.argwhere(~np.isfinite(fx))
        raise ValueError(
            f"initial function returned a non-finite value at x={x[tuple(bad[0])]:.6g}"
        )
    coeffs = (fx * quad.weights) @ phi.T
    return DgFunction(mesh, p, coeffs)


def face_trace(v: DgFunction, face: int) -> tuple[float, float]:
    """One-sided limits (v_minus, v_plus) at interior face `face`."""
    mesh = v.mesh
    if not 0 <= face < mesh.n_faces:
        raise ValueError(f"face index {face} is not an interior face")
    phi1 = _basis_matrix(v.p, 1.0)[:, 0]
    phi0 = _basis_matrix(v.p, 0.0)[:, 0]
    vm = float(v.coeffs[mesh.face_left[face]] @ phi1)
    vp = float(v.coeffs[mesh.face_right[face]] @ phi0)
    return vm, vp


def jump_average(v: DgFunction, face: int) -> tuple[float, float]:
    """(jump, average) at an interior face; jump(v) = v_- - v_+."""
    vm, vp = face_trace(v, face)
    return vm - vp, 0.5 * (vm + vp)


def all_face_traces(v: DgFunction) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized one-sided limits at every interior face."""
    phi1 = _basis_matrix(v.p, 1.0)[:, 0]
    phi0 = _basis_matrix(v.p, 0.0)[:, 0]
    return v.coeffs[:-1] @ phi1, v.coeffs[1:] @ phi0


def dg_norm(v: DgFunction, quad: Quadrature) -> float:
    """DG norm: L2 part + broken H1 seminorm + penalty-weighted jumps.

    Face terms carry the weight p^2 / h_f and reduce to point values in 1D.
    """
    mesh = v.mesh
    vals = v.eval_elements(quad.nodes)
    ders = v.deriv_elements(quad.nodes)
    l2 = float(np.sum(mesh.h[:, None] * quad.weights * vals**2))
    h1 = float(np.sum(mesh.h[:, None] * quad.weights * ders**2))
    vm, vp = all_face_traces(v)
    jumps = float(np.sum(v.p**2 / mesh.face_h * (vm - vp) ** 2))
    return float(np.sqrt(l2 + h1 + jumps))


def _stationary_xi(coeffs_row: np.ndarray) -> np.ndarray:
    """Local coordinates in (0, 1) where the element polynomial is stationary."""
    p = coeffs_row.size - 1
    if p < 2:
        return np.empty(0)
    scale = np.sqrt(2.0 * np.arange(p + 1) + 1.0)
    series = npleg.Legendre(coeffs_row * scale, domain=[0.0, 1.0])
    roots = series.deriv().roots()
    roots = roots[np.abs(roots.imag) < 1e-12].real if np.iscomplexobj(roots) else roots
    return roots[(roots > 0.0) & (roots < 1.0)]


def elementwise_linf(v: DgFunction, element: int, quad: Quadrature | None = None) -> float:
    """max |v| over one element.

    Candidates: endpoints, quadrature nodes, a Chebyshev grid of 4p+1 points,
    and the interior stationary points of the polynomial, so the result is the
    true maximum up to root-finding round-off (exact at endpoints for p = 1).
    """
    p = v.p
    cheb = 0.5 * (1.0 + np.cos(np.pi * np.arange(4 * p + 1) / (4 * p)))
    pts = [np.array([0.0, 1.0]), cheb]
    if quad is not None:
        pts.append(quad.nodes)
    pts.append(_stationary_xi(v.coeffs[element]))
    xi = np.concatenate(pts)
    vals = v.coeffs[element] @ _basis_matrix(p, xi)
    return float(np.max(np.abs(vals)))
