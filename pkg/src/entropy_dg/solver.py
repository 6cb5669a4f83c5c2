"""Implicit Euler time stepping with a damped Newton solve per step."""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import diagnostics
from .dgspace import DgFunction, project_l2
from .errors import DensityOverflowError, NewtonDivergenceError
from .forms import NewtonControls, SchemeOperator, SchemeParams
from .mesh import Mesh1D

__all__ = [
    "NewtonControls", "NewtonStats", "TimeSeries", "TimeSeriesEntry",
    "newton_solve", "run_simulation", "damped_newton",
]


@dataclass
class NewtonStats:
    iterations: int
    residual_norms: list
    halvings: int = 0
    stalled: bool = False


def _newton_direction(J: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Solve J d = -r; dense LU first, scaled least squares as a fallback.

    States carrying the positivity floor make the Jacobian span tens of
    decades (the stabilization factor is exponential in the log density), and
    plain LU can return directions with O(1) backward error or hit exact zero
    pivots.  Row-equilibrated SVD least squares solves the numerically
    well-determined part, which is exactly what the damped iteration needs.
    """
    try:
        d = np.linalg.solve(J, -r)
        resid = np.linalg.norm(J @ d + r)
        if resid <= 1e-6 * max(np.linalg.norm(r), 1e-300):
            return d
    except np.linalg.LinAlgError:
        pass
    dr = 1.0 / np.maximum(np.abs(J).max(axis=1), 1e-300)
    return np.linalg.lstsq(J * dr[:, None], -r * dr, rcond=None)[0]


def damped_newton(residual_fn, jacobian_fn, x0: np.ndarray,
                  controls: NewtonControls, project=None, probe_fn=None):
    """Newton iteration on flat arrays with residual-norm backtracking.

    Each accepted step strictly decreases the sup norm of the residual;
    the step is halved (relaxation) until it does.  Trial points where the
    residual overflows count as rejected trials.  An optional `project`
    callable snaps trials back into an admissible region (the convergence
    test is still the plain residual there).  If no fraction of the Newton
    step decreases the residual (the direction can be extreme when the
    Jacobian is exponentially graded), a Levenberg-Marquardt direction with
    increasing damping is tried, and `probe_fn` may supply pattern-search
    trial points (mean moves that unjam a stuck front) before giving up.
    """
    x = np.array(x0, dtype=float)
    if project is not None:
        x = project(x)
    r = residual_fn(x)
    norm = float(np.max(np.abs(r)))
    history = [norm]
    halvings_total = 0
    if norm <= controls.tol:
        return x, NewtonStats(0, history)

    def line_search(d):
        nonlocal halvings_total
        step = 1.0
        for _ in range(controls.max_halvings + 1):
            trial = x + step * d
            if project is not None:
                trial = project(trial)
            try:
                r_t = residual_fn(trial)
                n_t = float(np.max(np.abs(r_t)))
            except DensityOverflowError:
                n_t = np.inf
            if np.isfinite(n_t) and n_t < norm:
                return trial, r_t, n_t
            step *= controls.damping
            halvings_total += 1
        return None, None, None

    def probe_search():
        best = None
        if probe_fn is None:
            return best
        for trial in probe_fn(x, r):
            if project is not None:
                trial = project(trial)
            try:
                r_t = residual_fn(trial)
                n_t = float(np.max(np.abs(r_t)))
            except DensityOverflowError:
                continue
            if n_t < 0.99 * norm and (best is None or n_t < best[2]):
                best = (trial, r_t, n_t)
        return best

    for it in range(controls.max_iter):
        if (it >= 50 and history[-1] > 0.5 * history[-51]
                and norm > 1e4 * controls.stall_tol):
            # not even halving over fifty iterations while far above the
            # stall tolerance: bail out early, the continuation fallbacks
            # are cheaper than burning the iteration budget
            raise NewtonDivergenceError(
                f"Newton stagnated at residual {norm:.3e}",
                last_iterate=x, residual_history=history)
        J = jacobian_fn(x)
        trial, r_t, n_t = line_search(_newton_direction(J, r))
        if trial is None:
            dr = 1.0 / np.maximum(np.abs(J).max(axis=1), 1e-300)
            Jr = J * dr[:, None]
            JtJ = Jr.T @ Jr
            g = Jr.T @ (r * dr)
            diag = np.maximum(np.diag(JtJ), 1e-300)
            mu = 1e-10
            while trial is None and mu < 1e18:
                try:
                    d_lm = np.linalg.solve(JtJ + mu * np.diag(diag), -g)
                except np.linalg.LinAlgError:
                    mu *= 10.0
                    continue
                trial, r_t, n_t = line_search(d_lm)
                mu *= 10.0
        if trial is None:
            better = probe_search()
            if better is not None:
                trial, r_t, n_t = better
        if trial is None:
            # stalled: the exponentially graded penalty leaves clusters of
            # equations Newton cannot navigate below a small residual, and
            # no direction makes progress; accept within the stall tolerance
            if norm <= controls.stall_tol:
                return x, NewtonStats(len(history) - 1, history,
                                      halvings_total, stalled=True)
            raise NewtonDivergenceError(
                f"no residual decrease after {controls.max_halvings} halvings "
                f"at residual {norm:.3e}",
                last_iterate=x, residual_history=history)
        x, r, norm = trial, r_t, n_t
        history.append(norm)
        if norm <= controls.tol:
            return x, NewtonStats(len(history) - 1, history, halvings_total)
    if norm <= controls.stall_tol:
        return x, NewtonStats(len(history) - 1, history, halvings_total,
                              stalled=True)
    raise NewtonDivergenceError(
        f"Newton did not reach tol={controls.tol:g} in "
        f"{controls.max_iter} iterations (residual {norm:.3e})",
        last_iterate=x, residual_history=history)


def _clip_project(coeffs2d: np.ndarray, tab, lo: float) -> np.ndarray:
    """Clamp element values below `lo` (clip at quadrature nodes and
    re-project elementwise); elements already above the floor are left
    untouched bitwise."""
    samples = coeffs2d @ tab.samp
    bad = np.where(np.min(samples, axis=1) < lo)[0]
    if bad.size == 0:
        return coeffs2d
    out = coeffs2d.copy()
    vals = np.maximum(out[bad] @ tab.phi, lo)
    out[bad] = (vals * tab.w) @ tab.phi.T
    return out


def newton_solve(lam_init: DgFunction, lam_prev: DgFunction,
                 params: SchemeParams, mesh: Mesh1D | None = None,
                 op: SchemeOperator | None = None):
    """Solve one implicit Euler step; returns (lambda, NewtonStats).

    Line-search trials are clamped from below at the previous state's
    minimum minus a pad: the logistic reaction and diffusion never drive
    the log density below its running floor, while the exponentially graded
    stabilization lets unprojected Newton park coefficients at arbitrary
    sub-floor values that stall the iteration.  The converged residual is
    always that of the unmodified scheme.
    """
    mesh = mesh or lam_init.mesh
    op = op or SchemeOperator(mesh, params)
    op.set_previous(lam_prev)
    shape = lam_init.coeffs.shape

    prev_min = float(np.min(lam_prev.coeffs @ op.tab.samp))
    lo = prev_min - 4.0
    lo_tight = prev_min - 0.5

    def res(flat):
        return op.residual_flat(np.ascontiguousarray(flat.reshape(shape)))

    def jac(flat):
        return op.jacobian_flat(np.ascontiguousarray(flat.reshape(shape)))

    def project(flat):
        return _clip_project(flat.reshape(shape), op.tab, lo).reshape(-1)

    m = shape[1]

    def probe(flat, r):
        # coordinate moves of the elements around the worst residual entry;
        # fronts marching through the floor jam in exactly these modes and
        # Newton cannot see across the branch kinks of the stabilization
        eb = int(np.argmax(np.abs(r))) // m
        x2 = flat.reshape(shape)
        for e in range(max(0, eb - 2), min(shape[0], eb + 3)):
            for mode in range(m):
                for delta in (16.0, 8.0, 4.0, 2.0, 1.0, 0.5,
                              -0.5, -1.0, -2.0, -4.0, -8.0, -16.0):
                    t = x2.copy()
                    t[e, mode] += delta
                    yield t.reshape(-1)

    init = lam_init.flat
    last_err = None
    for _ in range(3):
        try:
            x, stats = damped_newton(res, jac, init, params.newton,
                                     project=project, probe_fn=probe)
            return lam_init.with_coeffs(x.reshape(shape)), stats
        except NewtonDivergenceError as exc:
            # wash residual-indifferent sub-floor values out of the stuck
            # iterate and retry once or twice; see _clip_project
            last_err = exc
            init = _clip_project(exc.last_iterate.reshape(shape), op.tab,
                                 lo_tight).reshape(-1)
    raise last_err


@dataclass
class TimeSeriesEntry:
    k: int
    t: float
    lam: DgFunction
    report: "diagnostics.StepReport"


@dataclass
class TimeSeries:
    """One full simulation: per-step states and diagnostics."""

    params: SchemeParams
    mesh: Mesh1D
    entries: list = field(default_factory=list)
    status: str = "completed"
    metadata: dict = field(default_factory=dict)

    @property
    def entropies(self) -> np.ndarray:
        return np.array([e.report.S for e in self.entries])

    @property
    def times(self) -> np.ndarray:
        return np.array([e.t for e in self.entries])

    @property
    def reports(self):
        return [e.report for e in self.entries]

    @property
    def initial_entropy(self) -> float:
        return self.entries[0].report.S


def _prolongate(lam: DgFunction, p: int) -> DgFunction:
    """Embed into degree p by zero-padding the orthonormal modes."""
    c = np.zeros((lam.mesh.n_elements, p + 1))
    c[:, :lam.coeffs.shape[1]] = lam.coeffs
    return DgFunction(lam.mesh, p, c)


def _solve_step_robust(lam_prev: DgFunction, params: SchemeParams,
                       mesh: Mesh1D, op: SchemeOperator,
                       depth: int = 0, max_depth: int = 10):
    """One implicit Euler step with a ladder of fallback warm starts.

    The warm-started Newton solve can stall on the first steps of runs with
    floor data (a sharp log-density front must march through many elements
    at once).  Two rescue strategies generate better initial guesses, and
    the accepted state always solves the unmodified full-order, full-step
    equations:

    * order continuation: solve the same step at degrees 1..p-1, each
      prolongated into the next (low-order solves are robust and the
      high-order correction is then local);
    * time-step continuation: two recursive half-step solves approximate
      the step, and the full step is retried from that state.
    """
    try:
        lam, stats = newton_solve(lam_prev, lam_prev, params, mesh, op)
        return lam, stats, depth
    except NewtonDivergenceError:
        if depth >= max_depth:
            raise

    if params.p > 1:
        try:
            guess = None
            for pp in range(1, params.p):
                sub = replace(params, p=pp,
                              c_inv=diagnostics.compute_c_inv(pp))
                sub_prev = DgFunction(mesh, pp,
                                      lam_prev.coeffs[:, :pp + 1].copy())
                init = sub_prev if guess is None else _prolongate(guess, pp)
                lam_pp, _ = newton_solve(init, sub_prev, sub, mesh)
                guess = lam_pp
            lam, stats = newton_solve(_prolongate(guess, params.p), lam_prev,
                                      params, mesh, op)
            return lam, stats, depth + 1
        except NewtonDivergenceError:
            pass

    half = replace(params, dt=params.dt / 2.0)
    op_half = SchemeOperator(mesh, half)
    g1, _, _ = _solve_step_robust(lam_prev, half, mesh, op_half,
                                  depth + 1, max_depth)
    g2, _, _ = _solve_step_robust(g1, half, mesh, op_half,
                                  depth + 1, max_depth)
    lam, stats = newton_solve(g2, lam_prev, params, mesh, op)
    return lam, stats, depth + 1


def run_simulation(u0, mesh: Mesh1D, params: SchemeParams, n_steps: int,
                   floor: float = 1e-16) -> TimeSeries:
    """Iterate the scheme from the projected log of max(u0, floor).

    Every step is solved to the Newton tolerance, warm-started from the
    previous state, and certified through a StepReport.  Nonconvergence
    aborts the run: the raised error carries the partial series.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    lam0 = project_l2(lambda x: np.log(np.maximum(u0(x), floor)),
                      mesh, params.p, params.quad)
    op = SchemeOperator(mesh, params)
    series = TimeSeries(params=params, mesh=mesh)
    series.metadata["floor"] = floor
    series.metadata["newton_iterations"] = []
    t_start = time.perf_counter()

    report0 = diagnostics.step_report(lam0, None, None, None, params)
    series.entries.append(TimeSeriesEntry(0, 0.0, lam0, report0))
    S0 = report0.S

    lam = lam0
    S_prev = S0
    for k in range(1, n_steps + 1):
        try:
            lam_new, stats, depth = _solve_step_robust(lam, params, mesh, op)
        except NewtonDivergenceError as exc:
            series.status = f"nonconverged at step {k}"
            exc.step = k
            exc.partial = series
            raise
        report = diagnostics.step_report(lam_new, lam, S_prev, S0, params)
        series.entries.append(TimeSeriesEntry(k, k * params.dt, lam_new, report))
        series.metadata["newton_iterations"].append(stats.iterations)
        if depth:
            series.metadata["continuation_steps"] = (
                series.metadata.get("continuation_steps", 0) + 1)
        lam = lam_new
        S_prev = report.S
    series.metadata["wall_time"] = time.perf_counter() - t_start
    return series
