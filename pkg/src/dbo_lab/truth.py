"""Exact hypergradient oracle used as the measuring stick for stationarity.

    grad Phi(x) = grad_x F(x, y*) - Jac_xy f(x, y*) v*,
    v* solves  Hess_yy f(x, y*) v = grad_y F(x, y*),

with all quantities the (1/n) averages over agents. The lower problem is
solved to high accuracy and the linear system by conjugate gradients; none of
this shares code with the single-loop algorithms under test.
"""
from dataclasses import dataclass

import numpy as np

from .errors import AccuracyError, ParameterError

DEFAULT_TOL = 1e-10
MAX_LOWER_ITER = 10**6
GD_MAX_CONDITION = 100.0


@dataclass(frozen=True)
class TruthReport:
    x: np.ndarray
    y_star: np.ndarray
    v_star: np.ndarray
    hypergrad: np.ndarray
    lower_residual: float
    linsys_residual: float
    tol_y: float
    tol_v: float
    phi: float

    @property
    def stationarity_sq(self):
        return float(self.hypergrad @ self.hypergrad)


def conjugate_gradient(matvec, b, x0=None, tol=DEFAULT_TOL, max_iter=None):
    """Solve A x = b for symmetric positive definite A given as a matvec.

    Stops when |b - A x| <= tol (absolute). Returns (x, residual norm, iterations).
    """
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    max_iter = 10 * b.size if max_iter is None else max_iter
    r = b - matvec(x)
    rr = float(r @ r)
    if np.sqrt(rr) <= tol:
        return x, float(np.sqrt(rr)), 0
    d = r.copy()
    for it in range(1, max_iter + 1):
        Ad = matvec(d)
        curv = float(d @ Ad)
        if curv <= 0:
            raise AccuracyError("operator is not positive definite along a CG direction", np.sqrt(rr))
        step = rr / curv
        x += step * d
        r -= step * Ad
        rr_new = float(r @ r)
        if np.sqrt(rr_new) <= tol:
            # recompute the true residual to guard against drift in the recursion
            true_res = float(np.linalg.norm(b - matvec(x)))
            if true_res <= tol:
                return x, true_res, it
            r = b - matvec(x)
            rr_new = float(r @ r)
            d = r.copy()
            rr = rr_new
            continue
        d = r + (rr_new / rr) * d
        rr = rr_new
    raise AccuracyError(f"conjugate gradient did not converge in {max_iter} iterations", np.sqrt(rr))


def _lower_grad_norm(problem, x, y):
    return float(np.linalg.norm(problem.lower_grad_y(x, y)))


def _solve_gd(problem, x, y, tol, max_iter):
    sigma, L = problem.lower_bounds(x)
    step = 2.0 / (sigma + L)
    g = problem.lower_grad_y(x, y)
    for _ in range(max_iter):
        res = float(np.linalg.norm(g))
        if res <= tol:
            return y, res
        y = y - step * g
        g = problem.lower_grad_y(x, y)
    res = float(np.linalg.norm(g))
    if res <= tol:
        return y, res
    raise AccuracyError(f"gradient descent on the lower problem hit {max_iter} iterations", res)


def _solve_newton(problem, x, y, tol, max_iter):
    g = problem.lower_grad_y(x, y)
    f = problem.lower_value(x, y)
    for _ in range(max_iter):
        res = float(np.linalg.norm(g))
        if res <= tol:
            return y, res
        step, _, _ = conjugate_gradient(lambda u: problem.lower_hvp(x, y, u), g,
                                        tol=max(0.1 * tol, 1e-3 * min(res, 1.0) * res),
                                        max_iter=50 * g.size)
        # near the solution f stops resolving the decrease, so a full step
        # that halves the gradient norm is accepted without the Armijo test
        y_new = y - step
        g_new = problem.lower_grad_y(x, y_new)
        if float(np.linalg.norm(g_new)) <= 0.5 * res:
            y, g, f = y_new, g_new, problem.lower_value(x, y_new)
            continue
        t = 1.0
        while True:
            y_new = y - t * step
            f_new = problem.lower_value(x, y_new)
            if f_new <= f - 1e-4 * t * float(g @ step) or t < 1e-12:
                break
            t *= 0.5
        y, f = y_new, f_new
        g = problem.lower_grad_y(x, y)
    res = float(np.linalg.norm(g))
    if res <= tol:
        return y, res
    raise AccuracyError(f"Newton on the lower problem hit {max_iter} iterations", res)


def solve_lower(problem, x, tol=DEFAULT_TOL, y0=None, method="auto", max_iter=MAX_LOWER_ITER):
    """Approximate y*(x) with |grad_y f(x, y)| <= tol.

    ``method``: "exact" uses the family's closed form, "gd" gradient descent
    with step 2/(sigma + L), "newton" damped Newton with CG inner solves.
    "auto" picks exact when available, else gd for condition numbers up to
    100 and Newton beyond.
    """
    if not tol > 0:
        raise ParameterError("tolerance must be positive")
    x = np.asarray(x, dtype=float)
    if method in ("auto", "exact"):
        y = problem.lower_solution_exact(x)
        if y is not None:
            res = _lower_grad_norm(problem, x, y)
            if res <= tol:
                return y
            # polish a slightly inaccurate linear solve
            return _solve_gd(problem, x, y, tol, max_iter)[0]
        if method == "exact":
            raise ParameterError("this problem has no closed-form lower solution")
    y = np.zeros(problem.q) if y0 is None else np.array(y0, dtype=float)
    if method == "auto":
        sigma, L = problem.lower_bounds(x)
        method = "gd" if L / sigma <= GD_MAX_CONDITION else "newton"
    if method == "gd":
        return _solve_gd(problem, x, y, tol, max_iter)[0]
    if method == "newton":
        return _solve_newton(problem, x, y, tol, min(max_iter, 500))[0]
    raise ParameterError(f"unknown lower solver {method!r}")


def exact_hypergradient(problem, x, tol_y=DEFAULT_TOL, tol_v=DEFAULT_TOL, y0=None, method="auto"):
    """Hypergradient at x with certified lower and linear-system residuals."""
    if not (tol_y > 0 and tol_v > 0):
        raise ParameterError("tolerances must be positive")
    x = np.asarray(x, dtype=float)
    y = solve_lower(problem, x, tol_y, y0=y0, method=method)
    rhs = problem.upper_grad_y(x, y)
    v, lin_res, _ = conjugate_gradient(lambda u: problem.lower_hvp(x, y, u), rhs, tol=tol_v,
                                       max_iter=50 * problem.q)
    hyper = problem.upper_grad_x(x, y) - problem.lower_jvp(x, y, v)
    return TruthReport(x=x, y_star=y, v_star=v, hypergrad=hyper,
                       lower_residual=_lower_grad_norm(problem, x, y), linsys_residual=lin_res,
                       tol_y=tol_y, tol_v=tol_v, phi=problem.upper_value(x, y))


def phi_value(problem, x, tol=DEFAULT_TOL, y0=None):
    y = solve_lower(problem, x, tol, y0=y0)
    return problem.upper_value(x, y), y


def finite_diff_hypergradient(problem, x, h=1e-4):
    """Central differences of Phi(x) = F(x, y*(x)), re-solving the lower problem per probe.

    Probes are solved to min(h^2 sigma, 1e-13) and warm-started from y*(x).
    """
    if not h > 0:
        raise ParameterError("h must be positive")
    x = np.asarray(x, dtype=float)
    sigma, _ = problem.lower_bounds(x)
    tol = min(h * h * sigma, 1e-13)
    y_mid = solve_lower(problem, x, tol)
    grad = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        f_plus, _ = phi_value(problem, x + e, tol, y0=y_mid)
        f_minus, _ = phi_value(problem, x - e, tol, y0=y_mid)
        grad[j] = (f_plus - f_minus) / (2.0 * h)
    return grad


def estimate_f_star(problem, x0, tol=DEFAULT_TOL, max_iter=100_000):
    """Minimize Phi by hypergradient descent with Barzilai-Borwein trial steps
    and Armijo backtracking.

    Returns (x_star, F*). Quadratic problems short-circuit to their closed form.
    """
    if hasattr(problem, "minimizer"):
        return problem.minimizer()
    x = np.array(x0, dtype=float)
    rep = exact_hypergradient(problem, x)
    t = 1.0
    for _ in range(max_iter):
        g = rep.hypergrad
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            return x, rep.phi
        while True:
            cand = x - t * g
            new = exact_hypergradient(problem, cand, y0=rep.y_star)
            if new.phi <= rep.phi - 1e-4 * t * gn * gn or t < 1e-14:
                break
            t *= 0.5
        s, yk = cand - x, new.hypergrad - g
        sy = float(s @ yk)
        x, rep = cand, new
        t = float(s @ s) / sy if sy > 0 else 2.0 * t
    raise AccuracyError("upper-level descent did not reach the requested stationarity",
                        float(np.linalg.norm(rep.hypergrad)))
