"""Limited-memory quasi-Newton minimizer with backtracking line search."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    iterations: int
    n_evals: int
    converged: bool


def minimize_lbfgs(fun, x0, max_iter: int = 300, grad_tol: float = 1e-5,
                   memory: int = 8, armijo: float = 1e-4, shrink: float = 0.5,
                   max_backtracks: int = 40) -> OptimResult:
    """Minimize fun(x) -> (f, grad). Returns the best iterate seen.

    Plain Armijo backtracking; curvature pairs that would break positive
    definiteness are skipped rather than damped.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = fun(x)
    n_evals = 1
    best_x = x.copy()
    best_f = f
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    it = 0
    converged = False

    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= grad_tol:
            converged = True
            break

        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            y_last = y_hist[-1]
            gamma = float(s_hist[-1] @ y_last) / max(float(y_last @ y_last), 1e-300)
            q *= gamma
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        d = -q

        slope = float(g @ d)
        if not np.isfinite(slope) or slope >= 0:
            d = -g
            slope = -float(g @ g)
            s_hist.clear()
            y_hist.clear()
            rho_hist.clear()

        step = 1.0
        if not s_hist:
            step = min(1.0, 1.0 / max(1e-12, float(np.sum(np.abs(g)))))
        accepted = False
        for _ in range(max_backtracks):
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            n_evals += 1
            if np.isfinite(f_new) and f_new <= f + armijo * step * slope:
                accepted = True
                break
            step *= shrink
        if not accepted:
            break

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)

        x, f, g = x_new, f_new, g_new
        if f < best_f:
            best_f = f
            best_x = x.copy()

    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    return OptimResult(x=best_x, fun=best_f, grad_norm=gnorm,
                       iterations=it, n_evals=n_evals, converged=converged)
