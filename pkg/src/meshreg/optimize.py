"""Levenberg-Marquardt over states with a custom retraction (so rotations can update on the manifold)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OptimizationError

LAMBDA_INIT = 1e-3
LAMBDA_UP = 10.0
LAMBDA_DOWN = 10.0
LAMBDA_MAX = 1e16
MAX_ITER = 100
REL_TOL = 1e-12
# residuals at floating-point noise level (about 1e-10 px rms) count as converged
ABS_COST_FLOOR = 1e-20


@dataclass
class LMResult:
    x: object
    cost: float
    iterations: int
    converged: bool
    costs: list = field(default_factory=list)  # cost after every accepted step, starting with the initial one


def levenberg_marquardt(residual, jacobian, x0, retract=None, max_iter: int = MAX_ITER,
                        rel_tol: float = REL_TOL, lam: float = LAMBDA_INIT) -> LMResult:
    """Minimize ``0.5 * |residual(x)|^2``.

    ``retract(x, dx)`` applies a parameter step; it defaults to addition.
    Damping is Marquardt-scaled: ``(J^T J + lam * diag(J^T J)) dx = -J^T r``.
    """
    if retract is None:
        def retract(x, dx):
            return x + dx

    x = x0
    r = residual(x)
    cost = 0.5 * float(r @ r)
    costs = [cost]
    for it in range(1, max_iter + 1):
        if cost == 0.0:
            return LMResult(x, cost, it - 1, True, costs)
        J = jacobian(x)
        g = J.T @ r
        A = J.T @ J
        d = np.diag(A).copy()
        d[d == 0] = 1.0
        while True:
            try:
                dx = np.linalg.solve(A + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                dx = None
            if dx is not None and np.all(np.isfinite(dx)):
                x_new = retract(x, dx)
                r_new = residual(x_new)
                cost_new = 0.5 * float(r_new @ r_new)
                if np.isfinite(cost_new) and cost_new < cost:
                    lam = max(lam / LAMBDA_DOWN, 1e-15)
                    break
            lam *= LAMBDA_UP
            if lam > LAMBDA_MAX:
                # no damped step helps: accept convergence only if Gauss-Newton predicts nothing left
                dx_gn = np.linalg.lstsq(J, -r, rcond=None)[0]
                lin = r + J @ dx_gn
                predicted = cost - 0.5 * float(lin @ lin)
                if predicted <= rel_tol * cost + ABS_COST_FLOOR * len(r):
                    return LMResult(x, cost, it, True, costs)
                raise OptimizationError(
                    f"Levenberg-Marquardt diverged at iteration {it} (cost {cost:.6g})", last_iterate=x
                )
        decrease = cost - cost_new
        x, r, cost = x_new, r_new, cost_new
        costs.append(cost)
        if decrease < rel_tol * (cost + decrease):
            return LMResult(x, cost, it, True, costs)
    return LMResult(x, cost, max_iter, False, costs)
