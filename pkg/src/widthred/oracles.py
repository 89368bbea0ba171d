"""Independent verification oracles.

These deliberately avoid the solver machinery they certify: a null-space
damped Newton method and a derivative-free grid refinement for smooth
composite losses, an LP solve (plus brute-force vertex enumeration at
desk scale) for min-max regression, and a projected-gradient solver for
residual box problems on square reduced designs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import InvalidParameter, NonConverged
from .instances import ProblemInstance
from .refine import ResidualInstance, residual_value

PROJECTED_NEWTON = "projected-newton"
GRID_SEARCH = "grid-search"
LP_VERTEX = "lp-vertex"

_EM1 = math.exp(-1.0)


@dataclass(frozen=True)
class OracleResult:
    x_opt: np.ndarray
    f_opt: float
    method: str
    certified_tol: float
    iterations: int = 0
    grad_norm: float = math.nan


def _nullspace_setup(instance: ProblemInstance):
    A, b = instance.A, instance.b
    x_part, *_ = np.linalg.lstsq(A, b, rcond=None)
    N = scipy.linalg.null_space(A)
    return x_part, N


def oracle_solve(instance: ProblemInstance, tol: float = 1e-10,
                 method: str = PROJECTED_NEWTON) -> OracleResult:
    """Minimize the instance's composite loss over ``A x = b``.

    ``projected-newton`` parametrizes the feasible set as ``x = x_p + N u``
    and runs damped Newton with backtracking until the reduced gradient
    norm is below ``tol``.  ``grid-search`` is a derivative-free
    progressive refinement usable as an oracle-of-the-oracle for up to 20
    free dimensions.  ``lp-vertex`` ignores the loss and solves the
    min-max problem ``min ||P x||_inf`` instead.
    """
    if method == LP_VERTEX:
        return oracle_linf(instance)
    if method == PROJECTED_NEWTON:
        return _projected_newton(instance, tol)
    if method == GRID_SEARCH:
        return _grid_search(instance, tol)
    raise InvalidParameter(f"unknown oracle method {method!r}")


def _projected_newton(instance, tol, max_iter=500):
    loss = instance.loss
    P = instance.design()
    x_part, N = _nullspace_setup(instance)
    base = P @ x_part
    if N.shape[1] == 0:
        f0 = loss.total(base)
        return OracleResult(x_opt=x_part, f_opt=f0, method=PROJECTED_NEWTON,
                            certified_tol=0.0, iterations=0, grad_norm=0.0)
    B = P @ N
    u = np.zeros(N.shape[1])

    def value(uu):
        return loss.total(base + B @ uu)

    f = value(u)
    gnorm = math.inf
    lam_min = 0.0
    for it in range(max_iter):
        v = base + B @ u
        grad = B.T @ loss.d1(v)
        gnorm = float(np.linalg.norm(grad))
        hess = (B * loss.d2(v)[:, None]).T @ B
        lam_min = float(np.linalg.eigvalsh(hess)[0])
        if gnorm <= tol:
            break
        damp = 0.0
        step = None
        for _ in range(60):
            try:
                step = np.linalg.solve(
                    hess + damp * np.eye(hess.shape[0]), -grad)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.dot(step, grad) < 0:
                break
            damp = max(2.0 * damp, 1e-12 * (1.0 + abs(np.trace(hess))))
        if step is None:
            raise NonConverged("newton step computation failed",
                               grad_norm=gnorm)
        t = 1.0
        slope = float(np.dot(step, grad))
        for _ in range(80):
            f_try = value(u + t * step)
            if f_try <= f + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        u = u + t * step
        f = f_try
    else:
        raise NonConverged(
            f"projected newton stopped at ||grad|| = {gnorm:.3e}",
            grad_norm=gnorm)
    if gnorm > tol:
        raise NonConverged(
            f"projected newton stopped at ||grad|| = {gnorm:.3e}",
            grad_norm=gnorm)
    gap_bound = gnorm**2 / (2.0 * lam_min) if lam_min > 0 else tol
    return OracleResult(
        x_opt=x_part + N @ u,
        f_opt=f,
        method=PROJECTED_NEWTON,
        certified_tol=max(gap_bound, 1e-14 * (1.0 + abs(f))),
        iterations=it + 1,
        grad_norm=gnorm,
    )


def _golden_section(fun, a, b, tol):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while abs(b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (a + b) / 2.0


def _grid_search(instance, tol, max_rounds=200):
    """Derivative-free refinement over the constraint null space.

    Dense product grids for up to 2 free dimensions, cyclic per-coordinate
    golden-section sweeps beyond (up to 20 dimensions).
    """
    loss = instance.loss
    P = instance.design()
    x_part, N = _nullspace_setup(instance)
    k = N.shape[1]
    if k == 0:
        return OracleResult(x_opt=x_part, f_opt=loss.total(P @ x_part),
                            method=GRID_SEARCH, certified_tol=0.0)
    if k > 20:
        raise InvalidParameter(
            f"grid-search oracle supports at most 20 free dims, got {k}")
    base = P @ x_part
    B = P @ N

    def value(u):
        return loss.total(base + B @ u)

    u = np.zeros(k)
    span = 4.0 * (1.0 + float(np.linalg.norm(
        np.linalg.lstsq(B, -base, rcond=None)[0])))
    f = value(u)
    for _ in range(max_rounds):
        if k <= 2:
            axes = [np.linspace(-span, span, 11)] * k
            best = (f, u)
            for offs in itertools.product(*axes):
                cand = u + np.array(offs)
                fc = value(cand)
                if fc < best[0]:
                    best = (fc, cand)
            f, u = best
            span *= 0.35
        else:
            for j in range(k):
                def fun1(s, j=j):
                    cand = u.copy()
                    cand[j] += s
                    return value(cand)
                s_best = _golden_section(fun1, -span, span, span * 1e-3)
                if fun1(s_best) < f:
                    u[j] += s_best
                    f = value(u)
            span *= 0.5
        if span < tol * (1.0 + float(np.linalg.norm(u))):
            break
    return OracleResult(
        x_opt=x_part + N @ u,
        f_opt=f,
        method=GRID_SEARCH,
        certified_tol=max(span * span, 1e-12 * (1.0 + abs(f))),
    )


def oracle_linf(instance: ProblemInstance) -> OracleResult:
    """Exact LP solve of ``min_{A x = b} ||P x||_inf``."""
    A, b, P = instance.A, instance.b, instance.P
    d, n = A.shape
    m = P.shape[0]
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_eq = np.hstack([A, np.zeros((d, 1))])
    A_ub = np.block([[P, -np.ones((m, 1))], [-P, -np.ones((m, 1))]])
    res = scipy.optimize.linprog(
        c, A_ub=A_ub, b_ub=np.zeros(2 * m), A_eq=A_eq, b_eq=b,
        bounds=[(None, None)] * n + [(0, None)], method="highs",
    )
    if res.status != 0:
        raise NonConverged(f"LP oracle failed: {res.message}")
    return OracleResult(
        x_opt=res.x[:n],
        f_opt=float(res.x[-1]),
        method=LP_VERTEX,
        certified_tol=1e-9 * (1.0 + float(res.x[-1])),
    )


def linf_by_vertex_enumeration(instance: ProblemInstance) -> float:
    """Brute-force optimum of ``min ||P x||_inf`` by vertex enumeration.

    Only for desk-scale cross-checks: enumerates all bases of the epigraph
    polytope (variables ``(x, t)``; inequalities ``±(P x) <= t``, ``t >= 0``).
    """
    A, b, P = instance.A, instance.b, instance.P
    d, n = A.shape
    m = P.shape[0]
    rows = np.vstack([
        np.hstack([P, -np.ones((m, 1))]),
        np.hstack([-P, -np.ones((m, 1))]),
        np.hstack([np.zeros((1, n)), -np.ones((1, 1))]),
    ])
    rhs = np.zeros(2 * m + 1)
    eq = np.hstack([A, np.zeros((d, 1))])
    need = n + 1 - d
    if need < 0 or math.comb(rows.shape[0], need) > 200000:
        raise InvalidParameter("instance too large for vertex enumeration")
    best = math.inf
    for active in itertools.combinations(range(rows.shape[0]), need):
        mat = np.vstack([eq, rows[list(active)]])
        vec = np.concatenate([b, rhs[list(active)]])
        try:
            pt = np.linalg.solve(mat, vec)
        except np.linalg.LinAlgError:
            continue
        if np.all(rows @ pt <= rhs + 1e-9 * (1.0 + abs(pt[-1]))):
            best = min(best, pt[-1])
    if not math.isfinite(best):
        raise NonConverged("vertex enumeration found no feasible vertex")
    return float(best)


def residual_box_closed_form(inst: ResidualInstance):
    """Coordinate-wise maximizer of the residual model over the box.

    Valid when the box constraint is the only restriction on ``P delta``
    (square invertible reduced design): the objective separates per
    coordinate of ``v = P delta - z``.
    """
    r = inst.box_radius
    g, h, z = inst.g, inst.h, inst.z
    v = np.where(h > 0,
                 np.clip(np.divide(math.e * g, 2.0 * np.maximum(h, 1e-300))
                         - z, -r, r),
                 r * np.sign(g))
    return v + z  # optimal P delta


def residual_box_oracle(A, P, inst: ResidualInstance, tol: float = 1e-10,
                        max_iter: int = 500000):
    """Projected-gradient solve of the residual box problem.

    Requires ``P @ null_space(A)`` to be square and invertible, which
    makes the box the only effective constraint.  Returns ``(delta,
    res_value)`` with the iterate converged to ``tol`` in the box
    coordinates.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    N = scipy.linalg.null_space(A)
    B = P @ N
    if B.shape[0] != B.shape[1]:
        raise InvalidParameter(
            "residual box oracle needs m == n - d "
            f"(got reduced design of shape {B.shape})")
    if np.linalg.cond(B) > 1e10:
        raise InvalidParameter("reduced design is numerically singular")
    r = inst.box_radius
    g, h, z = inst.g, inst.h, inst.z
    v = np.zeros_like(g)
    lip = 2.0 * _EM1 * float(np.max(h)) if np.max(h) > 0 else 1.0
    step = 1.0 / lip
    for _ in range(max_iter):
        grad = g - 2.0 * _EM1 * h * (v + z)
        v_new = np.clip(v + step * grad, -r, r)
        if float(np.max(np.abs(v_new - v))) <= tol * max(1.0, r):
            v = v_new
            break
    else:
        raise NonConverged("projected gradient did not reach tolerance")
    v = v_new
    delta = N @ np.linalg.solve(B, v + z)
    return delta, residual_value(inst, v + z)
