"""Equality-constrained diagonally weighted quadratic solves.

Every iteration of every solver in this package reduces to one call of
:func:`solve_wls`: minimize ``delta' P' Q P delta - 2 ell' P delta``
subject to ``A delta = b`` with ``Q = diag(q)``, ``q >= 0``.  The solve
forms the symmetric KKT system ``[[2 P'QP, A'], [A, 0]]`` and factorizes
it directly; with ``ell = 0`` this is the weighted "energy" minimization
``min sum_i q_i (P delta)_i^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidParameter, RankDeficient

DEFAULT_FEAS_TOL = 1e-8


@dataclass(frozen=True)
class WlsProblem:
    """One equality-constrained weighted least-squares instance.

    Parameters
    ----------
    A : ndarray of shape (d, n)
        Constraint matrix.  May have zero rows (unconstrained solve).
    b : ndarray of shape (d,)
        Constraint right-hand side.
    P : ndarray of shape (m, n)
        Design matrix mapping decision variables into weight space.
    q : ndarray of shape (m,)
        Nonnegative diagonal quadratic weights.
    ell : ndarray of shape (m,), optional
        Linear coefficients in ``P delta`` space; ``None`` means zero.
    """

    A: np.ndarray
    b: np.ndarray
    P: np.ndarray
    q: np.ndarray
    ell: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        q = np.asarray(self.q, dtype=float).ravel()
        ell = self.ell
        if ell is not None:
            ell = np.asarray(ell, dtype=float).ravel()
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "ell", ell)
        if A.shape[1] != P.shape[1]:
            raise DimensionMismatch(
                f"cols(A)={A.shape[1]} does not match cols(P)={P.shape[1]}"
            )
        if b.shape[0] != A.shape[0]:
            raise DimensionMismatch(
                f"len(b)={b.shape[0]} does not match rows(A)={A.shape[0]}"
            )
        if q.shape[0] != P.shape[0]:
            raise DimensionMismatch(
                f"len(q)={q.shape[0]} does not match rows(P)={P.shape[0]}"
            )
        if ell is not None and ell.shape[0] != P.shape[0]:
            raise DimensionMismatch(
                f"len(ell)={ell.shape[0]} does not match rows(P)={P.shape[0]}"
            )
        if np.any(q < 0):
            raise InvalidParameter("q must be entrywise nonnegative")


@dataclass(frozen=True)
class WlsSolution:
    """Solution of a :class:`WlsProblem`.

    ``objective`` is the attained quadratic value
    ``sum_i q_i (P delta)_i^2 - 2 ell' P delta`` (regularization excluded),
    ``constraint_residual`` is ``||A delta - b||_2``.
    """

    delta: np.ndarray
    objective: float
    constraint_residual: float
    kkt_multipliers: np.ndarray = field(repr=False, default=None)


def energy(P, q, ell, delta) -> float:
    """Quadratic objective ``sum_i q_i (P delta)_i^2 - 2 ell' P delta``.

    With ``ell = None`` (or zero) and ``q`` set to resistances this is the
    weighted energy of the step ``delta``.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    q = np.asarray(q, dtype=float).ravel()
    delta = np.asarray(delta, dtype=float).ravel()
    if P.shape[1] != delta.shape[0]:
        raise DimensionMismatch(
            f"cols(P)={P.shape[1]} does not match len(delta)={delta.shape[0]}"
        )
    if q.shape[0] != P.shape[0]:
        raise DimensionMismatch(
            f"len(q)={q.shape[0]} does not match rows(P)={P.shape[0]}"
        )
    pd = P @ delta
    value = float(np.dot(q, pd * pd))
    if ell is not None:
        ell = np.asarray(ell, dtype=float).ravel()
        if ell.shape[0] != P.shape[0]:
            raise DimensionMismatch(
                f"len(ell)={ell.shape[0]} does not match rows(P)={P.shape[0]}"
            )
        value -= 2.0 * float(np.dot(ell, pd))
    return value


def _assemble_and_solve(A, b, P, q, ell, ridge):
    """Solve the KKT system, returning (delta, multipliers) or None."""
    d, n = A.shape
    G = (P * q[:, None]).T @ P
    if ridge > 0.0:
        scale = np.trace(G) / max(n, 1)
        if scale <= 0.0 or not np.isfinite(scale):
            scale = 1.0
        G = G + (ridge * scale) * np.eye(n)
    rhs_top = np.zeros(n) if ell is None else 2.0 * (P.T @ ell)
    if d == 0:
        kkt = 2.0 * G
        rhs = rhs_top
    else:
        kkt = np.block([[2.0 * G, A.T], [A, np.zeros((d, d))]])
        rhs = np.concatenate([rhs_top, b])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    # Guard against a silently inaccurate factorization of a near-singular
    # system: the computed point must actually satisfy the KKT equations.
    resid = np.linalg.norm(kkt @ sol - rhs)
    if resid > 1e-6 * (1.0 + np.linalg.norm(rhs)):
        return None
    return sol[:n], sol[n:]


def solve_wls(problem: WlsProblem, reg: float = 0.0,
              feas_tol: float = DEFAULT_FEAS_TOL) -> WlsSolution:
    """Minimize ``delta' P'QP delta - 2 ell' P delta`` over ``A delta = b``.

    Parameters
    ----------
    problem : WlsProblem
    reg : float
        Nonnegative ridge applied to ``P'QP`` as ``reg * (tr/n) * I``.
        With ``reg = 0`` a singular system is retried once with a ridge of
        1e-12 before raising :class:`RankDeficient`.
    feas_tol : float
        Relative feasibility tolerance for ``||A delta - b||``.

    Returns
    -------
    WlsSolution

    Raises
    ------
    RankDeficient
        If the KKT system stays singular after the regularized retry, or
        the computed point misses the constraints beyond ``feas_tol``.
    """
    if reg < 0.0:
        raise InvalidParameter("reg must be nonnegative")
    A, b, P, q, ell = problem.A, problem.b, problem.P, problem.q, problem.ell
    out = _assemble_and_solve(A, b, P, q, ell, reg)
    if out is None and reg == 0.0:
        out = _assemble_and_solve(A, b, P, q, ell, 1e-12)
    if out is None:
        raise RankDeficient(
            "KKT system is singular beyond regularization "
            f"(d={A.shape[0]}, n={A.shape[1]}, m={P.shape[0]})"
        )
    delta, mults = out
    residual = float(np.linalg.norm(A @ delta - b)) if A.shape[0] else 0.0
    if residual > feas_tol * (1.0 + np.linalg.norm(b)):
        raise RankDeficient(
            f"constraint residual {residual:.3e} exceeds tolerance; "
            "constraint matrix is rank deficient or inconsistent"
        )
    return WlsSolution(
        delta=delta,
        objective=energy(P, q, ell, delta),
        constraint_residual=residual,
        kkt_multipliers=mults,
    )


def psi(A, b, P, r, reg: float = 0.0) -> tuple[float, np.ndarray]:
    """Weighted energy potential: ``min_{A delta = b} sum_i r_i (P delta)_i^2``.

    Returns the minimum value and the minimizer.  ``r`` must be entrywise
    nonnegative; a strictly positive ``r`` guarantees a unique minimizer
    whenever ``P`` has full column rank.
    """
    b = np.asarray(b, dtype=float).ravel()
    if not np.any(b):
        n = np.atleast_2d(P).shape[1]
        return 0.0, np.zeros(n)
    sol = solve_wls(WlsProblem(A=A, b=b, P=P, q=r, ell=None), reg=reg)
    return sol.objective, sol.delta
