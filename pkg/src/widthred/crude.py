"""Width-reduced multiplicative-weights solver for the crude stage.

The solver keeps one weight per design row.  Each iteration solves the
weighted energy problem on resistances derived from the weights; small
steps ("flow") are accumulated into the iterate and grow the weights
proportionally to ``|P delta|``, while oversized steps trigger a width
reduction that rescales the offending resistances instead of moving.
The returned point is the average of the accumulated flow steps, which
is feasible and entrywise bounded by ``R * M * w_final``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import Infeasible, InvalidParameter, TheoryViolation
from .instances import ProblemInstance
from .losses import NON_DECREASING, QscLoss, make_exp_loss
from .report import TraceRow
from .wls import psi

log = logging.getLogger("widthred.crude")


@dataclass(frozen=True)
class MwuConfig:
    """Scale constants and guards for :func:`qsc_mwu`.

    ``epsilon`` is both the accuracy and the step parameter.  ``c_tau``
    and ``c_alpha`` multiply the width threshold ``tau = c_tau * m^(1/3) *
    eps^(-2/3)`` and the step size ``alpha = c_alpha * m^(-1/3) * M^(-1) *
    eps^(2/3)``; their product must stay <= 1 so that ``alpha * tau <=
    1/M``.  ``width_safety`` scales the width-step abort guard relative to
    ``tau``.
    """

    epsilon: float = 0.5
    c_tau: float = 1.0
    c_alpha: float = 1.0
    max_flow_steps: int | None = None
    max_width_steps: int | None = None
    feas_tol: float = 1e-8
    width_safety: float = 1.0
    trace_objective: bool = True

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise InvalidParameter(f"epsilon must be in (0, 1], got {self.epsilon}")
        if self.c_tau <= 0 or self.c_alpha <= 0:
            raise InvalidParameter("c_tau and c_alpha must be positive")
        if self.c_tau * self.c_alpha > 1.0 + 1e-12:
            raise InvalidParameter(
                "c_tau * c_alpha must be <= 1 so that alpha * tau <= 1/M "
                f"(got {self.c_tau * self.c_alpha})"
            )
        if self.width_safety <= 0:
            raise InvalidParameter("width_safety must be positive")

    def tau(self, m: int) -> float:
        return self.c_tau * m ** (1.0 / 3.0) * self.epsilon ** (-2.0 / 3.0)

    def alpha(self, m: int, M: float) -> float:
        return (self.c_alpha * m ** (-1.0 / 3.0) * self.epsilon ** (2.0 / 3.0)
                / M)

    def flow_steps(self, m: int, M: float) -> int:
        target = math.ceil(1.0 / (self.alpha(m, M) * M * self.epsilon) - 1e-9)
        if self.max_flow_steps is not None:
            return min(target, self.max_flow_steps)
        return target

    def width_cap(self, m: int) -> int:
        if self.max_width_steps is not None:
            return self.max_width_steps
        return math.ceil(self.tau(m) * self.width_safety)


@dataclass
class MwuState:
    """Mutable solver state: iterate, weights, and step counters."""

    x: np.ndarray
    w: np.ndarray
    t: int = 0
    k: int = 0
    trace: list = field(default_factory=list)


@dataclass
class CrudeSolution:
    """Output of :func:`qsc_mwu`.

    ``linf_bound = R * M * max(w_final)`` certifies ``||P x_tilde||_inf``;
    the entrywise form ``|P x_tilde| <= R * M * w_final`` holds as well.
    """

    x_tilde: np.ndarray
    w_final: np.ndarray
    flow_steps: int
    width_steps: int
    linf_bound: float
    objective: float
    feasibility_residual: float
    R: float
    epsilon: float
    tau: float
    alpha: float
    flow_target: int
    phi_initial: float
    phi_final: float
    trace: list = field(default_factory=list, repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)


def phi(w, loss: QscLoss) -> float:
    """Curvature potential ``sum_i f''(w_i)``."""
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise InvalidParameter("weights must be finite")
    return float(np.sum(loss.d2(w)))


def compute_resistances(w, eps: float, R: float, loss: QscLoss) -> np.ndarray:
    """Per-row quadratic weights ``(f''(w_i) + eps * Phi(w) / m) / R^2``.

    The additive floor keeps every resistance strictly positive whenever
    ``Phi(w) > 0``, which the catalog losses guarantee at ``w0``.
    """
    if R <= 0:
        raise InvalidParameter(f"R must be positive, got {R}")
    if eps < 0:
        raise InvalidParameter(f"eps must be nonnegative, got {eps}")
    w = np.asarray(w, dtype=float)
    m = w.shape[0]
    d2 = loss.d2(w)
    return (d2 + eps * float(np.sum(d2)) / m) / (R * R)


def _check_feasible(A, b, feas_tol):
    x_part, *_ = np.linalg.lstsq(A, b, rcond=None)
    gap = np.linalg.norm(A @ x_part - b)
    if gap > feas_tol * (1.0 + np.linalg.norm(b)):
        raise Infeasible(
            f"A x = b admits no solution (least-squares gap {gap:.3e})"
        )
    return x_part


def qsc_mwu(instance: ProblemInstance, R: float,
            config: MwuConfig | None = None) -> CrudeSolution:
    """Run the width-reduced multiplicative-weights solver.

    Parameters
    ----------
    instance : ProblemInstance
        Problem data; the mirrored design is used when the instance asks
        for row stacking.
    R : float
        Radius bound on ``||P x*||_inf`` (for some feasible minimizer or
        reference point).
    config : MwuConfig, optional

    Returns
    -------
    CrudeSolution
        Feasible averaged iterate with the certified entrywise bound
        ``|P x_tilde| <= R * M * w_final``.

    Raises
    ------
    Infeasible
        If ``A x = b`` has no solution.
    TheoryViolation
        If width reduction steps exceed their cap, which indicates
        mis-set scale constants or a loss outside the certified class.
    """
    if config is None:
        config = MwuConfig()
    if R <= 0:
        raise InvalidParameter(f"R must be positive, got {R}")
    loss = instance.loss
    A, b = instance.A, instance.b
    P = instance.design()
    m = P.shape[0]
    n = P.shape[1]
    eps = config.epsilon
    M = loss.M
    tau = config.tau(m)
    alpha = config.alpha(m, M)
    T = config.flow_steps(m, M)
    width_cap = config.width_cap(m)
    _check_feasible(A, b, config.feas_tol)

    state = MwuState(x=np.zeros(n), w=np.full(m, loss.w0, dtype=float))
    width_threshold = R * tau
    increasing = loss.d2_monotone == NON_DECREASING
    phi0 = phi(state.w, loss)
    if phi0 <= 0:
        raise InvalidParameter("loss has zero curvature at its initial weight")
    diag_bound_lhs = []
    diag_bound_rhs = []

    while state.t < T:
        iteration = state.t + state.k
        phi_now = phi(state.w, loss)
        r = compute_resistances(state.w, eps, R, loss)
        psi_val, delta = psi(A, b, P, r)
        pd = P @ delta
        abs_pd = np.abs(pd)
        mx = float(abs_pd.max()) if m else 0.0
        diag_bound_lhs.append(float(np.dot(loss.d2(state.w), abs_pd)))
        diag_bound_rhs.append((1.0 + eps) * R * phi_now)

        if mx <= width_threshold:
            state.x += delta
            state.w += (eps * alpha / R) * abs_pd
            state.t += 1
            kind = "flow"
        else:
            hot = abs_pd >= width_threshold
            state.w[hot] = loss.width_update(state.w[hot], eps)
            state.k += 1
            kind = "width"
            if state.k > width_cap:
                raise TheoryViolation(
                    f"width reduction steps exceeded the cap "
                    f"({state.k} > {width_cap}, tau={tau:.3g}); "
                    "check the scale constants and the loss certificate"
                )
        if config.trace_objective:
            obj = loss.total(P @ (state.x / max(state.t, 1)))
        else:
            obj = math.nan
        state.trace.append(TraceRow(
            iteration=iteration,
            step_kind=kind,
            phi=phi_now,
            psi=psi_val,
            max_abs_PDelta=mx,
            objective=obj,
        ))

    x_tilde = state.x / max(T, 1)
    phi_final = phi(state.w, loss)
    objective = loss.total(P @ x_tilde)
    feas = float(np.linalg.norm(A @ x_tilde - b))
    log.debug(
        "qsc_mwu done: m=%d eps=%.3g R=%.3g flow=%d width=%d obj=%.6g",
        m, eps, R, state.t, state.k, objective,
    )
    return CrudeSolution(
        x_tilde=x_tilde,
        w_final=state.w,
        flow_steps=state.t,
        width_steps=state.k,
        linf_bound=R * M * float(state.w.max()) if m else 0.0,
        objective=objective,
        feasibility_residual=feas,
        R=R,
        epsilon=eps,
        tau=tau,
        alpha=alpha,
        flow_target=T,
        phi_initial=phi0,
        phi_final=phi_final,
        trace=state.trace,
        diagnostics={
            "bound_linear_lhs": np.array(diag_bound_lhs),
            "bound_linear_rhs": np.array(diag_bound_rhs),
        },
    )


def binary_search_R(instance: ProblemInstance, nu: float, r_lo: float,
                    r_hi: float, config: MwuConfig | None = None,
                    loss_for_radius=None, metric=None) -> CrudeSolution:
    """Sweep a halving grid of radius guesses and keep the best run.

    Runs :func:`qsc_mwu` at ``R = r_hi, r_hi/2, ...`` down to (exclusive)
    ``r_lo`` and returns the solution with the smallest objective.  For
    the softmax guarantee the caller passes ``config.epsilon = nu``.

    ``loss_for_radius`` optionally maps a radius to the loss used for
    that run (scale-aware smoothing); ``metric`` optionally overrides the
    comparison objective.
    """
    if not (0 < r_lo < r_hi) or not np.isfinite(r_hi):
        raise InvalidParameter(f"need 0 < r_lo < r_hi, got [{r_lo}, {r_hi}]")
    if nu <= 0:
        raise InvalidParameter(f"nu must be positive, got {nu}")
    if config is None:
        config = MwuConfig(epsilon=min(nu, 1.0))
    best = None
    best_score = math.inf
    trials = []
    R = float(r_hi)
    while R > r_lo * (1.0 + 1e-15):
        run_inst = instance
        if loss_for_radius is not None:
            run_loss = loss_for_radius(R)
            run_inst = replace(instance, loss=run_loss,
                               loss_key=run_loss.name,
                               loss_params=dict(run_loss.params))
        sol = qsc_mwu(run_inst, R, config)
        score = sol.objective if metric is None else metric(sol)
        trials.append((R, score))
        if score < best_score:
            best, best_score = sol, score
        R /= 2.0
    best.diagnostics["search_trials"] = trials
    return best


def solve_linf(instance: ProblemInstance, eps: float,
               config: MwuConfig | None = None,
               search_depth: int = 12) -> np.ndarray:
    """Approximate min-max regression ``min_{Ax=b} ||P x||_inf``.

    Mirrors the design rows, smooths the maximum with a two-sided
    exponential at ``nu = eps / (2 log(2m))``, and sweeps radius guesses
    with :func:`binary_search_R` (a halving pass followed by a fine
    geometric pass around the winner).  Each run uses the smoothing scaled
    to its radius so the approximation error stays relative.

    Returns ``x`` with ``A x = b`` and ``||P x||_inf`` within a
    ``(1 + eps)`` factor of the optimum on instances where the radius
    sweep brackets the true scale.
    """
    if not (0.0 < eps < 1.0):
        raise InvalidParameter(f"eps must be in (0, 1), got {eps}")
    A, b, P = instance.A, instance.b, instance.P
    m = P.shape[0]
    nu1 = eps / (2.0 * math.log(2.0 * m))
    feas_tol = (config.feas_tol if config is not None else 1e-8)
    x_part = _check_feasible(A, b, feas_tol)
    scale = float(np.max(np.abs(P @ x_part)))
    if scale == 0.0:
        return x_part

    base = replace(instance, loss=make_exp_loss(nu1), loss_key="exp",
                   loss_params={"nu": nu1}, stack_rows=True)
    if config is None:
        config = MwuConfig(epsilon=nu1)
    else:
        config = replace(config, epsilon=nu1)

    def loss_for_radius(r):
        return make_exp_loss(nu1 * r)

    def metric(sol):
        return float(np.max(np.abs(P @ sol.x_tilde)))

    r_hi = scale * (1.0 + 1e-12)
    r_lo = r_hi * 2.0 ** (-search_depth)
    coarse = binary_search_R(base, nu1, r_lo, r_hi, config,
                             loss_for_radius=loss_for_radius, metric=metric)
    r_best = min((score, R) for R, score in
                 coarse.diagnostics["search_trials"])[1]

    # Fine pass: geometric grid at ratio (1 + eps/4) around the winner.
    best_x = coarse.x_tilde
    best_score = metric(coarse)
    ratio = 1.0 + eps / 4.0
    R = r_best * 2.0
    while R > r_best / 2.0:
        run_inst = replace(base, loss=make_exp_loss(nu1 * R),
                           loss_params={"nu": nu1 * R})
        sol = qsc_mwu(run_inst, R, config)
        score = metric(sol)
        if score < best_score:
            best_x, best_score = sol.x_tilde, score
        R /= ratio
    return best_x
