"""Boosting a crude solution to high accuracy via residual problems.

At an anchor ``x`` the local model is the concave quadratic
``res(delta) = g' P delta - e^{-1} sum_i h_i (P delta)_i^2`` (gradient
``g`` and curvature ``h`` of the loss at ``P x``), maximized over the
constraint null space intersected with a shifted box of radius
``1/(2M)``.  The shift ``z`` recenters the box so that the damped update
``x - e^{-2} delta`` stays inside the radius-``R`` ball.  An inner
multiplicative-weights loop solves each residual problem approximately;
an outer loop sweeps target levels, applies the best candidate, and
contracts the optimality gap geometrically.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .crude import MwuConfig, qsc_mwu
from .errors import (
    InfeasibleAugmented,
    InvalidParameter,
    OracleFailure,
    OutOfDomain,
    RankDeficient,
    TheoryViolation,
)
from .instances import ProblemInstance
from .report import SolveReport, TraceRow
from .wls import WlsProblem, solve_wls

log = logging.getLogger("widthred.refine")

_E = math.e
_EM1 = math.exp(-1.0)
_EM2 = math.exp(-2.0)


def compute_z(Px, R: float, M: float) -> np.ndarray:
    """Box recentering shift for an anchor with ``||P x||_inf <= R``.

    Coordinates within ``1/(2M)`` of the boundary get a shift that pulls
    the box ``||P delta - z||_inf <= 1/(2M)`` inward, so any feasible
    ``delta`` keeps ``x - e^{-2} delta`` inside the radius-``R`` ball;
    interior coordinates get ``z_i = 0``.
    """
    if R <= 0 or M <= 0:
        raise InvalidParameter("R and M must be positive")
    Px = np.asarray(Px, dtype=float).ravel()
    mx = float(np.max(np.abs(Px))) if Px.size else 0.0
    if mx > R * (1.0 + 1e-8):
        raise OutOfDomain(f"||P x||_inf = {mx:.6g} exceeds R = {R:.6g}")
    Px = np.clip(Px, -R, R)
    r = 0.5 / M
    low = Px - r < -R
    high = ~low & (Px + r > R)
    z = np.zeros_like(Px)
    z[low] = -r + R + Px[low]
    z[high] = -R + Px[high] + r
    return z


@dataclass(frozen=True)
class ResidualInstance:
    """Frozen data of one residual problem.

    ``g = f'(P x)``, ``h = f''(P x)``, ``z`` the box shift, ``zeta`` the
    current target level for the inner solver.
    """

    x_anchor: np.ndarray
    g: np.ndarray
    h: np.ndarray
    z: np.ndarray
    M: float
    R: float
    zeta: float

    @property
    def box_radius(self) -> float:
        return 0.5 / self.M


def make_residual_instance(instance: ProblemInstance, x, R: float,
                           zeta: float = math.nan) -> ResidualInstance:
    """Evaluate gradient, curvature, and shift of an instance at ``x``."""
    x = np.asarray(x, dtype=float)
    P = instance.design()
    Px = P @ x
    loss = instance.loss
    return ResidualInstance(
        x_anchor=x,
        g=loss.d1(Px),
        h=loss.d2(Px),
        z=compute_z(Px, R, loss.M),
        M=loss.M,
        R=R,
        zeta=zeta,
    )


def residual_value(inst: ResidualInstance, p_delta) -> float:
    """Residual objective ``g' v - e^{-1} sum_i h_i v_i^2`` at ``v = P delta``."""
    v = np.asarray(p_delta, dtype=float).ravel()
    if v.shape != inst.g.shape:
        raise InvalidParameter(
            f"p_delta has length {v.shape[0]}, expected {inst.g.shape[0]}"
        )
    return float(inst.g @ v - _EM1 * np.dot(inst.h, v * v))


@dataclass(frozen=True)
class RefineConfig:
    """Constants of the boosting stage.

    The inner loop uses ``tau = c_tau * m^(1/3)``, ``alpha = c_alpha *
    m^(-1/3)``, runs until ``||w||_1 > guard_factor * zeta`` or
    ``inner_log_factor * log(m) / alpha`` iterations, and returns the
    accumulated point divided by ``return_scale`` times the flow count.
    ``line_search`` adds box-feasible rescalings of each inner output to
    the outer candidate set (the canonical candidate always stays in).
    """

    c_tau: float = 1.0
    c_alpha: float = 1.0
    inner_log_factor: float = 10.0
    guard_factor: float = 10.0
    return_scale: float = 100.0
    kappa: float = 400.0
    width_cap_factor: float = 10.0
    outer_max: int = 100000
    line_search: bool = True
    line_search_points: int = 10
    feas_tol: float = 1e-8
    lower_bound: float = 0.0

    def tau(self, m: int) -> float:
        return self.c_tau * m ** (1.0 / 3.0)

    def alpha(self, m: int) -> float:
        return self.c_alpha * m ** (-1.0 / 3.0)

    def inner_cap(self, m: int) -> int:
        return max(1, math.ceil(self.inner_log_factor * math.log(max(m, 2))
                                / self.alpha(m)))

    def width_cap(self, m: int) -> int:
        tau = self.tau(m)
        return max(4, math.ceil(self.width_cap_factor * m / (tau * tau)))


@dataclass
class InnerMwuState:
    """State of one inner multiplicative-weights run."""

    y: np.ndarray
    w: np.ndarray
    t: int = 0
    flow_steps: int = 0
    width_steps: int = 0


@dataclass
class InnerResult:
    y: np.ndarray
    iterations: int
    flow_steps: int
    width_steps: int
    exit_reason: str  # "guard" | "cap"


def mwu_residual(A, P, inst: ResidualInstance,
                 config: RefineConfig | None = None) -> InnerResult:
    """Approximately solve one residual problem at level ``zeta``.

    Augments the constraints with the gradient hyperplane ``g' P delta =
    zeta / 2`` and alternates flow steps (accumulate and reweight) with
    width steps (double the weights of box-violating rows).  When the
    optimum of the residual problem lies in ``(zeta/2, zeta]``, the
    returned point ``y`` satisfies ``A y = 0``, ``||P y - z||_inf <=
    1/(2M)``, and ``res(y) >= res(opt) / 400``.

    Raises
    ------
    InfeasibleAugmented
        If the gradient hyperplane cannot be met inside the null space
        of ``A`` (the level overshoots what the anchor supports).
    OracleFailure
        If an inner weighted least-squares solve fails.
    TheoryViolation
        If width steps exceed their cap.
    """
    if config is None:
        config = RefineConfig()
    zeta = inst.zeta
    if not (zeta > 0) or not math.isfinite(zeta):
        raise InvalidParameter(f"zeta must be positive, got {zeta}")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    m, n = P.shape
    M, g, z = inst.M, inst.g, inst.z

    A_aug = np.vstack([A, (inst.g @ P)[None, :]])
    b_aug = np.concatenate([np.zeros(A.shape[0]), [0.5 * zeta]])
    probe, *_ = np.linalg.lstsq(A_aug, b_aug, rcond=None)
    gap = np.linalg.norm(A_aug @ probe - b_aug)
    if gap > config.feas_tol * (1.0 + np.linalg.norm(b_aug)):
        raise InfeasibleAugmented(
            f"gradient level {0.5 * zeta:.3g} is unreachable inside the "
            f"constraint null space (gap {gap:.3e})"
        )

    tau = config.tau(m)
    alpha = config.alpha(m)
    t_cap = config.inner_cap(m)
    width_cap = config.width_cap(m)
    guard = config.guard_factor * zeta
    state = InnerMwuState(y=np.zeros(n), w=np.full(m, zeta / m))
    exit_reason = "cap"

    while True:
        if float(np.sum(state.w)) > guard:
            exit_reason = "guard"
            break
        if state.t >= t_cap:
            exit_reason = "cap"
            break
        load = state.w + float(np.sum(state.w)) / m
        coeff = 4.0 * M * M * load
        try:
            sol = solve_wls(WlsProblem(A=A_aug, b=b_aug, P=P,
                                       q=inst.h + coeff, ell=coeff * z),
                            feas_tol=max(config.feas_tol, 1e-6))
        except RankDeficient as exc:
            raise OracleFailure(f"inner solve failed: {exc}") from exc
        dev = np.abs(P @ sol.delta - z)
        if 2.0 * M * float(dev.max()) <= tau:
            state.y += sol.delta
            state.w *= 1.0 + 0.5 * alpha * M * dev
            state.flow_steps += 1
        else:
            state.w[2.0 * M * dev >= tau] *= 2.0
            state.width_steps += 1
            if state.width_steps > width_cap:
                raise TheoryViolation(
                    f"inner width steps exceeded the cap ({state.width_steps}"
                    f" > {width_cap}); residual level zeta={zeta:.3g}"
                )
        state.t += 1

    if state.flow_steps > 0:
        y = state.y / (config.return_scale * state.flow_steps)
    else:
        y = np.zeros(n)
    return InnerResult(
        y=y,
        iterations=state.t,
        flow_steps=state.flow_steps,
        width_steps=state.width_steps,
        exit_reason=exit_reason,
    )


def binary_search_levels(f_current_gap_upper: float, M: float, R: float,
                         eps: float):
    """Yield ``(nu, zeta)`` target levels for one refinement sweep.

    ``nu`` halves from the gap upper bound down to (exclusive) ``eps``;
    for each ``nu``, ``zeta`` halves from ``e^2 nu`` down to (exclusive)
    ``nu / (8 M R)``.
    """
    if M <= 0 or R <= 0 or eps <= 0:
        raise InvalidParameter("M, R, eps must be positive")
    nu = float(f_current_gap_upper)
    floor_ratio = 1.0 / (8.0 * M * R)
    while nu > eps:
        zeta = _E * _E * nu
        while zeta > nu * floor_ratio:
            yield nu, zeta
            zeta /= 2.0
        nu /= 2.0


def _lambda_max(py, z, r_box) -> float:
    """Largest ``lam >= 0`` with ``|lam * py - z|_inf <= r_box``.

    Finite because the box contains 0 (``|z| <= r_box``), so scaling any
    direction far enough always exits it unless ``py = 0``.
    """
    hi = z + r_box
    lo = z - r_box
    with np.errstate(divide="ignore"):
        bound = np.where(py > 0, hi / np.where(py > 0, py, 1.0), np.inf)
        bound = np.where(py < 0, lo / np.where(py < 0, py, 1.0), bound)
    return float(np.min(bound)) if bound.size else np.inf


@dataclass
class QscMinResult:
    """Output of :func:`qsc_min`."""

    x: np.ndarray
    objective: float
    refine_steps: int
    stalled: bool
    converged: bool
    R_used: float
    objective_history: list = field(default_factory=list, repr=False)
    trace: list = field(default_factory=list, repr=False)
    stall_table: list = field(default_factory=list, repr=False)


def qsc_min(instance: ProblemInstance, x0, M: float, R: float, eps: float,
            config: RefineConfig | None = None) -> QscMinResult:
    """Drive the optimality gap below ``eps`` by residual refinement.

    Each outer step sweeps the ``(nu, zeta)`` levels, solves the residual
    problem once per distinct ``zeta``, picks the candidate minimizing
    ``f(x - e^{-2} y)`` among box-feasible candidates, and applies it.
    Returns when the best improvement drops below
    ``eps * e^{-2} / (4 kappa M R)``, when no candidate improves at all
    (a stall, reported with the full candidate table), or at the
    iteration cap.
    """
    if config is None:
        config = RefineConfig()
    if eps <= 0:
        raise InvalidParameter(f"eps must be positive, got {eps}")
    loss = instance.loss
    A, b = instance.A, instance.b
    P = instance.design()
    # The shift machinery needs a nonempty interior window, and the
    # radius must dominate both the iterate and the optimum.
    R_work = max(R, 0.5 / M)
    x = np.asarray(x0, dtype=float).copy()
    feas = float(np.linalg.norm(A @ x - b))
    if feas > config.feas_tol * (1.0 + np.linalg.norm(b)):
        raise InvalidParameter(
            f"x0 is not feasible (||A x0 - b|| = {feas:.3e})"
        )
    Px = P @ x
    if float(np.max(np.abs(Px))) > R_work * (1.0 + 1e-8):
        raise OutOfDomain("||P x0||_inf exceeds the working radius")

    f_cur = loss.total(Px)
    threshold = eps * _EM2 / (4.0 * config.kappa * M * R_work)
    box = 0.5 / M
    history = [f_cur]
    trace = []
    stall_table = []
    stalled = False
    converged = False
    steps = 0

    for outer in range(config.outer_max):
        Px = P @ x
        f_cur = loss.total(Px)
        gap_upper = f_cur - config.lower_bound
        if gap_upper <= eps:
            converged = True
            break
        inst_res = make_residual_instance(instance, x, R_work)
        z = inst_res.z

        # Distinct zeta levels; the inner solver does not depend on nu.
        levels: dict[float, float] = {}
        for nu, zeta in binary_search_levels(gap_upper, M, R_work, eps):
            levels.setdefault(zeta, nu)

        best = None  # (f_new, cand, zeta, nu, res, row_index)
        for zeta, nu in levels.items():
            row = TraceRow(
                iteration=len(trace), step_kind="refine",
                phi=math.nan, psi=math.nan, max_abs_PDelta=math.nan,
                objective=math.nan, refine_step=outer, nu=nu, zeta=zeta,
                res_value=math.nan, accepted=False,
            )
            trace.append(row)
            try:
                inner = mwu_residual(
                    A, P,
                    ResidualInstance(x, inst_res.g, inst_res.h, z, M,
                                     R_work, zeta),
                    config,
                )
            except (InfeasibleAugmented, OracleFailure, TheoryViolation):
                continue
            py = P @ inner.y
            dev = float(np.max(np.abs(py - z))) if py.size else 0.0
            row.max_abs_PDelta = dev
            cands = []
            if dev <= box * (1.0 + 1e-8):
                cands.append((1.0, inner.y, py))
            if config.line_search and np.any(py):
                lam_hi = _lambda_max(py, z, box)
                lam = lam_hi
                for _ in range(config.line_search_points):
                    if lam <= 0 or not math.isfinite(lam):
                        break
                    if abs(lam - 1.0) > 1e-12:
                        cands.append((lam, lam * inner.y, lam * py))
                    lam *= 0.5
            row_best = None
            for lam, cand, pcand in cands:
                f_new = loss.total(Px - _EM2 * pcand)
                if row_best is None or f_new < row_best[0]:
                    row_best = (f_new, cand, pcand)
            if row_best is None:
                continue
            f_new, cand, pcand = row_best
            res = residual_value(inst_res, pcand)
            row.res_value = res
            row.objective = f_new
            if best is None or f_new < best[0]:
                best = (f_new, cand, zeta, nu, res, len(trace) - 1)

        if best is None or best[0] >= f_cur:
            stalled = True
            stall_table = [(r.zeta, r.nu, r.res_value, r.objective)
                           for r in trace if r.refine_step == outer]
            log.warning(
                "refinement stalled at f=%.12g after %d steps; "
                "%d candidate levels, none improved",
                f_cur, steps, len(levels),
            )
            break
        f_new, cand, zeta, nu, res, row_idx = best
        trace[row_idx].accepted = True
        improvement = f_cur - f_new
        x = x - _EM2 * cand
        f_cur = f_new
        history.append(f_cur)
        steps += 1
        if improvement < threshold:
            converged = True
            break
    else:
        log.warning("refinement hit the outer iteration cap (%d)",
                    config.outer_max)

    return QscMinResult(
        x=x,
        objective=f_cur,
        refine_steps=steps,
        stalled=stalled,
        converged=converged,
        R_used=R_work,
        objective_history=history,
        trace=trace,
        stall_table=stall_table,
    )


def boost_pipeline(instance: ProblemInstance, R: float, eps: float,
                   crude_config: MwuConfig | None = None,
                   refine_config: RefineConfig | None = None) -> SolveReport:
    """Crude stage at unit accuracy, then residual refinement to ``eps``.

    The boosting radius is the larger of the input radius and the crude
    stage's certified ``||P x||_inf`` bound (so both the warm start and
    the optimum stay inside the ball the refinement works in).
    """
    if crude_config is None:
        crude_config = MwuConfig(epsilon=1.0)
    crude = qsc_mwu(instance, R, crude_config)
    M = instance.loss.M
    R_boost = max(R, crude.linf_bound)
    refine = qsc_min(instance, crude.x_tilde, M, R_boost, eps, refine_config)
    x = refine.x
    return SolveReport(
        x=x,
        objective=refine.objective,
        feasibility_residual=instance.feasibility_residual(x),
        flow_steps=crude.flow_steps,
        width_steps=crude.width_steps,
        refine_steps=refine.refine_steps,
        stalled=refine.stalled,
        R_used=refine.R_used,
        M=M,
        epsilon=eps,
        trace=list(crude.trace) + list(refine.trace),
        extra={
            "crude_objective": crude.objective,
            "crude_linf_bound": crude.linf_bound,
            "objective_history": refine.objective_history,
            "converged": refine.converged,
        },
    )
