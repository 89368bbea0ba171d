"""Catalog of quasi-self-concordant univariate losses.

Each loss bundles the function, its first three derivatives, the
self-concordance constant ``M`` bounding ``|f'''| <= M f''``, the
monotonicity direction of ``f''`` on ``[w0, inf)``, and the weight update
that realizes a ``(1 + eps)`` resistance rescaling during a width
reduction step.  Losses act coordinate-wise on vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy.special import expit, logsumexp

from .errors import (
    EmptyVector,
    InvalidParameter,
    MissingConstant,
    UnsupportedOrder,
)

NON_DECREASING = "non-decreasing"
NON_INCREASING = "non-increasing"

# IEEE-754 double overflows past exp(709.78); clamping the exponent keeps
# extreme arguments finite instead of propagating inf through the solvers.
_EXP_CLAMP = 700.0


def _exp_clipped(u):
    return np.exp(np.clip(u, -_EXP_CLAMP, _EXP_CLAMP))


@dataclass(frozen=True)
class QscLoss:
    """A univariate convex loss with certified self-concordance data.

    Attributes
    ----------
    eval, d1, d2, d3 : callable
        The loss and its first three derivatives, vectorized.
    M : float
        Constant with ``|d3(x)| <= M * d2(x)`` for all ``x``.
    d2_monotone : {"non-decreasing", "non-increasing"}
        Direction of ``d2`` on ``[w0, inf)``.
    w0 : float
        Initial weight; ``sum_i d2(w0)`` must be strictly positive.
    width_update : callable (w, eps) -> w'
        Weight move realizing the ``(1 + eps)`` resistance rescaling of a
        width reduction step, in the declared monotone direction.
    """

    name: str
    eval: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    d3: Callable[[np.ndarray], np.ndarray]
    M: float
    d2_monotone: Literal["non-decreasing", "non-increasing"]
    w0: float
    width_update: Callable[[np.ndarray, float], np.ndarray]
    params: dict = field(default_factory=dict)

    def total(self, v) -> float:
        """Sum of the loss over a vector of arguments."""
        return float(np.sum(self.eval(np.asarray(v, dtype=float))))


@dataclass(frozen=True)
class SymmetricExpLoss:
    """Exponential loss plus a directive to mirror the design rows.

    Solvers seeing ``stack_rows=True`` run on ``[P; -P]``, doubling the
    row count; the summed loss then upper-bounds the even part
    ``exp(u/nu) + exp(-u/nu)`` row by row.
    """

    loss: QscLoss
    stack_rows: bool = True


def make_exp_loss(nu: float) -> QscLoss:
    """Exponential loss ``f(x) = exp(x / nu)``; ``M = 1/nu``."""
    if nu <= 0:
        raise InvalidParameter(f"nu must be positive, got {nu}")
    nu = float(nu)

    def f(x):
        return _exp_clipped(np.asarray(x, dtype=float) / nu)

    return QscLoss(
        name="exp",
        eval=f,
        d1=lambda x: f(x) / nu,
        d2=lambda x: f(x) / nu**2,
        d3=lambda x: f(x) / nu**3,
        M=1.0 / nu,
        d2_monotone=NON_DECREASING,
        w0=0.0,
        width_update=lambda w, eps: np.asarray(w, dtype=float)
        + nu * np.log1p(eps),
        params={"nu": nu},
    )


def make_symmetric_exp_loss(nu: float) -> SymmetricExpLoss:
    """Two-sided exponential loss, realized by stacking ``[P; -P]``."""
    return SymmetricExpLoss(loss=make_exp_loss(nu), stack_rows=True)


def make_lp_loss(p: float, mu: float) -> QscLoss:
    """Regularized power loss ``f(x) = |x|^p + mu x^2`` for ``p >= 3``.

    ``M = p * mu^(-1/(p-2))``; ``d2`` is non-decreasing in ``|x|`` and the
    initial weight is 1.
    """
    if p < 3:
        raise InvalidParameter(f"p must be >= 3, got {p}")
    if mu <= 0:
        raise InvalidParameter(f"mu must be positive, got {mu}")
    p = float(p)
    mu = float(mu)

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.abs(x) ** p + mu * x * x

    def f1(x):
        x = np.asarray(x, dtype=float)
        return p * np.sign(x) * np.abs(x) ** (p - 1) + 2.0 * mu * x

    def f2(x):
        x = np.asarray(x, dtype=float)
        return p * (p - 1) * np.abs(x) ** (p - 2) + 2.0 * mu

    def f3(x):
        x = np.asarray(x, dtype=float)
        return p * (p - 1) * (p - 2) * np.sign(x) * np.abs(x) ** (p - 3)

    return QscLoss(
        name="lp",
        eval=f,
        d1=f1,
        d2=f2,
        d3=f3,
        M=p * mu ** (-1.0 / (p - 2.0)),
        d2_monotone=NON_DECREASING,
        w0=1.0,
        width_update=lambda w, eps: (1.0 + eps) ** (1.0 / (p - 2.0))
        * np.asarray(w, dtype=float),
        params={"p": p, "mu": mu},
    )


def make_logistic_loss() -> QscLoss:
    """Logistic loss ``f(x) = log(1 + exp(x))``; ``M = 1``.

    ``d2 = sigma(x) sigma(-x)`` is non-increasing for ``x >= 0``; the
    width update ``w + 0.9 eps`` shrinks the resistance by roughly a
    ``(1 + eps)`` factor in that range.
    """

    def f2(x):
        x = np.asarray(x, dtype=float)
        return expit(x) * expit(-x)

    return QscLoss(
        name="logistic",
        eval=lambda x: np.logaddexp(0.0, np.asarray(x, dtype=float)),
        d1=lambda x: expit(np.asarray(x, dtype=float)),
        d2=f2,
        d3=lambda x: f2(x) * (expit(-np.asarray(x, dtype=float))
                              - expit(np.asarray(x, dtype=float))),
        M=1.0,
        d2_monotone=NON_INCREASING,
        w0=0.0,
        width_update=lambda w, eps: np.asarray(w, dtype=float) + 0.9 * eps,
        params={},
    )


def smax(v, nu: float) -> float:
    """Smoothed maximum ``nu * log(sum_i exp(v_i / nu))``.

    Satisfies ``max(v) <= smax(v, nu) <= max(v) + nu * log(len(v))``.
    """
    if nu <= 0:
        raise InvalidParameter(f"nu must be positive, got {nu}")
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0:
        raise EmptyVector("smax of an empty vector")
    return float(nu * logsumexp(v / nu))


@dataclass(frozen=True)
class GscParams:
    """General-self-concordance data ``|f'''| <= N (f'')^(nu/2)``.

    ``L`` (gradient Lipschitz constant) and ``mu`` (strong convexity) are
    optional and only needed by the order reductions that use them.
    """

    N: float
    nu: float
    L: float | None = None
    mu: float | None = None

    def __post_init__(self):
        if self.N <= 0:
            raise InvalidParameter(f"N must be positive, got {self.N}")
        if self.nu < 0:
            raise InvalidParameter(f"nu must be nonnegative, got {self.nu}")
        if self.L is not None and self.L <= 0:
            raise InvalidParameter(f"L must be positive, got {self.L}")
        if self.mu is not None and self.mu <= 0:
            raise InvalidParameter(f"mu must be positive, got {self.mu}")


def gsc_to_qsc(params: GscParams) -> float:
    """Effective order-2 self-concordance constant for a g.s.c. function.

    * ``nu == 2``: returns ``N`` unchanged.
    * ``2 < nu < 6`` with ``L``: returns ``N * L^((nu-2)/2)``.
    * ``nu < 2`` with ``mu`` and ``L``: lifts to order 3 via strong
      convexity, then smooths down: ``N * mu^(-(3-nu)/2) * L^(1/2)``.
    """
    N, nu, L, mu = params.N, params.nu, params.L, params.mu
    if nu >= 6:
        raise UnsupportedOrder(f"order nu={nu} is not reducible (needs nu < 6)")
    if nu == 2:
        return N
    if nu > 2:
        if L is None:
            raise MissingConstant(f"reduction from nu={nu} needs smoothness L")
        return N * L ** ((nu - 2.0) / 2.0)
    if mu is None:
        raise MissingConstant(f"reduction from nu={nu} needs strong convexity mu")
    if L is None:
        raise MissingConstant(f"reduction from nu={nu} needs smoothness L")
    return N * mu ** (-(3.0 - nu) / 2.0) * L**0.5


@dataclass(frozen=True)
class QscCertificate:
    """Report of :func:`check_qsc` on a sample grid."""

    loss_name: str
    M: float
    max_third_ratio: float
    ratio_ok: bool
    max_stability_excess: float
    stability_ok: bool

    @property
    def passed(self) -> bool:
        return self.ratio_ok and self.stability_ok

    def rows(self):
        return [
            ("max |f'''|/f''", self.max_third_ratio,
             f"<= {self.M:.6g}", self.ratio_ok),
            ("hessian stability excess", self.max_stability_excess,
             "<= 1", self.stability_ok),
        ]


_RATIO_SLACK = 1.0 + 1e-8
_D2_FLOOR = 1e-300


def check_qsc(loss: QscLoss, grid) -> QscCertificate:
    """Certify the declared ``M`` of a loss on a sample grid.

    Checks ``|f'''(x)| <= M f''(x)`` pointwise and the implied stability
    ``f''(y) <= exp(M |x - y|) f''(x)`` over all grid pairs, both with a
    1e-8 relative slack.  Report-only: nothing is raised on failure.
    """
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise EmptyVector("check_qsc needs a nonempty grid")
    d2 = loss.d2(grid)
    d3 = loss.d3(grid)
    mask = d2 > _D2_FLOOR
    ratios = np.abs(d3[mask]) / d2[mask]
    max_ratio = float(ratios.max()) if ratios.size else 0.0
    ratio_ok = max_ratio <= loss.M * _RATIO_SLACK

    # Stability over all pairs: f''(y) / (f''(x) e^{M |x-y|}) <= 1.
    x = grid[mask]
    d2m = d2[mask]
    if x.size:
        dist = np.abs(x[None, :] - x[:, None])
        growth = d2m[None, :] / (d2m[:, None] * np.exp(loss.M * dist))
        max_excess = float(growth.max())
    else:
        max_excess = 0.0
    stability_ok = max_excess <= _RATIO_SLACK

    return QscCertificate(
        loss_name=loss.name,
        M=loss.M,
        max_third_ratio=max_ratio,
        ratio_ok=ratio_ok,
        max_stability_excess=max_excess,
        stability_ok=stability_ok,
    )


LOSS_KEYS = ("exp", "sym-exp", "lp", "logistic")


def make_loss(key: str, **params):
    """Construct a catalog loss from its string key.

    Keys: ``"exp"`` (needs ``nu``), ``"sym-exp"`` (needs ``nu``; returns a
    :class:`SymmetricExpLoss`), ``"lp"`` (needs ``p``, ``mu``),
    ``"logistic"`` (no parameters).
    """
    try:
        if key == "exp":
            return make_exp_loss(params["nu"])
        if key == "sym-exp":
            return make_symmetric_exp_loss(params["nu"])
        if key == "lp":
            return make_lp_loss(params["p"], params["mu"])
    except KeyError as exc:
        raise InvalidParameter(f"loss {key!r} needs parameter {exc}") from exc
    if key == "logistic":
        if params:
            raise InvalidParameter("logistic loss takes no parameters")
        return make_logistic_loss()
    raise InvalidParameter(f"unknown loss key {key!r}; known: {LOSS_KEYS}")
