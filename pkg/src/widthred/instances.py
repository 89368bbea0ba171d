"""Problem instances: container, JSON file format, synthetic generator.

An instance is ``min_{A x = b} sum_i f((P x)_i)`` with a catalog loss
``f``.  Files are JSON with base64-encoded little-endian float64 payloads
(bit-exact round trips) plus an inline row form for small matrices.
Constraint matrices are reduced to full row rank at load time; dependent
rows are dropped with a :class:`RankWarning`.
"""

from __future__ import annotations

import base64
import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import (
    DimensionError,
    Infeasible,
    InvalidParameter,
    ParseError,
    RankWarning,
)
from .losses import QscLoss, SymmetricExpLoss, make_loss

SCHEMA_VERSION = 1
_INLINE_LIMIT = 64  # matrices up to this many entries also get a row form


@dataclass(frozen=True)
class ProblemInstance:
    """A validated problem ``min_{A x = b} sum_i f((P x)_i)``.

    ``A`` has full row rank (guaranteed by :func:`load_instance` /
    :func:`generate`).  ``loss_key``/``loss_params`` identify the loss for
    serialization; ``loss`` is the constructed object and ``stack_rows``
    records whether solvers should run on the mirrored design ``[P; -P]``.
    """

    A: np.ndarray
    b: np.ndarray
    P: np.ndarray
    loss_key: str
    loss_params: dict
    loss: QscLoss = field(repr=False)
    stack_rows: bool = False
    R_hint: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.P.shape[0]

    def design(self) -> np.ndarray:
        """Design matrix the solvers actually run on (mirrored if needed)."""
        if self.stack_rows:
            return np.vstack([self.P, -self.P])
        return self.P

    def objective(self, x) -> float:
        """Loss value ``sum_i f((P_eff x)_i)`` at a point."""
        return self.loss.total(self.design() @ np.asarray(x, dtype=float))

    def feasibility_residual(self, x) -> float:
        return float(np.linalg.norm(self.A @ np.asarray(x, dtype=float) - self.b))

    def with_data(self, **changes) -> "ProblemInstance":
        return replace(self, **changes)


def _build(A, b, P, loss_key, loss_params, R_hint=None, meta=None,
           preprocess=True) -> ProblemInstance:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    P = np.atleast_2d(np.asarray(P, dtype=float))
    d, n = A.shape
    m = P.shape[0]
    if P.shape[1] != n:
        raise DimensionError(f"cols(A)={n} does not match cols(P)={P.shape[1]}")
    if b.shape[0] != d:
        raise DimensionError(f"len(b)={b.shape[0]} does not match rows(A)={d}")
    if not (d <= n <= m):
        raise DimensionError(f"need d <= n <= m, got d={d}, n={n}, m={m}")
    for name, arr in (("A", A), ("b", b), ("P", P)):
        if not np.all(np.isfinite(arr)):
            raise DimensionError(f"{name} contains non-finite entries")
    if preprocess:
        A, b = _full_row_rank(A, b)
    made = make_loss(loss_key, **loss_params)
    if isinstance(made, SymmetricExpLoss):
        loss, stack = made.loss, made.stack_rows
    else:
        loss, stack = made, False
    return ProblemInstance(
        A=A, b=b, P=P,
        loss_key=loss_key, loss_params=dict(loss_params),
        loss=loss, stack_rows=stack,
        R_hint=R_hint, meta=dict(meta or {}),
    )


def _full_row_rank(A, b):
    """Drop dependent rows of ``A`` (with their ``b`` entries).

    Uses a pivoted QR of ``A'`` for rank detection.  Dropped rows must be
    consistent with the kept ones, otherwise the constraint system has no
    solution at all and :class:`Infeasible` is raised.
    """
    d = A.shape[0]
    if d == 0:
        return A, b
    _, Rfac, piv = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(Rfac))
    tol = max(A.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol)) if diag.size else 0
    if rank == d:
        return A, b
    keep = np.sort(piv[:rank])
    dropped = np.sort(piv[rank:])
    x_part, *_ = np.linalg.lstsq(A[keep], b[keep], rcond=None)
    mismatch = np.abs(A[dropped] @ x_part - b[dropped])
    if np.any(mismatch > 1e-8 * (1.0 + np.abs(b[dropped]))):
        raise Infeasible(
            f"constraint rows {dropped.tolist()} are linearly dependent but "
            "inconsistent with the independent rows"
        )
    warnings.warn(
        f"dropped {d - rank} dependent constraint row(s): {dropped.tolist()}",
        RankWarning,
        stacklevel=3,
    )
    return A[keep], b[keep]


def _encode_array(arr) -> dict:
    arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
    out = {
        "shape": list(arr.shape),
        "dtype": "<f8",
        "b64": base64.b64encode(arr.tobytes()).decode("ascii"),
    }
    if arr.size <= _INLINE_LIMIT:
        out["rows"] = arr.tolist()
    return out


def _decode_array(obj, name):
    if not isinstance(obj, dict) or "shape" not in obj:
        raise ParseError(f"field {name!r} is not an encoded array")
    shape = tuple(int(s) for s in obj["shape"])
    if "b64" in obj:
        try:
            raw = base64.b64decode(obj["b64"], validate=True)
        except Exception as exc:
            raise ParseError(f"field {name!r} has invalid base64 payload") from exc
        arr = np.frombuffer(raw, dtype="<f8")
        if arr.size != int(np.prod(shape)):
            raise ParseError(f"field {name!r}: payload size mismatch")
        return arr.reshape(shape).astype(float)
    if "rows" in obj:
        return np.asarray(obj["rows"], dtype=float).reshape(shape)
    raise ParseError(f"field {name!r} has neither 'b64' nor 'rows'")


def save_instance(instance: ProblemInstance, path) -> None:
    """Write an instance file (schema version 1)."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "A": _encode_array(instance.A),
        "b": _encode_array(instance.b),
        "P": _encode_array(instance.P),
        "loss": {"key": instance.loss_key, "params": instance.loss_params},
        "R": instance.R_hint,
        "meta": instance.meta,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_instance(path) -> ProblemInstance:
    """Load and validate an instance file.

    Raises :class:`ParseError` for undecodable files,
    :class:`DimensionError` for inconsistent shapes, and emits
    :class:`RankWarning` when dependent constraint rows are dropped.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ParseError(
            f"{path}: unsupported schema_version {version!r} "
            f"(supported: {SCHEMA_VERSION})"
        )
    try:
        loss_doc = doc["loss"]
        A = _decode_array(doc["A"], "A")
        b = _decode_array(doc["b"], "b")
        P = _decode_array(doc["P"], "P")
    except KeyError as exc:
        raise ParseError(f"{path}: missing field {exc}") from exc
    if not isinstance(loss_doc, dict) or "key" not in loss_doc:
        raise ParseError(f"{path}: 'loss' must be an object with a 'key'")
    return _build(
        A, b, P,
        loss_key=loss_doc["key"],
        loss_params=loss_doc.get("params") or {},
        R_hint=doc.get("R"),
        meta=doc.get("meta") or {},
    )


def from_arrays(A, b, P, loss_key, loss_params=None, R_hint=None,
                meta=None) -> ProblemInstance:
    """Build a validated instance from in-memory arrays."""
    return _build(A, b, P, loss_key, loss_params or {}, R_hint=R_hint,
                  meta=meta)


GENERATOR_KINDS = ("gaussian",)


def generate(kind: str, seed: int, d: int, n: int, m: int,
             params: dict | None = None) -> ProblemInstance:
    """Deterministic synthetic instance with a planted feasible point.

    ``kind="gaussian"`` draws ``A`` and ``P`` with i.i.d. standard normal
    entries (PCG64 stream seeded by ``seed``), plants ``x`` with
    ``||P x||_inf`` equal to ``params["planted_radius"]`` (default 1.0),
    and sets ``b = A x`` so feasibility and the radius hint are known.

    ``params`` additionally carries ``loss`` (key, default "logistic") and
    the loss parameters ``nu`` / ``p`` / ``mu`` as applicable.
    """
    if kind not in GENERATOR_KINDS:
        raise InvalidParameter(f"unknown generator kind {kind!r}")
    if not (1 <= d <= n <= m):
        raise InvalidParameter(f"need 1 <= d <= n <= m, got d={d}, n={n}, m={m}")
    params = dict(params or {})
    loss_key = params.pop("loss", "logistic")
    radius = float(params.pop("planted_radius", 1.0))
    if radius <= 0:
        raise InvalidParameter("planted_radius must be positive")
    loss_params = {k: v for k, v in params.items() if k in ("nu", "p", "mu")}

    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, n))
    P = rng.standard_normal((m, n))
    x_planted = rng.standard_normal(n)
    scale = np.max(np.abs(P @ x_planted))
    if scale == 0.0:
        x_planted = np.ones(n)
        scale = np.max(np.abs(P @ x_planted))
    x_planted *= radius / scale
    b = A @ x_planted
    return _build(
        A, b, P,
        loss_key=loss_key,
        loss_params=loss_params,
        R_hint=radius,
        meta={"generator": kind, "seed": int(seed),
              "planted_radius": radius},
    )
