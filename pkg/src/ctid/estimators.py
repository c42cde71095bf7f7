"""Refined instrumental-variable estimators for continuous-time transfer functions.

The same machinery serves two uses:

* standard SRIVC on a single unfactored ``B/A`` model (``srivc_full``), and
* the per-block refinement inside block-coordinate descent, where the
  "output" is the residual left after subtracting the other submodels
  (``srivc_refine`` on ``y_tilde``).

Every continuous filter is applied through :func:`ctid.lti.filter_bank`, so
all regressor columns built from one signal share a single state trajectory
with zero initial state. Because of that sharing, ``y_f - phi_f @ theta``
equals the output error ``y_tilde - (B/A) u`` to rounding, whatever hold is
used for the output signal.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import SingularMatrixError, StructureError
from .lti import (
    Polynomial,
    ThetaVector,
    TransferFunction,
    filter_bank,
    is_stable,
    pack_theta,
    reflect_unstable,
    unpack_theta,
)

log = logging.getLogger(__name__)

OUTPUT_HOLD = "foh"


@dataclass(frozen=True)
class SrivcConfig:
    max_iters: int = 100
    rel_tol: float = 1e-9
    cond_limit: float = 1e12
    stabilize: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if not self.cond_limit > 1:
            raise ValueError("cond_limit must be > 1")


class SrivcStatus(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"
    SINGULAR = "SingularMatrix"
    UNSTABLE = "Unstable"


@dataclass
class SrivcTrace:
    """Per-iteration record of an SRIVC run.

    ``thetas[s]`` is the estimate after iteration ``s``; ``costs`` and
    ``optimality_norms`` are evaluated at that estimate.
    """

    theta_init: ThetaVector
    thetas: list[ThetaVector] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)
    optimality_norms: list[float] = field(default_factory=list)
    conditions: list[float] = field(default_factory=list)
    status: SrivcStatus | None = None

    @property
    def theta(self) -> ThetaVector:
        return self.thetas[-1] if self.thetas else self.theta_init

    @property
    def model(self) -> TransferFunction:
        return unpack_theta(self.theta)

    def to_dict(self) -> dict:
        return {
            "status": self.status.value if self.status else None,
            "n": self.theta.n,
            "m": self.theta.m,
            "thetas": [t.values.tolist() for t in self.thetas],
            "costs": list(self.costs),
            "optimality_norms": list(self.optimality_norms),
            "conditions": list(self.conditions),
        }


@dataclass
class RegressionWorkspace:
    """Filtered regressor, instrument, filtered output and residual at one theta.

    Column order follows the theta ordering ``[a_1..a_n, b_0..b_m]``.
    """

    phi_f: np.ndarray
    phi_hat_f: np.ndarray
    y_f: np.ndarray
    residual_e: np.ndarray

    @property
    def N(self) -> int:
        return self.y_f.size

    def optimality(self) -> np.ndarray:
        return self.phi_hat_f.T @ self.residual_e / self.N

    def cost(self) -> float:
        return float(np.mean(self.residual_e**2))


def _monomials(k0: int, k1: int) -> list[Polynomial]:
    return [Polynomial.monomial(k) for k in range(k0, k1 + 1)]


def _check_signals(y_tilde, u):
    y_tilde = np.asarray(y_tilde, dtype=float)
    u = np.asarray(u, dtype=float)
    if y_tilde.shape != u.shape or y_tilde.ndim != 1:
        raise StructureError("output and input must be 1-D sequences of equal length")
    return y_tilde, u


def _output_columns(den: Polynomial, n: int, y_tilde, h):
    """``(1/A) y`` and ``-(p^j/A) y`` for ``j = 1..n``.

    Sampled outputs are not piecewise constant, so they are filtered with a
    first-order hold; inputs keep the ZOH convention.
    """
    cols = filter_bank(_monomials(0, n), den, y_tilde, h, hold=OUTPUT_HOLD)
    return cols[:, 0], -cols[:, 1:]


def _input_columns(den: Polynomial, m: int, u, h):
    return filter_bank(_monomials(0, m), den, u, h)


def build_regressor(theta: ThetaVector, y_tilde, u, h: float):
    """Filtered regressor ``phi_f`` (N x (n+m+1)) and filtered output ``y_f``."""
    y_tilde, u = _check_signals(y_tilde, u)
    den = unpack_theta(theta).den
    y_f, out_cols = _output_columns(den, theta.n, y_tilde, h)
    in_cols = _input_columns(den, theta.m, u, h)
    return np.hstack([out_cols, in_cols]), y_f


def build_instrument(theta: ThetaVector, u, h: float) -> np.ndarray:
    """Noise-free instrument: ``-p^j B/A^2 u`` then ``p^j/A u``."""
    u = np.asarray(u, dtype=float)
    tf = unpack_theta(theta)
    den2 = tf.den * tf.den
    nums = [Polynomial.monomial(j) * tf.num for j in range(1, theta.n + 1)]
    grad_cols = -filter_bank(nums, den2, u, h)
    in_cols = _input_columns(tf.den, theta.m, u, h)
    return np.hstack([grad_cols, in_cols])


def regression_workspace(theta: ThetaVector, y_tilde, u, h: float) -> RegressionWorkspace:
    y_tilde, u = _check_signals(y_tilde, u)
    phi_f, y_f = build_regressor(theta, y_tilde, u, h)
    phi_hat_f = build_instrument(theta, u, h)
    # (B/A) u is a combination of the input columns: same state trajectory
    e = y_tilde - phi_f[:, theta.n :] @ theta.b
    return RegressionWorkspace(phi_f=phi_f, phi_hat_f=phi_hat_f, y_f=y_f, residual_e=e)


def _solve_equilibrated(M: np.ndarray, v: np.ndarray, cond_limit: float):
    """Solve ``M x = v`` by LU after row/column scaling; returns ``(x, cond)``.

    The condition number is measured on the equilibrated matrix so that
    parameters of very different magnitudes (high-order coefficients) do
    not register as singularity.
    """
    if not np.all(np.isfinite(M)) or not np.all(np.isfinite(v)):
        raise SingularMatrixError(np.inf, cond_limit)
    r = np.sqrt(np.abs(M).max(axis=1))
    c = np.sqrt(np.abs(M).max(axis=0))
    if np.any(r == 0) or np.any(c == 0):
        raise SingularMatrixError(np.inf, cond_limit)
    Ms = M / r[:, None] / c[None, :]
    cond = float(np.linalg.cond(Ms))
    if not cond < cond_limit:
        raise SingularMatrixError(cond, cond_limit)
    try:
        with warnings.catch_warnings():
            # conditioning is reported through ``cond``
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            x = sla.solve(Ms, v / r) / c
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(np.inf, cond_limit) from exc
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError(cond, cond_limit)
    return x, cond


def _srivc_solve(ws: RegressionWorkspace, cond_limit: float):
    N = ws.N
    M = ws.phi_hat_f.T @ ws.phi_f / N
    v = ws.phi_hat_f.T @ ws.y_f / N
    return _solve_equilibrated(M, v, cond_limit)


def _theta_like(values, theta: ThetaVector) -> ThetaVector:
    try:
        return ThetaVector(values, theta.n, theta.m)
    except StructureError as exc:
        # a_n == 0 exactly: treat as a degenerate (singular) update
        raise SingularMatrixError(np.inf, np.inf) from exc


def srivc_step(theta_s: ThetaVector, y_tilde, u, h: float, cond_limit: float = 1e12) -> ThetaVector:
    """One refined-IV update ``theta_{s+1} = M^-1 v`` at ``theta_s``."""
    ws = regression_workspace(theta_s, y_tilde, u, h)
    values, _ = _srivc_solve(ws, cond_limit)
    return _theta_like(values, theta_s)


def _stabilized(theta: ThetaVector) -> ThetaVector:
    tf = unpack_theta(theta)
    if is_stable(tf):
        return theta
    return pack_theta(reflect_unstable(tf), theta.m)


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    """Largest elementwise relative change.

    Elementwise, so that tiny high-order coefficients are not swamped by
    large ones in a vector norm.
    """
    floor = 1e-12 * max(float(np.abs(old).max()), 1e-300)
    return float(np.max(np.abs(new - old) / (np.abs(old) + floor)))


def srivc_refine(
    theta_init: ThetaVector, y_tilde, u, h: float, cfg: SrivcConfig | None = None
) -> SrivcTrace:
    """Iterate SRIVC steps from ``theta_init`` until the relative change is small."""
    cfg = cfg or SrivcConfig()
    y_tilde, u = _check_signals(y_tilde, u)
    if y_tilde.size < len(theta_init):
        raise StructureError(
            f"N = {y_tilde.size} samples is fewer than {len(theta_init)} parameters"
        )
    trace = SrivcTrace(theta_init=theta_init)
    theta = theta_init
    ws = regression_workspace(theta, y_tilde, u, h)
    for _ in range(cfg.max_iters):
        try:
            values, cond = _srivc_solve(ws, cfg.cond_limit)
            new = _theta_like(values, theta)
        except SingularMatrixError as exc:
            log.debug("SRIVC stopped: %s", exc)
            trace.status = SrivcStatus.SINGULAR
            break
        reflected = False
        if not is_stable(unpack_theta(new)):
            if not cfg.stabilize:
                trace.status = SrivcStatus.UNSTABLE
                break
            new = _stabilized(new)
            reflected = True
        ws = regression_workspace(new, y_tilde, u, h)
        trace.thetas.append(new)
        trace.costs.append(ws.cost())
        trace.optimality_norms.append(float(np.abs(ws.optimality()).max()))
        trace.conditions.append(cond)
        rel = relative_change(new.values, theta.values)
        theta = new
        # a point held in place only by reflection is not a fixed point of the step
        if rel < cfg.rel_tol and not reflected:
            trace.status = SrivcStatus.CONVERGED
            break
    else:
        trace.status = SrivcStatus.MAX_ITERS
    return trace


def first_order_optimality(theta: ThetaVector, y_tilde, u, h: float) -> np.ndarray:
    """``(1/N) sum phi_hat_f(kh) e(kh)`` with ``e = y_tilde - (B/A) u``."""
    return regression_workspace(theta, y_tilde, u, h).optimality()


def svf_denominator(n: int, lambda_svf: float) -> Polynomial:
    """``E(p) = (p/lambda + 1)^n``."""
    if not lambda_svf > 0:
        raise ValueError("lambda_svf must be > 0")
    den = Polynomial([1.0])
    for _ in range(n):
        den = den * Polynomial([1.0, 1.0 / lambda_svf])
    return den


def lssvf_estimate(y, u, h: float, n: int, m: int, lambda_svf: float) -> ThetaVector:
    """Least-squares state-variable-filter estimate of ``[a_1..a_n, b_0..b_m]``.

    The differential equation ``A(p) y = B(p) u`` is filtered by ``1/E(p)``
    so that every derivative ``p^j/E`` is realizable, then solved by OLS.
    """
    y, u = _check_signals(y, u)
    if y.size <= n + m + 1:
        raise StructureError(f"N = {y.size} too small for {n + m + 1} parameters")
    den = svf_denominator(n, lambda_svf)
    y_f, out_cols = _output_columns(den, n, y, h)
    in_cols = _input_columns(den, m, u, h)
    Phi = np.hstack([out_cols, in_cols])
    scale = np.linalg.norm(Phi, axis=0)
    if np.any(scale == 0):
        raise SingularMatrixError(np.inf, np.inf)
    sol, _, rank, sv = np.linalg.lstsq(Phi / scale, y_f, rcond=None)
    if rank < Phi.shape[1]:
        raise SingularMatrixError(float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf, np.inf)
    theta = sol / scale
    if theta[n - 1] == 0.0:
        raise SingularMatrixError(np.inf, np.inf)
    return ThetaVector(theta, n, m)


def srivc_full(
    y,
    u,
    h: float,
    n: int,
    m: int,
    cfg: SrivcConfig | None = None,
    theta_init: ThetaVector | None = None,
    lambda_svf: float | None = None,
) -> SrivcTrace:
    """Standard SRIVC on the unfactored model ``B/A`` of degrees ``(n, m)``.

    Without ``theta_init`` the iteration starts from an LSSVF estimate with
    filter bandwidth ``lambda_svf`` (default ``pi / (10 h)``).
    """
    y, u = _check_signals(y, u)
    if y.size < n + m + 1:
        raise StructureError(f"N = {y.size} is fewer than {n + m + 1} parameters")
    if theta_init is None:
        lam = lambda_svf if lambda_svf is not None else np.pi / (10 * h)
        theta_init = _stabilized(lssvf_estimate(y, u, h, n, m, lam))
    elif (theta_init.n, theta_init.m) != (n, m):
        raise StructureError("theta_init does not match (n, m)")
    return srivc_refine(theta_init, y, u, h, cfg)
