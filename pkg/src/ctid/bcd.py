"""Block-coordinate descent over the submodels of an additive model.

Each outer iteration visits the blocks in order ``1..K``. For block ``i`` the
other submodels are subtracted from the data (residual output), SRIVC
iterations are run on the residual, and the first candidate that strictly
lowers the total cost is accepted. A block without an improving candidate
keeps its parameters, so the cost never increases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EstimationError, RepeatedPolesError, SingularMatrixError, StructureError
from .estimators import (
    SrivcConfig,
    _stabilized,
    lssvf_estimate,
    regression_workspace,
    relative_change,
    srivc_full,
    _srivc_solve,
    _theta_like,
)
from .lti import (
    AdditiveModel,
    ThetaVector,
    TransferFunction,
    is_stable,
    pack_theta,
    partial_fractions,
    simulate_zoh,
    unpack_theta,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StructureSpec:
    """Degrees ``(n_i, m_i)`` of each submodel."""

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        pairs = tuple((int(n), int(m)) for n, m in self.pairs)
        if not pairs:
            raise StructureError("empty structure")
        for n, m in pairs:
            if not n >= m >= 0 or n < 1:
                raise StructureError(f"invalid submodel degrees (n={n}, m={m}); need n >= m >= 0, n >= 1")
        if sum(1 for n, m in pairs if n == m) > 1:
            raise StructureError("at most one subsystem is biproper")
        object.__setattr__(self, "pairs", pairs)

    @property
    def K(self) -> int:
        return len(self.pairs)

    @property
    def relative_degrees(self) -> list[int]:
        return [n - m for n, m in self.pairs]

    @property
    def n_params(self) -> int:
        return sum(n + m + 1 for n, m in self.pairs)

    @property
    def unfactored_degrees(self) -> tuple[int, int]:
        """``(n, m)`` of the smallest unfactored model containing this structure."""
        n = sum(n for n, _ in self.pairs)
        return n, n - min(self.relative_degrees)


@dataclass(frozen=True)
class BcdConfig:
    epsilon: float = 1e-10
    max_outer: int = 10
    max_inner: int = 200
    srivc: SrivcConfig = field(default_factory=SrivcConfig)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("max_outer and max_inner must be >= 1")


@dataclass
class BcdResult:
    model: AdditiveModel
    x_trace: list[np.ndarray]
    cost_trace: list[float]
    accepted: list[list[bool]]
    outer_iters_used: int
    inner_iters: list[list[int]] = field(default_factory=list)
    converged: bool = False

    @property
    def cost(self) -> float:
        return self.cost_trace[-1]

    def to_dict(self) -> dict:
        from .io import model_to_dict

        return {
            "model": model_to_dict(self.model),
            "cost_trace": list(self.cost_trace),
            "outer_iters": self.outer_iters_used,
            "accepted": [list(a) for a in self.accepted],
            "x_trace": [x.tolist() for x in self.x_trace],
            "converged": self.converged,
        }


def _mean_sq(y: np.ndarray, outputs: Sequence[np.ndarray]) -> float:
    r = y.copy()
    for x in outputs:
        r -= x
    return float(np.mean(r * r))


def cost_vn(model: AdditiveModel, y, u, h: float) -> float:
    """``(1/N) sum (y - sum_i G_i u)^2``."""
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    if y.shape != u.shape or y.size < 1:
        raise StructureError("y and u must be equal-length, non-empty sequences")
    return _mean_sq(y, [simulate_zoh(g, u, h) for g in model.subs])


def residual_output(
    y, u, h: float, models_before: Sequence[TransferFunction], models_after: Sequence[TransferFunction]
) -> np.ndarray:
    """``y`` minus the simulated outputs of every other submodel."""
    r = np.array(y, dtype=float)
    for g in (*models_before, *models_after):
        r -= simulate_zoh(g, u, h)
    return r


def _stack(thetas: Sequence[ThetaVector]) -> np.ndarray:
    return np.concatenate([t.values for t in thetas])


def bcd_fit(
    y,
    u,
    h: float,
    structure: StructureSpec,
    init: AdditiveModel,
    cfg: BcdConfig | None = None,
) -> BcdResult:
    """Block-coordinate descent with SRIVC descent steps.

    Acceptance follows the first-improvement rule: candidate ``s+1`` of
    block ``i`` is taken as soon as the total cost falls strictly below its
    value at the block's starting parameters.
    """
    cfg = cfg or BcdConfig()
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    if y.shape != u.shape or y.ndim != 1:
        raise StructureError("y and u must be equal-length 1-D sequences")
    if tuple(init.structure) != structure.pairs:
        raise StructureError("initial model does not match the structure")
    if y.size <= structure.n_params:
        raise StructureError(f"N = {y.size} must exceed the {structure.n_params} parameters")

    thetas = [pack_theta(g, m) for g, (_, m) in zip(init.subs, structure.pairs)]
    outputs = [simulate_zoh(unpack_theta(t), u, h) for t in thetas]
    cost = _mean_sq(y, outputs)
    x_trace = [_stack(thetas)]
    cost_trace = [cost]
    accepted: list[list[bool]] = []
    inner_iters: list[list[int]] = []
    converged = False
    l = 0
    for l in range(1, cfg.max_outer + 1):
        acc_l, it_l, failures = [], [], []
        for i in range(structure.K):
            others = [outputs[j] for j in range(structure.K) if j != i]
            y_tilde = y.copy()
            for x in others:
                y_tilde -= x
            theta_s = thetas[i]
            took = False
            s_used = 0
            try:
                ws = regression_workspace(theta_s, y_tilde, u, h)
                for s in range(1, cfg.max_inner + 1):
                    s_used = s
                    values, _ = _srivc_solve(ws, cfg.srivc.cond_limit)
                    cand = _theta_like(values, theta_s)
                    if cfg.srivc.stabilize:
                        cand = _stabilized(cand)
                    elif not is_stable(unpack_theta(cand)):
                        break
                    cand_out = simulate_zoh(unpack_theta(cand), u, h)
                    trial = list(outputs)
                    trial[i] = cand_out
                    cand_cost = _mean_sq(y, trial)
                    if cand_cost < cost:
                        thetas[i], outputs[i], cost = cand, cand_out, cand_cost
                        cost_trace.append(cost)
                        took = True
                        break
                    if relative_change(cand.values, theta_s.values) < cfg.srivc.rel_tol:
                        # inner SRIVC has reached its fixed point: later candidates repeat it
                        break
                    theta_s = cand
                    ws = regression_workspace(theta_s, y_tilde, u, h)
            except SingularMatrixError as exc:
                log.info("block %d skipped at outer iteration %d: %s", i + 1, l, exc)
                failures.append(i + 1)
            acc_l.append(took)
            it_l.append(s_used)
        accepted.append(acc_l)
        inner_iters.append(it_l)
        if l == 1 and len(failures) == structure.K:
            raise EstimationError(
                f"every block failed in the first sweep (blocks {failures}: singular normal matrix)"
            )
        x_new = _stack(thetas)
        x_old = x_trace[-1]
        x_trace.append(x_new)
        denom = np.linalg.norm(x_old) or 1.0
        if np.linalg.norm(x_new - x_old) / denom < cfg.epsilon:
            converged = True
            break
    model = AdditiveModel(tuple(unpack_theta(t) for t in thetas), structure.pairs)
    return BcdResult(
        model=model,
        x_trace=x_trace,
        cost_trace=cost_trace,
        accepted=accepted,
        outer_iters_used=l,
        inner_iters=inner_iters,
        converged=converged,
    )


@dataclass(frozen=True)
class ParsimonyReport:
    K: int
    relative_degrees: tuple[int, ...]
    r: int
    additive_params: int
    unfactored_params: int
    excess: int

    @property
    def lacks_parsimony(self) -> bool:
        return self.excess > 0


def parsimony_excess(structure: StructureSpec) -> ParsimonyReport:
    """Extra parameters carried by the unfactored model of minimal relative degree."""
    if not isinstance(structure, StructureSpec):
        structure = StructureSpec(tuple(structure))
    rs = structure.relative_degrees
    r = min(rs)
    K = structure.K
    n_total = sum(n for n, _ in structure.pairs)
    additive = sum(n + m for n, m in structure.pairs) + K
    unfactored = 2 * n_total - r + 1
    excess = sum(rs) - r - K + 1
    assert excess == unfactored - additive
    return ParsimonyReport(K, tuple(rs), r, additive, unfactored, excess)


def initialize_from_unfactored(
    y,
    u,
    h: float,
    structure: StructureSpec,
    cfg: BcdConfig | None = None,
    lambda_svf: float | None = None,
    theta_init: ThetaVector | None = None,
) -> AdditiveModel:
    """Fit the unfactored model with SRIVC, then split it by partial fractions.

    Numerator terms above each section's ``m_i`` are dropped. If the
    unfactored estimate has repeated poles, the LSSVF estimate is expanded
    instead.
    """
    cfg = cfg or BcdConfig()
    n, m = structure.unfactored_degrees
    trace = srivc_full(y, u, h, n, m, cfg.srivc, theta_init=theta_init, lambda_svf=lambda_svf)
    try:
        return partial_fractions(trace.model, structure.pairs)
    except RepeatedPolesError as exc:
        log.warning("unfactored SRIVC estimate has repeated poles (%s); using LSSVF", exc)
        lam = lambda_svf if lambda_svf is not None else np.pi / (10 * h)
        theta = _stabilized(lssvf_estimate(y, u, h, n, m, lam))
        return partial_fractions(unpack_theta(theta), structure.pairs)
