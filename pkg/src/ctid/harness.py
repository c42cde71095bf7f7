"""Monte Carlo experiments comparing block-coordinate descent with SRIVC.

Two reference setups are provided:

* Case 1: the fourth-order sum of two resonant modes, white ZOH input,
  estimators started within 10% of the truth.
* Case 2: eight lightly damped second-order modes excited by a multisine,
  both estimators started from an LSSVF estimate.

Runs are independent and seeded by ``seed + run_index`` so results do not
depend on execution order or parallelism.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from .bcd import BcdConfig, StructureSpec, bcd_fit, initialize_from_unfactored
from .errors import CtidError, StructureError
from .estimators import SrivcConfig, _stabilized, lssvf_estimate, srivc_full
from .io import model_to_dict, write_csv
from .lti import (
    AdditiveModel,
    ThetaVector,
    TransferFunction,
    additive_to_unfactored,
    impulse_response_zoh,
    is_stable,
    pack_theta,
    partial_fractions,
    simulate_model,
    simulate_zoh,
    unpack_theta,
)

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianWhiteZOH:
    variance: float = 1.0


@dataclass(frozen=True)
class Multisine:
    freqs: tuple[float, ...]  # rad/s
    amplitude: float = 1.0


@dataclass(frozen=True)
class PerturbTruth:
    fraction: float = 0.10

    def __post_init__(self):
        if not 0 <= self.fraction < 1:
            raise ValueError("perturbation fraction must lie in [0, 1)")


@dataclass(frozen=True)
class Lssvf:
    lambda_svf: float


@dataclass(frozen=True)
class FromUnfactored:
    lambda_svf: float


InputSpec = Union[GaussianWhiteZOH, Multisine]
InitSpec = Union[PerturbTruth, Lssvf, FromUnfactored]

METHODS = ("SRIVC", "BCD")


@dataclass(frozen=True)
class ExperimentConfig:
    true_model: AdditiveModel
    N: int
    h: float
    input: InputSpec
    noise_variance: float
    runs: int
    seed: int = 0
    init: InitSpec = PerturbTruth(0.10)
    methods: tuple[str, ...] = METHODS
    bcd: BcdConfig = field(default_factory=BcdConfig)
    srivc: SrivcConfig = field(default_factory=SrivcConfig)
    report: str = "unfactored"  # or "modal"

    def __post_init__(self):
        if self.N <= 0 or not self.h > 0 or self.runs < 1 or self.noise_variance < 0:
            raise ValueError("need N > 0, h > 0, runs >= 1, noise_variance >= 0")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        if self.report not in ("unfactored", "modal"):
            raise ValueError("report must be 'unfactored' or 'modal'")

    @property
    def structure(self) -> StructureSpec:
        return StructureSpec(self.true_model.structure)

    def to_dict(self) -> dict:
        d = {
            "true_model": model_to_dict(self.true_model),
            "N": self.N,
            "h": self.h,
            "input": {"type": type(self.input).__name__, **asdict(self.input)},
            "noise_variance": self.noise_variance,
            "runs": self.runs,
            "seed": self.seed,
            "init": {"type": type(self.init).__name__, **asdict(self.init)},
            "methods": list(self.methods),
            "bcd": asdict(self.bcd),
            "srivc": asdict(self.srivc),
            "report": self.report,
        }
        return d


def config_from_dict(d: dict) -> ExperimentConfig:
    """Inverse of :meth:`ExperimentConfig.to_dict`."""
    from .io import model_from_dict

    kinds = {c.__name__: c for c in (GaussianWhiteZOH, Multisine, PerturbTruth, Lssvf, FromUnfactored)}

    def build(spec):
        spec = dict(spec)
        cls = kinds[spec.pop("type")]
        if cls is Multisine:
            spec["freqs"] = tuple(spec["freqs"])
        return cls(**spec)

    bcd = dict(d.get("bcd", {}))
    srivc = SrivcConfig(**d.get("srivc", {}))
    if "srivc" in bcd:
        bcd["srivc"] = SrivcConfig(**bcd["srivc"])
    return ExperimentConfig(
        true_model=model_from_dict(d["true_model"]),
        N=int(d["N"]),
        h=float(d["h"]),
        input=build(d["input"]),
        noise_variance=float(d["noise_variance"]),
        runs=int(d["runs"]),
        seed=int(d.get("seed", 0)),
        init=build(d["init"]),
        methods=tuple(d.get("methods", METHODS)),
        bcd=BcdConfig(**bcd),
        srivc=srivc,
        report=d.get("report", "unfactored"),
    )


# ---------------------------------------------------------------------------
# Reference systems
# ---------------------------------------------------------------------------


def case1_truth() -> AdditiveModel:
    return AdditiveModel(
        (
            TransferFunction([3.0], [1.0, 0.25, 0.25]),
            TransferFunction([1.0], [1.0, 0.01, 0.0025]),
        )
    )


CASE2_GAINS = (0.66, 0.24, 0.48, 0.15, 0.09, 0.15, 0.09, 0.06)


def case2_modes() -> tuple[np.ndarray, np.ndarray]:
    """Natural frequencies (log-spaced on [6, 470] rad/s) and damping ratios."""
    return np.geomspace(6.0, 470.0, 8), np.linspace(0.001, 0.0017, 8)


def case2_truth() -> AdditiveModel:
    w, xi = case2_modes()
    subs = tuple(
        TransferFunction([c], [1.0, 2 * z / wi, 1.0 / wi**2]) for c, wi, z in zip(CASE2_GAINS, w, xi)
    )
    return AdditiveModel(subs)


def case2_frequencies() -> tuple[float, ...]:
    """The 8 natural frequencies plus 8 geometric midpoints (one above the top mode)."""
    w, _ = case2_modes()
    mids = np.sqrt(w[:-1] * w[1:])
    top = w[-1] * np.sqrt(w[-1] / w[-2])
    return tuple(np.sort(np.concatenate([w, mids, [top]])).tolist())


CASE2_AMPLITUDE = 1.0
# SVF cutoff for the order-16 LSSVF start; larger values make its
# regression numerically singular
CASE2_LAMBDA = 50.0


def case_config(case: int, **overrides) -> ExperimentConfig:
    if case == 1:
        cfg = ExperimentConfig(
            true_model=case1_truth(),
            N=10000,
            h=0.005,
            input=GaussianWhiteZOH(1.0),
            noise_variance=1.0,
            runs=500,
            init=PerturbTruth(0.10),
            bcd=BcdConfig(epsilon=1e-10, max_outer=20, max_inner=200),
            report="unfactored",
        )
    elif case == 2:
        # the order-16 normal matrix is intrinsically ill-conditioned
        # (monomial basis over 6..470 rad/s); SRIVC is run without a cap
        srivc = SrivcConfig(max_iters=100, rel_tol=1e-16, cond_limit=float("inf"))
        cfg = ExperimentConfig(
            true_model=case2_truth(),
            N=3000,
            h=0.001,
            input=Multisine(case2_frequencies(), CASE2_AMPLITUDE),
            noise_variance=2.25,
            runs=200,
            init=Lssvf(CASE2_LAMBDA),
            bcd=BcdConfig(epsilon=1e-16, max_outer=10, max_inner=200, srivc=srivc),
            srivc=srivc,
            report="modal",
        )
    else:
        raise ValueError(f"unknown case {case!r}")
    return replace(cfg, **overrides)


# ---------------------------------------------------------------------------
# Signals and metrics
# ---------------------------------------------------------------------------


def gen_input(spec: InputSpec, N: int, h: float, rng: np.random.Generator) -> np.ndarray:
    """One input realization (``N`` samples) drawn from ``rng``."""
    if isinstance(spec, GaussianWhiteZOH):
        return rng.normal(0.0, np.sqrt(spec.variance), N)
    if isinstance(spec, Multisine):
        phases = rng.uniform(0.0, 2 * np.pi, len(spec.freqs))
        t = np.arange(N) * h
        u = np.zeros(N)
        for w, ph in zip(spec.freqs, phases):
            u += spec.amplitude * np.sin(w * t + ph)
        return u
    raise TypeError(f"unknown input spec {spec!r}")


def fit_metric(x_hat, x) -> float:
    """``100 (1 - ||x_hat - x|| / ||x - mean(x)||)``."""
    x_hat = np.asarray(x_hat, dtype=float)
    x = np.asarray(x, dtype=float)
    if x_hat.shape != x.shape:
        raise ValueError("x_hat and x must have equal length")
    den = np.linalg.norm(x - x.mean())
    if den == 0:
        raise ValueError("fit is undefined for a constant reference signal")
    return float(100.0 * (1.0 - np.linalg.norm(x_hat - x) / den))


def snr_db(x, noise_variance: float) -> float:
    return float(10 * np.log10(np.var(x) / noise_variance))


def perturb_model(model: AdditiveModel, fraction: float, rng: np.random.Generator) -> AdditiveModel:
    """Scale every parameter by ``1 + delta``, ``delta ~ U(-fraction, fraction)``."""
    subs = []
    for g, (n, m) in zip(model.subs, model.structure):
        th = pack_theta(g, m)
        v = th.values * (1.0 + rng.uniform(-fraction, fraction, th.values.size))
        subs.append(unpack_theta(ThetaVector(v, n, m)))
    return AdditiveModel(tuple(subs), model.structure)


def asymptotic_cost_white(
    model: AdditiveModel | None,
    true_model: AdditiveModel,
    input_variance: float,
    sigma2: float,
    h: float,
    tail_tol: float = 1e-12,
    max_len: int = 2**24,
) -> float:
    """Limit of the cost for a white input: ``sigma2 + var_u * ||dG||^2``.

    ``dG`` is the ZOH equivalent of ``true_model - model``; its squared
    discrete H2 norm is the energy of its pulse response, accumulated until
    the newest block contributes less than ``tail_tol`` of the total.
    """
    pairs = [(1.0, g) for g in true_model.subs]
    if model is not None:
        pairs += [(-1.0, g) for g in model.subs]
    for _, g in pairs:
        if g.n and not is_stable(g):
            raise StructureError("H2 norm undefined: unstable model error")
    length = 1024
    while True:
        imp = np.zeros(length)
        for sign, g in pairs:
            imp += sign * impulse_response_zoh(g, h, length)
        energy = float(np.sum(imp**2))
        tail = float(np.sum(imp[length // 2 :] ** 2))
        if energy == 0.0 or tail <= tail_tol * energy or length >= max_len:
            break
        length *= 2
    return sigma2 + input_variance * energy


def match_submodels(estimate: AdditiveModel, truth: AdditiveModel) -> list[int]:
    """Permutation ``perm`` with ``estimate.subs[perm[i]]`` closest to ``truth.subs[i]``.

    Distance is the summed gap between sorted pole sets; the assignment is
    solved exactly.
    """
    def key_poles(g):
        return np.sort_complex(g.den.roots())

    K = truth.K
    cost = np.zeros((K, K))
    for i, gt in enumerate(truth.subs):
        pt = key_poles(gt)
        for j, ge in enumerate(estimate.subs):
            pe = key_poles(ge)
            if pe.size != pt.size:
                cost[i, j] = np.inf
            else:
                cost[i, j] = np.sum(np.abs(pe - pt) / np.maximum(np.abs(pt), 1e-12))
    cost = np.where(np.isfinite(cost), cost, 1e300)
    _, cols = linear_sum_assignment(cost)
    return [int(c) for c in cols]


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


@dataclass
class MethodResult:
    status: str
    fit: float = float("nan")
    cost_final: float = float("nan")
    iters: int = 0
    params: np.ndarray | None = None
    cost_trace: list[float] = field(default_factory=list)
    model: dict | None = None


@dataclass
class RunRecord:
    run_index: int
    methods: dict[str, MethodResult]
    snr_db: float = float("nan")


def reporting_names(cfg: ExperimentConfig) -> list[str]:
    if cfg.report == "modal":
        return [f"c_{i + 1}" for i in range(cfg.true_model.K)]
    n, m = cfg.structure.unfactored_degrees
    return [f"a_{i}" for i in range(1, n + 1)] + [f"b_{j}" for j in range(m + 1)]


def reporting_params(model, cfg: ExperimentConfig) -> np.ndarray:
    """Parameters in the common reporting parameterization.

    ``unfactored``: ``[a_1..a_n, b_0..b_m]`` of the collapsed transfer
    function. ``modal``: static gain of each section after matching it to
    the true mode (unfactored models are first expanded).
    """
    n, m = cfg.structure.unfactored_degrees
    if cfg.report == "unfactored":
        tf = model if isinstance(model, TransferFunction) else additive_to_unfactored(model)
        if tf.n != n:
            raise StructureError(f"estimate has order {tf.n}, expected {n}")
        return pack_theta(tf, max(m, tf.m)).values[: n + m + 1]
    if isinstance(model, TransferFunction):
        model = partial_fractions(model, cfg.true_model.structure)
    perm = match_submodels(model, cfg.true_model)
    return np.array([model.subs[j].dc_gain() for j in perm])


def true_params(cfg: ExperimentConfig) -> np.ndarray:
    return reporting_params(cfg.true_model, cfg)


def _initial_models(cfg: ExperimentConfig, y, u, rng) -> tuple[ThetaVector, AdditiveModel]:
    """Starting points for SRIVC (unfactored) and BCD (additive)."""
    st = cfg.structure
    n, m = st.unfactored_degrees
    init = cfg.init
    if isinstance(init, PerturbTruth):
        add = perturb_model(cfg.true_model, init.fraction, rng)
        return pack_theta(additive_to_unfactored(add), m), add
    theta = _stabilized(lssvf_estimate(y, u, cfg.h, n, m, init.lambda_svf))
    if isinstance(init, Lssvf):
        return theta, partial_fractions(unpack_theta(theta), st.pairs)
    add = initialize_from_unfactored(y, u, cfg.h, st, cfg.bcd, lambda_svf=init.lambda_svf)
    return theta, add


def run_single(cfg: ExperimentConfig, run_index: int) -> RunRecord:
    """One Monte Carlo run. Failures are captured in the status fields."""
    rng = np.random.default_rng(cfg.seed + run_index)
    u = gen_input(cfg.input, cfg.N, cfg.h, rng)
    x = simulate_model(cfg.true_model, u, cfg.h)
    v = rng.normal(0.0, np.sqrt(cfg.noise_variance), cfg.N) if cfg.noise_variance > 0 else np.zeros(cfg.N)
    y = x + v
    rec = RunRecord(run_index, {})
    if cfg.noise_variance > 0 and np.var(x) > 0:
        rec.snr_db = snr_db(x, cfg.noise_variance)
    try:
        theta0, add0 = _initial_models(cfg, y, u, rng)
    except CtidError as exc:
        for meth in cfg.methods:
            rec.methods[meth] = MethodResult(status=f"InitFailed:{type(exc).__name__}")
        return rec
    n, m = cfg.structure.unfactored_degrees

    if "SRIVC" in cfg.methods:
        try:
            tr = srivc_full(y, u, cfg.h, n, m, cfg.srivc, theta_init=theta0)
            tf = tr.model
            res = MethodResult(status=tr.status.value, iters=len(tr.thetas))
            xh = simulate_zoh(tf, u, cfg.h)
            res.fit = fit_metric(xh, x)
            res.cost_final = float(np.mean((y - xh) ** 2))
            res.model = model_to_dict(AdditiveModel((tf,)))
            try:
                res.params = reporting_params(tf, cfg)
            except CtidError as exc:
                log.info("run %d: SRIVC estimate not expandable: %s", run_index, exc)
        except CtidError as exc:
            res = MethodResult(status=f"Failed:{type(exc).__name__}")
        rec.methods["SRIVC"] = res

    if "BCD" in cfg.methods:
        try:
            out = bcd_fit(y, u, cfg.h, cfg.structure, add0, cfg.bcd)
            res = MethodResult(
                status="Converged" if out.converged else "MaxOuter",
                iters=out.outer_iters_used,
                cost_final=out.cost,
                cost_trace=list(out.cost_trace),
            )
            res.fit = fit_metric(simulate_model(out.model, u, cfg.h), x)
            res.params = reporting_params(out.model, cfg)
            res.model = model_to_dict(out.model)
        except CtidError as exc:
            res = MethodResult(status=f"Failed:{type(exc).__name__}")
        rec.methods["BCD"] = res
    return rec


def _worker_count(threads: int | None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("CTID_THREADS")
    if env is None:
        return 1
    try:
        k = int(env)
    except ValueError as exc:
        raise ValueError(f"CTID_THREADS must be an integer >= 1, got {env!r}") from exc
    if k < 1:
        raise ValueError(f"CTID_THREADS must be an integer >= 1, got {env!r}")
    return k


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> list[RunRecord]:
    """All runs of ``cfg``, ordered by run index."""
    workers = _worker_count(threads)
    idx = range(cfg.runs)
    if workers == 1:
        return [run_single(cfg, k) for k in idx]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        recs = list(ex.map(run_single, [cfg] * cfg.runs, idx))
    return sorted(recs, key=lambda r: r.run_index)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def mse_table(
    records: Sequence[RunRecord], truth: np.ndarray, methods: Sequence[str] = METHODS
) -> dict[str, np.ndarray]:
    """Per-parameter mean squared error for each method.

    Runs whose estimate could not be mapped to the reporting
    parameterization are left out of that method's average.
    """
    truth = np.asarray(truth, dtype=float)
    out = {}
    for meth in methods:
        rows = [
            r.methods[meth].params
            for r in records
            if meth in r.methods and r.methods[meth].params is not None
        ]
        if not rows:
            out[meth] = np.full(truth.size, np.nan)
            continue
        P = np.vstack(rows)
        if P.shape[1] != truth.size:
            raise StructureError("parameter count mismatch in MSE aggregation")
        acc = np.zeros(truth.size)
        for row in P:
            acc += (row - truth) ** 2
        out[meth] = acc / P.shape[0]
    return out


def summarize(records: Sequence[RunRecord], cfg: ExperimentConfig) -> dict:
    truth = true_params(cfg)
    mse = mse_table(records, truth, cfg.methods)
    fits = {
        meth: np.array([r.methods[meth].fit for r in records if meth in r.methods])
        for meth in cfg.methods
    }
    s = {
        "names": reporting_names(cfg),
        "truth": truth.tolist(),
        "mse": {k: v.tolist() for k, v in mse.items()},
        "median_fit": {k: float(np.nanmedian(v)) if np.isfinite(v).any() else float("nan") for k, v in fits.items()},
        "successful_runs": {
            k: int(np.isfinite(v).sum()) for k, v in fits.items()
        },
    }
    if set(METHODS) <= set(cfg.methods):
        fb, fs = fits["BCD"], fits["SRIVC"]
        ok = np.isfinite(fb) & np.isfinite(fs)
        s["bcd_better_fraction"] = float(np.mean(fb[ok] >= fs[ok])) if ok.any() else float("nan")
    snrs = [r.snr_db for r in records if np.isfinite(r.snr_db)]
    if snrs:
        s["mean_snr_db"] = float(np.mean(snrs))
    return s


def write_summary_csv(path, records: Sequence[RunRecord]) -> None:
    cols: dict[str, list] = {k: [] for k in ("run_index", "method", "fit", "cost_final", "iters", "status")}
    for r in records:
        for meth, res in r.methods.items():
            cols["run_index"].append(r.run_index)
            cols["method"].append(meth)
            cols["fit"].append(float(res.fit))
            cols["cost_final"].append(float(res.cost_final))
            cols["iters"].append(res.iters)
            cols["status"].append(res.status)
    write_csv(path, cols)


def write_mse_csv(path, summary: dict) -> None:
    cols: dict[str, list] = {"parameter": summary["names"], "true_value": [float(t) for t in summary["truth"]]}
    for meth, vals in summary["mse"].items():
        cols[f"mse_{meth}"] = [float(v) for v in vals]
    write_csv(path, cols)


def run_case_study(
    case: int, threads: int | None = None, out_dir=None, **overrides
) -> tuple[list[RunRecord], dict]:
    """Run Case 1 or Case 2 with field overrides; optionally write CSV outputs."""
    cfg = case_config(case, **overrides)
    records = run_experiment(cfg, threads)
    summary = summarize(records, cfg)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_summary_csv(out / "summary.csv", records)
        write_mse_csv(out / "mse.csv", summary)
        (out / "config-echo.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    return records, summary
