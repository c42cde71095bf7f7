"""Polynomials and transfer functions in the differentiation operator ``p``.

All polynomials are stored in ascending powers (``coeffs[k]`` multiplies
``p**k``). Denominators are anti-monic: their constant coefficient is 1.

Continuous filters are applied to sampled signals through the exact
zero-order-hold (ZOH) equivalent of a controllable-canonical realization
(first-order hold is available for signals that are not piecewise constant).
The realization is diagonally balanced before the matrix exponential so
that high-order, lightly damped denominators stay well conditioned.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
import scipy.linalg as sla
from numpy.polynomial import polynomial as npoly

from .errors import RepeatedPolesError, SimulationOverflow, StructureError

TOL_COPRIME = 1e-8
TOL_CLUSTER = 1e-6
_ANTIMONIC_MIN = 1e-12


# ---------------------------------------------------------------------------
# Polynomial
# ---------------------------------------------------------------------------


def _trim(c: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return np.zeros(1)
    return c[: nz[-1] + 1]


@dataclass(frozen=True, eq=False)
class Polynomial:
    """Real polynomial in ``p`` with ascending coefficients.

    Trailing zeros are trimmed; the zero polynomial is ``[0.0]``.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float)).copy()
        if c.ndim != 1 or c.size == 0:
            raise StructureError("polynomial coefficients must be a non-empty 1-D list")
        if not np.all(np.isfinite(c)):
            raise StructureError("polynomial coefficients must be finite")
        c = _trim(c)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def is_zero(self) -> bool:
        return self.degree == 0 and self.coeffs[0] == 0.0

    def __call__(self, p):
        return npoly.polyval(p, self.coeffs)

    def __mul__(self, other: Polynomial) -> Polynomial:
        return Polynomial(npoly.polymul(self.coeffs, other.coeffs))

    def __add__(self, other: Polynomial) -> Polynomial:
        return Polynomial(npoly.polyadd(self.coeffs, other.coeffs))

    def __sub__(self, other: Polynomial) -> Polynomial:
        return Polynomial(npoly.polysub(self.coeffs, other.coeffs))

    def scale(self, k: float) -> Polynomial:
        return Polynomial(self.coeffs * k)

    def roots(self) -> np.ndarray:
        """Roots via companion-matrix eigenvalues."""
        if self.degree < 1:
            return np.zeros(0, dtype=complex)
        return np.roots(self.coeffs[::-1]).astype(complex)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash(self.coeffs.tobytes())

    def __repr__(self) -> str:
        return f"Polynomial({self.coeffs.tolist()})"

    @staticmethod
    def monomial(k: int, coef: float = 1.0) -> Polynomial:
        c = np.zeros(k + 1)
        c[k] = coef
        return Polynomial(c)

    @staticmethod
    def from_roots(roots: Sequence[complex]) -> Polynomial:
        """Anti-monic polynomial ``prod(1 - p/r)`` with the given non-zero roots."""
        c = np.array([1.0 + 0j])
        for r in roots:
            if abs(r) < _ANTIMONIC_MIN:
                raise StructureError("anti-monic polynomial cannot have a root at 0")
            c = npoly.polymul(c, [1.0, -1.0 / r])
        return Polynomial(np.real(c))


def _as_poly(x) -> Polynomial:
    return x if isinstance(x, Polynomial) else Polynomial(x)


# ---------------------------------------------------------------------------
# Transfer functions and models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransferFunction:
    """``B(p)/A(p)`` with anti-monic ``A`` and ``deg B <= deg A``.

    Coprimality is not re-checked on every construction (estimation loops
    build many intermediate models); call :meth:`check_coprime` at system
    boundaries.
    """

    num: Polynomial
    den: Polynomial

    def __post_init__(self):
        object.__setattr__(self, "num", _as_poly(self.num))
        object.__setattr__(self, "den", _as_poly(self.den))
        if self.den.coeffs[0] != 1.0:
            raise StructureError(
                f"denominator must be anti-monic (constant term 1), got {self.den.coeffs[0]!r}"
            )
        if self.num.degree > self.den.degree:
            raise StructureError("improper transfer function (deg num > deg den)")

    @classmethod
    def normalized(cls, num, den) -> TransferFunction:
        """Build from arbitrary ``num``/``den`` by dividing both by ``den(0)``."""
        num, den = _as_poly(num), _as_poly(den)
        a0 = den.coeffs[0]
        if abs(a0) < _ANTIMONIC_MIN:
            raise StructureError("cannot renormalize: denominator constant term is ~0")
        den_c = den.coeffs / a0
        den_c[0] = 1.0
        return cls(num.scale(1.0 / a0), Polynomial(den_c))

    @property
    def n(self) -> int:
        return self.den.degree

    @property
    def m(self) -> int:
        return self.num.degree

    @property
    def relative_degree(self) -> int:
        return self.n - self.m

    def is_biproper(self) -> bool:
        return self.n == self.m and not self.num.is_zero()

    def dc_gain(self) -> float:
        return float(self.num.coeffs[0])

    def freqresp(self, w) -> np.ndarray:
        s = 1j * np.asarray(w, dtype=float)
        return self.num(s) / self.den(s)

    def check_coprime(self, tol: float = TOL_COPRIME) -> None:
        if self.num.is_zero():
            return
        zs, ps = self.num.roots(), self.den.roots()
        if zs.size and ps.size:
            d = np.abs(zs[:, None] - ps[None, :]).min()
            if d < tol:
                raise StructureError(
                    f"numerator and denominator share a root (distance {d:.3g})"
                )

    def __eq__(self, other) -> bool:
        if not isinstance(other, TransferFunction):
            return NotImplemented
        return self.num == other.num and self.den == other.den

    def __hash__(self):
        return hash((self.num, self.den))


@dataclass(frozen=True)
class AdditiveModel:
    """Sum of ``K`` transfer functions, ``G(p) = sum_i B_i(p)/A_i(p)``.

    ``structure`` lists the ``(n_i, m_i)`` degrees of each submodel; it
    defaults to the actual degrees and may exceed the numerator degree when
    leading numerator coefficients happen to be zero.
    """

    subs: tuple[TransferFunction, ...]
    structure: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        subs = tuple(self.subs)
        if not subs:
            raise StructureError("additive model needs at least one submodel")
        st = tuple((int(n), int(m)) for n, m in self.structure) or tuple(
            (g.n, g.m) for g in subs
        )
        if len(st) != len(subs):
            raise StructureError("structure length does not match number of submodels")
        for g, (n, m) in zip(subs, st):
            if g.n != n or g.m > m or m > n:
                raise StructureError(
                    f"submodel of degrees ({g.n},{g.m}) does not fit structure ({n},{m})"
                )
        if sum(1 for n, m in st if n == m) > 1:
            raise StructureError("at most one subsystem may be biproper")
        object.__setattr__(self, "subs", subs)
        object.__setattr__(self, "structure", st)

    @property
    def K(self) -> int:
        return len(self.subs)

    def validate(self, tol: float = TOL_COPRIME) -> None:
        """Check coprimality of each submodel and of the denominators jointly."""
        for g in self.subs:
            g.check_coprime(tol)
        roots = [g.den.roots() for g in self.subs]
        for i in range(self.K):
            for j in range(i + 1, self.K):
                if roots[i].size and roots[j].size:
                    d = np.abs(roots[i][:, None] - roots[j][None, :]).min()
                    if d < tol:
                        raise StructureError(
                            f"denominators {i + 1} and {j + 1} share a root (distance {d:.3g})"
                        )

    def freqresp(self, w) -> np.ndarray:
        return sum(g.freqresp(w) for g in self.subs)


# ---------------------------------------------------------------------------
# Parameter vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ThetaVector:
    """Stacked parameters ``[a_1..a_n, b_0..b_m]``."""

    values: np.ndarray
    n: int
    m: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        if v.ndim != 1 or v.size != self.n + self.m + 1:
            raise StructureError(
                f"theta length {v.size} does not match n + m + 1 = {self.n + self.m + 1}"
            )
        if self.n < 1 or self.m < 0 or self.m > self.n:
            raise StructureError(f"invalid structure (n={self.n}, m={self.m})")
        if v[self.n - 1] == 0.0:
            raise StructureError("leading denominator coefficient a_n is zero")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def a(self) -> np.ndarray:
        return self.values[: self.n]

    @property
    def b(self) -> np.ndarray:
        return self.values[self.n :]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ThetaVector):
            return NotImplemented
        return (self.n, self.m) == (other.n, other.m) and np.array_equal(
            self.values, other.values
        )

    def __len__(self) -> int:
        return self.values.size


def pack_theta(tf: TransferFunction, m: int | None = None) -> ThetaVector:
    """Pack ``tf`` as ``[a_1..a_n, b_0..b_m]``; ``m`` pads the numerator."""
    m = tf.m if m is None else m
    if m < tf.m:
        raise StructureError(f"numerator degree {tf.m} exceeds requested m={m}")
    b = np.zeros(m + 1)
    b[: tf.num.coeffs.size] = tf.num.coeffs
    return ThetaVector(np.concatenate([tf.den.coeffs[1:], b]), tf.n, m)


def unpack_theta(v, n: int | None = None, m: int | None = None) -> TransferFunction:
    if not isinstance(v, ThetaVector):
        if n is None or m is None:
            raise StructureError("n and m are required to unpack a raw vector")
        v = ThetaVector(v, n, m)
    elif (n is not None and n != v.n) or (m is not None and m != v.m):
        raise StructureError("requested (n, m) does not match the theta vector")
    return TransferFunction(v.b, np.concatenate([[1.0], v.a]))


# ---------------------------------------------------------------------------
# Additive <-> unfactored conversions
# ---------------------------------------------------------------------------


def additive_to_unfactored(model: AdditiveModel) -> TransferFunction:
    """Collapse ``sum_i B_i/A_i`` into a single ``B/A``."""
    if model.K == 1:
        return model.subs[0]
    den = Polynomial([1.0])
    for g in model.subs:
        den = den * g.den
    num = Polynomial([0.0])
    for i, g in enumerate(model.subs):
        term = g.num
        for j, other in enumerate(model.subs):
            if j != i:
                term = term * other.den
        num = num + term
    assert abs(den.coeffs[0]) > _ANTIMONIC_MIN
    return TransferFunction.normalized(num, den)


def _group_poles(poles: np.ndarray, n_pairs: int, n_singles: int, tol: float):
    """Split poles into conjugate pairs, paired reals and single reals."""
    scale = np.maximum(1.0, np.abs(poles))
    is_cplx = np.abs(poles.imag) > tol * scale
    upper = poles[is_cplx & (poles.imag > 0)]
    reals = sorted(poles[~is_cplx].real, key=abs)
    if upper.size * 2 != int(is_cplx.sum()):
        raise StructureError("complex poles do not come in conjugate pairs")
    pairs = [(p, np.conj(p)) for p in upper]
    n_real_pairs = n_pairs - len(pairs)
    if n_real_pairs < 0 or len(reals) != 2 * n_real_pairs + n_singles:
        raise StructureError(
            f"cannot group {len(pairs)} complex pairs and {len(reals)} real poles into "
            f"{n_pairs} second-order and {n_singles} first-order sections"
        )
    reals = list(reals)
    # greedily pair the closest real poles (log-distance) until enough pairs exist
    while n_real_pairs > 0:
        logs = np.log(np.abs(reals))
        gaps = np.diff(logs)
        k = int(np.argmin(gaps))
        pairs.append((complex(reals[k]), complex(reals[k + 1])))
        del reals[k : k + 2]
        n_real_pairs -= 1
    singles = [(complex(r),) for r in reals]
    return pairs, singles


def partial_fractions(
    tf: TransferFunction,
    structure: Sequence[tuple[int, int]],
    tol_cluster: float = TOL_CLUSTER,
) -> AdditiveModel:
    """Expand ``tf`` into first/second-order sections matching ``structure``.

    Poles are grouped into conjugate pairs (or pairs of real poles) for
    ``n_i = 2`` entries and single real poles for ``n_i = 1`` entries.
    Groups are assigned to structure entries in order of increasing natural
    frequency. Each section's numerator is truncated to degree ``m_i``; a
    biproper entry absorbs the direct feedthrough of ``tf``.
    """
    structure = [(int(n), int(m)) for n, m in structure]
    if not structure:
        raise StructureError("empty structure")
    if sum(n for n, _ in structure) != tf.n:
        raise StructureError(
            f"structure orders sum to {sum(n for n, _ in structure)}, tf has order {tf.n}"
        )
    if len(structure) == 1:
        n, m = structure[0]
        if tf.m > m:
            c = tf.num.coeffs[: m + 1]
            return AdditiveModel((TransferFunction(c, tf.den),), ((n, m),))
        return AdditiveModel((tf,), ((n, m),))
    if any(n not in (1, 2) for n, _ in structure):
        raise StructureError("only first- and second-order sections are supported")

    poles = tf.den.roots()
    if poles.size > 1:
        d = np.abs(poles[:, None] - poles[None, :])
        np.fill_diagonal(d, np.inf)
        if d.min() < tol_cluster:
            raise RepeatedPolesError(
                f"poles closer than {tol_cluster:g} (min distance {d.min():.3g})"
            )
    if np.any(np.abs(poles) < _ANTIMONIC_MIN):
        raise StructureError("pole at the origin cannot be written anti-monic")

    num, den = tf.num, tf.den
    direct = 0.0
    if num.degree == den.degree:
        direct = num.coeffs[-1] / den.coeffs[-1]
        num = num - den.scale(direct)
    dden = npoly.polyder(den.coeffs)
    resid = {complex(p): num(p) / npoly.polyval(p, dden) for p in poles}

    def nearest_residue(p):
        key = min(resid, key=lambda q: abs(q - p))
        return resid[key]

    n_pairs = sum(1 for n, _ in structure if n == 2)
    n_singles = len(structure) - n_pairs
    pairs, singles = _group_poles(poles, n_pairs, n_singles, TOL_COPRIME)

    def section(group):
        # sum_k r_k / (p - l_k) over the group, rewritten anti-monic
        sec_den = np.array([1.0 + 0j])
        for lam in group:
            sec_den = npoly.polymul(sec_den, [-lam, 1.0])
        sec_num = np.zeros(len(group), dtype=complex)
        for k, lam in enumerate(group):
            term = np.array([nearest_residue(lam)], dtype=complex)
            for j, other in enumerate(group):
                if j != k:
                    term = npoly.polymul(term, [-other, 1.0])
            sec_num[: term.size] += term
        scale = sec_den[0]
        return np.real(sec_num / scale), np.real(sec_den / scale)

    def natural_freq(group):
        return float(np.sqrt(np.prod(np.abs(group)))) if len(group) == 2 else abs(group[0])

    pairs.sort(key=natural_freq)
    singles.sort(key=natural_freq)
    it = {2: iter(pairs), 1: iter(singles)}
    subs = []
    for n, m in structure:
        sec_num, sec_den = section(next(it[n]))
        sec_den[0] = 1.0
        if m == n:
            sec_num = npoly.polyadd(sec_num, direct * sec_den)
        else:
            sec_num = sec_num[: m + 1]
        subs.append(TransferFunction(sec_num, sec_den))
    return AdditiveModel(tuple(subs), tuple(structure))


# ---------------------------------------------------------------------------
# Poles and stabilization
# ---------------------------------------------------------------------------


def poles(tf: TransferFunction) -> np.ndarray:
    if tf.n < 1:
        raise StructureError("a static gain has no poles")
    return tf.den.roots()


def is_stable(tf: TransferFunction) -> bool:
    return bool(np.all(poles(tf).real < 0.0))


def reflect_unstable(tf: TransferFunction) -> TransferFunction:
    """Mirror right-half-plane poles into the left half plane."""
    ps = poles(tf)
    if np.all(ps.real <= 0.0):
        return tf
    ps = np.where(ps.real > 0.0, -ps.real + 1j * ps.imag, ps)
    den = Polynomial.from_roots(ps)
    return TransferFunction(tf.num, den)


# ---------------------------------------------------------------------------
# ZOH discretization and simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteStateSpace:
    """``x[k+1] = A_d x[k] + B_d u[k]``, ``y[k] = C_d x[k] + D_d u[k]``."""

    A_d: np.ndarray
    B_d: np.ndarray
    C_d: np.ndarray
    D_d: float
    h: float

    def __post_init__(self):
        n = self.A_d.shape[0]
        if self.A_d.shape != (n, n) or self.B_d.shape != (n,) or self.C_d.shape != (n,):
            raise StructureError("inconsistent state-space dimensions")

    @property
    def order(self) -> int:
        return self.A_d.shape[0]

    def freqresp(self, w) -> np.ndarray:
        z = np.exp(1j * np.asarray(w, dtype=float) * self.h)
        eye = np.eye(self.order)
        out = np.empty(z.shape, dtype=complex)
        for k, zk in np.ndenumerate(z):
            out[k] = self.C_d @ np.linalg.solve(zk * eye - self.A_d, self.B_d) + self.D_d
        return out


def _output_map(num: Polynomial, den: Polynomial, scale: np.ndarray):
    """``(C, D)`` of the balanced controllable-canonical realization of num/den."""
    n = den.degree
    if num.degree > n:
        raise StructureError("improper filter: numerator degree exceeds denominator degree")
    an = den.coeffs[-1]
    alpha = den.coeffs / an
    beta = np.zeros(n + 1)
    beta[: num.coeffs.size] = num.coeffs / an
    d = beta[n]
    c = (beta[:n] - d * alpha[:n]) * scale
    return c, float(d)


@functools.lru_cache(maxsize=256)
def _hold_core(den_key: bytes, h: float, hold: str):
    den = np.frombuffer(den_key, dtype=float)
    n = den.size - 1
    alpha = den / den[-1]
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -alpha[:n]
    B = np.zeros(n)
    B[-1] = 1.0
    # diagonal similarity T = diag(s): A_bal = T^-1 A T, B_bal = T^-1 B, C_bal = C T
    _, (s, _perm) = sla.matrix_balance(A, permute=False, separate=True)
    A_bal = A * (1.0 / s)[:, None] * s[None, :]
    B_bal = B / s
    # augmented exponential; the extra ramp state gives the first-order-hold terms
    M = np.zeros((n + 2, n + 2))
    M[:n, :n] = A_bal * h
    M[:n, n] = B_bal * h
    M[n, n + 1] = h
    with np.errstate(over="ignore", invalid="ignore"):
        E = sla.expm(M) if hold == "foh" else sla.expm(M[: n + 1, : n + 1])
    if not np.all(np.isfinite(E)):
        raise SimulationOverflow(0, "non-finite matrix exponential in discretization")
    Ad = np.ascontiguousarray(E[:n, :n])
    if hold == "foh":
        B1 = E[:n, n + 1] / h
        B0 = E[:n, n] - B1
    else:
        B0 = E[:n, n]
        B1 = np.zeros(n)
    out = (Ad, np.ascontiguousarray(B0), np.ascontiguousarray(B1), s)
    for a in out:
        a.setflags(write=False)
    return out


def _realization(den: Polynomial, h: float, hold: str = "zoh"):
    if not h > 0:
        raise StructureError("sampling period h must be positive")
    if den.degree < 1:
        raise StructureError("realization needs a dynamic denominator")
    if hold not in ("zoh", "foh"):
        raise ValueError(f"unknown hold {hold!r}")
    return _hold_core(np.ascontiguousarray(den.coeffs).tobytes(), float(h), hold)


def zoh_discretize(tf: TransferFunction, h: float) -> DiscreteStateSpace:
    """Exact ZOH equivalent of ``tf`` (balanced controllable-canonical form)."""
    if tf.n == 0:
        return DiscreteStateSpace(np.zeros((0, 0)), np.zeros(0), np.zeros(0), tf.dc_gain(), h)
    Ad, Bd, _, s = _realization(tf.den, h)
    c, d = _output_map(tf.num, tf.den, s)
    return DiscreteStateSpace(Ad.copy(), Bd.copy(), c, d, float(h))


@numba.njit(cache=True)
def _state_trajectory(Ad, B0, B1, u):  # pragma: no cover - compiled
    # x[k+1] = Ad x[k] + B0 u[k] + B1 u[k+1], x[0] = 0
    N = u.shape[0]
    n = Ad.shape[0]
    X = np.zeros((N, n))
    x = np.zeros(n)
    xn = np.zeros(n)
    for k in range(N - 1):
        for i in range(n):
            acc = B0[i] * u[k] + B1[i] * u[k + 1]
            for j in range(n):
                acc += Ad[i, j] * x[j]
            xn[i] = acc
        for i in range(n):
            x[i] = xn[i]
            X[k + 1, i] = xn[i]
    return X


def _check_finite(y: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(y)):
        bad = np.flatnonzero(~np.isfinite(y).reshape(y.shape[0], -1).all(axis=1))
        raise SimulationOverflow(int(bad[0]))
    return y


def filter_bank(
    nums: Sequence[Polynomial], den: Polynomial, signal, h: float, hold: str = "zoh"
) -> np.ndarray:
    """Apply ``num_j(p)/den(p)`` for every ``num_j`` to one sampled signal.

    ``hold`` is the assumed intersample behaviour of ``signal``: ``"zoh"``
    (piecewise constant, the input convention) or ``"foh"`` (piecewise
    linear, used for measured outputs). All filters share the state
    trajectory of the common denominator, so outputs are exactly linear in
    the numerator coefficients. Returns an ``N x len(nums)`` array.
    """
    u = np.ascontiguousarray(signal, dtype=float)
    if u.ndim != 1:
        raise StructureError("signal must be one-dimensional")
    Ad, B0, B1, s = _realization(den, h, hold)
    X = _state_trajectory(Ad, B0, B1, u)
    C = np.empty((den.degree, len(nums)))
    D = np.empty(len(nums))
    for j, num in enumerate(nums):
        C[:, j], D[j] = _output_map(_as_poly(num), den, s)
    return _check_finite(X @ C + np.outer(u, D))


def simulate_zoh(tf: TransferFunction, u, h: float) -> np.ndarray:
    """Zero-state response of ``tf`` to a ZOH input sampled every ``h``."""
    if not h > 0:
        raise StructureError("sampling period h must be positive")
    u = np.asarray(u, dtype=float)
    if tf.n == 0:
        return _check_finite(tf.dc_gain() * u)
    return filter_bank([tf.num], tf.den, u, h)[:, 0]


def simulate_model(model: AdditiveModel, u, h: float) -> np.ndarray:
    out = np.zeros(len(u))
    for g in model.subs:
        out = out + simulate_zoh(g, u, h)
    return out


def apply_operator_filter(
    k: int, den: Polynomial, signal, h: float, hold: str = "zoh"
) -> np.ndarray:
    """Apply ``p**k / den(p)`` to a sampled signal (ZOH intersample by default)."""
    den = _as_poly(den)
    if k < 0 or k > den.degree:
        raise StructureError(f"improper filter p^{k}/A with deg A = {den.degree}")
    return filter_bank([Polynomial.monomial(k)], den, signal, h, hold)[:, 0]


def impulse_response_zoh(tf: TransferFunction, h: float, length: int) -> np.ndarray:
    """Pulse response of the ZOH equivalent (unit sample at k = 0)."""
    u = np.zeros(length)
    u[0] = 1.0
    return simulate_zoh(tf, u, h)
