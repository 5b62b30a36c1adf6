"""PrivUnit2 and Subset Selection randomizers and their cap-based view.

Both randomizers have an output density with exactly two levels relative to
the uniform reference distribution on the output space: ``c1`` on an
input-dependent cap and ``c2`` elsewhere. :class:`CapMechanism` exposes that
structure, which is all the candidate-pool codecs need. Levels are stored as
ratios ``q(z|x) / p(z)`` so no sphere areas or binomial coefficients appear.

Conventions:
    * PrivUnit2 inputs are unit vectors of shape ``(d,)`` (or a batch
      ``(n, d)``); outputs are unit vectors.
    * Subset Selection inputs are 0-based symbols in ``range(d)``; outputs are
      0/1 ``uint8`` vectors of weight ``s``.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, NumericalDegeneracyError
from .numerics import (
    bisect,
    inv_reg_inc_beta,
    log_beta,
    log_reg_inc_beta,
)

# tolerance when snapping d/(1+e^eps) to an integer before the ceiling, so
# that eps given to four decimals (0.6931 for ln 2) lands where intended
_CEIL_SNAP = 1e-4
_RATIO_TOL = 1e-12


@dataclass(frozen=True)
class EstimatorScales:
    """Debiasing constants: an estimate is ``(z - b) / m``.

    Attributes:
        m: multiplicative scale.
        b: additive offset, zero for the PrivUnit2 family.
        p_cap: probability that the released output lies in the input's cap,
            when known.
    """

    m: float
    b: float = 0.0
    p_cap: float | None = None


@dataclass(frozen=True)
class PrivUnitParams:
    """Calibrated PrivUnit2 parameters.

    Attributes:
        eps: total budget, split as ``eps_bar = mu * eps`` for the cap and
            ``eps0 = (1 - mu) * eps`` for the coin ``p0``.
        d: dimension.
        mu: budget split.
        gamma: cap threshold on the inner product.
        p0: probability of sampling from the cap.
        branch: which sufficient condition fixed gamma (1 or 2), 0 if set by hand.
        flagged: True for the degenerate d=2 case.
    """

    eps: float
    d: int
    mu: float
    gamma: float
    p0: float
    branch: int = 0
    flagged: bool = False

    kind = "privunit"

    @property
    def alpha(self) -> float:
        return (self.d - 1) / 2.0

    @property
    def tau(self) -> float:
        return (1.0 + self.gamma) / 2.0

    def to_dict(self) -> dict:
        return {
            "kind": "privunit",
            "eps": self.eps,
            "d": self.d,
            "mu": self.mu,
            "gamma": self.gamma,
            "p0": self.p0,
            "s": None,
        }


@dataclass(frozen=True)
class SubsetParams:
    """Subset Selection parameters (budget ``eps``, dimension ``d``, weight ``s``)."""

    eps: float
    d: int
    s: int

    kind = "ss"

    def to_dict(self) -> dict:
        return {
            "kind": "ss",
            "eps": self.eps,
            "d": self.d,
            "mu": None,
            "gamma": None,
            "p0": None,
            "s": self.s,
        }


def params_to_json(params: PrivUnitParams | SubsetParams) -> str:
    return json.dumps(params.to_dict(), sort_keys=True)


def params_from_json(text: str | dict) -> PrivUnitParams | SubsetParams:
    """Inverse of :func:`params_to_json`. Accepts a JSON string or a dict."""
    doc = json.loads(text) if isinstance(text, str) else dict(text)
    kind = doc.get("kind")
    if kind == "privunit":
        return PrivUnitParams(
            eps=float(doc["eps"]),
            d=int(doc["d"]),
            mu=float(doc["mu"]),
            gamma=float(doc["gamma"]),
            p0=float(doc["p0"]),
            flagged=int(doc["d"]) == 2,
        )
    if kind == "ss":
        return SubsetParams(eps=float(doc["eps"]), d=int(doc["d"]), s=int(doc["s"]))
    raise ValueError(f"unknown mechanism kind {kind!r}")


# ---------------------------------------------------------------- PrivUnit2


@functools.lru_cache(maxsize=1024)
def _privunit_log_cap_masses(d: int, gamma: float) -> tuple[float, float]:
    """(ln P(<z,x> >= gamma), ln P(<z,x> < gamma)) for z uniform on the sphere."""
    a = (d - 1) / 2.0
    tau = (1.0 + gamma) / 2.0
    log_in = log_reg_inc_beta(1.0 - tau, a, a)
    log_out = log_reg_inc_beta(tau, a, a)
    return log_in, log_out


def _branch2_rhs(gamma: float, d: int) -> float:
    return 0.5 * math.log(d) + math.log(6.0) - 0.5 * (d - 1) * math.log1p(-gamma * gamma) + math.log(gamma)


def _privunit_log_ratio(d: int, gamma: float, eps0: float) -> float:
    """ln(c1 / c2) for a PrivUnit2 instance."""
    log_in, log_out = _privunit_log_cap_masses(d, gamma)
    return eps0 + log_out - log_in


def calibrate_privunit(eps: float, d: int, mu: float = 0.5) -> PrivUnitParams:
    """Pick ``(gamma, p0)`` for a total budget ``eps``.

    ``p0 = e^eps0 / (1 + e^eps0)`` with ``eps0 = (1 - mu) eps``. For gamma the
    two sufficient conditions are evaluated with ``eps_bar = mu * eps``:

    1. ``gamma <= tanh(eps_bar / 2) * sqrt(pi / (2 (d - 1)))``;
    2. ``eps_bar >= ln(sqrt(d)) + ln 6 - (d-1)/2 ln(1 - gamma^2) + ln gamma``
       with ``gamma >= sqrt(2 / d)``, saturated by bisection.

    The larger feasible gamma wins, provided the resulting two-level density
    ratio is verified to stay within ``e^eps``; otherwise the other branch is
    tried.

    Raises:
        InfeasibleError: if neither branch yields a usable gamma in [0, 1).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if d < 2:
        raise ValueError("d must be >= 2")
    if not 0.0 <= mu <= 1.0:
        raise ValueError("mu must lie in [0, 1]")
    eps_bar = mu * eps
    eps0 = (1.0 - mu) * eps
    p0 = 1.0 / (1.0 + math.exp(-eps0))

    candidates: list[tuple[float, int]] = []
    g1 = math.tanh(eps_bar / 2.0) * math.sqrt(math.pi / (2.0 * (d - 1)))
    if g1 < 1.0:
        candidates.append((g1, 1))
    g_lo = math.sqrt(2.0 / d)
    if g_lo < 1.0 and _branch2_rhs(g_lo, d) <= eps_bar:
        hi = math.nextafter(1.0, 0.0)
        if _branch2_rhs(hi, d) <= eps_bar:
            g2 = hi
        else:
            g2 = bisect(lambda g: _branch2_rhs(g, d) - eps_bar, g_lo, hi, tol=1e-15)
            # stay on the feasible side of the root
            while _branch2_rhs(g2, d) > eps_bar:
                g2 = math.nextafter(g2, 0.0)
        candidates.append((g2, 2))

    for gamma, branch in sorted(candidates, reverse=True):
        if _privunit_log_ratio(d, gamma, eps0) <= eps + _RATIO_TOL:
            return PrivUnitParams(eps=eps, d=d, mu=mu, gamma=gamma, p0=p0, branch=branch, flagged=d == 2)
    raise InfeasibleError(f"no feasible cap threshold for eps={eps}, d={d}, mu={mu}")


def privunit_scale_from_p(d: int, gamma: float, p: float) -> float:
    """Scale ``m`` of PrivUnit2 with the cap probability set to ``p``.

    ``m = (1-g^2)^a / (2^(d-2) (d-1)) * [p / (B(a,a) - B(tau;a,a)) - (1-p) / B(tau;a,a)]``
    with ``a = (d-1)/2`` and ``tau = (1+g)/2``, evaluated in logs. Equals
    ``E[<z, x>]`` when the cap is hit with probability ``p``.

    Raises:
        NumericalDegeneracyError: if the cap normalizer underflows to zero.
    """
    a = (d - 1) / 2.0
    log_in, log_out = _privunit_log_cap_masses(d, gamma)
    if not np.isfinite(log_in) or not np.isfinite(log_out):
        raise NumericalDegeneracyError(f"cap normalizer underflowed at d={d}, gamma={gamma}")
    log_c = a * math.log1p(-gamma * gamma) - (d - 2) * math.log(2.0) - math.log(d - 1) - log_beta(a, a)
    m = p * math.exp(log_c - log_in) - (1.0 - p) * math.exp(log_c - log_out)
    if not math.isfinite(m):
        raise NumericalDegeneracyError("PrivUnit scale is not finite")
    return m


def privunit_scale(params: PrivUnitParams) -> EstimatorScales:
    """Native debiasing scale ``m_pu`` (with ``b = 0``)."""
    return EstimatorScales(m=privunit_scale_from_p(params.d, params.gamma, params.p0), b=0.0, p_cap=params.p0)


def _orthogonal_directions(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(x.shape)
    v -= np.sum(v * x, axis=-1, keepdims=True) * x
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    return v


def _sample_cap_inner(params_d: int, gamma: float, inside: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inner products t = <z, x> for z uniform on the cap (inside) or its complement."""
    a = (params_d - 1) / 2.0
    tau = (1.0 + gamma) / 2.0
    log_in, log_out = _privunit_log_cap_masses(params_d, gamma)
    u = rng.random(inside.shape)
    with np.errstate(divide="ignore"):
        log_u = np.log(u)
    t = np.empty(inside.shape)
    if np.any(inside):
        # w = 1 - (1+t)/2 ~ Beta(a, a) truncated to [0, 1 - tau]
        w = inv_reg_inc_beta(None, a, a, hi=1.0 - tau, log_y=log_u[inside] + log_in)
        t[inside] = 1.0 - 2.0 * w
    out = ~inside
    if np.any(out):
        v = inv_reg_inc_beta(None, a, a, hi=tau, log_y=log_u[out] + log_out)
        t[out] = 2.0 * v - 1.0
    return t


def sample_privunit(x: np.ndarray, params: PrivUnitParams, rng: np.random.Generator) -> np.ndarray:
    """Draw PrivUnit2 outputs for one input ``(d,)`` or a batch ``(n, d)``."""
    x = np.asarray(x, dtype=float)
    inside = rng.random(x.shape[:-1]) < params.p0
    return _privunit_region(x, np.asarray(inside), params.d, params.gamma, rng)


def _privunit_region(x: np.ndarray, inside: np.ndarray, d: int, gamma: float, rng: np.random.Generator) -> np.ndarray:
    single = x.ndim == 1 and np.ndim(inside) == 0
    xb = np.atleast_2d(x)
    ins = np.atleast_1d(inside)
    n = max(ins.shape[0], xb.shape[0])
    ins = np.broadcast_to(ins, (n,))
    xb = np.broadcast_to(xb, (n, d))
    t = _sample_cap_inner(d, gamma, ins, rng)
    v = _orthogonal_directions(xb, rng)
    z = t[:, None] * xb + np.sqrt(np.maximum(0.0, 1.0 - t * t))[:, None] * v
    return z[0] if single else z


def privunit_estimate(z: np.ndarray, scales: EstimatorScales) -> np.ndarray:
    """Unbiased estimate ``z / m``."""
    if scales.m == 0:
        raise NumericalDegeneracyError("zero estimator scale")
    return np.asarray(z, dtype=float) / scales.m


# ------------------------------------------------------------ Subset Selection


def calibrate_ss(eps: float, d: int, s: int | None = None) -> SubsetParams:
    """Subset size ``s = ceil(d / (1 + e^eps))``.

    Values within 1e-4 of an integer are snapped before the ceiling.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if d < 2:
        raise ValueError("d must be >= 2")
    if s is None:
        raw = d / (1.0 + math.exp(eps))
        near = round(raw)
        s = near if abs(raw - near) <= _CEIL_SNAP else math.ceil(raw)
        s = min(max(int(s), 1), d)
    if not 1 <= s <= d:
        raise ValueError("s must lie in [1, d]")
    return SubsetParams(eps=eps, d=d, s=int(s))


def ss_in_probability(params: SubsetParams) -> float:
    """P(z_x = 1) = s e^eps / (s e^eps + d - s)."""
    d, s = params.d, params.s
    ee = math.exp(params.eps)
    return s * ee / (s * ee + d - s)


def ss_scales(params: SubsetParams) -> EstimatorScales:
    """Native debiasing constants ``(m_ss, b_ss)``."""
    d, s = params.d, params.s
    ee = math.exp(params.eps)
    den = (d - 1) * (s * (ee - 1.0) + d)
    m = s * (d - s) * (ee - 1.0) / den
    b = s * ((s - 1) * ee + d - s) / den
    return EstimatorScales(m=m, b=b, p_cap=ss_in_probability(params))


def _ss_region(x: np.ndarray, inside: np.ndarray, d: int, s: int, rng: np.random.Generator) -> np.ndarray:
    """s-hot vectors uniform among those containing x (inside) or avoiding it."""
    x = np.atleast_1d(np.asarray(x, dtype=np.int64))
    inside = np.atleast_1d(inside)
    n = max(x.shape[0], inside.shape[0])
    x = np.broadcast_to(x, (n,))
    inside = np.broadcast_to(inside, (n,))
    keys = rng.random((n, d))
    rows = np.arange(n)
    # x is forced first when inside and forced last otherwise
    keys[rows, x] = np.where(inside, -1.0, 2.0)
    chosen = np.argpartition(keys, s - 1, axis=1)[:, :s] if s < d else np.tile(np.arange(d), (n, 1))
    z = np.zeros((n, d), dtype=np.uint8)
    z[rows[:, None], chosen] = 1
    return z


def sample_ss(x, params: SubsetParams, rng: np.random.Generator) -> np.ndarray:
    """Draw Subset Selection outputs for one symbol or an array of symbols.

    The true symbol is included with probability ``s e^eps / (s e^eps + d - s)``
    and the remaining slots are filled uniformly from the other coordinates.
    """
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=np.int64))
    if np.any((xs < 0) | (xs >= params.d)):
        raise ValueError("symbol out of range")
    if params.s == params.d:
        z = np.ones((xs.shape[0], params.d), dtype=np.uint8)
    else:
        inside = rng.random(xs.shape[0]) < ss_in_probability(params)
        z = _ss_region(xs, inside, params.d, params.s, rng)
    return z[0] if scalar else z


def ss_estimate(z: np.ndarray, scales: EstimatorScales) -> np.ndarray:
    """Unbiased estimate ``(z - b) / m`` of the one-hot input."""
    if scales.m == 0:
        raise NumericalDegeneracyError("zero estimator scale")
    return (np.asarray(z, dtype=float) - scales.b) / scales.m


def one_hot(x: int, d: int) -> np.ndarray:
    v = np.zeros(d)
    v[x] = 1.0
    return v


# ------------------------------------------------------------ cap-based view


def _stable_id(*parts) -> int:
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class CapMechanism:
    """Two-level view of an LDP randomizer with uniform reference distribution.

    ``log_c1``/``log_c2`` are natural logs of ``q(z|x) / p(z)`` inside and
    outside the cap. Subclasses supply the cap predicate and samplers.
    """

    params: PrivUnitParams | SubsetParams
    log_c1: float
    log_c2: float
    cap_mass: float
    log_cap_mass: float = field(repr=False, default=0.0)
    log_cap_complement: float = field(repr=False, default=0.0)

    kind = "cap"

    @property
    def eps(self) -> float:
        return self.params.eps

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def c1(self) -> float:
        return math.exp(self.log_c1)

    @property
    def c2(self) -> float:
        return math.exp(self.log_c2)

    @property
    def log_ratio(self) -> float:
        return self.log_c1 - self.log_c2

    def p_in(self) -> float:
        """In-cap probability of the uncompressed mechanism, ``cap_mass * c1``."""
        return math.exp(self.log_cap_mass + self.log_c1)

    def _check(self) -> None:
        if self.log_c1 < self.log_c2:
            raise InfeasibleError("in-cap level below out-of-cap level")
        if self.log_ratio > self.eps + 1e-9:
            raise InfeasibleError("density ratio exceeds e^eps")
        if self.cap_mass < 0.5 * math.exp(-self.log_ratio) - 1e-15:
            raise InfeasibleError("cap mass below c2 / (2 c1)")

    # subclass interface
    @property
    def mech_id(self) -> int:
        raise NotImplementedError

    def contains(self, x, z) -> np.ndarray:
        raise NotImplementedError

    def sample_reference(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def sample_region(self, x, inside, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample(self, x, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def native_scales(self) -> EstimatorScales:
        raise NotImplementedError

    def estimate(self, z, scales: EstimatorScales) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class PrivUnitMechanism(CapMechanism):
    kind = "privunit"

    @property
    def mech_id(self) -> int:
        return _stable_id("privunit", self.d)

    def contains(self, x, z) -> np.ndarray:
        return np.asarray(z, dtype=float) @ np.asarray(x, dtype=float) >= self.params.gamma

    def sample_reference(self, rng, size):
        g = rng.standard_normal((size, self.d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return g

    def sample_region(self, x, inside, rng):
        return _privunit_region(np.asarray(x, dtype=float), np.asarray(inside), self.d, self.params.gamma, rng)

    def sample(self, x, rng):
        return sample_privunit(x, self.params, rng)

    def native_scales(self):
        return privunit_scale(self.params)

    def scales_for_p(self, p: float) -> EstimatorScales:
        return EstimatorScales(m=privunit_scale_from_p(self.d, self.params.gamma, p), b=0.0, p_cap=p)

    def estimate(self, z, scales):
        return privunit_estimate(z, scales)


@dataclass(frozen=True)
class SubsetMechanism(CapMechanism):
    kind = "ss"

    @property
    def s(self) -> int:
        return self.params.s

    @property
    def mech_id(self) -> int:
        return _stable_id("ss", self.d, self.s)

    def contains(self, x, z) -> np.ndarray:
        z = np.asarray(z)
        return z[..., int(x)] == 1

    def sample_reference(self, rng, size):
        d, s = self.d, self.s
        z = np.zeros((size, d), dtype=np.uint8)
        if s == d:
            z[:] = 1
            return z
        if 4 * s <= d:
            # small subsets: draw indices and redraw rows with repeats
            chosen = rng.integers(0, d, size=(size, s))
            while s > 1:
                srt = np.sort(chosen, axis=1)
                bad = np.nonzero((srt[:, 1:] == srt[:, :-1]).any(axis=1))[0]
                if bad.size == 0:
                    break
                chosen[bad] = rng.integers(0, d, size=(bad.size, s))
        else:
            chosen = np.argpartition(rng.random((size, d)), s - 1, axis=1)[:, :s]
        z[np.arange(size)[:, None], chosen] = 1
        return z

    def sample_region(self, x, inside, rng):
        z = _ss_region(x, np.asarray(inside), self.d, self.s, rng)
        return z[0] if np.ndim(x) == 0 and np.ndim(inside) == 0 else z

    def sample(self, x, rng):
        return sample_ss(x, self.params, rng)

    def native_scales(self):
        return ss_scales(self.params)

    def estimate(self, z, scales):
        return ss_estimate(z, scales)


def as_cap_mechanism(params: PrivUnitParams | SubsetParams) -> CapMechanism:
    """Build the two-level view of a calibrated mechanism.

    Levels are relative to the uniform reference:
    PrivUnit2 has ``c1 = p0 / cap`` and ``c2 = (1 - p0) / (1 - cap)`` with
    ``cap = I_{1-gamma^2}((d-1)/2, 1/2) / 2``; Subset Selection has
    ``c1 = e^eps / ((s/d) e^eps + 1 - s/d)``, ``c2 = c1 e^-eps`` and ``cap = s/d``.

    Raises:
        InfeasibleError: if the levels violate ``c1 >= c2``, ``c1/c2 <= e^eps``
            or ``cap >= c2 / (2 c1)``.
    """
    if isinstance(params, PrivUnitParams):
        log_in, log_out = _privunit_log_cap_masses(params.d, params.gamma)
        if not np.isfinite(log_in):
            raise NumericalDegeneracyError("empty cap")
        log_c1 = math.log(params.p0) - log_in
        log_c2 = math.log1p(-params.p0) - log_out if params.p0 < 1.0 else -math.inf
        mech = PrivUnitMechanism(params, log_c1, log_c2, math.exp(log_in), log_in, log_out)
    elif isinstance(params, SubsetParams):
        d, s = params.d, params.s
        frac = s / d
        log_norm = math.log(frac * math.exp(params.eps) + 1.0 - frac)
        log_c1 = params.eps - log_norm
        log_c2 = -log_norm
        log_out = math.log1p(-frac) if s < d else -math.inf
        mech = SubsetMechanism(params, log_c1, log_c2, frac, math.log(frac), log_out)
    else:
        raise TypeError(f"unsupported mechanism parameters {type(params)!r}")
    mech._check()
    return mech
