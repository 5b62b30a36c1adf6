"""Modified minimal random coding: MRC with per-index probabilities clamped.

Clamping every index probability into ``[t_l, t_u]`` with
``t_u / t_l = c1 / c2`` makes the index law itself ``eps``-LDP. The clamps use
the analytic cap mass ``E[theta]``, so they are the same for every user.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError
from .mechanisms import (
    CapMechanism,
    EstimatorScales,
    PrivUnitParams,
    SubsetParams,
    as_cap_mechanism,
    privunit_scale_from_p,
)
from .mrc import (
    CandidatePool,
    IndexDistribution,
    _ss_affine_scales,
    debias,
    mrc_distribution,
    mrc_level_probs,
)
from .numerics import bisect, expect_over_binomial


@dataclass(frozen=True)
class Thresholds:
    """Clamp bounds for the index law.

    Attributes:
        t_l: lower bound ``c2 / (N D)``.
        t_u: upper bound ``c1 / (N D)``.
        expected_theta: analytic cap mass; ``D = E[theta] c1 + (1 - E[theta]) c2``.
    """

    t_l: float
    t_u: float
    expected_theta: float


@dataclass(frozen=True)
class MmrcScales(EstimatorScales):
    """Debiasing constants for MMRC; ``p_cap`` is the clamped in-cap probability."""


def _log_mixture(mech: CapMechanism) -> float:
    """ln(E[theta] c1 + (1 - E[theta]) c2)."""
    return float(np.logaddexp(mech.log_cap_mass + mech.log_c1, mech.log_cap_complement + mech.log_c2))


def thresholds(mech: CapMechanism, n: int) -> Thresholds:
    """Upper and lower per-index bounds for a pool of ``n`` candidates."""
    if n < 1:
        raise ValueError("n must be >= 1")
    base = math.log(n) + _log_mixture(mech)
    return Thresholds(
        t_l=math.exp(mech.log_c2 - base),
        t_u=math.exp(mech.log_c1 - base),
        expected_theta=mech.cap_mass,
    )


def mmrc_level_probs(mech: CapMechanism, n_in, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Clamped per-index probabilities for in-cap and out-of-cap candidates.

    Vectorized over the in-cap count ``n_in``. The upper clamp applies when the
    largest probability exceeds ``t_u``; otherwise the lower clamp applies when
    the smallest falls below ``t_l``. An empty side keeps its unclamped value,
    which is never used.
    """
    n_in = np.asarray(n_in, dtype=float)
    th = thresholds(mech, n)
    p_in, p_out = mrc_level_probs(mech, n_in, n)
    has_in = n_in > 0
    has_out = n_in < n
    p_max = np.where(has_in, p_in, p_out)
    p_min = np.where(has_out, p_out, p_in)
    upper = p_max > th.t_u
    lower = ~upper & (p_min < th.t_l)
    n_out = n - n_in
    with np.errstate(divide="ignore", invalid="ignore"):
        out_after_upper = (1.0 - n_in * th.t_u) / n_out
        in_after_lower = (1.0 - n_out * th.t_l) / n_in
    new_in = np.where(upper, th.t_u, np.where(lower & has_in, in_after_lower, p_in))
    new_out = np.where(lower, th.t_l, np.where(upper & has_out, out_after_upper, p_out))
    return new_in, new_out


def mmrc_distribution_from_mask(mech: CapMechanism, in_cap: np.ndarray) -> IndexDistribution:
    in_cap = np.asarray(in_cap, dtype=bool)
    n = in_cap.shape[0]
    n_in = int(in_cap.sum())
    p_in, p_out = mmrc_level_probs(mech, n_in, n)
    th = thresholds(mech, n)
    return IndexDistribution(
        probs=np.where(in_cap, p_in, p_out),
        theta=n_in / n,
        kind="mmrc",
        in_cap=in_cap,
        t_l=th.t_l,
        t_u=th.t_u,
    )


def mmrc_distribution(mech: CapMechanism, pool: CandidatePool, x) -> IndexDistribution:
    """Clamp the MRC index law for input ``x`` into ``[t_l, t_u]``."""
    base = mrc_distribution(mech, pool, x)
    return mmrc_distribution_from_mask(mech, base.in_cap)


def clamped_cap_probability(mech: CapMechanism, n: int) -> float:
    """``P(z_K in cap)`` under MMRC, as an exact binomial expectation.

    With ``r = c1/c2`` and ``D = E r + 1 - E`` (``E = E[theta]``) the in-cap
    mass given ``theta`` is ``theta r / D`` for ``theta <= E`` and
    ``(E r + theta - E) / D`` above it.
    """
    r = math.exp(mech.log_ratio)
    e = mech.cap_mass
    den = e * r + 1.0 - e

    def f(th):
        return np.where(th <= e, th * r, e * r + th - e) / den

    return expect_over_binomial(n, e, f)


@functools.lru_cache(maxsize=256)
def mmrc_pu_scales(params: PrivUnitParams, n: int) -> MmrcScales:
    """PrivUnit2 scale with the cap probability replaced by ``p_mmrc``."""
    p = clamped_cap_probability(as_cap_mechanism(params), n)
    return MmrcScales(m=privunit_scale_from_p(params.d, params.gamma, p), b=0.0, p_cap=p)


@functools.lru_cache(maxsize=256)
def mmrc_ss_scales(params: SubsetParams, n: int) -> MmrcScales:
    """Subset Selection ``m = (d E - s)/(d - 1)``, ``b = (s - E)/(d - 1)`` with
    ``E = p_mmrc``."""
    p = clamped_cap_probability(as_cap_mechanism(params), n)
    s = _ss_affine_scales(params.d, params.s, p)
    return MmrcScales(m=s.m, b=s.b, p_cap=p)


def mmrc_scales(params: PrivUnitParams | SubsetParams, n: int) -> MmrcScales:
    if isinstance(params, PrivUnitParams):
        return mmrc_pu_scales(params, n)
    return mmrc_ss_scales(params, n)


def mmrc_estimate(kind: str, z_k, scales: EstimatorScales) -> np.ndarray:
    """Debiased estimate from a decoded MMRC candidate."""
    return debias(kind, z_k, scales)


# ------------------------------------------------------------ calculators


def mmrc_pu_candidate_count(eps: float, p0: float, lam: float) -> int:
    """Smallest ``N >= (e^(2 eps)/2) (2(1+l)/(l(p0-1/2)))^2 ln(4(1+l)/(l(p0-1/2)))``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if not p0 > 0.5:
        raise InfeasibleError("p0 must exceed 1/2")
    slack = lam * (p0 - 0.5)
    bound = math.exp(2.0 * eps) / 2.0 * (2.0 * (1.0 + lam) / slack) ** 2 * math.log(4.0 * (1.0 + lam) / slack)
    return max(1, math.ceil(bound))


def mmrc_ss_candidate_count(eps: float, lam: float) -> int:
    """Smallest ``N >= 2 (e^eps+1)^2 (1+l)^2 / (0.24 l)^2 ln(8(1+l)/(0.24 l))``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    q = 0.24 * lam
    bound = 2.0 * (math.exp(eps) + 1.0) ** 2 * (1.0 + lam) ** 2 / q**2 * math.log(8.0 * (1.0 + lam) / q)
    return max(1, math.ceil(bound))


def n_from_rho(eps: float, rho: float) -> float:
    """``N(rho) = 2 (e^eps - 1)^2 / rho^2 ln(2 / rho)``, decreasing on (0, 1)."""
    return 2.0 * math.expm1(eps) ** 2 / rho**2 * math.log(2.0 / rho)


def rho_from_n(eps: float, n: float) -> float:
    """Solve ``N(rho) = n`` for ``rho`` in (0, 1) by bisection (to 1e-10 or better).

    Raises:
        InfeasibleError: if ``n < N(1) = 2 (e^eps - 1)^2 ln 2``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if n < n_from_rho(eps, 1.0):
        raise InfeasibleError(f"N={n} is below the minimum {n_from_rho(eps, 1.0):.4g}; no rho in (0, 1)")
    return bisect(lambda r: n_from_rho(eps, r) - n, 1e-300 ** 0.25, 1.0, tol=1e-14)


def max_sq_distance(params: PrivUnitParams | SubsetParams, scales: EstimatorScales | None = None) -> float:
    """Bound on ``||z - x||^2`` used in the excess-error diagnostic.

    With ``scales`` the bound is ``4 / m^2`` for the debiased outputs;
    without, it is the raw-output diameter (4 on the sphere, ``s + 1`` for
    s-hot against one-hot vectors).
    """
    if scales is not None:
        return 4.0 / scales.m**2
    if isinstance(params, PrivUnitParams):
        return 4.0
    return float(params.s + 1)


def excess_error_bound(eps: float, n: int, max_sq: float) -> float:
    """``sqrt(rho (1 + eps) / 2) * max_sq`` with ``rho = rho_from_n(eps, n)``.

    A diagnostic on how much the clamping can add to the squared error.
    """
    return math.sqrt(rho_from_n(eps, n) * (1.0 + eps) / 2.0) * max_sq


# ---------------------------------------------------------- law simulator


def release_probability(mech: CapMechanism, codec: str, n_in, n: int) -> np.ndarray:
    """P(released output lies in the cap | ``n_in`` of ``n`` candidates in the cap)."""
    if codec == "raw":
        return np.full(np.shape(n_in), mech.p_in())
    if codec == "mrc":
        p_in, _ = mrc_level_probs(mech, n_in, n)
    elif codec == "mmrc":
        p_in, _ = mmrc_level_probs(mech, n_in, n)
    else:
        raise ValueError(f"unknown codec {codec!r}")
    n_in = np.asarray(n_in, dtype=float)
    return np.clip(np.where(n_in > 0, n_in * p_in, 0.0), 0.0, 1.0)


def simulate_release(mech: CapMechanism, codec: str, x, n: int, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` decoded outputs with the same law as the full protocol.

    Given the in-cap count ``M ~ Binom(n, cap)``, the index lands in the cap
    with probability ``M * pi_in(M)``, and the decoded candidate is then
    uniform on the cap or on its complement. Sampling that directly avoids
    materializing ``n`` candidates per draw.
    """
    if codec == "raw":
        inside = rng.random(size) < mech.p_in()
    else:
        m = rng.binomial(n, mech.cap_mass, size=size)
        inside = rng.random(size) < release_probability(mech, codec, m, n)
    return mech.sample_region(x, inside, rng)
