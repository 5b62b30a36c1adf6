"""Minimal random coding over a shared candidate pool.

A user and the server share a seed. Both can regenerate ``N`` candidates drawn
from the uniform reference distribution; the user samples an index ``K`` with
probability proportional to the importance weight ``q(z_k|x) / p(z_k)`` and
sends ``ceil(log2 N)`` bits. For a cap-based mechanism the weights take only
the two values ``c1`` and ``c2``, so the index law depends on the pool only
through which candidates fall in the cap.

Candidate ``k`` of a pool is produced by a counter-based generator keyed on
``(seed, mechanism id)`` with the block ``k // BLOCK`` in the counter, so a
single candidate can be regenerated without the rest of the pool.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, NumericalDegeneracyError
from .mechanisms import (
    CapMechanism,
    EstimatorScales,
    PrivUnitParams,
    SubsetParams,
    as_cap_mechanism,
    privunit_scale_from_p,
)
from .numerics import expect_over_binomial

BLOCK = 128
MAX_CANDIDATES = 2**20
_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class CandidatePool:
    """Shared candidates ``z_0 .. z_{N-1}``.

    Attributes:
        seed: shared 64-bit seed.
        count: number of candidates N.
        mech_id: stable id of the reference distribution.
        candidates: array with one candidate per row.
    """

    seed: int
    count: int
    mech_id: int
    candidates: np.ndarray


@dataclass(frozen=True)
class IndexDistribution:
    """Law of the transmitted index.

    Attributes:
        probs: probability of each index, sums to one.
        theta: fraction of candidates in the input's cap.
        kind: ``"mrc"`` or ``"mmrc"``.
        in_cap: cap membership of each candidate.
        t_l: lower clamp threshold (mmrc only).
        t_u: upper clamp threshold (mmrc only).
    """

    probs: np.ndarray
    theta: float
    kind: str
    in_cap: np.ndarray
    t_l: float | None = None
    t_u: float | None = None


@dataclass(frozen=True)
class CompressedMessage:
    """A transmitted index ``K`` (0-based) and its width in bits.

    Serialized as one header byte holding ``bit_width`` followed by
    ``ceil(bit_width / 8)`` little-endian payload bytes.
    """

    index: int
    bit_width: int

    def __post_init__(self):
        if self.index < 0 or self.index >= (1 << self.bit_width):
            raise ValueError(f"index {self.index} does not fit in {self.bit_width} bits")

    def to_bytes(self) -> bytes:
        n_bytes = (self.bit_width + 7) // 8
        return bytes([self.bit_width]) + self.index.to_bytes(n_bytes, "little")

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedMessage":
        if len(data) < 1:
            raise ValueError("empty message")
        width = data[0]
        n_bytes = (width + 7) // 8
        if len(data) != 1 + n_bytes:
            raise ValueError("payload length does not match width header")
        return cls(int.from_bytes(data[1:], "little"), width)


def bit_width(n: int) -> int:
    """``ceil(log2 n)`` computed on integers."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return (n - 1).bit_length()


# ------------------------------------------------------------------ pools


def _block_rng(seed: int, mech_id: int, block: int) -> np.random.Generator:
    bitgen = np.random.Philox(
        key=np.array([seed & _SEED_MASK, mech_id & _SEED_MASK], dtype=np.uint64),
        counter=np.array([0, 0, block, 0], dtype=np.uint64),
    )
    return np.random.Generator(bitgen)


def _block(mech: CapMechanism, seed: int, block: int) -> np.ndarray:
    return mech.sample_reference(_block_rng(seed, mech.mech_id, block), BLOCK)


def generate_pool(mech: CapMechanism, seed: int, n: int) -> CandidatePool:
    """Regenerable pool of ``n`` uniform reference samples.

    The first ``n`` candidates do not depend on ``n``, so pools of different
    sizes from the same seed are nested.
    """
    if n < 1:
        raise ValueError("pool size must be >= 1")
    if n > MAX_CANDIDATES:
        raise InfeasibleError(f"pool size {n} exceeds 2^20")
    n_blocks = -(-n // BLOCK)
    cands = np.concatenate([_block(mech, seed, b) for b in range(n_blocks)])[:n]
    return CandidatePool(seed=int(seed), count=int(n), mech_id=mech.mech_id, candidates=cands)


def pool_candidate(mech: CapMechanism, seed: int, k: int) -> np.ndarray:
    """Candidate ``k`` of the pool for ``seed``, regenerating only its block."""
    if k < 0:
        raise IndexError("negative candidate index")
    return _block(mech, seed, k // BLOCK)[k % BLOCK]


# ------------------------------------------------------- index distributions


def mrc_level_probs(mech: CapMechanism, n_in, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-index probability of an in-cap and an out-of-cap candidate.

    ``c_j / (n_in c1 + (n - n_in) c2)`` in log space, vectorized over ``n_in``.
    """
    n_in = np.asarray(n_in, dtype=float)
    with np.errstate(divide="ignore"):
        log_den = np.logaddexp(np.log(n_in) + mech.log_c1, np.log(n - n_in) + mech.log_c2)
    return np.exp(mech.log_c1 - log_den), np.exp(mech.log_c2 - log_den)


def distribution_from_mask(mech: CapMechanism, in_cap: np.ndarray) -> IndexDistribution:
    """MRC index law for a given cap-membership pattern."""
    in_cap = np.asarray(in_cap, dtype=bool)
    n = in_cap.shape[0]
    n_in = int(in_cap.sum())
    p_in, p_out = mrc_level_probs(mech, n_in, n)
    probs = np.where(in_cap, p_in, p_out)
    return IndexDistribution(probs=probs, theta=n_in / n, kind="mrc", in_cap=in_cap)


def mrc_distribution(mech: CapMechanism, pool: CandidatePool, x) -> IndexDistribution:
    """Index law ``pi(k) ∝ q(z_k|x) / p(z_k)`` for input ``x``."""
    if pool.count < 1:
        raise ValueError("empty pool")
    return distribution_from_mask(mech, mech.contains(x, pool.candidates))


def encode(dist: IndexDistribution, rng: np.random.Generator) -> CompressedMessage:
    """Sample ``K`` from ``dist`` with the user's private stream."""
    cdf = np.cumsum(dist.probs)
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    k = min(k, len(cdf) - 1)
    return CompressedMessage(k, bit_width(len(cdf)))


def decode(pool: CandidatePool, msg: CompressedMessage) -> np.ndarray:
    """Server-side lookup of ``z_K``."""
    if not 0 <= msg.index < pool.count:
        raise IndexError(f"index {msg.index} out of range for pool of {pool.count}")
    return pool.candidates[msg.index]


def decode_from_seed(mech: CapMechanism, seed: int, n: int, msg: CompressedMessage) -> np.ndarray:
    """Like :func:`decode` but without materializing the pool."""
    if not 0 <= msg.index < n:
        raise IndexError(f"index {msg.index} out of range for pool of {n}")
    return pool_candidate(mech, seed, msg.index)


def log_weight_bound(mech: CapMechanism) -> float:
    """``max |ln(q(z|x) / p(z))|`` over both density levels."""
    return max(abs(mech.log_c1), abs(mech.log_c2))


# ------------------------------------------------------------ debiasing


def _mrc_cap_probability(mech: CapMechanism, n: int) -> float:
    r = math.exp(mech.log_ratio)
    return expect_over_binomial(n, mech.cap_mass, lambda th: th * r / (th * r + 1.0 - th))


def _ss_affine_scales(d: int, s: int, p_cap: float) -> EstimatorScales:
    b = (s - p_cap) / (d - 1)
    return EstimatorScales(m=p_cap - b, b=b, p_cap=p_cap)


@functools.lru_cache(maxsize=256)
def mrc_pu_scales(params: PrivUnitParams, n: int) -> EstimatorScales:
    """PrivUnit2 scale with the cap probability replaced by
    ``p_mrc = E[c1 th / (c1 th + c2 (1 - th))]``, ``th ~ Binom(n, cap) / n``."""
    mech = as_cap_mechanism(params)
    p = _mrc_cap_probability(mech, n)
    return EstimatorScales(m=privunit_scale_from_p(params.d, params.gamma, p), b=0.0, p_cap=p)


@functools.lru_cache(maxsize=256)
def mrc_ss_scales(params: SubsetParams, n: int) -> EstimatorScales:
    """Subset Selection ``(m_mrc, b_mrc)`` from the exact binomial expectation
    ``E = E[e^eps th / (e^eps th + 1 - th)]``: ``b = (s - E)/(d - 1)``, ``m = E - b``."""
    mech = as_cap_mechanism(params)
    return _ss_affine_scales(params.d, params.s, _mrc_cap_probability(mech, n))


def mrc_scales(params: PrivUnitParams | SubsetParams, n: int) -> EstimatorScales:
    if isinstance(params, PrivUnitParams):
        return mrc_pu_scales(params, n)
    return mrc_ss_scales(params, n)


def debias(kind: str, z, scales: EstimatorScales) -> np.ndarray:
    """``(z - b) / m`` for either mechanism family."""
    if kind not in ("privunit", "ss"):
        raise ValueError(f"unknown mechanism kind {kind!r}")
    if abs(scales.m) < 1e-15:
        raise NumericalDegeneracyError("zero estimator scale")
    return (np.asarray(z, dtype=float) - scales.b) / scales.m


def mrc_estimate(kind: str, z_k, scales: EstimatorScales) -> np.ndarray:
    """Debiased estimate from a decoded MRC candidate."""
    return debias(kind, z_k, scales)


# --------------------------------------------------------- calculators


@dataclass(frozen=True)
class MrcCandidateCount:
    """Candidate count for the MRC utility guarantee.

    Attributes:
        n: ``ceil(exp(eps + 4 c eps ln 2))``.
        alpha: confidence term; the guarantee holds w.p. at least ``1 - 2 alpha``.
        vacuous: True when ``2 alpha >= 1``.
    """

    n: int
    alpha: float
    vacuous: bool


def mrc_candidate_count(eps: float, c: float = 0.0, max_n: int = MAX_CANDIDATES) -> MrcCandidateCount:
    """``N = 2^((log2 e + 4c) eps)`` and ``alpha = sqrt(2^(-c eps) + 2^(1 - c^2 ln 2))``.

    Evaluated in nats: ``N = exp(eps + 4 c eps ln 2)``.

    Raises:
        InfeasibleError: if ``N`` exceeds ``max_n``.
    """
    if eps < 0 or c < 0:
        raise ValueError("eps and c must be nonnegative")
    ln2 = math.log(2.0)
    log_n = eps + 4.0 * c * eps * ln2
    if log_n > math.log(max_n):
        raise InfeasibleError(f"N = 2^{log_n / ln2:.2f} exceeds the limit 2^{math.log2(max_n):.0f}")
    n = math.ceil(math.exp(log_n) - 1e-9)
    alpha = math.sqrt(math.exp(-c * eps * ln2) + 2.0 * math.exp(-c * c * ln2 * ln2))
    return MrcCandidateCount(n=max(n, 1), alpha=alpha, vacuous=2.0 * alpha >= 1.0)


@dataclass(frozen=True)
class ApproxDpParams:
    """Approximate-DP guarantee ``(eps + eps0, delta)`` of MRC.

    Attributes:
        eps: budget of the underlying mechanism.
        c0: slack constant.
        delta: failure probability.
        a0: ``e^-c0 sqrt(ln(2/delta) / 2)``.
        eps0: ``ln((1 + a0) / (1 - a0))``.
        eps_total: ``eps + eps0``.
        n_required: ``ceil(exp(2 eps + 2 c0))``.
    """

    eps: float
    c0: float
    delta: float
    a0: float
    eps0: float
    eps_total: float
    n_required: int


def approx_dp_params(eps: float, c0: float, delta: float) -> ApproxDpParams:
    """Raises InfeasibleError when ``a0 >= 1`` (delta too small for this c0)."""
    if c0 < 0:
        raise ValueError("c0 must be nonnegative")
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    a0 = math.exp(-c0) * math.sqrt(0.5 * math.log(2.0 / delta))
    if a0 >= 1.0:
        raise InfeasibleError(f"a0 = {a0:.4g} >= 1; increase c0 or delta")
    eps0 = math.log((1.0 + a0) / (1.0 - a0))
    n_req = math.ceil(math.exp(2.0 * eps + 2.0 * c0) - 1e-9)
    return ApproxDpParams(eps, c0, delta, a0, eps0, eps + eps0, n_req)
