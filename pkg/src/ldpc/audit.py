"""Privacy and divergence checks for the raw mechanisms and both codecs.

Pure LDP is certified by the worst log-ratio ``ln(pi_x(k) / pi_x'(k))`` of
the index law across inputs, either by enumerating every pool (small Subset
Selection instances) or over sampled pools. Ratios are compared in logs with
an absolute slack of 1e-9.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import StateSpaceTooLargeError
from .mechanisms import CapMechanism, SubsetMechanism
from .mmrc import mmrc_distribution, mmrc_level_probs
from .mrc import ApproxDpParams, CandidatePool, mrc_distribution, mrc_level_probs

MAX_EXHAUSTIVE_STATES = 10**7
LOG_TOL = 1e-9
CODECS = ("raw", "mrc", "mmrc")


@dataclass(frozen=True)
class LdpReport:
    """Outcome of a pure-LDP certification.

    Attributes:
        codec: ``raw``, ``mrc`` or ``mmrc``.
        mech: mechanism kind.
        eps_claimed: bound under test (``2 eps`` for mrc, ``eps`` otherwise).
        max_log_ratio: worst observed ``ln(pi_x(k) / pi_x'(k))``.
        mode: ``exhaustive`` or ``sampled``.
        trials: pools (or outputs) examined.
        seed: sampling seed, None for exhaustive runs.
        passed: ``max_log_ratio <= eps_claimed + 1e-9``.
    """

    codec: str
    mech: str
    eps_claimed: float
    max_log_ratio: float
    mode: str
    trials: int
    seed: int | None
    passed: bool

    def to_json(self) -> str:
        doc = asdict(self)
        doc["pass"] = doc.pop("passed")
        return json.dumps(doc, sort_keys=True)


def claimed_eps(codec: str, eps: float) -> float:
    if codec not in CODECS:
        raise ValueError(f"unknown codec {codec!r}")
    return 2.0 * eps if codec == "mrc" else eps


def _level_log_probs(mech: CapMechanism, codec: str, n_in: np.ndarray, n: int):
    if codec == "mrc":
        p_in, p_out = mrc_level_probs(mech, n_in, n)
    else:
        p_in, p_out = mmrc_level_probs(mech, n_in, n)
    with np.errstate(divide="ignore"):
        return np.log(p_in), np.log(p_out)


def _worst_ratio_from_membership(mech: CapMechanism, codec: str, member: np.ndarray) -> float:
    """Worst log-ratio over a batch of pools.

    ``member[p, k, x]`` says whether candidate ``k`` of pool ``p`` is in the
    cap of input ``x``.
    """
    n = member.shape[1]
    n_in = member.sum(axis=1)
    log_in, log_out = _level_log_probs(mech, codec, n_in, n)
    logp = np.where(member, log_in[:, None, :], log_out[:, None, :])
    spread = logp.max(axis=2) - logp.min(axis=2)
    return float(spread.max())


def _ss_outputs(d: int, s: int) -> np.ndarray:
    combos = list(itertools.combinations(range(d), s))
    z = np.zeros((len(combos), d), dtype=np.uint8)
    for i, c in enumerate(combos):
        z[i, list(c)] = 1
    return z


def _raw_report(mech: CapMechanism, mode: str, trials: int, seed: int | None) -> LdpReport:
    claim = claimed_eps("raw", mech.eps)
    if isinstance(mech, SubsetMechanism) and mode == "exhaustive":
        outputs = _ss_outputs(mech.d, mech.s)
        states = outputs.shape[0] * mech.d * mech.d
        if states > MAX_EXHAUSTIVE_STATES:
            raise StateSpaceTooLargeError(f"{states} states exceed {MAX_EXHAUSTIVE_STATES}")
        logq = np.where(outputs == 1, mech.log_c1, mech.log_c2)
        worst = float((logq.max(axis=1) - logq.min(axis=1)).max())
        return LdpReport("raw", mech.kind, claim, worst, mode, outputs.shape[0], None, worst <= claim + LOG_TOL)
    if mode == "exhaustive":
        raise StateSpaceTooLargeError("continuous output space cannot be enumerated")
    rng = np.random.default_rng(seed)
    z = mech.sample_reference(rng, trials)
    xs = _sample_inputs(mech, rng, z, 8)
    member = np.stack([mech.contains(x, z) for x in xs], axis=1)
    logq = np.where(member, mech.log_c1, mech.log_c2)
    worst = float((logq.max(axis=1) - logq.min(axis=1)).max())
    return LdpReport("raw", mech.kind, claim, worst, mode, trials, seed, worst <= claim + LOG_TOL)


def _sample_inputs(mech: CapMechanism, rng: np.random.Generator, cands: np.ndarray, n_random: int) -> list:
    """Inputs to compare on a pool: every symbol for SS; for PrivUnit2 random
    directions plus a few candidates (the latter maximize cap overlap)."""
    if isinstance(mech, SubsetMechanism):
        return list(range(mech.d))
    g = rng.standard_normal((n_random, mech.d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return list(g) + list(cands[: min(4, len(cands))])


def certify_pure_ldp(
    codec: str,
    mech: CapMechanism,
    n: int,
    mode: str = "exhaustive",
    trials: int = 1000,
    seed: int | None = 0,
) -> LdpReport:
    """Worst-case log likelihood ratio of a codec's index law (or the raw mechanism).

    Exhaustive mode enumerates every pool in ``Z^n`` for Subset Selection and
    every pair of inputs; it refuses instances with more than 1e7 states.
    Sampled mode draws ``trials`` pools from ``seed``.

    Raises:
        StateSpaceTooLargeError: for an exhaustive run that is too large.
    """
    if mode not in ("exhaustive", "sampled"):
        raise ValueError(f"unknown mode {mode!r}")
    if codec == "raw":
        return _raw_report(mech, mode, trials, seed)
    claim = claimed_eps(codec, mech.eps)
    if mode == "exhaustive":
        if not isinstance(mech, SubsetMechanism):
            raise StateSpaceTooLargeError("exhaustive certification needs a finite output space")
        outputs = _ss_outputs(mech.d, mech.s)
        n_out = outputs.shape[0]
        states = n_out**n * mech.d**2
        if states > MAX_EXHAUSTIVE_STATES:
            raise StateSpaceTooLargeError(f"{states} states exceed {MAX_EXHAUSTIVE_STATES}")
        n_pools = n_out**n
        member_all = outputs.astype(bool)
        worst = -math.inf
        chunk = max(1, 200_000 // (n * mech.d))
        for start in range(0, n_pools, chunk):
            ids = np.arange(start, min(start + chunk, n_pools))
            digits = (ids[:, None] // (n_out ** np.arange(n)[None, :])) % n_out
            worst = max(worst, _worst_ratio_from_membership(mech, codec, member_all[digits]))
        return LdpReport(codec, mech.kind, claim, worst, mode, n_pools, None, worst <= claim + LOG_TOL)

    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(trials):
        cands = mech.sample_reference(rng, n)
        xs = _sample_inputs(mech, rng, cands, 8)
        member = np.stack([mech.contains(x, cands) for x in xs], axis=1)[None]
        worst = max(worst, _worst_ratio_from_membership(mech, codec, member))
    return LdpReport(codec, mech.kind, claim, worst, mode, trials, seed, worst <= claim + LOG_TOL)


@dataclass(frozen=True)
class ApproxLdpReport:
    """Sampled check of an approximate-DP guarantee for MRC.

    Attributes:
        eps_total: ratio bound ``eps + eps0`` under test.
        delta: allowed failure probability.
        trials: pools sampled.
        violations: pools where some ratio exceeded ``e^eps_total``.
        allowance: ``delta + 4 sqrt(delta (1 - delta) / trials)``.
        precondition_met: ``n >= n_required`` for the guarantee.
        seed: sampling seed.
        passed: ``violations / trials <= allowance``.
    """

    eps_total: float
    delta: float
    trials: int
    violations: int
    allowance: float
    precondition_met: bool
    seed: int
    passed: bool


def check_approx_ldp(
    mech: CapMechanism, n: int, params: ApproxDpParams, trials: int = 1000, seed: int = 0
) -> ApproxLdpReport:
    """Fraction of sampled MRC pools that break the ``e^(eps + eps0)`` ratio."""
    if trials < 1000:
        raise ValueError("trials must be >= 1000")
    rng = np.random.default_rng(seed)
    bound = params.eps_total + LOG_TOL
    violations = 0
    for _ in range(trials):
        cands = mech.sample_reference(rng, n)
        xs = _sample_inputs(mech, rng, cands, 8)
        member = np.stack([mech.contains(x, cands) for x in xs], axis=1)[None]
        if _worst_ratio_from_membership(mech, "mrc", member) > bound:
            violations += 1
    d = params.delta
    allowance = d + 4.0 * math.sqrt(d * (1.0 - d) / trials)
    return ApproxLdpReport(
        eps_total=params.eps_total,
        delta=d,
        trials=trials,
        violations=violations,
        allowance=allowance,
        precondition_met=n >= params.n_required,
        seed=seed,
        passed=violations / trials <= allowance,
    )


def kl_from_counts(mech: CapMechanism, n_in, n: int) -> np.ndarray:
    """KL(pi_mrc || pi_mmrc) in nats given the in-cap count, vectorized."""
    n_in = np.asarray(n_in, dtype=float)
    a_in, a_out = mrc_level_probs(mech, n_in, n)
    b_in, b_out = mmrc_level_probs(mech, n_in, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_in = np.where(n_in > 0, n_in * a_in * np.log(a_in / b_in), 0.0)
        t_out = np.where(n_in < n, (n - n_in) * a_out * np.log(a_out / b_out), 0.0)
    return np.maximum(t_in + t_out, 0.0)


def kl_between_codecs(mech: CapMechanism, pool: CandidatePool, x) -> float:
    """``sum_k pi_mrc(k) ln(pi_mrc(k) / pi_mmrc(k))`` in nats on one pool."""
    p = mrc_distribution(mech, pool, x).probs
    q = mmrc_distribution(mech, pool, x).probs
    mask = p > 0
    return max(0.0, float(np.sum(p[mask] * np.log(p[mask] / q[mask]))))


def tv_between_codecs(mech: CapMechanism, pool: CandidatePool, x) -> float:
    """Total variation distance between the two index laws on one pool."""
    p = mrc_distribution(mech, pool, x).probs
    q = mmrc_distribution(mech, pool, x).probs
    return 0.5 * float(np.abs(p - q).sum())

