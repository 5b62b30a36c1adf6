"""Distributed mean and frequency estimation with private, compressed reports.

Each user privatizes one input, optionally compresses it with MRC or MMRC over
a user-specific shared seed, and the server averages the debiased reports.

Two execution modes produce the same output law:

* ``protocol`` materializes each user's pool, samples the index and decodes
  it from the shared seed, exactly as deployed;
* ``simulate`` draws the in-cap count ``M ~ Binom(N, cap)`` and then the
  decoded candidate directly (see :func:`ldpc.mmrc.simulate_release`), which
  is much faster at large ``N``.

Seeds: trial ``t`` uses data seed ``(master_seed, t, 0)``; user ``u`` uses the
shared seed ``(master_seed, t, u, 1)`` and private stream ``(master_seed, t, u, 2)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InfeasibleError
from .mechanisms import (
    CapMechanism,
    as_cap_mechanism,
    calibrate_privunit,
    calibrate_ss,
)
from .mmrc import mmrc_distribution_from_mask, mmrc_scales, release_probability
from .mrc import (
    MAX_CANDIDATES,
    debias,
    decode_from_seed,
    distribution_from_mask,
    encode,
    generate_pool,
    mrc_scales,
)

MEAN_METHODS = ("privunit", "mrc-pu", "mmrc-pu")
FREQ_METHODS = ("ss", "mrc-ss", "mmrc-ss")
MODES = ("protocol", "simulate")
CSV_FIELDS = ["method", "eps", "d", "n", "bits", "N", "l2_error_mean", "l2_error_stderr", "trials", "seed"]


def auto_bits(eps: float, task: str) -> int:
    """Default budget ``max(ceil(eps / ln 2) + extra, 8)``; extra is 2 for mean
    estimation and 3 for frequency estimation."""
    extra = 2 if task == "mean" else 3
    return max(math.ceil(eps / math.log(2.0) - 1e-12) + extra, 8)


@dataclass(frozen=True)
class MeanConfig:
    """Mean estimation over the unit sphere.

    ``bits=None`` picks :func:`auto_bits`; ignored for the uncompressed method.
    """

    n: int
    d: int
    eps: float
    method: str = "mmrc-pu"
    bits: int | None = None
    trials: int = 10
    master_seed: int = 0
    mu: float = 0.5
    mode: str = "protocol"

    task = "mean"

    def __post_init__(self):
        if self.method not in MEAN_METHODS:
            raise ValueError(f"method must be one of {MEAN_METHODS}")
        _validate_common(self)


@dataclass(frozen=True)
class FreqConfig:
    """Frequency estimation over ``d`` symbols."""

    n: int
    d: int
    eps: float
    method: str = "mmrc-ss"
    bits: int | None = None
    trials: int = 10
    master_seed: int = 0
    mode: str = "protocol"

    task = "freq"

    def __post_init__(self):
        if self.method not in FREQ_METHODS:
            raise ValueError(f"method must be one of {FREQ_METHODS}")
        _validate_common(self)


def _validate_common(cfg) -> None:
    if cfg.n < 1 or cfg.d < 2 or cfg.trials < 1:
        raise ValueError("need n >= 1, d >= 2, trials >= 1")
    if not cfg.eps > 0:
        raise ValueError("eps must be positive")
    if cfg.mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if cfg.bits is not None and cfg.bits < 0:
        raise ValueError("bits must be nonnegative")


def config_from_json(text: str):
    """Build a MeanConfig or FreqConfig from a JSON document with a ``task`` field."""
    doc = json.loads(text)
    task = doc.pop("task", "mean")
    cls = MeanConfig if task == "mean" else FreqConfig
    return cls(**doc)


@dataclass
class TrialResult:
    """Errors of one configuration over ``trials`` repetitions.

    Attributes:
        method, eps, d, n, seed: configuration echo.
        bits: communicated bits per user (``ceil(log2 N)`` for codecs, ``64 d``
            for raw PrivUnit2, ``d`` for the raw Subset Selection bitmask).
        N: candidate count, None for raw mechanisms.
        errors: squared l2 error of each repetition.
        wall_time: seconds spent; excluded from CSV output.
    """

    method: str
    eps: float
    d: int
    n: int
    bits: int
    N: int | None
    seed: int
    errors: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def trials(self) -> int:
        return len(self.errors)

    @property
    def l2_error(self) -> float:
        return self.l2_error_mean

    @property
    def l2_error_mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def l2_error_stderr(self) -> float:
        if len(self.errors) < 2:
            return 0.0
        return float(np.std(self.errors, ddof=1) / math.sqrt(len(self.errors)))

    def row(self) -> dict:
        return {
            "method": self.method,
            "eps": repr(float(self.eps)),
            "d": self.d,
            "n": self.n,
            "bits": self.bits,
            "N": "" if self.N is None else self.N,
            "l2_error_mean": repr(self.l2_error_mean),
            "l2_error_stderr": repr(self.l2_error_stderr),
            "trials": self.trials,
            "seed": self.seed,
        }


def results_to_csv(results) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in results:
        w.writerow(r.row())
    return buf.getvalue()


def results_to_json(results) -> str:
    rows = []
    for r in results:
        doc = r.row()
        doc.update(eps=float(r.eps), l2_error_mean=r.l2_error_mean, l2_error_stderr=r.l2_error_stderr)
        doc["errors"] = [float(e) for e in r.errors]
        rows.append(doc)
    return json.dumps(rows, indent=2, sort_keys=True)


# ---------------------------------------------------------------- data


def _seq(master_seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=key)


def _rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(_seq(master_seed, *key))


def _seed64(master_seed: int, *key: int) -> int:
    return int(_seq(master_seed, *key).generate_state(1, np.uint64)[0])


def gen_mean_data(n: int, d: int, seed: int) -> np.ndarray:
    """Unit vectors: the first ``n // 2`` from normalized N(1, 1)^d, the rest
    from normalized N(10, 1)^d. Returns an ``(n, d)`` array."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    rng = np.random.default_rng(seed)
    half = n // 2
    x = rng.standard_normal((n, d))
    x[:half] += 1.0
    x[half:] += 10.0
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def zipf_pmf(d: int) -> np.ndarray:
    w = 1.0 / np.arange(1, d + 1)
    return w / w.sum()


def gen_freq_data(n: int, d: int, seed: int) -> np.ndarray:
    """0-based symbols with ``P(i) ∝ 1 / (i + 1)``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.choice(d, size=n, p=zipf_pmf(d))


class StreamingMean:
    """Running sum of report vectors."""

    def __init__(self, d: int):
        self.total = np.zeros(d)
        self.count = 0

    def add(self, v) -> None:
        self.total += v
        self.count += 1

    def add_batch(self, vs) -> None:
        vs = np.asarray(vs, dtype=float)
        self.total += vs.sum(axis=0)
        self.count += vs.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.total / self.count


# ------------------------------------------------------------- pipelines


def _setup(cfg):
    if cfg.task == "mean":
        params = calibrate_privunit(cfg.eps, cfg.d, cfg.mu)
        raw = cfg.method == "privunit"
        codec = None if raw else cfg.method.split("-")[0]
    else:
        params = calibrate_ss(cfg.eps, cfg.d)
        raw = cfg.method == "ss"
        codec = None if raw else cfg.method.split("-")[0]
    mech = as_cap_mechanism(params)
    if raw:
        return params, mech, codec, None, mech.native_scales()
    bits = auto_bits(cfg.eps, cfg.task) if cfg.bits is None else cfg.bits
    n_cand = 2**bits
    if n_cand > MAX_CANDIDATES:
        raise InfeasibleError(f"N = 2^{bits} exceeds 2^20")
    scales = mrc_scales(params, n_cand) if codec == "mrc" else mmrc_scales(params, n_cand)
    return params, mech, codec, n_cand, scales


def _bits_used(cfg, n_cand) -> int:
    if n_cand is not None:
        return int(math.log2(n_cand))
    return 64 * cfg.d if cfg.task == "mean" else cfg.d


def _release_protocol(mech: CapMechanism, codec: str, n_cand: int, x, shared_seed: int, rng) -> np.ndarray:
    pool = generate_pool(mech, shared_seed, n_cand)
    in_cap = mech.contains(x, pool.candidates)
    dist = distribution_from_mask(mech, in_cap) if codec == "mrc" else mmrc_distribution_from_mask(mech, in_cap)
    msg = encode(dist, rng)
    return decode_from_seed(mech, shared_seed, n_cand, msg)


def _one_trial(cfg, setup, trial: int) -> float:
    params, mech, codec, n_cand, scales = setup
    seed = cfg.master_seed
    if cfg.task == "mean":
        data = gen_mean_data(cfg.n, cfg.d, _seed64(seed, trial, 0))
        target = data.mean(axis=0)
    else:
        data = gen_freq_data(cfg.n, cfg.d, _seed64(seed, trial, 0))
        target = np.bincount(data, minlength=cfg.d) / cfg.n

    agg = StreamingMean(cfg.d)
    if codec is None:
        z = mech.sample(data, _rng(seed, trial, 2))
        agg.add_batch(debias(mech.kind, z, scales))
    elif cfg.mode == "simulate":
        rng = _rng(seed, trial, 3)
        m = rng.binomial(n_cand, mech.cap_mass, size=cfg.n)
        inside = rng.random(cfg.n) < release_probability(mech, codec, m, n_cand)
        z = mech.sample_region(data, inside, rng)
        agg.add_batch(debias(mech.kind, z, scales))
    else:
        for u in range(cfg.n):
            z = _release_protocol(
                mech, codec, n_cand, data[u], _seed64(seed, trial, u, 1), _rng(seed, trial, u, 2)
            )
            agg.add(debias(mech.kind, z, scales))
    diff = agg.mean - target
    return float(diff @ diff)


def _run(cfg, threads: int = 1) -> TrialResult:
    start = time.perf_counter()
    setup = _setup(cfg)
    n_cand = setup[3]
    if threads > 1 and cfg.trials > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            errors = list(ex.map(lambda t: _one_trial(cfg, setup, t), range(cfg.trials)))
    else:
        errors = [_one_trial(cfg, setup, t) for t in range(cfg.trials)]
    return TrialResult(
        method=cfg.method,
        eps=cfg.eps,
        d=cfg.d,
        n=cfg.n,
        bits=_bits_used(cfg, n_cand),
        N=n_cand,
        seed=cfg.master_seed,
        errors=errors,
        wall_time=time.perf_counter() - start,
    )


def run_mean_estimation(cfg: MeanConfig, threads: int = 1) -> TrialResult:
    """Squared error ``||mu_hat - mu||^2`` of the empirical mean, per repetition."""
    if cfg.task != "mean":
        raise TypeError("expected a MeanConfig")
    return _run(cfg, threads)


def run_freq_estimation(cfg: FreqConfig, threads: int = 1) -> TrialResult:
    """Squared error of the estimated empirical histogram, per repetition."""
    if cfg.task != "freq":
        raise TypeError("expected a FreqConfig")
    return _run(cfg, threads)


def run(cfg, threads: int = 1) -> TrialResult:
    return _run(cfg, threads)


SWEEP_AXES = ("bits", "eps", "d", "n")


def sweep(axis: str, grid, base, threads: int = 1) -> list[TrialResult]:
    """One :class:`TrialResult` per grid value of ``axis``, other fields from ``base``."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}")
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    out = []
    for value in grid:
        cast = float(value) if axis == "eps" else int(value)
        out.append(_run(replace(base, **{axis: cast}), threads))
    return out


def single_user_mse(cfg) -> float:
    """Exact ``E||x_hat - x||^2`` for one user of a raw mechanism.

    PrivUnit2: ``1/m^2 - 1``. Subset Selection: ``sum_i q_i (1 - q_i) / m^2``
    with ``q_x = m + b`` and ``q_i = b`` elsewhere.
    """
    params, mech, codec, n_cand, scales = _setup(cfg)
    m, b = scales.m, scales.b
    if cfg.task == "mean":
        return 1.0 / m**2 - 1.0
    q_x = m + b
    return (q_x * (1 - q_x) + (cfg.d - 1) * b * (1 - b)) / m**2


def result_to_dict(r: TrialResult) -> dict:
    doc = asdict(r)
    doc.update(l2_error_mean=r.l2_error_mean, l2_error_stderr=r.l2_error_stderr, trials=r.trials)
    return doc
