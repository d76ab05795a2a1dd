"""Decision thresholds for watermark verification.

A random-seed guessing attack produces ``M`` label matches out of ``L``,
where position ``i`` matches with probability ``p[c_i]``, the model's hit
rate for the target class on random inputs.  ``M`` is Poisson-binomial.

The hit rates are estimated in two phases: plain sampling gives ``p_i`` for
classes that were hit at least once; classes never hit (the set ``U``) get
their total mass ``p_U`` from geometric first-hit trials, split evenly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import ChainMarksError, InvalidParameter, NoThreshold, UndefinedUtility
from .model_core import ClassifierOracle
from .signature_codec import LabelSequence
from .trigger_chain import HashAlg, InputShape, generate_chain

log = logging.getLogger(__name__)

# largest float64 block of random probes held in memory at once
_CHUNK_VALUES = 1 << 22
EXACT_MAX_L = 10_000


PROBES = ("uniform", "bytes")


def _substream(rng_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(rng_seed, spawn_key=(index,)))


def _check_probe(probe: str) -> str:
    if probe not in PROBES:
        raise InvalidParameter(f"probe must be one of {PROBES}, got {probe!r}")
    return probe


def _draw(rng, rows, dim, probe):
    """Random probe inputs: continuous uniform features, or byte values v/255
    like the trigger blocks themselves."""
    if probe == "bytes":
        return rng.integers(0, 256, size=(rows, dim), dtype=np.uint8) / 255.0
    return rng.random((rows, dim))


@dataclass(frozen=True)
class Phase2Result:
    p_U: float
    trials: int
    mean_inputs: float
    censored: bool = False
    counts: tuple[int, ...] = ()


@dataclass(frozen=True)
class ClassDistribution:
    C: int
    N: int
    counts: np.ndarray
    probs: np.ndarray
    U: tuple[int, ...]
    p_U: float = 0.0
    phase2: Phase2Result | None = None
    probe: str = "uniform"

    @property
    def k(self) -> int:
        return len(self.U)

    @classmethod
    def from_probs(cls, probs, U=None) -> "ClassDistribution":
        """A distribution with known per-class probabilities (no sampling).

        ``U`` defaults to the classes with probability exactly zero.
        """
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 2:
            raise InvalidParameter("need a probability per class, C >= 2")
        if np.any(probs < 0) or not math.isclose(math.fsum(probs), 1.0, abs_tol=1e-9):
            raise InvalidParameter("probabilities must be non-negative and sum to 1")
        if U is None:
            U = tuple(int(i) for i in np.flatnonzero(probs == 0))
        U = tuple(sorted(int(i) for i in U))
        p_U = math.fsum(probs[list(U)]) if U else 0.0
        return cls(probs.size, 0, np.zeros(probs.size, dtype=np.int64), probs, U, p_U)

    def fingerprint(self) -> str:
        payload = json.dumps(
            {"C": self.C, "probs": [float(p).hex() for p in self.probs], "U": list(self.U)},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_json(self) -> dict:
        out = {
            "C": self.C,
            "N": self.N,
            "counts": [int(c) for c in self.counts],
            "probs": [float(p) for p in self.probs],
            "U": list(self.U),
            "p_U": self.p_U,
            "fingerprint": self.fingerprint(),
            "probe": self.probe,
        }
        if self.phase2 is not None:
            out["phase2"] = {
                "trials": self.phase2.trials,
                "mean": self.phase2.mean_inputs,
                "censored": self.phase2.censored,
            }
        return out

    @classmethod
    def from_json(cls, d: dict) -> "ClassDistribution":
        ph = d.get("phase2")
        phase2 = None
        if ph is not None:
            phase2 = Phase2Result(d["p_U"], ph["trials"], ph["mean"], ph["censored"])
        return cls(
            int(d["C"]), int(d["N"]),
            np.asarray(d["counts"], dtype=np.int64),
            np.asarray(d["probs"], dtype=np.float64),
            tuple(d["U"]), float(d["p_U"]), phase2, d.get("probe", "uniform"),
        )


# -- phase 1 / phase 2 sampling -----------------------------------------------


def _probe_chunk(model, rng_seed, index, rows, probe):
    X = _draw(_substream(rng_seed, index), rows, model.input_dim, probe)
    return np.bincount(model.predict(X), minlength=model.num_classes)


def estimate_phase1(
    model: ClassifierOracle,
    N: int,
    rng_seed: int,
    *,
    workers: int = 1,
    probe: str = "uniform",
) -> ClassDistribution:
    """Classify ``N`` uniform random inputs and tally per-class hits.

    Probes are drawn in fixed-size chunks, chunk ``j`` from its own
    substream of ``rng_seed``, so the counts do not depend on ``workers``.
    ``probe="bytes"`` restricts features to the grid ``v/255`` that trigger
    blocks live on.
    """
    _check_probe(probe)
    C = model.num_classes
    if N < 1:
        raise InvalidParameter("phase-1 sample count N must be >= 1")
    if N < C:
        raise InvalidParameter(f"N={N} is smaller than the class count {C}")
    if N < 100 * C:
        warnings.warn(f"N={N} < 100*C; zero-hit set will be unreliable", stacklevel=2)
    rows = max(1, _CHUNK_VALUES // model.input_dim)
    jobs = [(j, min(rows, N - j * rows)) for j in range(-(-N // rows))]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda job: _probe_chunk(model, rng_seed, *job, probe), jobs))
    else:
        parts = [_probe_chunk(model, rng_seed, *job, probe) for job in jobs]
    counts = np.sum(parts, axis=0).astype(np.int64)
    U = tuple(int(i) for i in np.flatnonzero(counts == 0))
    return ClassDistribution(C, N, counts, counts / N, U, probe=probe)


def _first_hit(model, in_U, rng, budget, probe="uniform"):
    """Number of misses before the first probe lands in ``U`` (None if censored)."""
    seen = 0
    batch = 256
    max_rows = max(256, _CHUNK_VALUES // model.input_dim)
    while seen < budget:
        rows = min(batch, budget - seen, max_rows)
        hits = in_U[model.predict(_draw(rng, rows, model.input_dim, probe))]
        idx = np.flatnonzero(hits)
        if idx.size:
            return seen + int(idx[0])
        seen += rows
        batch *= 2
    return None


def estimate_phase2(
    model: ClassifierOracle,
    U,
    rng_seed: int,
    trials: int = 50,
    budget: int = 10**7,
    probe: str = "uniform",
) -> Phase2Result:
    """Estimate the total hit rate of the zero-hit classes ``U``.

    Each trial counts the misses ``T_j`` before the first probe lands in
    ``U``; misses-before-success is geometric with mean ``(1 - p)/p``, so
    ``p_U = 1 / (mean(T) + 1)``.  A trial that spends ``budget`` probes
    without a hit stops the estimation and yields the bound ``1 / budget``
    with ``censored=True``.
    """
    _check_probe(probe)
    U = tuple(sorted(set(int(i) for i in U)))
    if not U:
        return Phase2Result(0.0, 0, 0.0)
    if budget < 1:
        raise InvalidParameter("phase-2 budget must be >= 1")
    if trials < 1:
        raise InvalidParameter("phase-2 needs at least one trial")
    in_U = np.zeros(model.num_classes, dtype=bool)
    in_U[list(U)] = True
    counts = []
    for t in range(trials):
        misses = _first_hit(model, in_U, _substream(rng_seed, t), budget, probe)
        if misses is None:
            log.info("phase-2 trial %d censored after %d probes", t, budget)
            mean = float(np.mean(counts)) if counts else float(budget)
            return Phase2Result(1.0 / budget, t + 1, mean, True, tuple(counts))
        counts.append(misses)
    mean = float(np.mean(counts))
    return Phase2Result(1.0 / (mean + 1.0), trials, mean, False, tuple(counts))


def normalize_distribution(partial: ClassDistribution, p_U) -> ClassDistribution:
    """Fold the phase-2 mass into the phase-1 estimate.

    Hit classes are scaled by ``1 - p_U``; every class in ``U`` receives
    ``p_U / k``.
    """
    phase2 = p_U if isinstance(p_U, Phase2Result) else None
    p_U = phase2.p_U if phase2 is not None else float(p_U)
    if not 0.0 <= p_U <= 1.0:
        raise InvalidParameter(f"p_U must be in [0, 1], got {p_U}")
    if not partial.U:
        p_U = 0.0
    base = partial.counts / partial.N if partial.N else partial.probs
    probs = (1.0 - p_U) * base
    if partial.U:
        probs[list(partial.U)] = p_U / len(partial.U)
    return ClassDistribution(
        partial.C, partial.N, partial.counts, probs, partial.U, p_U, phase2, partial.probe
    )


def estimate_distribution(
    model: ClassifierOracle,
    N: int,
    rng_seed: int,
    trials: int = 50,
    budget: int = 10**7,
    workers: int = 1,
    probe: str = "uniform",
) -> ClassDistribution:
    """Phase 1, phase 2 and normalisation in one call."""
    partial = estimate_phase1(model, N, rng_seed, workers=workers, probe=probe)
    # phase 2 gets its own seed family so its probes never reuse phase-1 ones
    phase2 = estimate_phase2(model, partial.U, rng_seed + 1_000_003, trials, budget, probe)
    return normalize_distribution(partial, phase2)


# -- match-count tails -------------------------------------------------------


@dataclass(frozen=True)
class MatchTail:
    L: int
    m: int
    probability: float
    method: str
    mu: float | None = None
    mu_claim: float | None = None
    sigma: float | None = None
    warning: str | None = None


def label_probs(dist: ClassDistribution, labels: LabelSequence) -> np.ndarray:
    """Per-position match probabilities ``p[c_i]``."""
    if labels.C != dist.C:
        raise InvalidParameter(f"labels are base {labels.C} but distribution has C={dist.C}")
    return dist.probs[np.asarray(labels.digits)]


def poisson_binomial_pmf(probs) -> np.ndarray:
    """Exact pmf of the number of successes, by sequential convolution."""
    pmf = np.zeros(len(probs) + 1)
    pmf[0] = 1.0
    for n, p in enumerate(probs, start=1):
        pmf[1 : n + 1] = pmf[1 : n + 1] * (1.0 - p) + pmf[:n] * p
        pmf[0] *= 1.0 - p
    return pmf


def tail_from_pmf(pmf: np.ndarray) -> np.ndarray:
    """``tail[m] = Pr(M >= m)`` for ``m = 0..L``, summed from the small end."""
    tail = np.minimum(np.cumsum(pmf[::-1])[::-1], 1.0)
    tail[0] = 1.0  # certain event; summed pmf can land an ulp short
    return tail


def exact_tails(dist: ClassDistribution, labels: LabelSequence) -> np.ndarray:
    return tail_from_pmf(poisson_binomial_pmf(label_probs(dist, labels)))


def exact_tail(dist: ClassDistribution, labels: LabelSequence, m: int) -> MatchTail:
    L = len(labels)
    if not 0 <= m <= L:
        raise InvalidParameter(f"m must be in 0..{L}, got {m}")
    return MatchTail(L, m, float(exact_tails(dist, labels)[m]), "exact_dp")


def sigma_prime(dist: ClassDistribution, labels: LabelSequence, variant: str = "per_label") -> float:
    """Upper bound on the standard deviation of ``M``.

    ``variant="per_label"`` subtracts ``(p_U/k)^2`` once per label that falls
    in ``U``; ``variant="pooled"`` subtracts a single ``p_U^2 / k``.
    """
    p = label_probs(dist, labels)
    in_U = np.isin(np.asarray(labels.digits), dist.U)
    terms = list(p) + [-(x * x) for x in p[~in_U]]
    if dist.k:
        q = dist.p_U / dist.k
        if variant == "per_label":
            terms += [-(q * q)] * int(in_U.sum())
        elif variant == "pooled":
            terms.append(-(dist.p_U * dist.p_U) / dist.k)
        else:
            raise InvalidParameter(f"unknown sigma' variant {variant!r}")
    elif variant not in ("per_label", "pooled"):
        raise InvalidParameter(f"unknown sigma' variant {variant!r}")
    radicand = math.fsum(terms)
    if radicand < 0:
        raise ChainMarksError(f"negative variance bound {radicand!r} ({variant})")
    return math.sqrt(radicand)


def _normal_tails(mu, sigma, L, ms):
    ms = np.asarray(ms, dtype=np.float64)
    if sigma == 0.0:
        return ((ms - 0.5 < mu) & (mu <= L + 0.5)).astype(np.float64)
    a = (L + 0.5 - mu) / sigma
    b = (ms - 0.5 - mu) / sigma
    # Phi(a) - Phi(b) == sf(b) - sf(a); the sf form keeps tiny upper tails accurate
    return np.clip(norm.sf(b) - norm.sf(a), 0.0, 1.0)


def normal_tail(
    dist: ClassDistribution, labels: LabelSequence, m: int, variant: str = "per_label"
) -> MatchTail:
    """Continuity-corrected normal approximation of ``Pr(M >= m)``."""
    L = len(labels)
    if not 0 <= m <= L:
        raise InvalidParameter(f"m must be in 0..{L}, got {m}")
    mu = math.fsum(label_probs(dist, labels))
    s = sigma_prime(dist, labels, variant)
    warning = None
    if L < 10:
        warning = f"normal approximation is unreliable for L={L} < 10"
    prob = float(_normal_tails(mu, s, L, [m])[0])
    return MatchTail(L, m, prob, "normal_approx", mu, L / dist.C, s, warning)


def normal_tails(dist, labels, variant="per_label") -> np.ndarray:
    L = len(labels)
    mu = math.fsum(label_probs(dist, labels))
    return _normal_tails(mu, sigma_prime(dist, labels, variant), L, np.arange(L + 1))


# -- threshold decision ------------------------------------------------------


@dataclass(frozen=True)
class ThresholdDecision:
    p_target: float
    m_min: int
    L: int
    method: str
    fingerprint: str
    tail_at_m_min: float
    tail_below: float

    @property
    def theta(self) -> float:
        return 1.0 - self.m_min / self.L

    def to_json(self) -> dict:
        return {
            "p_target": self.p_target,
            "m_min": self.m_min,
            "L": self.L,
            "theta": self.theta,
            "method": self.method,
            "fingerprint": self.fingerprint,
            "tail_at_m_min": self.tail_at_m_min,
            "tail_below": self.tail_below,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ThresholdDecision":
        return cls(
            float(d["p_target"]), int(d["m_min"]), int(d["L"]), d.get("method", "exact_dp"),
            d.get("fingerprint", ""), float(d.get("tail_at_m_min", 0.0)),
            float(d.get("tail_below", 1.0)),
        )


def decide_threshold(
    dist: ClassDistribution, labels: LabelSequence, p_target: float, method: str = "auto"
) -> ThresholdDecision:
    """Smallest match count whose guessing-attack tail is at most ``p_target``."""
    if not 0.0 < p_target < 1.0:
        raise InvalidParameter(f"p_target must be in (0, 1), got {p_target}")
    L = len(labels)
    if method == "auto":
        method = "exact_dp" if L <= EXACT_MAX_L else "normal_approx"
    if method == "exact_dp":
        tails = exact_tails(dist, labels)
    elif method == "normal_approx":
        tails = normal_tails(dist, labels)
    else:
        raise InvalidParameter(f"unknown tail method {method!r}")
    ok = np.flatnonzero(tails <= p_target)
    if ok.size == 0:
        raise NoThreshold(p_target, float(tails[L]))
    m_min = int(ok[0])
    below = float(tails[m_min - 1]) if m_min > 0 else 1.0
    return ThresholdDecision(
        p_target, m_min, L, method, dist.fingerprint(), float(tails[m_min]), below
    )


def marginal_utility(p1: float, tau1: float, p2: float, tau2: float) -> float:
    """Factor by which the p-value shrinks per unit of extra required accuracy."""
    if tau2 <= tau1:
        raise UndefinedUtility(f"need tau2 > tau1, got {tau1} -> {tau2}")
    if not p1 > p2 > 0:
        raise InvalidParameter(f"need p1 > p2 > 0, got p1={p1}, p2={p2}")
    return (p1 / p2) / (tau2 - tau1)


# -- guessing attack -----------------------------------------------------------


@dataclass(frozen=True)
class GuessingResult:
    histogram: np.ndarray
    num_seeds: int

    @property
    def L(self) -> int:
        return self.histogram.size - 1

    @property
    def empirical_tail(self) -> np.ndarray:
        return np.cumsum(self.histogram[::-1])[::-1] / self.num_seeds

    def acceptance_rate(self, m_min: int) -> float:
        return float(self.empirical_tail[m_min]) if m_min <= self.L else 0.0


def random_seed(rng_seed: int, index: int, nbytes: int = 32) -> bytes:
    words = np.random.SeedSequence(rng_seed, spawn_key=(index,)).generate_state(
        -(-nbytes // 4), np.uint32
    )
    return words.astype("<u4").tobytes()[:nbytes]


def _guess_matches(model, labels, shape, hash_alg, rng_seed, indices):
    target = np.asarray(labels.digits)
    out = []
    for i in indices:
        chain = generate_chain(random_seed(rng_seed, i), shape, len(labels), hash_alg)
        out.append(int(np.sum(model.predict(chain.features()) == target)))
    return out


def guessing_attack_sim(
    model: ClassifierOracle,
    labels: LabelSequence,
    num_seeds: int,
    rng_seed: int,
    shape: InputShape,
    hash_alg=HashAlg.SHA256,
    workers: int = 1,
) -> GuessingResult:
    """Count label matches for chains grown from ``num_seeds`` random seeds."""
    if num_seeds < 1:
        raise InvalidParameter("num_seeds must be >= 1")
    if shape.byte_len != model.input_dim:
        raise InvalidParameter("shape does not match model input_dim")
    alg = HashAlg.parse(hash_alg)
    idx = list(range(num_seeds))
    if workers > 1:
        parts = [idx[w::workers] for w in range(workers)]
        with ThreadPoolExecutor(workers) as pool:
            chunks = pool.map(
                lambda part: _guess_matches(model, labels, shape, alg, rng_seed, part), parts
            )
            matches = [m for chunk in chunks for m in chunk]
    else:
        matches = _guess_matches(model, labels, shape, alg, rng_seed, idx)
    hist = np.bincount(matches, minlength=len(labels) + 1)
    return GuessingResult(hist, num_seeds)
