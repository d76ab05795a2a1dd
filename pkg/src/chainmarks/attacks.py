"""Removal and ambiguity attacks against watermarked TinyClassifiers.

Input-preprocessing attacks wrap the model so every query is transformed
first; model-modification and extraction attacks return a new surrogate.
An attack succeeds when the surrogate keeps at least 90% of the original
test accuracy while its watermark accuracy falls below ``1 - theta``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import __version__
from .datasets import Dataset
from .errors import InvalidParameter
from .model_core import ClassifierOracle, TinyClassifier, accuracy, predict, sgd_epochs
from .protocol import WatermarkSpec
from .signature_codec import LabelSequence
from .threshold_stats import ThresholdDecision, guessing_attack_sim
from .trigger_chain import (
    InputShape,
    TriggerBlock,
    blocks_to_features,
    features_to_block,
    verify_chain,
)

INPUT_ATTACKS = ("gaussian_noise", "input_quantization", "input_smoothing")
MODEL_ATTACKS = (
    "weight_pruning",
    "weight_quantization",
    "fine_tune_FTAL",
    "fine_tune_FTLL",
    "fine_tune_RTAL",
    "fine_tune_RTLL",
    "retrain_surrogate",
)
ATTACK_KINDS = INPUT_ATTACKS + MODEL_ATTACKS + ("ambiguity_forge", "guessing")

DEFAULT_PARAMS = {
    "gaussian_noise": {"sigma": 0.1},
    "input_quantization": {"bits": 2},
    "input_smoothing": {"window": 3, "filter": "mean"},
    "weight_pruning": {"rho": 0.5, "method": "random"},
    "weight_quantization": {"bits": 4},
    "fine_tune_FTAL": {"epochs": 5, "lr": 0.01},
    "fine_tune_FTLL": {"epochs": 5, "lr": 0.01},
    "fine_tune_RTAL": {"epochs": 5, "lr": 0.01},
    "fine_tune_RTLL": {"epochs": 5, "lr": 0.01},
    "retrain_surrogate": {"epochs": 10, "lr": 0.02},
    "ambiguity_forge": {"budget": 300, "L": None},
    "guessing": {"num_seeds": 1000},
}

# parameters equivalent to "do nothing"; used for sanity batteries
IDENTITY_PARAMS = {
    "gaussian_noise": {"sigma": 0.0},
    "input_smoothing": {"window": 1},
    "weight_pruning": {"rho": 0.0},
    "weight_quantization": {"bits": 64},
}


def _positive_int(params, key, lo=1):
    v = params[key]
    if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < lo:
        raise InvalidParameter(f"{key} must be an integer >= {lo}, got {v!r}")


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    params: dict = field(default_factory=dict)
    name: str | None = None

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise InvalidParameter(f"unknown attack kind {self.kind!r}")
        merged = {**DEFAULT_PARAMS[self.kind], **self.params}
        object.__setattr__(self, "params", merged)
        p = merged
        if self.kind == "gaussian_noise" and not p["sigma"] >= 0:
            raise InvalidParameter("sigma must be >= 0")
        if self.kind in ("input_quantization", "weight_quantization"):
            _positive_int(p, "bits")
        if self.kind == "input_smoothing":
            _positive_int(p, "window")
            if p["filter"] not in ("mean", "median"):
                raise InvalidParameter(f"unknown smoothing filter {p['filter']!r}")
        if self.kind == "weight_pruning":
            if not 0.0 <= p["rho"] < 1.0:
                raise InvalidParameter(f"pruning sparsity rho must be in [0, 1), got {p['rho']}")
            if p["method"] not in ("random", "magnitude"):
                raise InvalidParameter(f"unknown pruning method {p['method']!r}")
        if self.kind.startswith("fine_tune") or self.kind == "retrain_surrogate":
            _positive_int(p, "epochs")
            if not p["lr"] > 0:
                raise InvalidParameter("lr must be positive")
        if self.kind == "ambiguity_forge":
            _positive_int(p, "budget")
        if self.kind == "guessing":
            _positive_int(p, "num_seeds")

    @property
    def attack_id(self) -> str:
        return self.name or self.kind


# -- input preprocessing -----------------------------------------------------


def attack_input(features, cfg: AttackConfig, shape: InputShape | None = None, rng=None):
    """Apply an input-preprocessing attack to a batch (or a single row)."""
    X = np.asarray(features, dtype=np.float64)
    if cfg.kind not in INPUT_ATTACKS:
        raise InvalidParameter(f"{cfg.kind!r} is not an input attack")
    p = cfg.params
    if cfg.kind == "gaussian_noise":
        if p["sigma"] == 0:
            return X.copy()
        rng = rng if rng is not None else np.random.default_rng()
        return np.clip(X + rng.normal(scale=p["sigma"], size=X.shape), 0.0, 1.0)
    if cfg.kind == "input_quantization":
        n = 2 ** p["bits"]
        idx = np.minimum(np.floor(X * n), n - 1)
        return (idx + 0.5) / n
    # smoothing
    w = p["window"]
    if w == 1:
        return X.copy()
    single = X.ndim == 1
    batch = X[None, :] if single else X
    dims = shape.dims if shape is not None else (batch.shape[1],)
    if math.prod(dims) != batch.shape[1]:
        raise InvalidParameter("shape does not match feature length")
    imgs = batch.reshape((batch.shape[0],) + tuple(dims))
    if len(dims) == 1:
        size = (1, w)
    else:
        # filter the two trailing (spatial) axes only
        size = (1,) * (imgs.ndim - 2) + (w, w)
    filt = ndimage.uniform_filter if p["filter"] == "mean" else ndimage.median_filter
    out = filt(imgs, size=size, mode="nearest").reshape(batch.shape)
    return out[0] if single else out


class PreprocessedOracle:
    """Model oracle that transforms every query with an input attack."""

    def __init__(self, model: ClassifierOracle, cfg: AttackConfig, shape=None, rng_seed=0):
        self.model = model
        self.cfg = cfg
        self.shape = shape
        self.input_dim = model.input_dim
        self.num_classes = model.num_classes
        self._rng = np.random.default_rng(rng_seed)

    def predict(self, X):
        return self.model.predict(attack_input(X, self.cfg, self.shape, self._rng))


# -- model modification / extraction ---------------------------------------


def _prune(model: TinyClassifier, rho: float, method: str, rng) -> TinyClassifier:
    out = model.copy()
    sizes = [w.size for w in out.weights]
    total = sum(sizes)
    n_prune = int(math.floor(rho * total))
    if n_prune == 0:
        return out
    flat = np.concatenate([w.ravel() for w in out.weights])
    if method == "random":
        idx = rng.choice(total, size=n_prune, replace=False)
    else:
        idx = np.argsort(np.abs(flat), kind="stable")[:n_prune]
    flat[idx] = 0.0
    start = 0
    for w, n in zip(out.weights, sizes):
        w[...] = flat[start : start + n].reshape(w.shape)
        start += n
    return out


def _quantize_weights(model: TinyClassifier, bits: int) -> TinyClassifier:
    out = model.copy()
    if bits >= 53:
        # grid finer than float64 resolution
        return out
    levels = 2**bits - 1
    for w in out.weights:
        lo, hi = float(w.min()), float(w.max())
        if hi == lo:
            continue
        step = (hi - lo) / levels
        w[...] = lo + np.rint((w - lo) / step) * step
    return out


def _reinit(model: TinyClassifier, layers, rng) -> TinyClassifier:
    out = model.copy()
    fresh = TinyClassifier.initialize(out.layer_dims, rng)
    for i in layers:
        out.weights[i][...] = fresh.weights[i]
        out.biases[i][...] = fresh.biases[i]
    return out


def attack_model(
    model: TinyClassifier, cfg: AttackConfig, data: Dataset, rng_seed: int = 0
) -> TinyClassifier:
    """Return a surrogate produced by a model-level attack; ``model`` is untouched.

    ``data`` is the attacker's labelled subset (ground truth used by FTAL and
    FTLL; only its inputs are used by RTAL, RTLL and retraining, which label
    them with the source model's predictions).
    """
    if cfg.kind not in MODEL_ATTACKS:
        raise InvalidParameter(f"{cfg.kind!r} is not a model attack")
    if data.input_dim != model.input_dim:
        raise InvalidParameter("attack data does not match model input_dim")
    rng = np.random.default_rng(rng_seed)
    p = cfg.params
    last = len(model.weights) - 1
    if cfg.kind == "weight_pruning":
        return _prune(model, p["rho"], p["method"], rng)
    if cfg.kind == "weight_quantization":
        return _quantize_weights(model, p["bits"])

    pseudo = predict(model, data.X)
    if cfg.kind == "fine_tune_FTAL":
        sur, y, layers = model.copy(), data.y, None
    elif cfg.kind == "fine_tune_FTLL":
        sur, y, layers = model.copy(), data.y, [last]
    elif cfg.kind == "fine_tune_RTAL":
        sur, y, layers = _reinit(model, range(last + 1), rng), pseudo, None
    elif cfg.kind == "fine_tune_RTLL":
        sur, y, layers = _reinit(model, [last], rng), pseudo, [last]
    else:  # retrain_surrogate
        sur, y, layers = TinyClassifier.initialize(model.layer_dims, rng), pseudo, None
    return sgd_epochs(
        sur, data.X, y, epochs=p["epochs"], learning_rate=p["lr"], rng=rng, trainable=layers
    )


# -- ambiguity forging -------------------------------------------------------


@dataclass
class ForgeReport:
    blocks: list[TriggerBlock]
    targets: LabelSequence
    label_match: float
    chain_valid: bool
    steps: int
    exhausted: bool

    def to_json(self) -> dict:
        return {
            "L": len(self.blocks),
            "label_match": self.label_match,
            "chain_valid": self.chain_valid,
            "steps": self.steps,
            "budget_exhausted": self.exhausted,
        }


def ambiguity_forge(
    model: TinyClassifier,
    C: int,
    L: int,
    shape: InputShape,
    budget: int = 300,
    rng_seed: int = 0,
    targets: LabelSequence | None = None,
    step_size: float = 2.0 / 255.0,
) -> ForgeReport:
    """Optimise ``L`` free inputs so the model outputs chosen labels.

    Uses white-box input gradients (signed steps, projected onto ``[0, 1]``)
    and checks success on the byte-quantised inputs, since trigger blocks are
    byte strings.  Nothing ties the forged inputs together by hashing, so the
    returned blocks are expected to fail :func:`verify_chain`.
    """
    if L < 2:
        raise InvalidParameter("forging needs L >= 2 so the chain can be checked")
    if shape.byte_len != model.input_dim or C != model.num_classes:
        raise InvalidParameter("shape or class count does not match model")
    rng = np.random.default_rng(rng_seed)
    if targets is None:
        targets = LabelSequence(C, tuple(int(c) for c in rng.integers(0, C, size=L)))
    y = np.asarray(targets.digits)
    X = rng.random((L, shape.byte_len))

    def quantized(X):
        return np.rint(X * 255.0) / 255.0

    steps = 0
    while steps < budget:
        if np.all(model.predict(quantized(X)) == y):
            break
        _, _, gX = model.loss_and_grads(X, y, input_grad=True)
        X = np.clip(X - step_size * np.sign(gX), 0.0, 1.0)
        steps += 1
    blocks = [features_to_block(x, i + 1) for i, x in enumerate(X)]
    match = float(np.mean(predict(model, blocks_to_features(blocks)) == y))
    return ForgeReport(
        blocks, targets, match, verify_chain(blocks), steps, exhausted=match < 1.0
    )


# -- battery -----------------------------------------------------------------


@dataclass
class AttackOutcome:
    attack_id: str
    kind: str
    params: dict
    test_accuracy_before: float
    test_accuracy_after: float
    wm_accuracy_before: float
    wm_accuracy_after: float
    success: bool
    details: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "V" if self.success else "-"

    def to_json(self) -> dict:
        return {
            "attack": self.attack_id,
            "kind": self.kind,
            "params": self.params,
            "test_accuracy_before": self.test_accuracy_before,
            "test_accuracy_after": self.test_accuracy_after,
            "wm_accuracy_before": self.wm_accuracy_before,
            "wm_accuracy_after": self.wm_accuracy_after,
            "success": self.success,
            "verdict": self.verdict,
            **({"details": self.details} if self.details else {}),
        }


def removal_success(test_before, test_after, wm_after, theta) -> bool:
    """Keeps >= 90% of test accuracy and pushes watermark accuracy below 1 - theta."""
    return bool(test_after >= 0.9 * test_before and wm_after < 1.0 - theta)


@dataclass
class RobustnessMatrix:
    rows: list[AttackOutcome]
    theta: float
    p_target: float

    def to_json(self) -> dict:
        return {
            "version": __version__,
            "theta": self.theta,
            "p_target": self.p_target,
            "rows": [r.to_json() for r in self.rows],
        }

    def to_table(self) -> str:
        head = ("Attack", "Verdict", "Test before", "Test after", "WM after")
        body = [
            (
                r.attack_id,
                r.verdict,
                f"{r.test_accuracy_before:.3f}",
                f"{r.test_accuracy_after:.3f}",
                f"{r.wm_accuracy_after:.3f}",
            )
            for r in self.rows
        ]
        widths = [max(len(row[i]) for row in [head, *body]) for i in range(len(head))]

        def fmt(row):
            return " | ".join(
                cell.ljust(w) if i == 0 else cell.center(w)
                for i, (cell, w) in enumerate(zip(row, widths))
            )

        rule = "-+-".join("-" * w for w in widths)
        caption = f"Robust (-) or Vulnerable (V), p = {self.p_target:g}, theta = {self.theta:.4f}"
        return "\n".join([caption, fmt(head), rule, *map(fmt, body)])


def _run_one(index, cfg, model, spec, decision, data, test, wm, base_test, base_wm, rng_seed):
    seed = int(np.random.SeedSequence(rng_seed, spawn_key=(index,)).generate_state(1)[0])
    theta = decision.theta
    details = {}
    if cfg.kind in INPUT_ATTACKS:
        oracle = PreprocessedOracle(model, cfg, spec.shape, seed)
        test_after, wm_after = accuracy(oracle, test), accuracy(oracle, wm)
        success = removal_success(base_test, test_after, wm_after, theta)
    elif cfg.kind in MODEL_ATTACKS:
        sur = attack_model(model, cfg, data, seed)
        test_after, wm_after = accuracy(sur, test), accuracy(sur, wm)
        success = removal_success(base_test, test_after, wm_after, theta)
    elif cfg.kind == "ambiguity_forge":
        L = cfg.params["L"] or spec.L
        rep = ambiguity_forge(model, spec.C, L, spec.shape, cfg.params["budget"], seed)
        details = rep.to_json()
        test_after, wm_after = base_test, rep.label_match
        # a forged set only counts if it would pass verification
        success = rep.chain_valid and rep.label_match >= 1.0 - theta
    else:  # guessing
        n = cfg.params["num_seeds"]
        res = guessing_attack_sim(model, spec.labels, n, seed, spec.shape, spec.hash_alg)
        rate = res.acceptance_rate(decision.m_min)
        p = decision.p_target
        bound = p + 3.0 * math.sqrt(p * (1.0 - p) / n)
        details = {"acceptance_rate": rate, "allowed_rate_3sigma": bound,
                   "mean_matches": float(np.dot(np.arange(res.L + 1), res.histogram) / n)}
        test_after, wm_after = base_test, details["mean_matches"] / spec.L
        success = rate > bound
    return AttackOutcome(
        cfg.attack_id, cfg.kind, dict(cfg.params), base_test, test_after,
        base_wm, wm_after, success, details,
    )


def run_battery(
    model: TinyClassifier,
    spec: WatermarkSpec,
    decision: ThresholdDecision,
    configs: list[AttackConfig],
    data: Dataset,
    test: Dataset,
    rng_seed: int = 0,
    workers: int = 1,
) -> RobustnessMatrix:
    """Run every attack against ``model`` and tabulate robust/vulnerable verdicts.

    Attack ``i`` draws its randomness from substream ``i`` of ``rng_seed``;
    rows come back in config order whatever ``workers`` is.
    """
    ids = [c.attack_id for c in configs]
    if len(set(ids)) != len(ids):
        raise InvalidParameter("attack ids must be unique; set AttackConfig.name")
    wm = spec.watermark_dataset()
    base_test, base_wm = accuracy(model, test), accuracy(model, wm)
    args = (model, spec, decision, data, test, wm, base_test, base_wm, rng_seed)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda ic: _run_one(ic[0], ic[1], *args), enumerate(configs)))
    else:
        rows = [_run_one(i, c, *args) for i, c in enumerate(configs)]
    return RobustnessMatrix(rows, decision.theta, decision.p_target)


def default_battery() -> list[AttackConfig]:
    return [AttackConfig(kind) for kind in ATTACK_KINDS]


def identity_battery() -> list[AttackConfig]:
    return [AttackConfig(kind, params) for kind, params in IDENTITY_PARAMS.items()]
