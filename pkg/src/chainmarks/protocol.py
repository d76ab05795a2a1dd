"""End-to-end embedding and verification of chained-trigger watermarks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .datasets import Dataset
from .errors import InvalidParameter, NoThreshold
from .model_core import ClassifierOracle, TinyClassifier, TrainConfig, accuracy, predict, train_from_scratch
from .signature_codec import LabelSequence, encode_signature, pad_or_truncate
from .threshold_stats import ClassDistribution, ThresholdDecision, decide_threshold
from .trigger_chain import (
    HashAlg,
    InputShape,
    TriggerBlock,
    TriggerChain,
    blocks_to_features,
    generate_chain,
    verify_chain,
)

# float slack when comparing d against theta * L
_EPS = 1e-9


@dataclass(frozen=True)
class WatermarkSpec:
    seed: bytes = field(repr=False)
    signature: bytes
    C: int
    L: int
    shape: InputShape
    hash_alg: HashAlg = HashAlg.SHA256

    def __post_init__(self):
        if self.L < 1:
            raise InvalidParameter(f"chain length L must be >= 1, got {self.L}")
        object.__setattr__(self, "hash_alg", HashAlg.parse(self.hash_alg))

    @property
    def labels(self) -> LabelSequence:
        return pad_or_truncate(encode_signature(self.signature, self.C), self.L)

    def chain(self) -> TriggerChain:
        return generate_chain(self.seed, self.shape, self.L, self.hash_alg)

    def watermark_dataset(self) -> Dataset:
        return Dataset(
            self.chain().features(), np.asarray(self.labels.digits), self.C, "watermark"
        )

    def public_json(self) -> dict:
        """Everything except the seed."""
        return {
            "C": self.C,
            "L": self.L,
            "shape": list(self.shape.dims),
            "hash_alg": self.hash_alg.name,
            "signature": self.signature.hex(),
            "labels": self.labels.to_json(),
        }


@dataclass
class EmbedReport:
    baseline_test_accuracy: float | None
    baseline_wm_accuracy: float | None
    test_accuracy: float | None
    wm_accuracy: float
    epochs_run: int
    history: list = field(default_factory=list)

    @property
    def test_accuracy_drop(self) -> float | None:
        if self.baseline_test_accuracy is None or self.test_accuracy is None:
            return None
        return self.baseline_test_accuracy - self.test_accuracy

    def to_json(self) -> dict:
        return {
            "version": __version__,
            "test_accuracy_before": self.baseline_test_accuracy,
            "wm_accuracy_before": self.baseline_wm_accuracy,
            "test_accuracy_after": self.test_accuracy,
            "wm_accuracy": self.wm_accuracy,
            "test_accuracy_drop": self.test_accuracy_drop,
            "epochs_run": self.epochs_run,
            "history": self.history,
        }


def embed(
    spec: WatermarkSpec,
    original: Dataset,
    cfg: TrainConfig = TrainConfig(),
    test: Dataset | None = None,
    baseline: bool = True,
) -> tuple[TinyClassifier, EmbedReport]:
    """Train a watermarked model from scratch on task plus trigger records.

    With ``baseline=True`` a plain model is first trained with the same seed
    and config; its final test accuracy drives early stopping of the
    watermarked run and is reported as the "before" numbers.
    """
    if spec.shape.byte_len != original.input_dim:
        raise InvalidParameter(
            f"shape {spec.shape} has {spec.shape.byte_len} features, dataset has {original.input_dim}"
        )
    if spec.C != original.num_classes:
        raise InvalidParameter(f"spec C={spec.C} but dataset has {original.num_classes} classes")
    wm = spec.watermark_dataset()

    base_test = base_wm = None
    if baseline:
        plain = Dataset.empty(original.input_dim, original.num_classes)
        base = train_from_scratch(original, plain, cfg, test)
        base_wm = accuracy(base, wm)
        if test is not None:
            base_test = accuracy(base, test)
            cfg = TrainConfig(**{**cfg.__dict__, "baseline_accuracy": base_test})

    model = train_from_scratch(original, wm, cfg, test)
    report = EmbedReport(
        baseline_test_accuracy=base_test,
        baseline_wm_accuracy=base_wm,
        test_accuracy=accuracy(model, test) if test is not None else None,
        wm_accuracy=accuracy(model, wm),
        epochs_run=len(model.history),
        history=model.history,
    )
    return model, report


def hamming(a, b) -> int:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise InvalidParameter("hamming distance needs equal-length sequences")
    return int(np.count_nonzero(a != b))


@dataclass
class VerificationReport:
    predicted: LabelSequence
    target: LabelSequence
    hamming: int
    theta: float | None
    p_target: float | None
    m_min: int | None
    chain_valid: bool
    accepted: bool
    mode: str = "seed"
    fingerprint: str = ""

    @property
    def L(self) -> int:
        return len(self.target)

    @property
    def matches(self) -> int:
        return self.L - self.hamming

    def to_json(self) -> dict:
        return {
            "version": __version__,
            "mode": self.mode,
            "predicted": list(self.predicted.digits),
            "target": list(self.target.digits),
            "C": self.target.C,
            "L": self.L,
            "hamming": self.hamming,
            "matches": self.matches,
            "theta": self.theta,
            "p_target": self.p_target,
            "m_min": self.m_min,
            "chain_valid": self.chain_valid,
            "decision": "accepted" if self.accepted else "rejected",
            "fingerprint": self.fingerprint,
        }


def _accepts(d: int, theta: float | None, L: int) -> bool:
    return theta is not None and d <= theta * L + _EPS


def _check_model(model: ClassifierOracle, shape: InputShape, C: int):
    if model.input_dim != shape.byte_len:
        raise InvalidParameter(
            f"model expects {model.input_dim} features, chain shape {shape} gives {shape.byte_len}"
        )
    if model.num_classes != C:
        raise InvalidParameter(f"model has {model.num_classes} classes, expected {C}")


def verify(
    model: ClassifierOracle,
    seed: bytes,
    signature: bytes,
    C: int,
    L: int,
    shape: InputShape,
    decision: ThresholdDecision,
    hash_alg=HashAlg.SHA256,
) -> VerificationReport:
    """Seed-disclosure verification: regenerate the chain and compare labels."""
    spec = WatermarkSpec(seed, signature, C, L, shape, hash_alg)
    _check_model(model, shape, C)
    target = spec.labels
    predicted = LabelSequence(C, tuple(predict(model, spec.chain().features())))
    d = hamming(predicted.digits, target.digits)
    return VerificationReport(
        predicted, target, d, decision.theta, decision.p_target, decision.m_min,
        chain_valid=True,
        accepted=_accepts(d, decision.theta, L),
        mode="seed",
        fingerprint=decision.fingerprint,
    )


def verify_disclosed(
    model: ClassifierOracle,
    blocks: list[TriggerBlock],
    labels_prefix: LabelSequence,
    dist: ClassDistribution,
    p_target: float,
    hash_alg=HashAlg.SHA256,
) -> VerificationReport:
    """Prefix-disclosure verification over ``B_1..B_n``.

    The chain links are checked explicitly and the match threshold is
    recomputed for ``L = n`` from the model's class distribution.  If no
    threshold reaches ``p_target`` at this length the claim is rejected.
    """
    n = len(blocks)
    if n < 1:
        raise InvalidParameter("no blocks disclosed")
    if len(labels_prefix) != n:
        raise InvalidParameter(f"{n} blocks but {len(labels_prefix)} labels")
    if [b.index for b in blocks] != list(range(1, n + 1)):
        raise InvalidParameter("disclosed blocks must be B_1..B_n in order")
    if model.input_dim != len(blocks[0].raw):
        raise InvalidParameter("block size does not match model input_dim")

    try:
        chain_valid = n == 1 or verify_chain(blocks, hash_alg)
    except InvalidParameter:
        chain_valid = False
    try:
        decision = decide_threshold(dist, labels_prefix, p_target)
        theta, m_min = decision.theta, decision.m_min
    except NoThreshold:
        theta = m_min = None

    predicted = LabelSequence(labels_prefix.C, tuple(predict(model, blocks_to_features(blocks))))
    d = hamming(predicted.digits, labels_prefix.digits)
    return VerificationReport(
        predicted, labels_prefix, d, theta, p_target, m_min,
        chain_valid=chain_valid,
        accepted=chain_valid and _accepts(d, theta, n),
        mode="disclosed",
        fingerprint=dist.fingerprint(),
    )
