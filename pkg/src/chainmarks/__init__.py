"""Hash-chained trigger watermarks for classifiers.

Trigger inputs form a one-way hash chain grown from a secret seed, target
labels are the owner's signature written in base C, and ownership is decided
by a Hamming-distance threshold derived from a two-phase Monte Carlo estimate
of the model's class distribution on random inputs.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ChainMarksError,
    FormatError,
    InvalidParameter,
    NoThreshold,
    TrainingDiverged,
    UndefinedUtility,
)
from .trigger_chain import (  # noqa: E402
    HashAlg,
    InputShape,
    TriggerBlock,
    TriggerChain,
    block_to_features,
    disclose_prefix,
    expand,
    generate_chain,
    verify_chain,
)
from .signature_codec import (  # noqa: E402
    LabelSequence,
    decode_labels,
    encode_signature,
    pad_or_truncate,
    signature_from_owner,
)
from .datasets import Dataset, load_csv, make_blobs  # noqa: E402
from .model_core import (  # noqa: E402
    ClassifierOracle,
    TinyClassifier,
    TrainConfig,
    accuracy,
    load_model,
    predict,
    save_model,
    train_from_scratch,
)
from .threshold_stats import (  # noqa: E402
    ClassDistribution,
    ThresholdDecision,
    decide_threshold,
    estimate_distribution,
    estimate_phase1,
    estimate_phase2,
    exact_tail,
    exact_tails,
    guessing_attack_sim,
    marginal_utility,
    normal_tail,
    normal_tails,
    normalize_distribution,
    sigma_prime,
)
from .protocol import (  # noqa: E402
    VerificationReport,
    WatermarkSpec,
    embed,
    hamming,
    verify,
    verify_disclosed,
)
