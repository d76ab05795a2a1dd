import time

import numpy as np
import pytest

import chainmarks as cm

SEED = b"desk-scale owner seed"
OWNER = "Alice Example"

# wall-clock seconds spent building the shared fixtures
TIMINGS = {}


class ConstantOracle:
    """Ignores its input and always answers ``label``."""

    def __init__(self, input_dim, num_classes, label=0):
        self.input_dim = input_dim
        self.num_classes = num_classes
        self.label = label

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.label, dtype=np.int64)


class ThresholdOracle:
    """Classifies by the first feature: class ``i`` on the interval
    ``[cum[i], cum[i+1])``, so uniform inputs hit class ``i`` with ``probs[i]``."""

    def __init__(self, probs, input_dim=1):
        self.probs = np.asarray(probs, dtype=float)
        self.edges = np.cumsum(self.probs)[:-1]
        self.input_dim = input_dim
        self.num_classes = len(self.probs)

    def predict(self, X):
        return np.searchsorted(self.edges, np.asarray(X)[:, 0], side="right")


@pytest.fixture(scope="session")
def blobs():
    return cm.make_blobs()


@pytest.fixture(scope="session")
def wm_spec():
    return cm.WatermarkSpec(
        SEED, cm.signature_from_owner(OWNER), 10, 100, cm.InputShape((3, 16, 16))
    )


@pytest.fixture(scope="session")
def embedded(blobs, wm_spec):
    """The default pipeline: synthetic task, L = 100, baseline + watermarked run."""
    train, test = blobs
    start = time.perf_counter()
    model, report = cm.embed(wm_spec, train, cm.TrainConfig(), test)
    TIMINGS["embed"] = time.perf_counter() - start
    return model, report


@pytest.fixture(scope="session")
def embedded_dist(embedded):
    model, _ = embedded
    return cm.estimate_distribution(model, 10**6, rng_seed=11, trials=50, budget=10**5)


@pytest.fixture(scope="session")
def embedded_dist_bytes(embedded):
    """Same estimate with probes on the byte grid that trigger blocks use."""
    model, _ = embedded
    return cm.estimate_distribution(
        model, 10**6, rng_seed=11, trials=50, budget=10**5, probe="bytes"
    )
