import numpy as np
import pytest

from microquant.netgraph import Conv2D, Dense, Flatten, MaxPool2D, ModelSpec, init_weights


def small_model(seed: int = 0, classes: int = 3, dtype=np.float64) -> ModelSpec:
    """Conv -> pool -> conv -> dense stack with well under 500 parameters."""
    spec = ModelSpec((6, 6, 1), [
        Conv2D(1, 3, 3, padding="same"),
        MaxPool2D(2, 2),
        Conv2D(3, 4, 2, padding="valid", activation="relu"),
        Flatten(),
        Dense(16, 6, "relu"),
        Dense(6, classes, "softmax"),
    ])
    spec = init_weights(spec, seed=seed, dtype=dtype)
    rng = np.random.default_rng(seed + 100)
    # non-zero biases so every gradient path is exercised
    return spec.with_weights([None if w is None else (w[0], rng.normal(0, 0.1, w[1].shape).astype(dtype))
                              for w in spec.weights])


def blobs(n_per_class: int = 40, seed: int = 0, size: int = 6):
    """Two linearly separable classes: bright top half vs. bright bottom half."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 0.3, size=(2 * n_per_class, size, size, 1)).astype(np.float32)
    y = np.repeat([0, 1], n_per_class)
    x[y == 0, : size // 2] += 0.6
    x[y == 1, size // 2:] += 0.6
    order = rng.permutation(len(y))
    return x[order], y[order]


@pytest.fixture(scope="session")
def trained_reference():
    """Reference architecture trained on synthetic data, plus its splits."""
    from microquant.data import synth_dataset
    from microquant.netgraph import reference_architecture
    from microquant.trainer import TrainConfig, fit

    train = synth_dataset(per_class=20, seed=11)
    test = synth_dataset(per_class=5, seed=12)
    spec = init_weights(reference_architecture(), seed=0)
    result = fit(spec, (train.tensors(), train.labels), None, TrainConfig(epochs=8, seed=0))
    return result.model, train, test


ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
