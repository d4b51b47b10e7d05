import os

# one BLAS thread: timings stay honest and float reductions stay reproducible
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from rpeakseg import model as M  # noqa: E402
from rpeakseg import nn_core as nn  # noqa: E402

TINY_FILTERS = (2, 2, 4, 4, 8, 8)


def tiny_config(**kw) -> M.ModelConfig:
    """256-sample window, narrow filters, float64: the gradient-check model."""
    base = dict(window_seconds=0.64, filter_schedule=TINY_FILTERS, dtype="float64")
    base.update(kw)
    return M.ModelConfig(**base)


def model_grad_check(config: M.ModelConfig, batch: int = 2, seed: int = 0, max_entries=None):
    """Finite-difference check of every trainable array and the input of the full network.

    The loss is BCE against a random target in train mode (batch-statistics BN, a fixed
    dropout mask).  Returns ``{array name: GradCheckResult}``.
    """
    rng = np.random.default_rng(seed)
    weights = M.build_model(config, rng_seed=seed)
    n = config.window_samples
    x = rng.uniform(-1, 1, (batch, n))
    y = (rng.random((batch, n)) < 0.1).astype(float)
    valid = np.array([n, n - 37][:batch] + [n] * max(0, batch - 2))

    def loss():
        prob, _ = M.forward_train(weights, x, "train", seed)
        return nn.bce_loss(prob, y, valid)[0]

    prob, cache = M.forward_train(weights, x, "train", seed)
    grads = M.backward(weights, cache, nn.bce_loss(prob, y, valid)[1])
    arrays = {name: weights.params[name] for name in weights.trainable_names}
    arrays["input"] = x
    return {name: nn.grad_check(loss, {name: arr}, {name: grads[name]},
                                atol=1e-14, max_entries=max_entries, rng=seed)
            for name, arr in arrays.items()}


@pytest.fixture
def tiny():
    return tiny_config()


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = {}


def report_criterion(number: int, status: str, detail: str) -> str:
    line = f"criterion {number:2d}: {status:4s}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
