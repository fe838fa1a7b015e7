import numpy as np
import pytest

from fedfusion.nncore import forward, loss_from_logits


def finite_diff_check(layers, X, y, spec, analytic, eps=1e-4, rtol=1e-3, atol=1e-8):
    """Central differences over every weight and bias entry.

    Returns the worst relative error; entries where both the analytic and
    numeric values sit below ``atol`` are float64 noise and count as exact.
    """
    worst = 0.0
    for i, layer in enumerate(layers):
        for name, arr in (("weight", layer.weight), ("bias", layer.bias)):
            g = analytic[f"{i}.{name}"]
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + eps
                lp, _ = loss_from_logits(forward(layers, X)[0], y, spec)
                arr[idx] = old - eps
                lm, _ = loss_from_logits(forward(layers, X)[0], y, spec)
                arr[idx] = old
                num = (lp - lm) / (2 * eps)
                a = g[idx]
                scale = max(abs(a), abs(num))
                if scale < atol:
                    continue
                worst = max(worst, abs(a - num) / scale)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
