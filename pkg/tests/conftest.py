import numpy as np
import pytest

from vqc.numcore import LinearLayer, Mlp


def naive_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Triple-loop forward pass, independent of the vectorized path."""
    rows = [list(r) for r in np.asarray(x)]
    for li, layer in enumerate(net.layers):
        W, b = layer.weight, layer.bias
        out = []
        for r in rows:
            o = []
            for i in range(W.shape[0]):
                s = b[i]
                for j in range(W.shape[1]):
                    s += W[i, j] * r[j]
                if li != len(net.layers) - 1:
                    s = s if s > 0.0 else 0.0
                o.append(s)
            out.append(o)
        rows = out
    return np.array(rows)


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences; ``x`` is perturbed in place."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def max_rel_err(a, b, floor: float = 1e-6) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, ok, detail in sorted(CRITERIA):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {name}: {detail}")
