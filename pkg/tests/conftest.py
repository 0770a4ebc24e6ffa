import numpy as np
import pytest

from rangeseg.autodiff import Tape, Tensor


def numeric_grad(fn, arr: np.ndarray, step: float = 1e-5, indices=None) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. ``arr`` (modified in place)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in indices if indices is not None else range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn()
        flat[i] = orig - step
        lo = fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def gradcheck(build, tensors: list[Tensor], step: float = 1e-5, max_entries: int | None = None, rng=None):
    """Largest relative error between tape gradients and finite differences.

    ``build()`` must return a scalar Tensor computed from ``tensors``.
    When ``max_entries`` is set only that many random entries per tensor are
    perturbed, and the comparison is restricted to them.
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = build()
    tape.backward(loss)
    # central differences carry roundoff of about eps*|L|/step per entry, which
    # is all a structurally zero gradient (a bias before a training-mode batch
    # norm) shows
    noise = np.finfo(np.float64).eps * (abs(float(loss.data)) + 1.0) / step
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t, ga in zip(tensors, analytic):
        idx = None
        if max_entries is not None and t.data.size > max_entries:
            idx = rng.choice(t.data.size, size=max_entries, replace=False)
        gn = numeric_grad(lambda: float(build().data), t.data, step, idx)
        if idx is not None:
            ga = ga.reshape(-1)[idx]
            gn = gn.reshape(-1)[idx]
        if np.linalg.norm(ga) < 1e-12:
            # a zero gradient has no relative error; it must match within noise
            worst = max(worst, 0.0 if np.linalg.norm(gn) < 1e3 * noise * np.sqrt(ga.size) else 1.0)
        else:
            worst = max(worst, rel_error(ga, gn))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance report ---------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool | None, detail: str) -> str:
    """Print and remember one acceptance line; ``None`` marks a skipped criterion."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    line = f"ACCEPTANCE {number}: {status} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
