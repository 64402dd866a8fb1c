from __future__ import annotations

import numpy as np
import pytest

from qgwnd.graph import discretize, star
from qgwnd.propagation import PropagatorContext
from qgwnd.spectral import assemble, default_couplings, eigendecompose


def make_ctx(kind: str = "kirchhoff", n: int = 3, h: float = 0.1, L: float = 10.0, **params) -> PropagatorContext:
    mesh = discretize(star(n), h, L)
    op = assemble(mesh, default_couplings(mesh, kind, **params))
    return PropagatorContext.build(eigendecompose(op))


@pytest.fixture(scope="session")
def kirchhoff_ctx() -> PropagatorContext:
    return make_ctx("kirchhoff", h=0.1, L=10.0)


@pytest.fixture(scope="session")
def delta_ctx() -> PropagatorContext:
    return make_ctx("delta", h=0.1, L=20.0, alpha=-1.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def smooth_datum(ctx: PropagatorContext, amp: float = 1.0) -> np.ndarray:
    """Continuous at the vertex, so the L^2 projection barely changes it."""
    m = ctx.mesh
    f = amp * m.sample(lambda e, x: np.exp(-((x - 1.0) ** 2)) * (1 + 0.3 * e * x))
    return ctx.sd.synthesize(ctx.sd.coefficients(f))


# one line per acceptance criterion, shown in the terminal summary
ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        print(line)
        ACCEPTANCE.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
