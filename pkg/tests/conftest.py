import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line(request):
    """Record a PASS/FAIL summary line for an acceptance criterion.

    The test calls ``record(criterion, ok, detail)``; the line is printed
    immediately (visible with -s) and again in the terminal summary.
    """

    def record(criterion: int, ok: bool, detail: str) -> None:
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'} - {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_mixed_events():
    from lagan.data import synth_mixed

    return synth_mixed(200, seed=7)


@pytest.fixture(scope="session")
def small_images(small_mixed_events):
    from lagan.preprocess import preprocess_events

    return preprocess_events(small_mixed_events)


SMALL_MODEL = {
    "latent_dim": 8,
    "proj_channels": 4,
    "g_conv": (4, 5),
    "g_local": ((2, 5), (2, 3)),
    "d_conv": (4, 5),
    "d_local": ((2, 5), (2, 5), (2, 3)),
    "mbd_kernels": 3,
    "mbd_dim": 2,
}


@pytest.fixture
def small_model_config():
    """Full 25x25 topology with narrow layers, for fast training tests."""
    from lagan.model import LaganConfig

    return LaganConfig(**SMALL_MODEL)
