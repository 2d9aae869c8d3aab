import numpy as np
import pytest

from asyncsa import drift, engine, noise, schedule

B4 = np.array([1.0, -2.0, 0.5, 3.0])

_ACCEPTANCE_LINES = []


def record_acceptance(line: str):
    print(line)
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def criterion1_config(seed=0, horizon=10**6, recording="full") -> engine.RunConfig:
    return engine.RunConfig(
        drift=drift.affine_field(-np.eye(4), B4),
        schedule=schedule.harmonic(),
        updates=schedule.UpdateSetProcess("uniform_single", 4),
        x0=np.zeros(4),
        horizon=horizon,
        seed=seed,
        martingale=noise.gaussian_noise(4, 0.1),
        recording=recording,
    )


@pytest.fixture(scope="session")
def crit1_history():
    return engine.run(criterion1_config())


@pytest.fixture(scope="session")
def small_history():
    return engine.run(criterion1_config(horizon=20_000))
