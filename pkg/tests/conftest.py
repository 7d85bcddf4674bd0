import numpy as np
import pytest

from psrspoof.config import Config
from psrspoof.features import pretrain_quantizer
from psrspoof.generator import scenario_pair, usable_pair


@pytest.fixture(scope="session")
def cfg():
    return Config()


@pytest.fixture(scope="session")
def quiet_cfg():
    """Noise-free world: no white, correlated or clock noise, no dropouts, no spoofer errors."""
    return Config().replace(white_sigma_zenith_m=0.0, correlated_sigma_zenith_m=0.0,
                            clock_drift_noise=0.0, clock_drift_sigma_mps=0.0,
                            dropout_probability=0.0, position_error_sigma_m=0.0,
                            time_error_sigma_m=0.0, noise_tracking_gain=1.0)


@pytest.fixture(scope="session")
def pairs(cfg):
    """A few usable pairs of each attack kind under the default config."""
    out = []
    for i in range(6):
        kind = "targeted" if i % 2 == 0 else "regional"
        out.append(usable_pair(cfg, lambda a, i=i: 1000 + 100 * i + a, kind)[1])
    return out


@pytest.fixture(scope="session")
def small_quantizer():
    rng = np.random.default_rng(3)
    q, _ = pretrain_quantizer(rng.uniform(-5, 5, 20_000), N=8, epochs=2, rng=1)
    return q


@pytest.fixture(scope="session")
def desk_pairs(cfg):
    """32 encoded training pairs from the default generator, balanced by kind."""
    from psrspoof.dataset import balanced_kinds, scenario_seed
    from psrspoof.train import EncodedPair
    out = []
    for i, kind in enumerate(balanced_kinds(32)):
        out.append(EncodedPair.from_pair(usable_pair(cfg, lambda a, i=i: scenario_seed(2024, 0, i, a), kind)[1]))
    return out


@pytest.fixture(scope="session")
def desk_quantizer(desk_pairs):
    from psrspoof.pipeline import fit_quantizer
    q, _ = fit_quantizer(desk_pairs, 64, 5, 50_000, 0)
    return q


# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion (echoed in the terminal summary)."""
    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
