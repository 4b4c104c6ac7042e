import numpy as np
import pytest

from patchassoc.distribution import DistributionSpec, desk_spec, make_localized_partition, sample_feature
from patchassoc.rng import stream


@pytest.fixture
def small_partition():
    # 4x4 grid, 2x2 blocks: D=16, C=4, L=4
    return make_localized_partition(4, 4, 2, 2)


@pytest.fixture
def small_spec():
    w = sample_feature(16, stream(11, "feature"))
    return DistributionSpec(d=16, D=16, C=4, L=4, q=0.3, sigma2=1.0 / 16, threshold_frac=0.9, w_star=w)


@pytest.fixture(scope="session")
def desk():
    w = sample_feature(128, stream(0, "feature"))
    return desk_spec(w), make_localized_partition(8, 12, 2, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance verdicts ---------------------------------------------------

ACCEPTANCE_KEY = pytest.StashKey[dict]()

CRITERIA = {
    1: "gradient oracle",
    2: "desk training run",
    3: "linear baseline",
    4: "spurious construction",
    5: "transfer gap",
    6: "idealized dynamics",
    7: "structural invariants",
    8: "label consistency",
    9: "determinism",
}


@pytest.fixture
def verdict(request):
    """``verdict(criterion, check, ok, detail)`` records one sub-check for the summary."""
    store = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(criterion: int, check: str, ok: bool, detail: str = "") -> bool:
        store.setdefault(criterion, []).append((check, bool(ok), detail))
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        checks = store.get(n)
        if not checks:
            terminalreporter.write_line(f"criterion {n} ({name}): NOT RUN")
            continue
        status = "PASS" if all(ok for _, ok, _ in checks) else "FAIL"
        details = "; ".join(f"{c} {'ok' if ok else 'FAILED'}{' ' + d if d else ''}" for c, ok, d in checks)
        terminalreporter.write_line(f"criterion {n} ({name}): {status} | {details}")
