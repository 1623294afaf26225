import numpy as np
import pytest

from neurostage import phantoms

# Collected acceptance outcomes, printed one per criterion in the
# terminal summary (outside capture, so always visible).
_ACCEPTANCE_RESULTS = []


@pytest.fixture
def record_criterion():
    def _record(cid, passed, detail):
        _ACCEPTANCE_RESULTS.append((cid, bool(passed), detail))
        assert passed, f"{cid}: {detail}"

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for cid, passed, detail in sorted(_ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status} {cid}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240814)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Tiny labelled phantom corpus: 3 classes x 3 patients x 4 slices."""
    root = tmp_path_factory.mktemp("small_corpus")
    phantoms.generate_corpus(
        root, patients_per_class=3, scans_per_patient=1, slices_per_scan=4, seed=7
    )
    return root


@pytest.fixture(scope="session")
def phantom_corpus(tmp_path_factory):
    """The 600-slice acceptance corpus: 3 classes x 10 patients x 20 slices."""
    root = tmp_path_factory.mktemp("phantom_corpus")
    n = phantoms.generate_corpus(
        root, patients_per_class=10, scans_per_patient=1, slices_per_scan=20, seed=42
    )
    assert n == 600
    return root
