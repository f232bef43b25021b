import numpy as np
import pytest

from prognostic.cohort import Cohort, PatientRecord
from prognostic.synth import GeneratorConfig, generate_synthetic


@pytest.fixture(scope="session")
def small_synth():
    """A 1,500-record synthetic cohort with a raised event rate for quick fits."""
    return generate_synthetic(GeneratorConfig(n=1500, event_rate=0.08), 11)


@pytest.fixture(scope="session")
def small_cohort(small_synth):
    return small_synth.cohort


def make_cohort(rng, n, horizon=5.0, event_rate=0.3):
    """Fully observed random cohort with independent outcomes."""
    recs = []
    for _ in range(n):
        ev = int(rng.random() < event_rate)
        recs.append(PatientRecord(
            age=float(rng.uniform(40, 85)),
            nodal_stage=["N0", "N1", "N2", "N3"][rng.integers(4)],
            node_count=int(rng.integers(0, 8)),
            laterality=["left", "right"][rng.integers(2)],
            er=int(rng.integers(2)), pr=int(rng.integers(2)),
            size_mm=float(rng.uniform(3, 60)), grade=int(rng.integers(1, 4)),
            radiotherapy=int(rng.integers(2)), chemotherapy=int(rng.integers(2)),
            trastuzumab=int(rng.integers(2)),
            time=float(rng.uniform(0.1, horizon)) if ev else float(rng.uniform(0.1, horizon)),
            event=ev,
        ))
    return Cohort.from_records(recs, horizon=horizon)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
