import pytest

from rgt.config import RunConfig, from_dict

SMALL_RUN = {
    "model": {"image_size": 32, "patch_size": 4, "grid_size": 4, "sampling_iters": 2, "dim": 16,
              "heads": 2, "image_depth": 1, "radiomics_depth": 1, "proj_dim": 8},
    "data": {"image_size": 32, "disk_radius": 4, "grating_size": 8, "n_train": 24,
             "n_test": 10, "seed": 5},
    "train": {"epochs": 2, "batch_size": 8, "warmup_epochs": 1},
}


def small_config(**overrides) -> RunConfig:
    """A config that trains in about a second; overrides are merged per section."""
    return from_dict({k: dict(v) for k, v in SMALL_RUN.items()}).with_overrides(**overrides)


@pytest.fixture
def small_cfg():
    return small_config()


# criterion number -> one-line PASS/FAIL result, filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
