import numpy as np
import pytest

from dmgnn import autograd as ag
from dmgnn.config import from_dict, reduced_config
from dmgnn.skeleton import BodySpec, load_body_spec


def toy_body_dict():
    # 4 joints in a chain, plus a 2-part scale
    return {
        "name": "toy4", "n_joints": 4,
        "scales": [
            {"scale_id": 1, "groups": "identity", "edges": [[0, 1], [1, 2], [2, 3]]},
            {"scale_id": 2, "groups": [[0, 1], [2, 3]], "edges": [[0, 1]]},
        ],
    }


def toy_config(**overrides):
    d = {
        "seed": 3,
        "encoder": {"scales": [1, 2], "n_mgcu": 2, "channels": [4, 8], "csfb_positions": [1, 2],
                    "input_frames": 9, "dropout": 0.0, "csfb_hidden": 6},
        "decoder": {"horizon": 2, "hidden": 8, "head_hidden": 5},
        "train": {"batch_size": 3},
    }
    cfg = from_dict(d)
    if overrides:
        from dmgnn.config import apply_overrides
        cfg = from_dict(apply_overrides(cfg.to_dict(), overrides))
    return cfg.validate()


@pytest.fixture
def toy_body():
    return BodySpec.from_dict(toy_body_dict())


@pytest.fixture(scope="session")
def body():
    return load_body_spec()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    return reduced_config()


@pytest.fixture(autouse=True)
def _fresh_tape():
    ag.get_tape().clear()
    yield
    ag.get_tape().clear()


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """``report_criterion(n, ok, detail)`` records one pass/fail line for the
    terminal summary and returns ``ok``."""
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
