import json

import pytest

from impsim.harness.synth import SyntheticSpec, synth_generate

TINY_SPEC = SyntheticSpec(users=3, classes=2, frames=120, motion_frames=160, prompts_per_class=2,
                          motions_per_prompt=1, calibration_recordings=2, calibration_frames=300, text_dim=16)

TINY_CONFIG = {
    "seeds": [0, 1],
    "grounding": {"schedule": {"max_epochs": 3}},
    "pretrain_schedule": {"max_epochs": 2},
    "pretrain": {"steps_per_epoch": 5, "text_hidden": 32},
    "embedding_dim": 32,
    "finetune_schedule": {"max_epochs": 4},
    "sweep_dims": [8, 16],
    "sweep_fractions": [0.5, 1.0],
}


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    return synth_generate(TINY_SPEC, tmp_path_factory.mktemp("tiny") / "data")


@pytest.fixture(scope="session")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("tinycfg") / "config.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return path


@pytest.fixture(scope="session")
def default_manifest(tmp_path_factory):
    return synth_generate(SyntheticSpec(), tmp_path_factory.mktemp("default") / "data")


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion; call as ``verdict(n, ok, detail)``."""
    def record(number, ok, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_run(default_manifest, tmp_path_factory):
    """Default config on the default synthetic dataset; stages run lazily by the tests that need them."""
    from impsim.harness.config import load_config
    from impsim.harness.manifest import load_manifest

    out = tmp_path_factory.mktemp("defaultrun")
    return load_manifest(default_manifest), load_config(out_dir=str(out), environ={})
