import pytest

from biasbp.cli import main
from biasbp.gnn import GnnParams


@pytest.fixture(scope="session")
def trained_checkpoint(tmp_path_factory):
    """The default training regimen, run once per session through the CLI."""
    root = tmp_path_factory.mktemp("model")
    ckpt = root / "gnn.json"
    assert main(["train", "--seed", "0", "--checkpoint", str(ckpt), "--out", str(root / "curve.csv")]) == 0
    return ckpt


@pytest.fixture(scope="session")
def trained_params(trained_checkpoint):
    return GnnParams.load(trained_checkpoint)


# -- acceptance report ------------------------------------------------------------

ACCEPTANCE: dict = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict: criterion(number, ok, detail)."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        with request.config.pluginmanager.get_plugin("capturemanager").global_and_fixture_disabled():
            print(f"\n{line}")
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
