import re
from pathlib import Path

import pytest

from layoutinstruct import cli

FIXTURES = Path(__file__).parent / "fixtures"

_acceptance: dict = {}


def run_cli(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def pretrain_out(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("pretrain")
    rc = run_cli("build-pretrain", "--config", FIXTURES / "pretrain" / "config.json",
                 "--out", out, "--total", 900, "--mock-llm", "--seed", 7)
    assert rc == 0
    return out


@pytest.fixture(scope="session")
def sft_out(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("sft")
    rc = run_cli("build-sft", "--config", FIXTURES / "sft" / "config.json",
                 "--out", out, "--total", 100, "--mock-llm", "--seed", 7)
    assert rc == 0
    return out


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or report.failed:
        _acceptance[n] = (report.passed and _acceptance.get(n, (True,))[0], report.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        ok, nodeid = _acceptance[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  ({nodeid.split('::')[-1]})")
