import pytest
import torch

torch.set_num_threads(1)

ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "property: fast invariant checks (acceptance criterion 1)")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
