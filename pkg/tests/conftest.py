import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: training-heavy acceptance benchmarks (many minutes)")
