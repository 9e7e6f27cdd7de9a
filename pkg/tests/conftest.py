import os

import pytest

from stormpanel.synthetic import build_fixture

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURE_DIR = os.path.join(REPO_ROOT, "fixture")


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """A fresh copy of the synthetic dataset (never mutate the shipped one)."""
    d = tmp_path_factory.mktemp("fixture")
    build_fixture(d)
    return d


def write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path
