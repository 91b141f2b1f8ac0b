import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mafnet import set_checked


@pytest.fixture(autouse=True)
def checked_mode():
    set_checked(True)
    yield
    set_checked(True)
