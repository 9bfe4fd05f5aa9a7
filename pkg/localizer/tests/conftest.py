import sys
from pathlib import Path

import pytest

PROJECT_DIR = Path(__file__).resolve().parents[1]
if str(PROJECT_DIR) not in sys.path:
    sys.path.insert(0, str(PROJECT_DIR))


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """(train.csv, test.csv, manifest.json) of the synthetic toy dataset."""
    from seed_data import generate_toy_dataset

    return generate_toy_dataset(tmp_path_factory.mktemp("toy"))
