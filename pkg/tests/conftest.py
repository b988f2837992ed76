import os
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))


def pytest_configure(config) -> None:
    config.addinivalue_line("markers", "slow: treinos longos, rodam apenas com DSLA_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items) -> None:
    if os.getenv("DSLA_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="defina DSLA_RUN_SLOW=1 para rodar os testes lentos")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
