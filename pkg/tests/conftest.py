import os

import pytest


def pytest_collection_modifyitems(config, items):
    if os.environ.get("W2SNN_OPTIONAL") == "1":
        return
    skip = pytest.mark.skip(reason="optional trend study; set W2SNN_OPTIONAL=1 to run")
    for item in items:
        if "optional" in item.keywords:
            item.add_marker(skip)
