import pytest


@pytest.fixture(scope="session")
def untrained_model():
    from feature_bridge.extract import load_model

    return load_model("base-untrained")
