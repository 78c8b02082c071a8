import pytest

from hindsight.env import ScenarioRegistry


@pytest.fixture(scope="session")
def registry() -> ScenarioRegistry:
    return ScenarioRegistry()
