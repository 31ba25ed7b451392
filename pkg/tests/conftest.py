import json
from pathlib import Path

import pytest
import torch

from hmppo.scenario import ResourcePool, Scenario, ServiceClass, SliceSpec, UserProfile

TESTS = Path(__file__).resolve().parent
FIXTURES = TESTS / "fixtures"

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def frozen():
    return json.loads((TESTS / "oracles" / "frozen.json").read_text())


def make_scenario(users=(2,), pool=(100.0, 1e8, 1e9), arrival=1e6, horizon=20, cv=0.0, spread=0.0,
                  num_cells=2, delay_bound=0.1, **kw):
    classes = [ServiceClass.EMBB, ServiceClass.URLLC, ServiceClass.MMTC]
    slices = tuple(SliceSpec(i, classes[i % 3], delay_bound, 1e5, 0.9, float(i + 1)) for i in range(len(users)))
    profiles = tuple(UserProfile(n, arrival, 1000.0, 2.0, 5e7, spread, cv) for n in users)
    return Scenario(slices, profiles, ResourcePool(*pool), num_cells=num_cells, horizon=horizon, **kw)
