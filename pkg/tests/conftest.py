import hypothesis
import numpy as np
import pytest

np.seterr(all="warn")

hypothesis.settings.register_profile(
    "ci", max_examples=100, deadline=None, derandomize=True
)
hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.load_profile("ci")


@pytest.fixture
def demo_sample():
    from demo_fixtures import build_demo_sample

    return build_demo_sample()
