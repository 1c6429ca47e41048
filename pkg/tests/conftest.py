import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from partscene.geometry import RigidTransform, rotation_about
from partscene.mesh import PrimitiveKind
from partscene.planes import primitive_planes
from partscene.primitives import PartEntity, PrimitiveModel

settings.register_profile(
    "artifact",
    deadline=None,
    derandomize=True,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("artifact")


def make_part(label, cls, size, center, kind=PrimitiveKind.BOX, rotation=None, cloud=None):
    """Part with an exact primitive model and its analytic faces."""
    r = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
    model = PrimitiveModel(kind, np.asarray(size, dtype=float), RigidTransform(r, center))
    return PartEntity(label, cls, cloud, model, tuple(primitive_planes(model)))


def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    return rotation_about(axis / np.linalg.norm(axis), rng.uniform(-max_angle, max_angle))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    # one line per acceptance criterion, shown even when output is captured
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
