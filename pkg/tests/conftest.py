import numpy as np
import pytest

from streamflow.flows import FlowConfig, LatentFlowConfig
from streamflow.net import NetDims, net_init
from streamflow.stream import LATENT, PLAIN, VelocityModel


def constant_field_model(velocity, obs_dim=None, history_len=2, variant=PLAIN):
    """A network whose output is the constant ``velocity`` everywhere."""
    velocity = np.atleast_1d(np.asarray(velocity, dtype=np.float64))
    d = velocity.size
    width = d * (2 if variant == LATENT else 1)
    obs_dim = d if obs_dim is None else obs_dim
    p = net_init(0, NetDims(width, history_len * obs_dim, width, (4,)))
    arrays = [np.zeros_like(x) for x in p.arrays()]
    bias = np.zeros(width)
    bias[:d] = velocity
    arrays[-1] = bias
    flow = LatentFlowConfig() if variant == LATENT else FlowConfig()
    return VelocityModel(p.with_arrays(arrays), flow, d, obs_dim, history_len, variant)


@pytest.fixture
def unit_model():
    return constant_field_model([1.0])


# --- acceptance reporting -------------------------------------------------

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _CRITERIA[mark.args[0]] = (mark.args[1], rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")


@pytest.fixture
def detail(record_property):
    """Attach a measured value to the acceptance summary line."""
    return lambda text: record_property("detail", text)
