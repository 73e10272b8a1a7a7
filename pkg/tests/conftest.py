import numpy as np
import pytest

from dtisac.world import Action, BSConfig, ChannelParams, SensingParams, WorldState


def make_state(ue_pos, tgt_pos=((10.0, 0.0),), n_bs=1, serving=None, ue_vel=None, tgt_vel=None,
               rcs=None, fading=None, t=0.0):
    ue_pos = np.asarray(ue_pos, dtype=float).reshape(-1, 2)
    tgt_pos = np.asarray(tgt_pos, dtype=float).reshape(-1, 2)
    return WorldState(
        t=t,
        ue_pos=ue_pos,
        ue_vel=np.zeros_like(ue_pos) if ue_vel is None else np.asarray(ue_vel, float).reshape(-1, 2),
        serving=np.zeros(len(ue_pos), dtype=int) if serving is None else np.asarray(serving),
        tgt_pos=tgt_pos,
        tgt_vel=np.zeros_like(tgt_pos) if tgt_vel is None else np.asarray(tgt_vel, float).reshape(-1, 2),
        rcs=np.ones(len(tgt_pos)) if rcs is None else np.asarray(rcs, float),
        fading=np.ones((n_bs, len(ue_pos))) if fading is None else np.asarray(fading, float),
    )


def make_action(p_comm, p_sense, theta_comm, theta_sense):
    return Action(*(np.atleast_1d(np.asarray(x, dtype=float)) for x in
                    (p_comm, p_sense, theta_comm, theta_sense)))


@pytest.fixture
def unit_bs():
    """Isotropic-peak BS at the origin with unit gains."""
    return BSConfig(id=0, pos=(0.0, 0.0), g_max_tx=1.0, g_rx=1.0)


@pytest.fixture
def channel():
    return ChannelParams()


@pytest.fixture
def sensing():
    return SensingParams()


# -- acceptance line collection -------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
