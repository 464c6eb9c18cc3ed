import math

import pytest

from bubbletree import model as md
from bubbletree import rational as rat

CRITERIA = {}


def record(key, ok, detail):
    CRITERIA[key] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: int(k[1:])):
        ok, detail = CRITERIA[key]
        terminalreporter.write_line(f"{key:>4} {'PASS' if ok else 'FAIL'}  {detail}")


def same_surface_model(mu, delta):
    U = md.stereographic_descriptor()
    z = rat.RationalMap.monomial(1)
    return md.assemble(md.GluingData(U, U.translated(math.tan(delta / 2)), z, z, mu))


def opposite_model(mu):
    z = rat.RationalMap.monomial(1)
    return md.assemble(md.GluingData(md.stereographic_descriptor(),
                                     md.stereographic_descriptor(conjugated=True), z, z, mu))


def transversal_pair(angle=math.pi / 2):
    from bubbletree.geometry import rotation_matrix

    R = rotation_matrix((1, 3), angle, 4)
    return md.stereographic_descriptor(4), md.stereographic_descriptor(4, rotation=R)


@pytest.fixture
def small_model():
    return same_surface_model(math.exp(6), 0.05)
