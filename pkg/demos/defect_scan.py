"""Energy defect of same-surface models against delta^2 at fixed mu."""
import math

import numpy as np

from bubbletree import energy as en
from bubbletree import model as md
from bubbletree import rational as rat

mu = math.exp(8)
U = md.stereographic_descriptor()
z = rat.RationalMap.monomial(1)

deltas = np.linspace(0.01, 0.1, 6)
defects = []
for delta in deltas:
    m = md.assemble(md.GluingData(U, U.translated(math.tan(delta / 2)), z, z, mu))
    rep = en.energy_defect(m, with_dual=False)
    defects.append(rep.defect)
    print(f"delta={delta:.3f}  defect={rep.defect:.6e}  defect/delta^2={rep.defect / delta**2:.5f}")

slope = float(np.dot(deltas**2, defects) / np.dot(deltas**2, deltas**2))
print(f"fitted slope {slope:.5f}, pi*c = {math.pi * m.c_mu:.5f}")
