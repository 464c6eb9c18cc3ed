"""Dual norm of dE for opposite-orientation and same-orientation models along mu."""
import math

from bubbletree import energy as en
from bubbletree import model as md
from bubbletree import rational as rat

z = rat.RationalMap.monomial(1)
U = md.stereographic_descriptor()
pairs = {
    "opposite": (U, md.stereographic_descriptor(conjugated=True)),
    "same, delta=0": (U, U),
}

for name, (U0, U1) in pairs.items():
    for L in (6, 8, 10):
        m = md.assemble(md.GluingData(U0, U1, z, z, math.exp(L)))
        rep = en.energy_defect(m)
        print(f"{name:14s} log mu={L:2d}  nu_bar={m.diagnostics.nu_bar:.3e}  "
              f"dual={rep.dual_norm_lower_bound:.3e}  dual/nu_bar={rep.dual_norm_lower_bound / m.diagnostics.nu_bar:.3f}")
