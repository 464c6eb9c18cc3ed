"""Heat flow from a 1% perturbation of the sphere; E - 4 pi decays exponentially."""
import math

from bubbletree import flow as fl

g = fl.flow_grid()
op = fl.FlowOperator(g)
u = fl.perturbed_sphere(g, 0.01)
state = fl.run_flow(u, 2.0, op=op, e_inf=4 * math.pi, report_every=100)

for t, E, tau2 in state.history:
    print(f"t={t:.3f}  E-4pi={E - 4 * math.pi:.3e}  |tau|^2={tau2:.3e}")
print(f"dt={state.dt:.3e}  rate={state.rate:.4f}  R^2={state.rate_r2:.5f}")
