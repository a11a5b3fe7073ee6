"""From constants to a certified short-time pinching statement.

The stability budget (eps0, T, eps) is computed for delta = 0.5 and a
curvature bound just above that of the initial metric.  A small enough
perturbation passes the admissibility certificate; the flow is then
sampled densely on [0, 6T] and the space-time average of |Ric - omega|^2
is compared with eps0^2 / 2.  A larger bump fails the energy check.
"""
from krflow.constants import StabilityBudget, admissibility_certificate, budget_table
from krflow.flow import FlowConfig, pinching_window_check, run_flow
from krflow.geometry import riem_sup_norm

for name, value in budget_table(1, 0.5, 2.0):
    print(f"  {name:<16} {value}")

for amp in (2e-4, 5e-2):
    fc = FlowConfig(n=1, nodes=129, amplitude=amp, record_analysis=False)
    P0 = fc.initial_profile()
    budget = StabilityBudget(1, 0.5, 1.1 * riem_sup_norm(P0))
    cert = admissibility_certificate(P0, budget, E1_ref=0.0)
    print(f"\namplitude {amp:g}: E1 = {cert['values']['E1']:.3e} vs eps = {budget.eps:.3e}, certificate {'ok' if cert['ok'] else 'FAILED'}")
    if not cert["ok"]:
        print("  failed checks:", [k for k, ok in cert["checks"].items() if not ok])
        continue
    six_T = 6 * budget.T
    res = run_flow(FlowConfig(**{**fc.__dict__, "t_end": six_T, "cadence": six_T / 60}), psi_ref=P0.psi)
    c = res.column
    v = pinching_window_check(c("t"), c("l2_ric0"), c("ric0_max"), c("Q0_max"), c("E1"), budget, eps_n=fc.eps_n)
    print(f"  6T = {six_T:.3e}; space-time average {v['space_time_average']:.3e} <= {v['space_time_bound']:.3e}")
    print(f"  max|Ric - omega| on [2T, 6T] = {v['ric0_max_2T_6T']:.3e} (eps(n) = {v['eps_n']})")
