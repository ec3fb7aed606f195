import time

import numpy as np

import istlab.scale as sc
from istlab.model import (
    Constant,
    Dirac,
    Exponential,
    Pareto,
    Tabulated,
    TwoPointDeath,
)

E = np.e

# 1. constant (b,d)=(1,2), T=1 vs closed form
b, K = Constant(1.0), Exponential(Constant(2.0))
t0 = time.time()
tab = sc.solve_scale(b, K, 1.0, M=512, tol=1e-10)
dt = time.time() - t0
ts = np.linspace(0, 1, 257)
exact = sc.scale_markov_closed_form(1.0, 2.0, 1.0, ts)
err = np.max(np.abs(tab(np.minimum(ts, 1 - 1e-13)) - exact))
print(f"1a const(1,2) T=1: max err {err:.3e}  sweeps {tab.sweeps}  {dt:.2f}s")
print(f"1b left limit {tab.left_limit():.9f} vs {1/(2-np.exp(-1)):.9f}")
print(f"1c ode residual {sc.ode_residual(tab, b, K):.3e}")

# mesh convergence O(h^2)
errs = []
for M in (64, 128, 256, 512):
    t = sc.solve_scale(b, K, 1.0, M=M, tol=1e-12)
    errs.append(np.max(np.abs(t(np.minimum(ts, 1 - 1e-13))
                              - sc.scale_markov_closed_form(1.0, 2.0, 1.0, ts))))
rates = [np.log2(errs[i] / errs[i + 1]) for i in range(3)]
print(f"2  mesh errs {['%.2e' % e for e in errs]} rates {['%.2f' % r for r in rates]}")

# 3. Dirac(1), T=1: S = exp(-t) exactly (kernel window empty)
tabD = sc.solve_scale(Constant(1.0), Dirac(1.0), 1.0, M=128, tol=1e-12)
errD = np.max(np.abs(tabD.values - np.exp(-tabD.grid)))
print(f"3  dirac(1) T=1: |S - e^-t| = {errD:.3e}  sweeps {tabD.sweeps}")

# 4. TwoPointDeath, b=1, T=2: S(t)=e^-t (1 + (e^{t^1}-1)/(e+1))
tab2 = sc.solve_scale(Constant(1.0), TwoPointDeath(), 2.0, M=256, tol=1e-12)
g = tab2.grid
exact2 = np.exp(-g) * (1 + (np.exp(np.minimum(g, 1.0)) - 1) / (E + 1))
err2 = np.max(np.abs(tab2.values - exact2))
print(f"4  two-point T=2: max err {err2:.3e}  S(1) {float(tab2(1.0)):.9f} vs {2/(E+1):.9f}")

# 5. hitting probability fixture
hp = sc.hitting_probability(tab, 0.2, 0.6)
print(f"5  hitting(0.2,0.6) {hp:.6f} vs 0.142516 (MC was 0.14485)")

# 6. extinction, supercritical (2,1): e^-t0
bx, Kx = Constant(2.0), Exponential(Constant(1.0))
t0 = time.time()
for root_life in (0.5, 1.0, 2.0):
    p, diag = sc.extinction_probability(bx, Kx, root_life, tol=1e-4, full=True)
    print(f"6  ext(2,1) t0={root_life}: {p:.6f} vs {np.exp(-root_life):.6f} "
          f"(ladder T {diag['ladder_T']})")
print(f"   ext ladder time {time.time() - t0:.2f}s")

# subcritical: extinction = 1
p1 = sc.extinction_probability(Constant(1.0), Exponential(Constant(2.0)), 1.5, tol=1e-4)
print(f"6b ext(1,2) t0=1.5: {p1:.6f} vs 1")

# 7. population law fixture (2,1), t0=0.5, t=3
law = sc.population_law(bx, Kx, 0.5, 3.0, tol=1e-12)
print(f"7  pop law p0 {law.p0:.12f} vs 0.5964857642923417")
print(f"   pop law q  {law.q:.12f} vs 0.025529042270372535  flagged {law.flagged}")
law2 = sc.population_law(bx, Kx, 0.5, 0.3)
print(f"7b t<=t0: p0 {law2.p0} flagged {law2.flagged}")

# 8. closed form with tabulated rate b(t)=1+0.5 sin t vs solver (acceptance #2 shape)
ts_tab = np.linspace(0, 1, 2049)
b_tab = Tabulated(ts_tab, 1 + 0.5 * np.sin(ts_tab))
d_tab = Tabulated(ts_tab, np.full_like(ts_tab, 2.0))
tabv = sc.solve_scale(b_tab, Exponential(Constant(2.0)), 1.0, M=512, tol=1e-12)
q = np.linspace(0, 1 - 1e-12, 101)
cf = sc.scale_markov_closed_form(b_tab, d_tab, 1.0, q)
errv = np.max(np.abs(tabv(q) - cf))
print(f"8  varying-rate solver vs closed form: max err {errv:.3e}  sweeps {tabv.sweeps}")

# closed-form quadrature sanity: tabulated-constant vs exact constant
cfc = sc.scale_markov_closed_form(
    Tabulated(ts_tab, np.ones_like(ts_tab)), d_tab, 1.0, q)
print(f"8b closed-form quadrature err {np.max(np.abs(cfc - sc.scale_markov_closed_form(1.0, 2.0, 1.0, q))):.3e}")

# 9. Pareto kernel solve runs and is monotone (heavy tail, no hazard)
tabp = sc.solve_scale(Constant(1.0), Pareto(1.5), 4.0, M=512, tol=1e-10)
print(f"9  pareto(1.5) T=4: S(0)=1 -> left limit {tabp.left_limit():.6f}  sweeps {tabp.sweeps}")

# 10. big-M timing (cap)
t0 = time.time()
tb = sc.solve_scale(bx, Kx, 16.0, M=2048, tol=1e-8)
print(f"10 (2,1) T=16 M=2048: {time.time() - t0:.2f}s  sweeps {tb.sweeps}  S(0.5) {float(tb(0.5)):.8f}")
