"""A small Monte Carlo comparison of the three forecasts.

Panels follow a two-factor model with loadings of strength ``N^alpha``.
The forecast target is the predictable part ``f_T' gamma`` so the MSFE
measures estimation error only. Ridge and random projections are tuned ex
post over their grids; PCA uses the true factor count.
"""
from diffuse import simulation as sim

grids = sim.Grids(rp_draws=30)
print("alpha   n=t   pca    ridge/pca  rp/pca")
for alpha in (0.5, 1.0):
    for n in (50, 100):
        cfg = sim.DgpConfig(n=n, t=n, alpha=alpha, reps=60, master_seed=3)
        res = sim.run_monte_carlo(cfg, grids=grids, methods=("pca", "ridge", "rp"))
        print(f"{alpha:5.2f}  {n:4d}  {res.msfe('pca'):.3f}  {res.relative('ridge'):9.3f}  {res.relative('rp'):6.3f}")

# With serially correlated idiosyncratic noise two factors are no longer
# enough, and letting PCA choose its factor count ex post helps.
cfg = sim.DgpConfig(n=100, t=100, alpha=0.5, rho=0.7, reps=60, master_seed=4)
res = sim.run_monte_carlo(cfg, methods=("pca", "pca_k", "ridge"))
best = res.methods["pca_k"].best
print(f"rho=0.7: pca {res.msfe('pca'):.3f}, pca with {best} factors {res.msfe('pca_k'):.3f}, ridge {res.msfe('ridge'):.3f}")
