"""The same vortex as a cloud of random particles.

The vorticity equation has a second life: the density of a stochastic
particle whose drift is the velocity generated by its own law.  Simulating
N coupled copies and smoothing their positions recovers the PDE solution.
This script runs a modest cloud from a mollified atom and compares the
smoothed marginal with the closed form, along with the mean-square radius,
which should grow exactly linearly in time.

Run with:  python3 demos/particle_cloud.py
"""

from vortexlab import Grid2D, SdeConfig, lamb_oseen, simulate

NU = 0.05
SIGMA0_SQ = 0.0225
N_PARTICLES = 4000

kde_grid = Grid2D(4.0, 64)
offset = SIGMA0_SQ / (2.0 * NU)
cfg = SdeConfig(nu=NU, t_end=1.0, dt=0.025, n_particles=N_PARTICLES, seed=0,
                method="direct", kde_grid=kde_grid,
                snapshot_times=(0.25, 0.5, 0.75, 1.0))

ptraj = simulate([(1.0, (0.0, 0.0))], cfg,
                 reference=lambda t: lamb_oseen.vorticity_field(
                     kde_grid, t + offset, NU),
                 sigma0_sq=SIGMA0_SQ)

print(f"{N_PARTICLES} particles, dt={cfg.dt}, seed={cfg.seed}")
print(f"\n{'t':>5} {'KDE L1 err':>11} {'<|X|^2>':>9} {'2(s0+2 nu t)':>13}")
for d in ptraj.diagnostics:
    if "e_l1" not in d:
        continue
    t = d["time"]
    # radial second moment of the law: 2 sigma^2(t) with sigma^2 = s0 + 2 nu t
    theory = 2.0 * (SIGMA0_SQ + 2.0 * NU * t)
    print(f"{t:5.2f} {d['e_l1']:11.4f} {d['mean_sq_radius']:9.4f} "
          f"{theory:13.4f}")

print("\nThe KDE error shrinks like N^(-1/3); quadruple N to see it drop.")
