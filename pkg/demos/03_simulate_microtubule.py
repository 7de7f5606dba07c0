"""Bending a coarse-grained microtubule and reading off the dataset tensors.

One simulation run: clamp the first two rings, ramp a downward load on the
last two, integrate with velocity Verlet plus a weak Langevin bath, and save
frames of per-particle state and potential energy. Repeating this over a
grid of interaction strengths is exactly what `generate_dataset` does.
"""

import numpy as np

from gpcn.simulator import (
    SimConfig,
    build_geometry,
    forces_and_energy,
    run_simulation,
    tip_deflection,
)

model = build_geometry(12, 13, 3)
print(f"lattice: {model.n} particles, {len(model.bond_idx)} bonds, "
      f"{len(model.angle_idx)} angles")
print(f"rest bond lengths (nm): "
      f"{sorted(set(np.round(model.bond_rest, 5)))}")
print(f"rest angles (deg): "
      f"{sorted(set(np.round(np.degrees(model.angle_rest), 3)))}")

kb, ka = model.strength_vectors({})
_, _, rest_energy = forces_and_energy(model, model.positions, kb, ka)
print(f"potential energy at rest: {rest_energy:.2e}")

for strength in (0.1, 1.0, 1.9):
    config = SimConfig(strengths={name: strength for name in
                                  ("LatAssoc", "LongAssoc", "LatAngle", "LongAngle", "QuadAngles")})
    frames = run_simulation(model, config, seed=0)
    final = frames[-1]
    print(f"\nstrength x{strength}: {len(frames)} frames")
    print(f"  tip deflection {tip_deflection(model, final):7.3f} nm")
    print(f"  total stored energy {final.y.sum():9.3f}")
    print(f"  frame tensor {final.x.shape}: position, velocity, "
          f"and the four recorded interaction coefficients")
