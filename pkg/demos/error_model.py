"""
Where stereo stops beating a height prior
==========================================

A one-pixel disparity error costs z**2 / (baseline * focal) meters of depth,
which grows quadratically. Guessing distance from pixel height with an
average human stature costs C * r, which grows linearly. The two curves
cross somewhere past 15 m on a car-mounted rig.
"""

import numpy as np

from stereoloc.geometry import (KITTI_RIG, HeightPrior, crossover_distance, monocular_task_error,
                                stereo_pixel_error, task_error_constant)

rig = KITTI_RIG
prior = HeightPrior()
print(f"rig: baseline {rig.baseline_m} m, focal {rig.focal_px} px, bf = {rig.bf:.2f} px*m")

# expected relative error of the height guess, E|mean/h - 1|
C = task_error_constant(prior)
print(f"height prior N({prior.mean_m}, {prior.std_m}) -> C = {C:.4f}")

# the two error curves side by side
for z in (5.0, 10.0, 20.0, 30.0, 40.0, 50.0):
    print(f"{z:5.0f} m   stereo 1px {stereo_pixel_error(z, rig):6.2f} m   "
          f"height prior {monocular_task_error(z, prior):5.2f} m")

# closed form of the crossing point: z**2 / bf = C * z
z_star = crossover_distance(rig, prior)
print(f"crossover at {z_star:.2f} m (C * bf = {C * rig.bf:.2f} m)")

# sub-pixel disparity pushes the crossover out linearly
for e_d in (0.5, 0.25):
    print(f"disparity error {e_d} px -> crossover {crossover_distance(rig, prior, e_d=e_d):.1f} m")

# quadratic check: doubling distance quadruples the stereo error
z = np.array([10.0, 20.0, 40.0])
print("ratios e(2z)/e(z):", stereo_pixel_error(2 * z, rig) / stereo_pixel_error(z, rig))
