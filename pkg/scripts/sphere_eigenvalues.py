"""Spherical harmonics are DN eigenfunctions on the unit ball: G Y_lm = l Y_lm."""
from muskat3d import sphere_dn_at_point
from muskat3d.sphere_dn import random_sphere_points, real_spherical_harmonic

for l, m in [(1, 0), (2, 1), (3, -2), (4, 3)]:
    Y = real_spherical_harmonic(l, m)
    worst = 0.0
    for x in random_sphere_points(5, seed=l):
        got = sphere_dn_at_point(Y, x, tol=1e-10)
        worst = max(worst, abs(got.value - l * float(Y(x))))
    print(f"l={l} m={m:+d}  max |G Y - l Y| = {worst:.2e}")
