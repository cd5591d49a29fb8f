"""Closed-form and semi-analytic reference values, independent of the package."""

import math

from scipy.special import j0, j1


def bisect(f, a, b, tol=1e-14, max_iter=200):
    fa = f(a)
    if fa * f(b) > 0:
        raise ValueError("root not bracketed")
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        fm = f(m)
        if fa * fm <= 0:
            b = m
        else:
            a, fa = m, fm
        if b - a < tol:
            break
    return 0.5 * (a + b)


def robin_disk_root():
    """Smallest k > 0 with k J1(k) = J0(k): -lap u = k^2 u on the unit disk,
    d_r u + u = 0 on the circle, radial mode u = J0(k r)."""
    # k J1 - J0 is -1 at 0 and positive at the first J0 zero (2.405)
    return bisect(lambda k: k * j1(k) - j0(k), 1e-6, 2.4048)


def robin_disk_lambda():
    return robin_disk_root() ** 2


HEMISPHERE_AREA = 2.0 * math.pi


def radial_transport(density, radii, t):
    """Mass-preserving radial map of the unit disk.

    ``density(t, s)`` is a radial area density; a point at radius r at time 0
    moves to the radius R with ``mass(t, R) / mass(t, 1) = mass(0, r) / mass(0, 1)``.
    """
    from scipy.integrate import quad
    from scipy.optimize import brentq

    def mass(tt, R):
        return quad(lambda s: density(tt, s) * s, 0.0, R, epsabs=1e-14)[0]

    scale = mass(t, 1.0) / mass(0.0, 1.0)
    out = []
    for r in radii:
        if r >= 1.0:
            out.append(1.0)
        elif r <= 0.0:
            out.append(0.0)
        else:
            target = mass(0.0, r) * scale
            out.append(brentq(lambda R: mass(t, R) - target, 0.0, 1.0))
    return out
