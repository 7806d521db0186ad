"""Independent numerical oracles shared by the test suite.

Kept deliberately separate from the package: finite differences, dense SVD
and closed-form values are the yardsticks the fast paths are judged against.
"""

import numpy as np


def central_diff(g, env, i, h):
    e1 = list(env)
    e2 = list(env)
    e1[i] += h
    e2[i] -= h
    return (g(e1) - g(e2)) / (2.0 * h)


def richardson_diff(g, env, i, h):
    """Richardson-extrapolated central difference, O(h^4)."""
    return (4.0 * central_diff(g, env, i, h / 2.0) - central_diff(g, env, i, h)) / 3.0


def fd_gradient(g, env, h=1e-3):
    return np.array([richardson_diff(g, env, i, h) for i in range(len(env))])


def fd_hessian(g, env, h=5e-3):
    m = len(env)
    out = np.empty((m, m))
    for i in range(m):
        def gi(e, i=i):
            return richardson_diff(g, e, i, h)
        for j in range(m):
            out[i, j] = richardson_diff(gi, env, j, h)
    return out


def fd_third(g, env, h=1e-2):
    m = len(env)
    out = np.empty((m, m, m))
    for i in range(m):
        for j in range(m):
            def gij(e, i=i, j=j):
                def gi(e2, i=i):
                    return richardson_diff(g, e2, i, h)
                return richardson_diff(gi, e, j, h)
            for k in range(m):
                out[i, j, k] = richardson_diff(gij, env, k, h)
    return out


def rel_err(got, want, floor=1.0):
    got = np.asarray(got, dtype=float)
    want = np.asarray(want, dtype=float)
    return np.max(np.abs(got - want) / np.maximum(np.abs(want), floor))
