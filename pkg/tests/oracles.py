"""Independent reference computations used as test oracles."""

import math

import numpy as np
from scipy import integrate

from pchazard.model import CutGrid, ModelParams


def ab_quadrature(left, right, lin, params: ModelParams, grid: CutGrid):
    """A and B by adaptive quadrature of the conditional density.

    Inside piece k the integrand is written relative to the survival at the
    start of the overlap, so tiny masses keep full relative precision.
    """
    rates = np.exp(params.log_hazard) * math.exp(lin)
    K = grid.K

    def cum(t):
        if math.isinf(t):
            return math.inf
        e = grid.exposure(t)
        return float(np.sum(np.where(e > 0, e * rates, 0.0)))

    lam_l = cum(left)
    mass = -math.expm1(-(cum(right) - lam_l))
    A = np.zeros(K)
    B = np.zeros(K)
    for k in range(K):
        lo = max(grid.lower[k], left)
        hi = min(grid.upper[k], right)
        if not lo < hi:
            continue
        h = rates[k]
        w = math.exp(-(cum(lo) - lam_l))

        def f(t, lo=lo, h=h):
            return h * math.exp(-h * (t - lo))

        c = grid.lower[k]
        if math.isinf(hi):
            a_val = integrate.quad(f, lo, math.inf, epsabs=0, epsrel=1e-13, limit=200)[0]
            b_val = integrate.quad(lambda t: (t - c) * f(t), lo, math.inf, epsabs=0, epsrel=1e-13, limit=200)[0]
        else:
            a_val = integrate.quad(f, lo, hi, epsabs=0, epsrel=1e-13, limit=200)[0]
            b_val = integrate.quad(lambda t: (t - c) * f(t), lo, hi, epsabs=0, epsrel=1e-13, limit=200)[0]
        A[k] = w * a_val / mass
        B[k] = w * b_val / mass
    return A, B


def central_gradient(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def central_jacobian(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.column_stack(cols)


def rel_err(approx, exact) -> float:
    approx, exact = np.asarray(approx, dtype=float), np.asarray(exact, dtype=float)
    scale = max(np.max(np.abs(exact)), 1e-300)
    return float(np.max(np.abs(approx - exact)) / scale)
