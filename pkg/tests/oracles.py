"""Independent reference computations used by the tests."""

import math

import mpmath
import numpy as np

M = 1e4


def _fixed_step(g, y0, y1, panels, chunk=1_000_000):
    """Midpoint rule for ``int g(e^y) e^y dy`` on ``[y0, y1]``."""
    h = (y1 - y0) / panels
    total = 0.0
    for start in range(0, panels, chunk):
        k = np.arange(start, min(panels, start + chunk))
        w = np.exp(y0 + (k + 0.5) * h)
        total += float(np.sum(g(w) * w))
    return total * h


def brute_rate_constants(kappa, panels=10**7, M=M, floor=-60.0):
    """``(R_-, R_+)`` at gamma = 1 by fixed-step quadrature after ``s - a = e^y``.

    The exponential substitution turns the endpoint cusps and the long decay
    to M into smooth integrands on a bounded interval. Uses the same
    leading-order tail beyond M as the library.
    """
    k = kappa
    tail = k * k * M ** (2 * k - 1) / (1 - 2 * k)
    # R_-: int_0^1 s^(2k) ds + int_1^M ((s-1)^k - s^k)^2 ds, with s - 1 = w on the second piece
    head = _fixed_step(lambda w: w ** (2 * k), floor, 0.0, panels)
    body = _fixed_step(lambda w: (w**k - (1 + w) ** k) ** 2, floor, math.log(M - 1), panels)
    r_minus = head + body + tail
    # R_+: int_{-1}^0 (s+1)^(2k) ds + int_0^M ((s+1)^k - s^k)^2 ds
    head = _fixed_step(lambda w: w ** (2 * k), floor, 0.0, panels)
    body = _fixed_step(lambda w: ((1 + w) ** k - w**k) ** 2, floor, math.log(M), panels)
    r_plus = head + body + tail
    return r_minus, r_plus


def exact_tail(kappa, sign, M=M):
    """``int_M^inf ((s + sign)^k - s^k)^2 ds`` in 40-digit arithmetic."""
    with mpmath.workdps(40):
        k = mpmath.mpf(kappa)
        f = lambda s: ((s + sign) ** k - s**k) ** 2
        return float(mpmath.quad(f, [M, 10 * M, 1000 * M, mpmath.inf]))
