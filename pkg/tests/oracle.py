"""Arbitrary-precision reference evaluations, independent of the package code."""

import mpmath as mp

mp.mp.dps = 60


def exponent(t, bmin, bmax):
    t = mp.mpf(t)
    return (mp.mpf(bmax) - mp.mpf(bmin)) / 2 * t * t + mp.mpf(bmin) * t


def sigma(t, bmin=0.1, bmax=20.0):
    return mp.sqrt(mp.expm1(exponent(t, bmin, bmax)))


def t_of_sigma(sig, bmin=0.1, bmax=20.0):
    L = mp.log1p(mp.mpf(sig) ** 2)
    bd, bm = mp.mpf(bmax) - mp.mpf(bmin), mp.mpf(bmin)
    return (-bm + mp.sqrt(bm * bm + 2 * bd * L)) / bd


def power_interp(a, b, frac, p):
    a, b, p = mp.mpf(a), mp.mpf(b), mp.mpf(p)
    return (a ** (1 / p) + mp.mpf(frac) * (b ** (1 / p) - a ** (1 / p))) ** p


def custom_stop(N, p1, p2, stop, t_min=1e-3, t_max=1.0, bmin=0.1, bmax=20.0):
    """(sigma_stop, [t_i], [sigma_i]) with sigma range taken from [t_min, t_max]."""
    smin, smax = sigma(t_min, bmin, bmax), sigma(t_max, bmin, bmax)
    s_stop = power_interp(smax, smin, mp.mpf(stop) / (N + stop + 1), p2)
    t_stop = t_of_sigma(s_stop, bmin, bmax)
    ts = [power_interp(t_max, t_stop, mp.mpf(i) / N, p1) for i in range(N)]
    return s_stop, ts, [sigma(t, bmin, bmax) for t in ts]


def karras(N, p, smin, smax):
    return [power_interp(smax, smin, mp.mpf(i) / (N - 1), p) for i in range(N)]
