"""Compiled inner loops for products of locally constant cocycles.

A segment of an orbit is encoded step by step:

``sym[i]``
    index into the table ``tab`` of base matrices,
``rs[i]``
    parameter of a right R2 shear applied before the base (0 for none),
``kind[i]``
    left shear applied after the base: 0 none, 1 an R1 shear, 2 an R2 shear,
``num[i], den[i]``
    the left shear parameter stored as a ratio.

Left shears act on a vector ``(a, b)`` as

* R1: ``a <- (a*den - t*num*b) / den``
* R2: ``b <- (b*den + t*num*a) / den``

so that a shear solved from the very vector it is applied to annihilates the
target component exactly in floating point. Zero shears are skipped, which
keeps ``t = 0`` bit-identical to the unsheared cocycle.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

RENORM = 32
LN2 = math.log(2.0)


@njit(cache=True, nogil=True)
def _step_mat(tab, sym, rs, kind, num, den, t, i, m):
    # m <- S_left * base * S_right * m, column by column
    k = sym[i]
    b00 = tab[k, 0, 0]
    b01 = tab[k, 0, 1]
    b10 = tab[k, 1, 0]
    b11 = tab[k, 1, 1]
    s = t * rs[i]
    for c in range(2):
        a = m[0, c]
        b = m[1, c]
        if s != 0.0:
            b = b + s * a
        a2 = b00 * a + b01 * b
        b2 = b10 * a + b11 * b
        kd = kind[i]
        tn = t * num[i]
        if kd == 1 and tn != 0.0:
            a2 = (a2 * den[i] - tn * b2) / den[i]
        elif kd == 2 and tn != 0.0:
            b2 = (b2 * den[i] + tn * a2) / den[i]
        m[0, c] = a2
        m[1, c] = b2


@njit(cache=True, nogil=True)
def _renorm(m):
    # exact rescaling by a power of two; returns the exponent removed
    s = max(abs(m[0, 0]), abs(m[0, 1]), abs(m[1, 0]), abs(m[1, 1]))
    if s == 0.0 or not np.isfinite(s):
        return 0
    e = math.frexp(s)[1]
    f = math.ldexp(1.0, -e)
    m *= f
    return e


@njit(cache=True, nogil=True)
def _renorm_cols(m, ex):
    for c in range(2):
        s = max(abs(m[0, c]), abs(m[1, c]))
        if s != 0.0 and np.isfinite(s):
            e = math.frexp(s)[1]
            f = math.ldexp(1.0, -e)
            m[0, c] *= f
            m[1, c] *= f
            ex[c] += e


@njit(cache=True, nogil=True)
def product(tab, sym, rs, kind, num, den, t, lo, hi):
    """Ordered product of steps ``lo..hi-1`` as (matrix, log scale).

    Columns carry separate exponents while multiplying, so a column far
    smaller than the other is not flushed to zero before it can grow again;
    they are brought to a common scale only at the end.
    """
    m = np.eye(2)
    ex = np.zeros(2, dtype=np.int64)
    n = 0
    for i in range(lo, hi):
        _step_mat(tab, sym, rs, kind, num, den, t, i, m)
        n += 1
        if n == RENORM:
            _renorm_cols(m, ex)
            n = 0
    _renorm_cols(m, ex)
    top = max(ex[0], ex[1])
    for c in range(2):
        d = ex[c] - top
        m[0, c] = math.ldexp(m[0, c], d)
        m[1, c] = math.ldexp(m[1, c], d)
    top += _renorm(m)
    return m, top * LN2


@njit(cache=True, nogil=True)
def push(tab, sym, rs, kind, num, den, t, lo, hi, v0, v1):
    """Push ``(v0, v1)`` through steps ``lo..hi-1``.

    The vector is rescaled by a power of two at the start of every step and the
    exponents are accumulated in ``ex``; the returned vector is the raw output
    of the last step, so ``v * 2**ex`` is the true image.
    """
    a = v0
    b = v1
    ex = 0
    for i in range(lo, hi):
        s0 = max(abs(a), abs(b))
        if s0 == 0.0:
            break
        e = math.frexp(s0)[1]
        f = math.ldexp(1.0, -e)
        a *= f
        b *= f
        ex += e
        s = t * rs[i]
        if s != 0.0:
            b = b + s * a
        k = sym[i]
        a2 = tab[k, 0, 0] * a + tab[k, 0, 1] * b
        b2 = tab[k, 1, 0] * a + tab[k, 1, 1] * b
        kd = kind[i]
        tn = t * num[i]
        if kd == 1 and tn != 0.0:
            a2 = (a2 * den[i] - tn * b2) / den[i]
        elif kd == 2 and tn != 0.0:
            b2 = (b2 * den[i] + tn * a2) / den[i]
        a = a2
        b = b2
    return a, b, ex


@njit(cache=True, nogil=True)
def log_norm_products(tab, sym, rs, kind, num, den, t, starts, stops):
    """``log ||product||`` (spectral norm) for many segments."""
    out = np.empty(len(starts))
    for j in range(len(starts)):
        m, ls = product(tab, sym, rs, kind, num, den, t, starts[j], stops[j])
        out[j] = ls + math.log(spectral_norm(m))
    return out


@njit(cache=True, nogil=True)
def spectral_norm(m):
    """Largest singular value of a 2x2 matrix in closed form."""
    a = m[0, 0]
    b = m[0, 1]
    c = m[1, 0]
    d = m[1, 1]
    f = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = max(f * f - 4.0 * det * det, 0.0)
    return math.sqrt(0.5 * (f + math.sqrt(disc)))


@njit(cache=True, nogil=True)
def product_table(tab, sym, lo, hi):
    """Product of plain table steps ``lo..hi-1`` as (matrix, log scale)."""
    m = np.eye(2)
    ex = np.zeros(2, dtype=np.int64)
    n = 0
    for i in range(lo, hi):
        k = sym[i]
        for c in range(2):
            a = m[0, c]
            b = m[1, c]
            m[0, c] = tab[k, 0, 0] * a + tab[k, 0, 1] * b
            m[1, c] = tab[k, 1, 0] * a + tab[k, 1, 1] * b
        n += 1
        if n == RENORM:
            _renorm_cols(m, ex)
            n = 0
    _renorm_cols(m, ex)
    top = max(ex[0], ex[1])
    for c in range(2):
        d = ex[c] - top
        m[0, c] = math.ldexp(m[0, c], d)
        m[1, c] = math.ldexp(m[1, c], d)
    top += _renorm(m)
    return m, top * LN2


@njit(cache=True, nogil=True)
def _lin(c1, m1, l1, c2, m2, l2):
    # c1 * m1 e^l1 + c2 * m2 e^l2, as (mantissa, log)
    x = c1 * m1
    y = c2 * m2
    if x == 0.0 and y == 0.0:
        return 0.0, 0.0
    if x == 0.0:
        r = y
        l = l2
    elif y == 0.0:
        r = x
        l = l1
    elif l1 >= l2:
        r = x + y * math.exp(l2 - l1)
        l = l1
    else:
        r = y + x * math.exp(l1 - l2)
        l = l2
    if r == 0.0:
        return 0.0, 0.0
    s = abs(r)
    return r / s, l + math.log(s)


@njit(cache=True, nogil=True)
def push_log(tab, sym, rs, kind, num, den, t, lo, hi, v0, v1):
    """Like :func:`push` with a separate log scale per component.

    Returns ``(ma, la, mb, lb)`` with image ``(ma e^la, mb e^lb)``; a component
    far below the other does not underflow.
    """
    ma, la = _lin(1.0, v0, 0.0, 0.0, 0.0, 0.0)
    mb, lb = _lin(1.0, v1, 0.0, 0.0, 0.0, 0.0)
    for i in range(lo, hi):
        s = t * rs[i]
        if s != 0.0:
            mb, lb = _lin(1.0, mb, lb, s, ma, la)
        k = sym[i]
        na, nla = _lin(tab[k, 0, 0], ma, la, tab[k, 0, 1], mb, lb)
        nb, nlb = _lin(tab[k, 1, 0], ma, la, tab[k, 1, 1], mb, lb)
        kd = kind[i]
        tn = t * num[i]
        if kd == 1 and tn != 0.0:
            na, nla = _lin(1.0, na, nla, -tn / den[i], nb, nlb)
        elif kd == 2 and tn != 0.0:
            nb, nlb = _lin(1.0, nb, nlb, tn / den[i], na, nla)
        ma, la, mb, lb = na, nla, nb, nlb
    return ma, la, mb, lb
