"""Orientation and in-sphere tests with a floating-point filter and exact fallback.

Sign conventions:

* ``orient3d(a, b, c, d) > 0`` when ``d`` lies on the side of the plane
  ``abc`` that ``(b - a) x (c - a)`` points to.
* ``insphere(a, b, c, d, e) > 0`` when ``e`` is strictly inside the
  circumsphere of a tetrahedron with ``orient3d(a, b, c, d) > 0``.

Values near zero are re-evaluated with rational arithmetic, so the returned
signs are exact for float64 inputs.
"""

from fractions import Fraction

import numpy as np

_ORIENT_ERR = 1e-14
_INSPHERE_ERR = 1e-12


def _det3(m):
    return (
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    )


def _orient_exact(a, b, c, d):
    a, b, c, d = ([Fraction(float(x)) for x in p] for p in (a, b, c, d))
    return _det3([[b[i] - a[i] for i in range(3)], [c[i] - a[i] for i in range(3)], [d[i] - a[i] for i in range(3)]])


def _insphere_exact(a, b, c, d, e):
    e = [Fraction(float(x)) for x in e]
    rows = []
    for p in (a, b, c, d):
        q = [Fraction(float(p[i])) - e[i] for i in range(3)]
        rows.append(q + [q[0] * q[0] + q[1] * q[1] + q[2] * q[2]])
    total = Fraction(0)
    for col in range(4):
        minor = [[r[k] for k in range(4) if k != col] for r in rows[1:]]
        term = rows[0][col] * _det3(minor)
        total += term if col % 2 == 0 else -term
    return -total


def _sign(x) -> int:
    return (x > 0) - (x < 0)


def orient3d_batch(a, b, c, d) -> np.ndarray:
    """Exact signs of ``orient3d`` for row-aligned (n, 3) arrays."""
    a, b, c, d = (np.asarray(p, dtype=np.float64).reshape(-1, 3) for p in (a, b, c, d))
    u, v, w = b - a, c - a, d - a
    det = (
        u[:, 0] * (v[:, 1] * w[:, 2] - v[:, 2] * w[:, 1])
        - u[:, 1] * (v[:, 0] * w[:, 2] - v[:, 2] * w[:, 0])
        + u[:, 2] * (v[:, 0] * w[:, 1] - v[:, 1] * w[:, 0])
    )
    au, av, aw = np.abs(u), np.abs(v), np.abs(w)
    perm = (
        au[:, 0] * (av[:, 1] * aw[:, 2] + av[:, 2] * aw[:, 1])
        + au[:, 1] * (av[:, 0] * aw[:, 2] + av[:, 2] * aw[:, 0])
        + au[:, 2] * (av[:, 0] * aw[:, 1] + av[:, 1] * aw[:, 0])
    )
    out = np.sign(det).astype(np.int8)
    for i in np.flatnonzero(np.abs(det) <= _ORIENT_ERR * perm):
        out[i] = _sign(_orient_exact(a[i], b[i], c[i], d[i]))
    return out


def insphere_batch(a, b, c, d, e) -> np.ndarray:
    """Exact signs of ``insphere`` for row-aligned (n, 3) arrays (broadcasting allowed)."""
    a, b, c, d, e = np.broadcast_arrays(*(np.asarray(p, dtype=np.float64) for p in (a, b, c, d, e)))
    shape = a.shape[:-1]
    a, b, c, d, e = (p.reshape(-1, 3) for p in (a, b, c, d, e))
    rows = [p - e for p in (a, b, c, d)]
    lifts = [np.einsum("ij,ij->i", r, r) for r in rows]

    def minor(r0, r1, r2):
        return (
            r0[:, 0] * (r1[:, 1] * r2[:, 2] - r1[:, 2] * r2[:, 1])
            - r0[:, 1] * (r1[:, 0] * r2[:, 2] - r1[:, 2] * r2[:, 0])
            + r0[:, 2] * (r1[:, 0] * r2[:, 1] - r1[:, 1] * r2[:, 0])
        )

    def pminor(r0, r1, r2):
        r0, r1, r2 = np.abs(r0), np.abs(r1), np.abs(r2)
        return (
            r0[:, 0] * (r1[:, 1] * r2[:, 2] + r1[:, 2] * r2[:, 1])
            + r0[:, 1] * (r1[:, 0] * r2[:, 2] + r1[:, 2] * r2[:, 0])
            + r0[:, 2] * (r1[:, 0] * r2[:, 1] + r1[:, 1] * r2[:, 0])
        )

    ra, rb, rc, rd = rows
    la, lb, lc, ld = lifts
    # expansion along the lift column, negated so that inside is positive
    det = la * minor(rb, rc, rd) - lb * minor(ra, rc, rd) + lc * minor(ra, rb, rd) - ld * minor(ra, rb, rc)
    perm = la * pminor(rb, rc, rd) + lb * pminor(ra, rc, rd) + lc * pminor(ra, rb, rd) + ld * pminor(ra, rb, rc)
    out = np.sign(det).astype(np.int8)
    for i in np.flatnonzero(np.abs(det) <= _INSPHERE_ERR * perm):
        out[i] = _sign(_insphere_exact(a[i], b[i], c[i], d[i], e[i]))
    return out.reshape(shape)


def orient3d(a, b, c, d) -> int:
    return int(orient3d_batch(a, b, c, d)[0])


def insphere(a, b, c, d, e) -> int:
    return int(insphere_batch(a, b, c, d, e).reshape(-1)[0])
