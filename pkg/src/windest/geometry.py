"""Quaternion algebra, attitude error parameters and sigma-point machinery.

Conventions
-----------
Quaternions are scalar-first ndarrays ``[w, x, y, z]`` composed with the
Hamilton product.  ``q_WB`` rotates body-frame vectors into the world
frame: ``v_W = quat_rotate(q_WB, v_B)``, i.e. ``quat_to_matrix(q_WB)``
stacks the body axes expressed in world coordinates as its columns.

Attitude errors use generalized Rodrigues parameters with ``a = 1`` and
``f = 2 (a + 1) = 4``, so the error vector equals the rotation angle in
radians to first order.  Error quaternions compose on the left:
``q = dq (x) q_ref``.

All functions broadcast over leading axes; the quaternion / vector lives
on the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MRP_A = 1.0
MRP_F = 2.0 * (MRP_A + 1.0)


class CovarianceError(RuntimeError):
    """Raised when a covariance cannot be factorized even after jitter."""


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("cannot normalize a zero quaternion")
    return q / n


def quat_conjugate(q):
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_multiply(a, b):
    """Hamilton product a (x) b, broadcasting over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, av = a[..., :1], a[..., 1:]
    bw, bv = b[..., :1], b[..., 1:]
    w = aw * bw - np.sum(av * bv, axis=-1, keepdims=True)
    v = aw * bv + bw * av + np.cross(av, bv)
    return np.concatenate([w, v], axis=-1)


def quat_rotate(q, v):
    """Rotate vector(s) v by quaternion(s) q (frame of q's columns)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    qw, qv = q[..., :1], q[..., 1:]
    t = 2.0 * np.cross(qv, v)
    return v + qw * t + np.cross(qv, t)


def quat_to_matrix(q):
    """Rotation matrix with the same action as quat_rotate(q, .)."""
    w, x, y, z = (float(c) for c in np.asarray(q, dtype=float))
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    """Inverse of quat_to_matrix (Shepperd's method), w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0.0:
        q = -q
    return quat_normalize(q)


def quat_from_axis_angle(phi):
    """Exponential map: rotation vector (rad) -> unit quaternion."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(half)/angle, continuous through zero
    k = 0.5 * np.sinc(half / np.pi)
    return np.concatenate([np.cos(half), k * phi], axis=-1)


def quat_integrate(q, omega, dt):
    """Advance q by body rate omega held constant over dt (exact exponential)."""
    return quat_multiply(q, quat_from_axis_angle(np.asarray(omega, dtype=float) * dt))


def mrp_from_quat(dq, a=MRP_A, f=MRP_F):
    """Error quaternion -> generalized Rodrigues parameters.

    Flips to the shadow set (negates dq) when the scalar part is negative
    so the parameters stay bounded near +/- pi.
    """
    dq = np.asarray(dq, dtype=float)
    flip = dq[..., :1] < 0.0
    dq = np.where(flip, -dq, dq)
    return f * dq[..., 1:] / (a + dq[..., :1])


def quat_from_mrp(p, a=MRP_A, f=MRP_F):
    """Generalized Rodrigues parameters -> unit error quaternion (w >= 0 for a=1)."""
    p = np.asarray(p, dtype=float)
    n2 = np.sum(p * p, axis=-1, keepdims=True)
    w = (-a * n2 + f * np.sqrt(f * f + (1.0 - a * a) * n2)) / (f * f + n2)
    return np.concatenate([w, (a + w) * p / f], axis=-1)


def mrp_error(q, q_ref, a=MRP_A, f=MRP_F):
    """Attitude error parameters of q relative to q_ref (q = dq (x) q_ref)."""
    return mrp_from_quat(quat_multiply(q, quat_conjugate(q_ref)), a=a, f=f)


def compose_mrp(q_ref, e, a=MRP_A, f=MRP_F):
    """Fold error parameters e onto the reference: returns dq(e) (x) q_ref."""
    return quat_normalize(quat_multiply(quat_from_mrp(e, a=a, f=f), q_ref))


@dataclass(frozen=True)
class UtParams:
    """Scaled sigma-point weights (Wan/van der Merwe parameterization)."""

    alpha: float = 0.1
    beta: float = 2.0
    kappa: float = 0.0


@dataclass
class SigmaPointSet:
    points: np.ndarray  # (2n+1, n), row 0 is the mean
    wm: np.ndarray  # (2n+1,) mean weights
    wc: np.ndarray  # (2n+1,) covariance weights


def _factor(cov, jitter):
    cov = 0.5 * (cov + cov.T)
    n = cov.shape[0]
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(n))
    except np.linalg.LinAlgError:
        pass
    # one retry with a trace-scaled bump, then give up loudly
    bump = max(1.0, np.trace(cov) / n) * 1e-9
    try:
        return np.linalg.cholesky(cov + bump * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("covariance is not positive definite") from exc


def sigma_points(mean, cov, params: UtParams = UtParams(), jitter=1e-12):
    """Scaled symmetric sigma points for (mean, cov).

    cov must be symmetric positive semidefinite; a jitter of
    ``jitter * I`` is added before factorization and the factorization is
    retried once with a larger bump before failing.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    n = mean.shape[0]
    lam = params.alpha**2 * (n + params.kappa) - n
    scale = n + lam
    root = _factor(scale * cov, scale * jitter)
    points = np.empty((2 * n + 1, n))
    points[0] = mean
    points[1 : n + 1] = mean + root.T
    points[n + 1 :] = mean - root.T
    wm = np.full(2 * n + 1, 1.0 / (2.0 * scale))
    wc = wm.copy()
    wm[0] = lam / scale
    wc[0] = wm[0] + (1.0 - params.alpha**2 + params.beta)
    return SigmaPointSet(points, wm, wc)


def reconstruct(points, wm, wc, ref=None):
    """Weighted mean and covariance of transformed sigma points.

    If ref is given, deviations for the covariance are taken about ref
    instead of the weighted mean (used for cross-covariances).
    """
    points = np.asarray(points, dtype=float)
    mean = wm @ points
    d = points - (mean if ref is None else ref)
    cov = d.T @ (wc[:, None] * d)
    return mean, 0.5 * (cov + cov.T)


def unscented_transform(mean, cov, func, params: UtParams = UtParams()):
    """Propagate (mean, cov) through func via the unscented transform.

    func maps an n-vector to an m-vector.  Returns (mean_y, cov_y,
    cross_xy) where cross_xy is the (n, m) input-output cross covariance.
    """
    sp = sigma_points(mean, cov, params)
    ys = np.array([np.asarray(func(p), dtype=float) for p in sp.points])
    mean_y = sp.wm @ ys
    dy = ys - mean_y
    dx = sp.points - np.asarray(mean, dtype=float)
    cov_y = dy.T @ (sp.wc[:, None] * dy)
    cross = dx.T @ (sp.wc[:, None] * dy)
    return mean_y, 0.5 * (cov_y + cov_y.T), cross
