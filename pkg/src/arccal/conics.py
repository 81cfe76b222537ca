"""Direct least-squares ellipse fitting and point-to-conic distances.

The fit is the ellipse-specific direct method: minimize algebraic error
subject to 4*A*C - B**2 = 1, solved as a small generalized eigenproblem in
the numerically stable split form (quadratic block reduced to a 3x3
eigenproblem). Input points are mean-centered and isotropically scaled
before fitting and the conic is de-normalized afterwards, which keeps the
scatter matrices well conditioned for far-off-origin pixel data.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Conic",
    "EllipseFitError",
    "fit_ellipse_direct",
    "conic_params",
    "sampson_distance",
]


class EllipseFitError(ValueError):
    """The point configuration does not determine an ellipse."""


@dataclass(frozen=True)
class Conic:
    """Conic A*x**2 + B*x*y + C*y**2 + D*x + E*y + F = 0.

    Coefficients are stored with unit Euclidean norm and A >= 0, resolving
    the scale/sign ambiguity of the implicit form.
    """

    A: float
    B: float
    C: float
    D: float
    E: float
    F: float

    def __post_init__(self):
        v = np.array([self.A, self.B, self.C, self.D, self.E, self.F], dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("conic coefficients must be finite")
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise ValueError("conic coefficients must not all be zero")
        v /= norm
        if v[0] < 0.0:
            v = -v
        for name, value in zip(("A", "B", "C", "D", "E", "F"), v):
            object.__setattr__(self, name, float(value))

    @property
    def coefficients(self):
        return np.array([self.A, self.B, self.C, self.D, self.E, self.F])

    @property
    def is_ellipse(self):
        return self.B * self.B - 4.0 * self.A * self.C < 0.0

    def evaluate(self, uv):
        """Conic polynomial value at one point or an (n, 2) array."""
        uv = np.asarray(uv)
        u, v = uv[..., 0], uv[..., 1]
        return (self.A * u * u + self.B * u * v + self.C * v * v
                + self.D * u + self.E * v + self.F)


def _fit_ellipse_coefficients(pts):
    """Raw direct fit; returns unnormalized coefficients [A..F].

    Raises EllipseFitError for degenerate scatter.
    """
    x = pts[:, 0]
    y = pts[:, 1]
    # Conditioning: center and scale to unit RMS radius.
    mx, my = x.mean(), y.mean()
    xc, yc = x - mx, y - my
    scale = np.sqrt(np.mean(xc * xc + yc * yc))
    if scale <= 0.0 or not np.isfinite(scale):
        raise EllipseFitError("all points coincide")
    xs, ys = xc / scale, yc / scale

    d1 = np.column_stack([xs * xs, xs * ys, ys * ys])
    d2 = np.column_stack([xs, ys, np.ones_like(xs)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError:
        raise EllipseFitError("rank-deficient design matrix (collinear points?)") from None
    m = s1 + s2 @ t
    # Apply inv(C1) for the constraint matrix C1 = [[0,0,2],[0,-1,0],[2,0,0]].
    m = np.array([m[2] / 2.0, -m[1], m[0] / 2.0])
    try:
        eigval, eigvec = np.linalg.eig(m)
    except np.linalg.LinAlgError:
        raise EllipseFitError("eigen decomposition failed") from None

    # Exactly one eigenvector satisfies the ellipse constraint 4ac - b^2 > 0.
    best = None
    for k in range(3):
        if abs(eigval[k].imag) > 1e-8 * (1.0 + abs(eigval[k].real)):
            continue
        a1 = eigvec[:, k].real
        cond = 4.0 * a1[0] * a1[2] - a1[1] * a1[1]
        if cond > 0.0:
            best = a1
            break
    if best is None:
        raise EllipseFitError("no ellipse solution for this point configuration")
    quad = best
    lin = t @ quad

    # Undo the normalization: C_orig = H^T C_norm H for p_norm = H p.
    a, b, c = quad
    d, e, f = lin
    cm = np.array([
        [a, b / 2.0, d / 2.0],
        [b / 2.0, c, e / 2.0],
        [d / 2.0, e / 2.0, f],
    ])
    h = np.array([
        [1.0 / scale, 0.0, -mx / scale],
        [0.0, 1.0 / scale, -my / scale],
        [0.0, 0.0, 1.0],
    ])
    cm = h.T @ cm @ h
    return np.array([
        cm[0, 0], 2.0 * cm[0, 1], cm[1, 1],
        2.0 * cm[0, 2], 2.0 * cm[1, 2], cm[2, 2],
    ])


def _batched_ellipse_coefficients(x, y):
    """Direct fits for a stack of point sets, vectorized over axis 0.

    ``x``/``y`` have shape (m, n). Returns (coeffs, ok): an (m, 6) array of
    conic coefficients with the sign fixed so A > 0, and a boolean mask of
    rows whose fit produced a finite ellipse. Mirrors
    :func:`_fit_ellipse_coefficients` row for row; failures are flagged
    instead of raised so optimizer residuals can penalize them.
    """
    m, n = x.shape
    with np.errstate(all="ignore"):
        mx = x.mean(axis=1)
        my = y.mean(axis=1)
        xc = x - mx[:, None]
        yc = y - my[:, None]
        scale = np.sqrt(np.mean(xc * xc + yc * yc, axis=1))
        ok = np.isfinite(scale) & (scale > 0.0)
        safe_scale = np.where(ok, scale, 1.0)
        xs = xc / safe_scale[:, None]
        ys = yc / safe_scale[:, None]

        ones = np.ones_like(xs)
        d1 = np.stack([xs * xs, xs * ys, ys * ys], axis=-1)
        d2 = np.stack([xs, ys, ones], axis=-1)
        s1 = np.einsum("mni,mnj->mij", d1, d1)
        s2 = np.einsum("mni,mnj->mij", d1, d2)
        s3 = np.einsum("mni,mnj->mij", d2, d2)

        det = np.linalg.det(s3)
        solvable = np.isfinite(det) & (np.abs(det) > 1e-10 * float(n) ** 3)
        ok &= solvable
        s3_safe = np.where(solvable[:, None, None], s3, np.eye(3))
        t = -np.linalg.solve(s3_safe, np.swapaxes(s2, 1, 2))
        mm = s1 + s2 @ t
        rm = np.stack([mm[:, 2, :] / 2.0, -mm[:, 1, :], mm[:, 0, :] / 2.0], axis=1)
        rm = np.where(np.isfinite(rm), rm, 0.0)
        eigval, eigvec = np.linalg.eig(rm)

        vecs = eigvec.real
        real_enough = np.abs(eigval.imag) <= 1e-8 * (1.0 + np.abs(eigval.real))
        cond = (4.0 * vecs[:, 0, :] * vecs[:, 2, :]
                - vecs[:, 1, :] * vecs[:, 1, :])
        passing = real_enough & (cond > 0.0)
        ok &= passing.any(axis=1)
        first = np.argmax(passing, axis=1)
        quad = np.take_along_axis(vecs, first[:, None, None], axis=2)[:, :, 0]
        lin = (t @ quad[:, :, None])[:, :, 0]

        a, b, c = quad[:, 0], quad[:, 1], quad[:, 2]
        d, e, f = lin[:, 0], lin[:, 1], lin[:, 2]
        cm = np.empty((m, 3, 3))
        cm[:, 0, 0] = a
        cm[:, 0, 1] = cm[:, 1, 0] = b / 2.0
        cm[:, 1, 1] = c
        cm[:, 0, 2] = cm[:, 2, 0] = d / 2.0
        cm[:, 1, 2] = cm[:, 2, 1] = e / 2.0
        cm[:, 2, 2] = f
        h = np.zeros((m, 3, 3))
        inv_s = 1.0 / safe_scale
        h[:, 0, 0] = inv_s
        h[:, 1, 1] = inv_s
        h[:, 0, 2] = -mx * inv_s
        h[:, 1, 2] = -my * inv_s
        h[:, 2, 2] = 1.0
        cm = np.swapaxes(h, 1, 2) @ cm @ h
        coeffs = np.stack([
            cm[:, 0, 0], 2.0 * cm[:, 0, 1], cm[:, 1, 1],
            2.0 * cm[:, 0, 2], 2.0 * cm[:, 1, 2], cm[:, 2, 2],
        ], axis=1)

        # Any valid ellipse has A != 0; fix the sign so signed Sampson
        # values match the canonical per-conic normalization.
        flip = coeffs[:, 0] < 0.0
        coeffs[flip] *= -1.0
        disc = coeffs[:, 1] ** 2 - 4.0 * coeffs[:, 0] * coeffs[:, 2]
        ok &= np.isfinite(coeffs).all(axis=1) & (disc < 0.0)
    return coeffs, ok


def fit_ellipse_direct(points):
    """Fit an ellipse to at least 6 non-collinear 2-D points.

    The constrained eigenproblem guarantees the result is an ellipse;
    degenerate scatter raises :class:`EllipseFitError`.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) point array, got shape {pts.shape}")
    if pts.shape[0] < 6:
        raise ValueError(f"need at least 6 points for an ellipse fit, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite values")
    conic = Conic(*_fit_ellipse_coefficients(pts))
    if not conic.is_ellipse:
        raise EllipseFitError("fit did not produce an ellipse")
    return conic


def conic_params(conic):
    """Center, semi-axes and orientation of an ellipse conic.

    Returns (center_u, center_v, a, b, orientation) with a >= b > 0 and the
    major-axis orientation in (-pi/2, pi/2]. Raises ``ValueError`` for a
    non-ellipse conic.
    """
    if not conic.is_ellipse:
        raise ValueError("conic is not an ellipse (discriminant >= 0)")
    A, B, C, D, E, F = conic.coefficients
    q = np.array([[A, B / 2.0], [B / 2.0, C]])
    center = np.linalg.solve(2.0 * q, [-D, -E])
    f0 = float(center @ q @ center + D * center[0] + E * center[1] + F)
    eigval, eigvec = np.linalg.eigh(q)
    axes2 = -f0 / eigval
    if np.any(axes2 <= 0.0):
        raise ValueError("degenerate ellipse (zero-size or imaginary axes)")
    axes = np.sqrt(axes2)
    major = int(np.argmax(axes))
    a, b = float(axes[major]), float(axes[1 - major])
    v = eigvec[:, major]
    angle = np.arctan2(v[1], v[0])
    if angle <= -np.pi / 2.0:
        angle += np.pi
    elif angle > np.pi / 2.0:
        angle -= np.pi
    return float(center[0]), float(center[1]), a, b, float(angle)


def sampson_values(conic, uv):
    """Signed first-order point-to-conic distances for an (n, 2) array.

    The sign follows the conic polynomial under the canonical coefficient
    normalization; optimizer residuals use this signed form so the cost
    stays smooth through the boundary.
    """
    uv = np.asarray(uv, dtype=float)
    A, B, C, D, E, F = conic.coefficients
    u, v = uv[..., 0], uv[..., 1]
    q = A * u * u + B * u * v + C * v * v + D * u + E * v + F
    gx = 2.0 * A * u + B * v + D
    gy = B * u + 2.0 * C * v + E
    gnorm = np.sqrt(gx * gx + gy * gy)
    if np.any(gnorm < 1e-12):
        raise ValueError("conic gradient vanishes at a query point")
    return q / gnorm


def sampson_distance(conic, point):
    """First-order geometric distance |Q(p)| / ||grad Q(p)|| in pixels."""
    uv = np.asarray(point, dtype=float)
    if uv.shape != (2,):
        raise ValueError(f"expected a single 2-D point, got shape {uv.shape}")
    return float(abs(sampson_values(conic, uv[np.newaxis, :])[0]))
