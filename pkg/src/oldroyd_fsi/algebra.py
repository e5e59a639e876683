"""Pointwise 2x2 tensor algebra for the corotational stress model.

All functions broadcast over leading axes: a field of matrices is an array
of shape ``(..., 2, 2)``.
"""

import numpy as np

ANTISYM_TOL = 1e-10
IDENTITY_TOL = 1e-12
ORTHO_TOL = 1e-8


class AlgebraError(ValueError):
    pass


def vorticity_tensor(G):
    """Antisymmetric part ``(G - G^T)/2`` of a velocity gradient."""
    G = np.asarray(G, dtype=float)
    return 0.5 * (G - np.swapaxes(G, -1, -2))


def _check_antisymmetric(W):
    scale = 1.0 + np.max(np.abs(W), initial=0.0)
    if np.max(np.abs(W + np.swapaxes(W, -1, -2)), initial=0.0) > ANTISYM_TOL * scale:
        raise AlgebraError("generator is not antisymmetric")


def corotation_term(W, T):
    """Return ``W T + T W^T`` for antisymmetric ``W`` (equal to ``W T - T W``)."""
    W = np.asarray(W, dtype=float)
    T = np.asarray(T, dtype=float)
    _check_antisymmetric(W)
    return W @ T + T @ np.swapaxes(W, -1, -2)


def contract(X, Y):
    """Frobenius contraction ``X : Y`` over the last two axes."""
    return np.einsum("...ij,...ij->...", X, Y)


def corotation_identity_residual(G, Z, n, variant="Z"):
    """Evaluate ``W(G) Z : Y^n + Z W(G^T) : Y^n`` with ``Y`` in ``{Z, Z^T}``.

    Vanishes identically in two dimensions, for any ``G``, ``Z`` and ``n``.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    G = np.asarray(G, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if variant == "Z":
        Y = Z
    elif variant in ("ZT", "transpose"):
        Y = np.swapaxes(Z, -1, -2)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    Yn = np.linalg.matrix_power(Y, n)
    W = vorticity_tensor(G)
    WT = vorticity_tensor(np.swapaxes(G, -1, -2))
    return contract(W @ Z, Yn) + contract(Z @ WT, Yn)


def rotation_matrix(angle):
    """Planar rotation ``R = exp(angle * [[0, 1], [-1, 0]])``."""
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    R = np.empty(angle.shape + (2, 2))
    R[..., 0, 0] = c
    R[..., 0, 1] = s
    R[..., 1, 0] = -s
    R[..., 1, 1] = c
    return R


def conjugate(R, T):
    return R @ T @ np.swapaxes(R, -1, -2)


def rotate_by_generator(w, T, dt):
    """Propagate ``T`` over ``dt`` under ``dT/dt = W T + T W^T`` with constant
    ``W = [[0, w], [-w, 0]]`` (``w`` may be a field)."""
    return conjugate(rotation_matrix(np.asarray(w) * dt), T)


def rotation_propagate(times, W_series, T0, t):
    """Exact solution ``R(t) T0 R(t)^T`` of the corotational ODE along a path.

    ``W_series`` holds antisymmetric generators sampled at ``times``; the
    rotation angle ``int W_12 dt`` is integrated with the trapezoid rule
    (midpoint value per interval), which is exact for piecewise-linear paths.
    """
    times = np.asarray(times, dtype=float)
    W_series = np.asarray(W_series, dtype=float)
    if W_series.shape != (len(times), 2, 2):
        raise ValueError("W_series must have shape (len(times), 2, 2)")
    _check_antisymmetric(W_series)
    if not times[0] <= t <= times[-1]:
        raise ValueError("t outside the sampled path")
    w = W_series[:, 0, 1]
    k = np.searchsorted(times, t, side="right") - 1
    k = min(k, len(times) - 2) if len(times) > 1 else 0
    angle = 0.0
    if len(times) > 1:
        angle = np.sum(0.5 * (w[1:k + 1] + w[:k]) * np.diff(times[:k + 1]))
        frac = t - times[k]
        if frac > 0:
            w_t = w[k] + (w[k + 1] - w[k]) * frac / (times[k + 1] - times[k])
            angle += 0.5 * (w[k] + w_t) * frac
    R = rotation_matrix(angle)
    drift = np.max(np.abs(R.T @ R - np.eye(2)))
    if drift > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
        raise AlgebraError(f"orthogonality drift {drift:.3e}")
    return conjugate(R, np.asarray(T0, dtype=float))


def frobenius(T):
    T = np.asarray(T, dtype=float)
    return np.sqrt(np.sum(T * T, axis=(-2, -1)))
