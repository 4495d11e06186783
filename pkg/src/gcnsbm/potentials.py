"""Scalar maximizers of the weight and output potentials.

The output potential is

    psi_out(h, s) = -t l(y h) - Vhat_s s^2 / 2 + B s
                    - (h - c s - a)^2 / (2 V_s) - (s - b)^2 / (2 V_w)

with B = xi sqrt(Qhat_s) + y mhat_s, a = lam y m_s + sqrt(Q_s) zeta and
b = sqrt(mu) y m_w + sqrt(Q_w) chi.  For fixed h it is quadratic in s, and
eliminating s leaves a one-dimensional proximal problem in h:

    K = Vhat_s + c^2 / V_s + 1 / V_w,   D = Vhat_s + 1 / V_w
    s(h) = (B + b / V_w + c (h - a) / V_s) / K
    h*   = prox_l(mean = a + c (B + b / V_w) / D, var = V_s + c^2 / D)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .core import Loss, NumericalError, OrderParams, loss_eval


class DegeneratePotentialError(ValueError):
    """The potential is not strictly concave for the given order parameters."""


def argmax_w(r, vhat_w, field):
    """Maximizer of -r w^2/2 - vhat_w w^2/2 + field * w (l2 regularization)."""
    curv = r + vhat_w
    if np.any(np.asarray(curv) <= 0):
        raise DegeneratePotentialError(f"weight potential has non-positive curvature r + Vhat_w = {curv}")
    return np.asarray(field) / curv if np.ndim(field) else field / curv


def _logistic_prox_z(z0, v, tol=1e-12, max_iter=50):
    # root of g(z) = expit(-z) - (z - z0)/v by Newton with bisection safeguard
    z0 = np.asarray(z0, dtype=float)
    v = np.broadcast_to(np.asarray(v, dtype=float), z0.shape)
    # g is decreasing, so the root lies in [z0 + v expit(-hi), hi] with hi = z0 + v expit(-z0)
    hi = z0 + v * special.expit(-z0)
    lo = z0 + v * special.expit(-hi)
    z = 0.5 * (lo + hi)
    dx_old = hi - lo
    active = np.ones(z.shape, dtype=bool)
    for _ in range(max_iter):
        za, va = z[active], v[active]
        p = special.expit(-za)
        g = p - (za - z0[active]) / va
        gp = -p * (1.0 - p) - 1.0 / va
        step = -g / gp
        znew = za + step
        lo_a, hi_a = lo[active], hi[active]
        lo_a = np.where(g > 0, za, lo_a)
        hi_a = np.where(g < 0, za, hi_a)
        # bisect when Newton leaves the bracket or fails to halve the last step
        slow = np.abs(step) > 0.5 * dx_old[active]
        done = np.abs(step) <= tol * np.maximum(1.0, np.abs(za))
        outside = ((znew <= lo_a) | (znew >= hi_a) | slow) & ~done
        znew = np.where(outside, 0.5 * (lo_a + hi_a), znew)
        dx_old[active] = np.abs(znew - za)
        lo[active], hi[active] = lo_a, hi_a
        z[active] = znew
        done |= np.abs(znew - za) <= tol * np.maximum(1.0, np.abs(za))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not active.any():
            return z
    bad = np.flatnonzero(active)
    raise NumericalError(
        f"logistic prox Newton did not converge for {bad.size} inputs "
        f"(first: z0={z0[bad[0]]:.6g}, var={v[bad[0]]:.6g})")


def prox_loss(loss, y, mean, var, t_bar=1):
    """argmax_h [ -t_bar l(y h) - (h - mean)^2 / (2 var) ], elementwise."""
    loss = Loss.parse(loss)
    mean = np.asarray(mean, dtype=float)
    if np.any(np.asarray(var) <= 0):
        raise DegeneratePotentialError("prox variance must be positive")
    scalar = mean.ndim == 0 and np.ndim(y) == 0
    if not t_bar:
        out = np.broadcast_to(mean, np.broadcast(y, mean).shape).astype(float)
        return float(out) if scalar else out
    y = np.asarray(y, dtype=float)
    z0 = y * mean
    if loss is Loss.QUADRATIC:
        z = (z0 + var) / (1.0 + var)
    elif loss is Loss.HINGE:
        z = np.where(z0 >= 1.0, z0, np.where(z0 + var <= 1.0, z0 + var, 1.0))
    else:
        z = _logistic_prox_z(np.atleast_1d(z0), np.atleast_1d(np.broadcast_to(var, np.shape(z0))))
        z = z.reshape(np.shape(z0))
    h = y * z
    return float(h) if scalar else h


@dataclass(frozen=True)
class OutChannelInput:
    """One (or a vector of) evaluations of the output potential."""

    y: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray
    chi: np.ndarray
    theta: OrderParams
    c: float
    lam: float
    mu: float = 0.0
    t_bar: int = 1


def _coefficients(theta: OrderParams, c):
    if theta.V_sigma <= 0 or theta.V_w <= 0:
        raise DegeneratePotentialError(f"V_sigma={theta.V_sigma}, V_w={theta.V_w} must be positive")
    D = theta.Vhat_sigma + 1.0 / theta.V_w
    if D <= 0:
        raise DegeneratePotentialError(f"output potential not concave: Vhat_sigma + 1/V_w = {D}")
    K = D + c * c / theta.V_sigma
    return D, K


def out_channel(theta: OrderParams, y, xi, zeta, chi, c, lam, mu, loss, t_bar):
    """Vectorized joint maximizer (h*, sigma*) of the output potential.

    Also returns the offsets ``a`` and ``b`` so callers can form the residuals
    entering the conjugate equations without recomputing them.
    """
    D, K = _coefficients(theta, c)
    a = lam * y * theta.m_sigma + np.sqrt(max(theta.Q_sigma, 0.0)) * zeta
    b = np.sqrt(mu) * y * theta.m_w + np.sqrt(max(theta.Q_w, 0.0)) * chi
    field = xi * np.sqrt(max(theta.Qhat_sigma, 0.0)) + y * theta.mhat_sigma + b / theta.V_w
    mean = a + c * field / D
    var = theta.V_sigma + c * c / D
    h = prox_loss(loss, y, mean, var, t_bar)
    s = (field + c * (h - a) / theta.V_sigma) / K
    return h, s, a, b


def argmax_out(inp: OutChannelInput, loss):
    """Joint maximizer of the output potential; returns (h*, sigma*)."""
    h, s, _, _ = out_channel(inp.theta, inp.y, inp.xi, inp.zeta, inp.chi,
                             inp.c, inp.lam, inp.mu, loss, inp.t_bar)
    return h, s


def psi_out(inp: OutChannelInput, loss, h, s):
    """Value of the output potential up to h- and s-independent constants."""
    th = inp.theta
    a = inp.lam * inp.y * th.m_sigma + np.sqrt(th.Q_sigma) * inp.zeta
    b = np.sqrt(inp.mu) * inp.y * th.m_w + np.sqrt(th.Q_w) * inp.chi
    B = inp.xi * np.sqrt(th.Qhat_sigma) + inp.y * th.mhat_sigma
    val = -0.5 * th.Vhat_sigma * s ** 2 + B * s
    val = val - (h - inp.c * s - a) ** 2 / (2 * th.V_sigma) - (s - b) ** 2 / (2 * th.V_w)
    if inp.t_bar:
        val = val - loss_eval(loss, inp.y * h)
    return val
