"""Bayes-optimal baselines for the CSBM and the GLM-SBM.

Both are three-variable scalar systems.  Gaussian expectations are computed
by deterministic quadrature (not Monte Carlo): adaptive for the 1-D CSBM
average, tensorized Gauss-Hermite for the 2-D GLM-SBM averages, so the
baselines are accurate well below the tolerance used when comparing them
with the GCN.

The graph channel enters through the directed-to-undirected mapping
Delta_I = 2 lambda^2.  Averages of Z_out(B = sqrt(A) xi, A, ...) times a
function of B are evaluated in the equivalent planted form
sum_y P(y | omega) E_xi[F(sqrt(A) xi + A y)], which avoids the overflow of
cosh(B) exp(-A/2) at large snr.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .core import DataParams, Model, NumericalError, ParameterError
from .state_evolution import SolveConfig, relative_change

GH_NODES_2D = 101


def gauss_hermite(n):
    """Nodes and weights for expectations over a standard Gaussian."""
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / math.sqrt(2 * math.pi)


def atanh_erf(x):
    """arctanh(erf(x)) without the overflow of erf -> 1."""
    x = np.asarray(x, dtype=float)
    return 0.5 * (special.log_ndtr(math.sqrt(2) * x) - special.log_ndtr(-math.sqrt(2) * x))


@dataclass(frozen=True)
class BoStateCsbm:
    m: float
    m_y: float
    m_u: float
    iterations: int = 0
    converged: bool = True


@dataclass(frozen=True)
class BoStateGlmsbm:
    mhat_u: float
    m_y: float
    m_u: float
    rho_u: float
    delta_I: float
    iterations: int = 0
    converged: bool = True
    flags: tuple = field(default=())


def delta_graph(lam):
    return 2.0 * lam * lam


# CSBM ---------------------------------------------------------------------

def expected_tanh(m):
    """E tanh(m + sqrt(m) W) for standard Gaussian W.

    tanh has poles pi / (2 sqrt(m)) off the real axis, which limits
    Gauss-Hermite accuracy at large m; adaptive quadrature split at the
    transition point w = -sqrt(m) stays accurate to ~1e-13.
    """
    if m <= 0:
        return 0.0
    sm = math.sqrt(m)

    def f(w):
        return math.tanh(m + sm * w) * math.exp(-0.5 * w * w)

    lo, hi = -40.0, 40.0
    split = min(max(-sm, lo + 1.0), hi - 1.0)
    left, _ = integrate.quad(f, lo, split, epsabs=1e-14, epsrel=1e-13, limit=200)
    right, _ = integrate.quad(f, split, hi, epsabs=1e-14, epsrel=1e-13, limit=200)
    return (left + right) / math.sqrt(2 * math.pi)


def bo_solve_csbm(dp: DataParams, cfg: SolveConfig = SolveConfig(tol=1e-12, max_iter=2000)) -> BoStateCsbm:
    if dp.model is not Model.CSBM:
        raise ParameterError("bo_solve_csbm requires a CSBM DataParams")
    a, mu, rho = dp.alpha, dp.mu, dp.rho
    delta = delta_graph(dp.lam)
    m_y = max(rho, 1e-3)
    m_u = mu * m_y / (1 + mu * m_y)
    m = mu / a * m_u + delta * m_y
    state = np.array([m, m_y, m_u])
    for it in range(1, cfg.max_iter + 1):
        m = mu / a * m_u + delta * m_y
        m_y = rho + (1 - rho) * expected_tanh(m)
        m_u = mu * m_y / (1 + mu * m_y)
        new = np.array([m, m_y, m_u])
        res = relative_change(new, state)
        state = new
        if res <= cfg.tol:
            return BoStateCsbm(m, m_y, m_u, it, True)
    return BoStateCsbm(m, m_y, m_u, cfg.max_iter, False)


def bo_error_csbm(s: BoStateCsbm) -> float:
    if s.m < 0:
        raise ParameterError("m must be nonnegative")
    return 0.5 * float(special.erfc(math.sqrt(s.m / 2)))


def bo_acc_csbm(s: BoStateCsbm) -> float:
    """Bayes-optimal test accuracy (1 + erf(sqrt(m/2)))/2."""
    return 1.0 - bo_error_csbm(s)


# GLM-SBM ------------------------------------------------------------------

def _label_logprobs(omega, V):
    x = omega / math.sqrt(V)
    return special.log_ndtr(x), special.log_ndtr(-x)


def _out_functions(B, omega, V):
    """f_out = d/domega log Z_out and f_y = d/dB log Z_out (the A term drops out)."""
    lp, lm = _label_logprobs(omega, V)
    Lp, Lm = lp + B, lm - B
    logZ = np.logaddexp(Lp, Lm)
    log_q = -0.5 * omega ** 2 / V - 0.5 * math.log(2 * math.pi * V)
    f_out = np.exp(log_q + B - logZ) - np.exp(log_q - B - logZ)
    f_y = np.exp(Lp - logZ) - np.exp(Lm - logZ)
    return f_out, f_y


def _glm_hat_terms(m_y, m_u, dp, xs, ws, supervised_labels="both"):
    rho, rho_u = dp.rho, 1.0 / dp.alpha
    A = delta_graph(dp.lam) * m_y
    V = rho_u - m_u
    omega = math.sqrt(max(m_u, 0.0)) * xs[:, None]
    lp, lm = _label_logprobs(omega, V)
    log_q = -0.5 * omega ** 2 / V - 0.5 * math.log(2 * math.pi * V)
    # supervised channel: Z_sup f_sup^2 for an observed +1 label, plus the
    # mirror term for an observed -1 label unless the one-label form is asked for
    sup = np.exp(lp + 2 * (log_q - lp))
    if supervised_labels == "both":
        sup = sup + np.exp(lm + 2 * (log_q - lm))
    sup_term = float(np.dot(ws, sup[:, 0]))
    out_term = 0.0
    y_term = 0.0
    W2 = ws[:, None] * ws[None, :]
    for y, logp in ((1.0, lp), (-1.0, lm)):
        B = math.sqrt(A) * xs[None, :] + A * y
        f_out, f_y = _out_functions(B, omega, V)
        weight = W2 * np.exp(logp)
        out_term += float(np.sum(weight * f_out ** 2))
        y_term += float(np.sum(weight * f_y ** 2))
    mhat_u = rho * sup_term + (1 - rho) * out_term
    m_y_new = rho + (1 - rho) * y_term
    return mhat_u, m_y_new


def bo_solve_glmsbm(dp: DataParams, cfg: SolveConfig = SolveConfig(tol=1e-10, max_iter=2000),
                    supervised_labels="both") -> BoStateGlmsbm:
    """Fixed point of the (mhat_u, m_y, m_u) system.

    ``supervised_labels="both"`` averages the supervised channel over both
    revealed labels; ``"plus_only"`` keeps only the y = +1 term, which is
    half as large and falls below the Hebbian overlap 2a/pi / (1 + 2a/pi)
    at the first step from m_u = 0.
    """
    if supervised_labels not in ("both", "plus_only"):
        raise ParameterError("supervised_labels must be 'both' or 'plus_only'")
    if dp.model is not Model.GLM_SBM:
        raise ParameterError("bo_solve_glmsbm requires a GLM-SBM DataParams")
    rho_u = 1.0 / dp.alpha
    xs, ws = gauss_hermite(GH_NODES_2D)
    m_y = max(dp.rho, 1e-3)
    m_u = 1e-3 * rho_u
    mhat_u = 0.0
    state = np.array([mhat_u, m_y, m_u])
    converged = False
    for it in range(1, cfg.max_iter + 1):
        mhat_u, m_y_new = _glm_hat_terms(m_y, m_u, dp, xs, ws, supervised_labels)
        m_u = rho_u * mhat_u / (1 + mhat_u)
        m_y = min(m_y_new, 1.0)
        # keep V = rho_u - m_u strictly positive
        m_u = min(m_u, rho_u * (1 - 1e-15))
        new = np.array([mhat_u, m_y, m_u])
        if not np.all(np.isfinite(new)):
            raise NumericalError("non-finite Bayes-optimal GLM-SBM update")
        res = relative_change(new, state)
        state = new
        if res <= cfg.tol:
            converged = True
            break
    flags = ("m_y_below_rho",) if m_y < dp.rho - 1e-12 else ()
    return BoStateGlmsbm(mhat_u, m_y, m_u, rho_u, delta_graph(dp.lam), it, converged, flags)


def bo_error_glmsbm(s: BoStateGlmsbm) -> float:
    """1 - Acc_test of the Bayes-optimal estimator on the GLM-SBM."""
    A = s.delta_I * s.m_y
    V = s.rho_u - s.m_u
    if V <= 1e-14 * s.rho_u:
        # labels are a deterministic function of omega: perfect recovery
        return 0.0
    k = math.sqrt(max(s.m_u, 0.0)) / math.sqrt(2 * V)

    if A <= 0:
        def integrand(eta):
            return 0.5 * (1 - abs(special.erf(k * eta))) * math.exp(-eta * eta / 2)
    else:
        def integrand(eta):
            e = k * eta
            p_plus = 0.5 * special.erfc(-e)
            wrong = special.erfc(math.sqrt(A / 2) + atanh_erf(e) / math.sqrt(2 * A))
            return p_plus * wrong * math.exp(-eta * eta / 2)

    val, err = integrate.quad(integrand, -40.0, 40.0, epsabs=1e-12, epsrel=1e-10, limit=400, points=[0.0])
    if err > 1e-9:
        raise NumericalError(f"quadrature error estimate {err:.3g} exceeds 1e-9")
    return val / math.sqrt(2 * math.pi)


def bo_acc_glmsbm(s: BoStateGlmsbm) -> float:
    return 1.0 - bo_error_glmsbm(s)


def bo_solve(dp: DataParams, cfg: SolveConfig = None):
    if dp.model is Model.CSBM:
        return bo_solve_csbm(dp) if cfg is None else bo_solve_csbm(dp, cfg)
    return bo_solve_glmsbm(dp) if cfg is None else bo_solve_glmsbm(dp, cfg)


def bo_error(dp: DataParams) -> float:
    s = bo_solve(dp)
    return bo_error_csbm(s) if dp.model is Model.CSBM else bo_error_glmsbm(s)


def bo_accuracy(dp: DataParams) -> float:
    return 1.0 - bo_error(dp)
