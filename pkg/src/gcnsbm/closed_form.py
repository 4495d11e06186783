"""Large-regularization closed forms, learning rates and optimal self-loops."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

from .core import DataParams, GcnParams, Model, NumericalError, OrderParams, ParameterError

SQRT2 = math.sqrt(2.0)


class LambdaRegime(str, enum.Enum):
    SMALL = "small"
    LARGE = "large"
    FINITE = "finite"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("lambda", "").replace("_", "").strip()
        return cls(key)


@dataclass(frozen=True)
class LargeRStats:
    m_w: float
    m_sigma: float
    Q_w: float
    Q_sigma: float
    V_w: float
    V_sigma: float
    mhat_w: float
    mhat_sigma: float
    Qhat_w: float
    Qhat_sigma: float

    def as_order_params(self, vhat_w=None, vhat_sigma=None) -> OrderParams:
        # the conjugate variances are not part of the closed form
        vw = 1.0 if vhat_w is None else vhat_w
        vs = 1.0 if vhat_sigma is None else vhat_sigma
        return OrderParams(self.m_w, self.m_sigma, self.Q_w, self.Q_sigma, self.V_w, self.V_sigma,
                           self.mhat_w, self.mhat_sigma, self.Qhat_w, self.Qhat_sigma, vw, vs)


def large_r_stats(dp: DataParams, gp: GcnParams) -> LargeRStats:
    """Summary statistics of the GCN in the limit of large regularization."""
    a, rho, lam, c, r = dp.alpha, dp.rho, dp.lam, gp.c, gp.r
    if not r > 0:
        raise ParameterError("r must be positive")
    lc = lam + c
    if dp.model is Model.CSBM:
        mu = dp.mu
        feat = math.sqrt(mu)
        q_sigma_signal = (1 + mu) * (1 + mu + a)
        m_sigma_gain = 1 + mu
    else:
        mu = 2 * a / math.pi
        feat = math.sqrt(mu)
        q_sigma_signal = (1 + mu) * (1 + a) + mu
        m_sigma_gain = 1 + mu
    return LargeRStats(
        m_w=rho / (a * r) * feat * lc,
        m_sigma=rho / (a * r) * m_sigma_gain * lc,
        Q_w=rho / (a * r * r) * (1 + c * c * (1 - rho) + rho * (1 + mu) * lc ** 2),
        Q_sigma=rho / (a * a * r * r) * ((1 + a) * (1 + c * c * (1 - rho)) + rho * q_sigma_signal * lc ** 2),
        V_w=1 / (a * r),
        V_sigma=1 / (a * r),
        mhat_w=rho * feat * lc,
        mhat_sigma=lam * rho,
        Qhat_w=rho + rho * (lam * rho + c) ** 2 + (1 - rho) * lam ** 2 * rho ** 2,
        Qhat_sigma=rho,
    )


def _csbm_margin(dp, gp):
    s = large_r_stats(dp, gp)
    c = gp.c
    num = dp.lam * s.m_sigma + c * s.V_w * s.mhat_sigma + c * math.sqrt(dp.mu) * s.m_w
    den = SQRT2 * math.sqrt(s.Q_sigma + c * c * s.V_w ** 2 * s.Qhat_sigma + c * c * s.Q_w)
    return num / den


def _glm_parts(dp, gp):
    s = large_r_stats(dp, gp)
    c = gp.c
    offset = dp.lam * s.m_sigma + c * s.V_w * s.mhat_sigma
    slope = c * s.m_w * dp.alpha
    var = s.Q_sigma + c * c * s.V_w ** 2 * s.Qhat_sigma + c * c * (s.Q_w - dp.alpha * s.m_w ** 2)
    return offset, slope, SQRT2 * math.sqrt(var)


def error_large_r(dp: DataParams, gp: GcnParams) -> float:
    """1 - Acc_test at large regularization, computed without cancellation."""
    if dp.model is Model.CSBM:
        return 0.5 * float(special.erfc(_csbm_margin(dp, gp)))
    offset, slope, den = _glm_parts(dp, gp)
    a = dp.alpha
    upper = 12.0 / math.sqrt(a)
    dens = math.sqrt(a / (2 * math.pi))

    def integrand(z):
        return dens * math.exp(-a * z * z / 2) * special.erfc((offset + slope * z) / den)

    val, err = integrate.quad(integrand, 0.0, upper, epsabs=1e-13, epsrel=1e-10, limit=200)
    # Gaussian mass beyond the cut-off bounds the neglected tail (erfc <= 2)
    tail = float(special.erfc(upper * math.sqrt(a / 2)))
    if err + tail > 1e-9:
        raise NumericalError(f"quadrature error estimate {err + tail:.3g} exceeds 1e-9")
    return val


def log_error_large_r(dp: DataParams, gp: GcnParams) -> float:
    """log(1 - Acc_test) at large regularization, finite even where the error underflows."""
    if dp.model is Model.CSBM:
        # erfc(m) / 2 = Phi(-sqrt2 m)
        return float(special.log_ndtr(-SQRT2 * _csbm_margin(dp, gp)))
    offset, slope, den = _glm_parts(dp, gp)
    a = dp.alpha
    upper = 12.0 / math.sqrt(a)

    def log_integrand(z):
        z = np.asarray(z, dtype=float)
        return (0.5 * math.log(a / (2 * math.pi)) - a * z * z / 2 + math.log(2.0)
                + special.log_ndtr(-SQRT2 * (offset + slope * z) / den))

    peak = float(np.max(log_integrand(np.linspace(0.0, upper, 2001))))
    val, _ = integrate.quad(lambda z: math.exp(float(log_integrand(z)) - peak), 0.0, upper,
                            epsabs=0.0, epsrel=1e-10, limit=200)
    return peak + math.log(val)


def acc_large_r(dp: DataParams, gp: GcnParams) -> float:
    """Test accuracy of the GCN at large regularization, any self-loop c."""
    return 1.0 - error_large_r(dp, gp)


def tau_finite(dp: DataParams) -> float:
    """Finite-lambda rate tau with Acc = (1 + erf(lam sqrt(tau)))/2 at c = 0."""
    a, rho, lam = dp.alpha, dp.rho, dp.lam
    if dp.model is Model.CSBM:
        mu = dp.mu
        num = lam * rho * (1 + mu)
        den = SQRT2 * math.sqrt(rho * (1 + a) + lam ** 2 * rho ** 2 * (1 + mu) * (1 + a + mu))
    else:
        f = 2 * a / math.pi
        num = lam * rho * (1 + f)
        den = SQRT2 * math.sqrt(rho * (1 + a) + lam ** 2 * rho ** 2 * ((1 + f) * (1 + a + f) - f * f))
    return (num / den) ** 2


def rate_inf(dp: DataParams) -> float:
    """Asymptotic learning rate: log(1 - Acc) ~ -lam^2 * rate as lam grows."""
    a = dp.alpha
    if dp.model is Model.CSBM:
        mu = dp.mu
        return (1 + mu) / (2 * (1 + a + mu))
    f = 2 * a / math.pi
    return (1 + f) / (2 * (1 + a + f / (1 + f)))


RATE_BAYES_OPTIMAL = 1.0


def _glm_large_lambda_objective(ct, dp, printed=False):
    """Log of the c-dependent factor of 1 - Acc at large lambda, with c = ct / lam.

    Expanding the accuracy integral to O(1) in lam gives the z-integral
    exp(2 a^2 tau^2) erfc(sqrt2 a tau); ``printed=True`` uses exp(a^2 tau)
    instead, whose minimizer the finite-lambda optimum does not approach.
    """
    a, rho = dp.alpha, dp.rho
    f = 2 * a / math.pi
    tau = rate_inf(dp)
    aa = math.sqrt(a) * ct * math.sqrt(f) / (1 + f)
    bb = ct / (1 + f) - 0.5 * (a * ct * ct + (1 + a) / rho) / ((1 + a) * (1 + f) + f)
    x = SQRT2 * aa * tau
    shift = aa * aa * tau if printed else 2 * aa * aa * tau * tau
    # erfc(x) = 2 Phi(-sqrt2 x), evaluated in log form
    return -2 * bb * tau + shift + math.log(2.0) + float(special.log_ndtr(-SQRT2 * x))


def _golden_min(f, lo, hi, tol):
    # coarse scan for a valid bracket, then golden section inside it
    grid = np.linspace(lo, hi, 101)
    vals = np.array([f(x) for x in grid])
    k = int(np.argmin(vals))
    if k == 0 or k == len(grid) - 1:
        raise NumericalError(f"minimum lies on the edge of the search interval [{lo}, {hi}]")
    res = optimize.minimize_scalar(f, bracket=(grid[k - 1], grid[k], grid[k + 1]), method="golden",
                                   tol=tol)
    return float(res.x)


def c_star(dp: DataParams, lambda_regime="finite", tol=1e-8, printed_glm_form=False) -> float:
    """Optimal self-loop strength at large regularization."""
    regime = LambdaRegime.parse(lambda_regime)
    lam, a, rho = dp.lam, dp.alpha, dp.rho
    if not lam > 0:
        raise ParameterError("c_star requires lambda > 0")
    if regime is LambdaRegime.SMALL:
        if dp.model is not Model.CSBM:
            raise ParameterError("the small-lambda constant is only known in closed form for the CSBM; "
                                 "use the finite regime")
        mu = dp.mu
        return mu * ((1 + a) * (2 - rho) + rho * (1 + mu) * (1 + mu + a)) / (a * (1 + mu) * (2 + rho * mu)) / lam
    if regime is LambdaRegime.LARGE:
        if dp.model is Model.CSBM:
            return (1 + dp.mu + a) / (a * lam)
        f = lambda ct: _glm_large_lambda_objective(ct, dp, printed_glm_form)
        ct = _golden_min(f, 0.0, 10.0, tol)
        return ct / lam
    return _c_star_finite(dp, tol)


def _c_star_finite(dp, tol):
    def objective(c):
        gp = GcnParams(r=1.0, c=c)
        if dp.model is Model.CSBM:
            return -_csbm_margin(dp, gp)
        return log_error_large_r(dp, gp)

    hi = 10.0 / dp.lam
    for attempt in range(2):
        grid = np.linspace(0.0, hi, 41)
        vals = np.array([objective(c) for c in grid])
        k = int(np.argmin(vals))
        if 0 < k < len(grid) - 1:
            # unimodality check on the coarse grid
            diffs = np.sign(np.diff(vals))
            changes = np.count_nonzero(np.diff(diffs[diffs != 0]) != 0)
            if changes > 1:
                raise NumericalError("accuracy is not unimodal in c on the search bracket")
            res = optimize.minimize_scalar(objective, bounds=(grid[k - 1], grid[k + 1]),
                                           method="bounded", options={"xatol": tol})
            return float(res.x)
        if k == 0:
            return 0.0
        hi *= 10.0
    raise NumericalError("optimal self-loop lies outside the widened bracket")
